"""Model potentials and the input data of the three-measure equilibrium problem.

The two-matrix weight is ``exp(-n Tr(V(M1) + W(M2) - tau M1 M2))`` with an even
polynomial ``V``, ``W(y) = y**4/4 + alpha*y**2/2`` and ``tau > 0``.  Everything
the vector equilibrium problem needs (the fields ``V1``, ``V3`` and the upper
constraint ``sigma2``) comes out of the stationary points of
``s -> W(s) - tau*x*s``, i.e. the roots of the depressed cubic
``s**3 + alpha*s = tau*x``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numpy.polynomial import polynomial as P

__all__ = [
    "PotentialSpec",
    "CubicCriticalPoints",
    "solve_depressed_cubic",
    "cubic_critical_points",
    "x_star",
    "y_star",
    "effective_field_v1",
    "effective_field_v3",
    "sigma2_density",
    "eval_potential",
    "eval_potential_derivative",
    "v1_closed_form_alpha0",
    "sigma2_closed_form_alpha0",
    "check_closed_forms",
]


@dataclass(frozen=True)
class PotentialSpec:
    """Inputs of the quartic two-matrix model.

    Parameters
    ----------
    v_coeffs : sequence of float
        Coefficients of ``V`` in ascending powers (``v_coeffs[k]`` multiplies
        ``x**k``).  Odd entries must vanish and the leading one must be > 0.
    alpha : float
        Quadratic coefficient of ``W(y) = y**4/4 + alpha*y**2/2``.
    tau : float
        Coupling constant, strictly positive.
    """

    v_coeffs: tuple = field(default=(0.0, 0.0, 0.5))
    alpha: float = 0.0
    tau: float = 1.0

    def __post_init__(self):
        c = np.trim_zeros(np.asarray(self.v_coeffs, dtype=float), "b")
        if c.size < 3:
            raise ValueError("V must be a non-constant even polynomial")
        if np.any(c[1::2] != 0.0):
            raise ValueError("V must contain even powers only")
        if c[-1] <= 0.0:
            raise ValueError("leading coefficient of V must be positive")
        if not (self.tau > 0.0 and np.isfinite(self.tau)):
            raise ValueError("tau must be a positive finite number")
        if not np.isfinite(self.alpha):
            raise ValueError("alpha must be finite")
        object.__setattr__(self, "v_coeffs", tuple(float(v) for v in c))
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "tau", float(self.tau))

    @classmethod
    def quadratic(cls, alpha: float, tau: float) -> "PotentialSpec":
        """The ``V(x) = x**2/2`` model of the phase diagram."""
        return cls((0.0, 0.0, 0.5), alpha, tau)

    @property
    def deg_v(self) -> int:
        return len(self.v_coeffs) - 1

    @property
    def w_coeffs(self) -> tuple:
        return (0.0, 0.0, 0.5 * self.alpha, 0.0, 0.25)

    def to_dict(self) -> dict:
        return {"v_coeffs": list(self.v_coeffs), "alpha": self.alpha, "tau": self.tau}


def eval_potential(spec: PotentialSpec, which: str, x):
    """Evaluate ``V`` or ``W`` at ``x`` (Horner)."""
    return P.polyval(x, _coeffs(spec, which))


def eval_potential_derivative(spec: PotentialSpec, which: str, x):
    """Evaluate ``V'`` or ``W'`` at ``x``."""
    return P.polyval(x, P.polyder(_coeffs(spec, which)))


def _coeffs(spec, which):
    if which in ("V", "v"):
        return np.asarray(spec.v_coeffs)
    if which in ("W", "w"):
        return np.asarray(spec.w_coeffs)
    raise ValueError(f"unknown potential {which!r}; expected 'V' or 'W'")


def solve_depressed_cubic(p, q):
    """Real roots of ``u**3 + p*u + q = 0``.

    Vectorised over ``q`` (``p`` is a scalar).  Returns an array of shape
    ``q.shape + (3,)``; rows with a single real root carry it in column 0 and
    NaN elsewhere, rows with three real roots are sorted ascending.  Every root
    gets one Newton correction, which brings the residual to rounding level.
    """
    p = float(p)
    q = np.asarray(q, dtype=float)
    out = np.full(q.shape + (3,), np.nan)
    # discriminant of the rescaled cubic, so tiny or huge inputs cannot underflow
    s = np.maximum(np.sqrt(abs(p)), np.cbrt(np.abs(q)))
    with np.errstate(divide="ignore", invalid="ignore"):
        disc = np.where(s > 0.0, 4.0 * (p / s**2) ** 3 + 27.0 * (q / s**3) ** 2, 0.0)
    three = disc < 0.0          # implies p < 0
    double = disc == 0.0
    one = ~(three | double)

    if np.any(three):
        qs = q[three]
        r = 2.0 * np.sqrt(-p / 3.0)
        arg = np.clip(1.5 * qs / p * np.sqrt(-3.0 / p), -1.0, 1.0)
        theta = np.arccos(arg) / 3.0
        k = np.arange(3)
        roots = r * np.cos(theta[..., None] - 2.0 * np.pi * k / 3.0)
        out[three] = np.sort(roots, axis=-1)

    if np.any(double):
        qs = q[double]
        if p == 0.0:
            out[double] = 0.0
        else:
            # simple root 3q/p, double root -3q/(2p)
            simple = 3.0 * qs / p
            dbl = -1.5 * qs / p
            out[double] = np.sort(np.stack([simple, dbl, dbl], axis=-1), axis=-1)

    if np.any(one):
        qs = q[one]
        # the scaled test can disagree with this expression by rounding
        d = np.sqrt(np.maximum(qs**2 / 4.0 + p**3 / 27.0, 0.0))
        sgn = np.where(qs > 0.0, -1.0, 1.0)
        u = np.cbrt(-qs / 2.0 + sgn * d)
        with np.errstate(divide="ignore", invalid="ignore"):
            root = np.where(u != 0.0, u - p / (3.0 * u), 0.0)
        out[one, 0] = root

    # one safeguarded Newton step per root
    f = out**3 + p * out + q[..., None]
    fp = 3.0 * out**2 + p
    with np.errstate(divide="ignore", invalid="ignore"):
        step = np.where(np.abs(fp) > 1e-8 * (1.0 + np.abs(p)), f / fp, 0.0)
    refined = out - step
    keep = np.abs(refined**3 + p * refined + q[..., None]) <= np.abs(f)
    out = np.where(keep, refined, out)
    return out


@dataclass(frozen=True)
class CubicCriticalPoints:
    """Stationary points of ``s -> W(s) - tau*x*s`` at one ``x``.

    ``s1`` is the global minimiser (the nonnegative one on a tie); ``s2`` and
    ``s3`` are the second local minimum and the local maximum, present only
    when ``alpha < 0`` and ``|x| <= x*``.
    """

    x: float
    s1: float
    s2: Optional[float] = None
    s3: Optional[float] = None

    def roots(self) -> list:
        return [s for s in (self.s1, self.s2, self.s3) if s is not None]


def _objective(spec, x, s):
    return 0.25 * s**4 + 0.5 * spec.alpha * s**2 - spec.tau * x * s


def _classify(spec: PotentialSpec, x, roots):
    """Vectorised (s1, s2, s3) with NaN where a point does not exist."""
    x = np.asarray(x, dtype=float)
    lo, mid, hi = roots[..., 0], roots[..., 1], roots[..., 2]
    has3 = ~np.isnan(hi)
    s1 = np.where(has3, np.where(x < 0.0, lo, hi), lo)
    s2 = np.where(has3, np.where(x < 0.0, hi, lo), np.nan)
    s3 = np.where(has3, mid, np.nan)
    # x = 0 with a double well: tie, both outer roots are global minima.
    # Otherwise the root on the side of tau*x wins; confirm by value anyway.
    f1 = _objective(spec, x, s1)
    f2 = _objective(spec, x, s2)
    swap = has3 & (f2 < f1) & (x != 0.0)
    s1, s2 = np.where(swap, s2, s1), np.where(swap, s1, s2)
    return s1, s2, s3


def _critical_arrays(spec, x):
    x = np.asarray(x, dtype=float)
    roots = solve_depressed_cubic(spec.alpha, -spec.tau * x)
    return _classify(spec, x, roots)


def cubic_critical_points(spec: PotentialSpec, x: float) -> CubicCriticalPoints:
    """Classify the real roots of ``s**3 + alpha*s = tau*x``."""
    s1, s2, s3 = (float(a) for a in _critical_arrays(spec, float(x)))
    if np.isnan(s2):
        return CubicCriticalPoints(float(x), s1)
    return CubicCriticalPoints(float(x), s1, s2, s3)


def x_star(spec: PotentialSpec) -> float:
    """Half-width of the interval where ``V3`` is nonzero (0 unless alpha < 0)."""
    if spec.alpha >= 0.0:
        return 0.0
    return 2.0 / spec.tau * (-spec.alpha / 3.0) ** 1.5


def y_star(spec: PotentialSpec) -> float:
    """Half-width of the gap in the support of ``sigma2`` (0 unless alpha > 0)."""
    if spec.alpha <= 0.0:
        return 0.0
    return 2.0 / spec.tau * (spec.alpha / 3.0) ** 1.5


def effective_field_v1(spec: PotentialSpec, x):
    """``V1(x) = V(x) + min_s (W(s) - tau*x*s)``."""
    x = np.asarray(x, dtype=float)
    s1, _, _ = _critical_arrays(spec, x)
    return eval_potential(spec, "V", x) + _objective(spec, x, s1)


def effective_field_v3(spec: PotentialSpec, x):
    """Barrier between the two local minima; zero outside ``(-x*, x*)``."""
    x = np.asarray(x, dtype=float)
    if spec.alpha >= 0.0:
        return np.zeros_like(x)
    _, s2, s3 = _critical_arrays(spec, x)
    inside = ~np.isnan(s2) & (np.abs(x) < x_star(spec))
    val = _objective(spec, x, np.where(inside, s3, 0.0)) - _objective(
        spec, x, np.where(inside, s2, 0.0)
    )
    return np.where(inside, np.maximum(val, 0.0), 0.0)


def sigma2_density(spec: PotentialSpec, t):
    """Density of the constraint on ``i R`` at ``z = i t`` w.r.t. ``|dz|``.

    With ``s = i u`` the equation ``s**3 + alpha*s = i*tau*t`` becomes the real
    cubic ``u**3 - alpha*u + tau*t = 0``.  Real ``u`` give purely imaginary
    ``s``; a complex pair ``-r/2 +- i*sqrt(3r**2/4 - alpha)`` around the real
    root ``r`` gives ``max Re s = sqrt(3r**2/4 - alpha)``.
    """
    t = np.asarray(t, dtype=float)
    roots = solve_depressed_cubic(-spec.alpha, spec.tau * t)
    single = np.isnan(roots[..., 2])
    r = roots[..., 0]
    re = np.sqrt(np.maximum(0.75 * r**2 - spec.alpha, 0.0))
    return np.where(single, spec.tau / np.pi * re, 0.0)


def v1_closed_form_alpha0(spec: PotentialSpec, x):
    """Reference ``V(x) - 3/4 |tau x|^{4/3}`` valid for alpha = 0."""
    x = np.asarray(x, dtype=float)
    return eval_potential(spec, "V", x) - 0.75 * np.abs(spec.tau * x) ** (4.0 / 3.0)


def sigma2_closed_form_alpha0(spec: PotentialSpec, t):
    """Reference ``sqrt(3)/(2 pi) tau^{4/3} |t|^{1/3}`` valid for alpha = 0."""
    t = np.asarray(t, dtype=float)
    return np.sqrt(3.0) / (2.0 * np.pi) * spec.tau ** (4.0 / 3.0) * np.abs(t) ** (1.0 / 3.0)


def check_closed_forms(spec: PotentialSpec, n_points: int = 1000, radius: float = 5.0) -> dict:
    """Max deviations of V1 and sigma2 from their alpha = 0 closed forms."""
    if spec.alpha != 0.0:
        raise ValueError("closed forms hold for alpha = 0 only")
    x = np.linspace(-radius, radius, n_points)
    dv1 = np.max(np.abs(effective_field_v1(spec, x) - v1_closed_form_alpha0(spec, x)))
    ds2 = np.max(np.abs(sigma2_density(spec, x) - sigma2_closed_form_alpha0(spec, x)))
    return {"n_points": n_points, "radius": radius, "max_dev_v1": float(dv1),
            "max_dev_sigma2": float(ds2)}
