"""Biorthogonal polynomials of the two-matrix weight and the correlation kernels.

For the weight ``w(x, y) = exp(-n (V(x) + W(y) - tau x y))`` the monic
families ``p_j`` and ``q_k`` satisfy ``int int p_j(x) q_k(y) w dx dy = h_k delta_jk``.
They follow from the LDU factorisation of the bimoment matrix
``M[j][k] = int int x^j y^k w``, which is computed exactly as the series

    M[j][k] = sum_m (n tau)^m / m! * a[j + m] * b[k + m],

with the one-dimensional moments ``a`` of ``exp(-n V)`` and ``b`` of
``exp(-n W)``.  All of this runs in extended precision (mpmath); the zeros of
the resulting polynomials are found in the same precision and the polynomials
are evaluated in double precision as products over them.  Transformed functions, kernels and all verification integrals use
tensor Gauss-Legendre panel quadrature on a box outside of which the weight is
negligible.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import mpmath as mp
import numpy as np

from .potentials import PotentialSpec, eval_potential

logger = logging.getLogger(__name__)

PANEL_NODES = 40
_GL40 = np.polynomial.legendre.leggauss(PANEL_NODES)


# ---- one-dimensional moments ------------------------------------------------

def _mp_poly(coeffs, x):
    return sum(mp.mpf(c) * x ** k for k, c in enumerate(coeffs) if c != 0.0)


def _mp_moment(coeffs, n, i):
    """``int x^i exp(-n P(x)) dx`` by tanh-sinh quadrature (even ``P``)."""
    if i % 2:
        return mp.mpf(0)
    f = lambda x: x ** i * mp.exp(-n * _mp_poly(coeffs, x))
    # split at a few points around the bulk so the quadrature sees the peak
    return 2 * mp.quad(f, [0, 0.5, 1, 2, 4, mp.inf])


def polynomial_moments(coeffs, n: int, count: int) -> list:
    """Moments ``int x^i exp(-n P(x)) dx`` for ``i < count`` (even polynomial ``P``).

    The lowest moments come from quadrature, the rest from the integration by
    parts identity ``n int x^i P'(x) e^{-nP} = i int x^(i-1) e^{-nP}``.
    """
    c = [float(v) for v in coeffs]
    d = len(c) - 1
    der = [k * c[k] for k in range(1, d + 1)]    # P'(x) = sum der[k-1] x^(k-1)
    a = [mp.mpf(0)] * count
    for i in range(0, min(count, d)):
        a[i] = _mp_moment(c, n, i)
    # sum_k der[k-1] a[i + k - 1] = (i / n) a[i - 1]
    lead = mp.mpf(der[-1])
    for top in range(d, count):
        i = top - d + 1
        acc = mp.mpf(i) / n * a[i - 1] if i >= 1 else mp.mpf(0)
        for k in range(1, d):
            if der[k - 1] != 0.0:
                acc -= der[k - 1] * a[i + k - 1]
        a[top] = acc / lead
    return a


# ---- bimoments and factorisation ---------------------------------------------

@dataclass
class BimomentMatrix:
    n: int
    size: int
    exact: object = field(repr=False)        # mpmath matrix
    terms: int = 0
    condition: float = float("nan")
    dps: int = 0

    def as_float(self) -> np.ndarray:
        return np.array(self.exact.tolist(), dtype=float)


def bimoment_matrix(spec: PotentialSpec, n: int, J: int, dps: int = 80) -> BimomentMatrix:
    """``M[j][k]`` for ``0 <= j, k <= J`` by the exact power series in ``n tau``."""
    if n < 1 or J < 0:
        raise ValueError("need n >= 1 and J >= 0")
    with mp.workdps(dps + 20):
        nt = mp.mpf(n) * mp.mpf(spec.tau)
        # series length: terms (n tau)^m / m! * a_m * b_m decay like 1/m!^(1/4)
        count = 2 * J + 64
        while True:
            a = polynomial_moments(spec.v_coeffs, n, count + J + 1)
            b = polynomial_moments(spec.w_coeffs, n, count + J + 1)
            coef = [nt ** m / mp.factorial(m) for m in range(count)]
            tail = max(abs(coef[m] * a[m] * b[m]) for m in range(count - 8, count))
            head = abs(a[0] * b[0])
            if tail < mp.mpf(10) ** (-(dps + 10)) * head:
                break
            count *= 2
            if count > 20000:
                raise RuntimeError("bimoment series did not converge")
        M = mp.matrix(J + 1, J + 1)
        for j in range(J + 1):
            for k in range(J + 1):
                if (j + k) % 2:
                    continue
                s = mp.mpf(0)
                for m in range(j % 2, count, 2):
                    s += coef[m] * a[j + m] * b[k + m]
                M[j, k] = s
    Mf = np.array(M.tolist(), dtype=float)
    scale = np.sqrt(np.abs(np.diag(Mf)))
    cond = float(np.linalg.cond(Mf / np.outer(scale, scale)))
    return BimomentMatrix(n, J + 1, M, count, cond, dps)


def _ldu(M, dps):
    """Doolittle ``M = L D U`` without pivoting (unit triangular L, U)."""
    N = M.rows
    with mp.workdps(dps):
        A = M.copy()
        L = mp.eye(N)
        U = mp.eye(N)
        D = [mp.mpf(0)] * N
        for k in range(N):
            D[k] = A[k, k]
            if D[k] == 0:
                return L, D[:k], U, k
            for i in range(k + 1, N):
                L[i, k] = A[i, k] / D[k]
                U[k, i] = A[k, i] / D[k]
            for i in range(k + 1, N):
                for j in range(k + 1, N):
                    A[i, j] -= L[i, k] * D[k] * U[k, j]
        return L, D, U, N


def _unit_lower_inverse(L, N):
    X = mp.eye(N)
    for i in range(N):
        for j in range(i):
            X[i, j] = -sum(L[i, k] * X[k, j] for k in range(j, i))
    return X


@dataclass
class BiorthogonalFamily:
    """Monic ``p_j`` / ``q_k`` with normalisations ``h_k = int int p_k q_k w``."""

    spec: PotentialSpec
    n: int
    degree: int
    p_coeffs: list = field(repr=False)     # mp coefficient lists, ascending powers
    q_coeffs: list = field(repr=False)
    h: np.ndarray = field(default=None)
    h_exact: list = field(default=None, repr=False)
    bimoments: BimomentMatrix = field(default=None, repr=False)
    box: tuple = (0.0, 0.0)
    p_zeros: list = field(default=None, repr=False)
    q_zeros: list = field(default=None, repr=False)
    notes: list = field(default_factory=list)
    _quad: dict = field(default_factory=dict, repr=False)

    # -- polynomial evaluation --
    # Monic polynomials are evaluated as products over their zeros (found in
    # extended precision), which keeps the relative accuracy on the whole box;
    # expanded bases lose everything to cancellation at high degree.
    def p(self, j: int, x) -> np.ndarray:
        return _product_eval(self.p_zeros[j], x)

    def q(self, k: int, y) -> np.ndarray:
        return _product_eval(self.q_zeros[k], y)

    def p_matrix(self, x, count: Optional[int] = None) -> np.ndarray:
        count = self.degree + 1 if count is None else count
        return np.array([self.p(j, x) for j in range(count)])

    def q_matrix(self, y, count: Optional[int] = None) -> np.ndarray:
        count = self.degree + 1 if count is None else count
        return np.array([self.q(k, y) for k in range(count)])

    def weight(self, x, y) -> np.ndarray:
        """``exp(-n (V(x) + W(y) - tau x y))`` on the outer product of ``x`` and ``y``."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        vx = eval_potential(self.spec, "V", x)
        wy = eval_potential(self.spec, "W", y)
        return np.exp(-self.n * (vx[..., :, None] + wy[..., None, :]
                                 - self.spec.tau * x[..., :, None] * y[..., None, :]))

    def quadrature(self, panels: Optional[int] = None):
        """Tensor Gauss-Legendre nodes/weights on the box (cached)."""
        panels = self._quad.get("panels", 16) if panels is None else panels
        key = ("nodes", panels)
        if key not in self._quad:
            X, Y = self.box
            self._quad[key] = (panel_rule(-X, X, panels), panel_rule(-Y, Y, panels))
        return self._quad[key]

    # -- transformed functions --
    def transformed_Q(self, k: int, x) -> np.ndarray:
        """``Q_k(x) = int q_k(y) w(x, y) dy``."""
        (_, _), (ys, wy) = self.quadrature()
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return self.weight(x, ys) @ (wy * self.q(k, ys))

    def transformed_P(self, j: int, y) -> np.ndarray:
        """``P_j(y) = int p_j(x) w(x, y) dx``."""
        (xs, wx), _ = self.quadrature()
        y = np.atleast_1d(np.asarray(y, dtype=float))
        return (wx * self.p(j, xs)) @ self.weight(xs, y)

    def Q_matrix(self, x, count: int) -> np.ndarray:
        (_, _), (ys, wy) = self.quadrature()
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return (self.q_matrix(ys, count) * wy) @ self.weight(x, ys).T

    def P_matrix(self, y, count: int) -> np.ndarray:
        (xs, wx), _ = self.quadrature()
        y = np.atleast_1d(np.asarray(y, dtype=float))
        return (self.p_matrix(xs, count) * wx) @ self.weight(xs, y)


def panel_rule(a: float, b: float, panels: int):
    """Composite 40-point Gauss-Legendre rule on ``[a, b]``."""
    t, w = _GL40
    edges = np.linspace(a, b, panels + 1)
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * np.diff(edges)
    x = (mid[:, None] + half[:, None] * t[None, :]).ravel()
    wt = (half[:, None] * w[None, :]).ravel()
    return x, wt


def _box(spec: PotentialSpec, n: int, J: int, drop: float = 80.0) -> tuple:
    """Half-widths ``(X, Y)`` beyond which the weight times ``|x|^J |y|^J`` is negligible.

    Uses the profiles ``min_y (V + W - tau x y)`` and ``min_x (...)`` scanned on
    a grid; the margin ``drop`` is in units of the exponent.
    """
    s = np.linspace(-30.0, 30.0, 6001)
    vs = eval_potential(spec, "V", s)
    ws = eval_potential(spec, "W", s)

    def profile(f_self, f_other):
        # min over the other variable of f_other(t) - tau * s * t
        out = np.empty_like(s)
        for lo in range(0, s.size, 500):
            blk = s[lo:lo + 500]
            out[lo:lo + 500] = np.min(f_other[None, :] - spec.tau * blk[:, None] * s[None, :], axis=1)
        return f_self + out

    limits = []
    for f_self, f_other in ((vs, ws), (ws, vs)):
        g = n * profile(f_self, f_other)
        g = g - g.min() - J * np.log1p(np.abs(s)) * 2.0
        inside = np.flatnonzero(g < drop)
        limits.append(float(max(abs(s[inside[0]]), abs(s[inside[-1]]))) + 0.5)
    return tuple(limits)


def _product_eval(zeros, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.ones(x.shape, dtype=complex if np.iscomplexobj(zeros) else float)
    for z in zeros:
        out = out * (x - z)
    return out.real if np.iscomplexobj(out) else out


def _real_if_close(z: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    if z.size == 0 or np.all(np.abs(z.imag) <= tol * np.maximum(1.0, np.abs(z.real))):
        return np.sort(z.real)
    return z


def biorthogonal_family(spec: PotentialSpec, n: int, J: int, dps: int = 80,
                        panels: int = 16) -> BiorthogonalFamily:
    """Monic biorthogonal families up to degree ``J`` for the weight at size ``n``."""
    bm = bimoment_matrix(spec, n, J, dps)
    with mp.workdps(dps):
        L, D, U, usable = _ldu(bm.exact, dps)
        notes = []
        if usable < J + 1:
            notes.append(f"leading minor {usable} vanishes; degrees truncated to {usable - 1}")
            J = usable - 1
        N = J + 1
        Linv = _unit_lower_inverse(L, N)
        Uinv = _unit_lower_inverse(U.T, N).T
        p = [[Linv[j, i] for i in range(j + 1)] for j in range(N)]
        q = [[Uinv[i, k] for i in range(k + 1)] for k in range(N)]
        # exact parity: p_j has only powers of the parity of j
        for coeffs in p + q:
            deg = len(coeffs) - 1
            for i in range(deg + 1):
                if (deg - i) % 2:
                    coeffs[i] = mp.mpf(0)
        h_exact = list(D[:N])
    if bm.condition > 1e14:
        notes.append(f"scaled bimoment condition {bm.condition:.2e}; extended precision used")
    X, Y = _box(spec, n, J)
    pz = [_real_if_close(polynomial_zeros(c, dps)) for c in p]
    qz = [_real_if_close(polynomial_zeros(c, dps)) for c in q]
    fam = BiorthogonalFamily(spec, n, J, p, q, np.array([float(v) for v in h_exact]), h_exact,
                             bm, (X, Y), pz, qz, notes)
    fam._quad["panels"] = _stable_panels(fam, panels)
    if n % 3:
        fam.notes.append(f"n = {n} is not a multiple of 3")
    return fam


def _stable_panels(fam: BiorthogonalFamily, start: int, tol: float = 1e-12) -> int:
    """Double the panel count until the quadrature pairing stops changing."""
    prev = None
    panels = start
    for _ in range(5):
        G = quadrature_pairing(fam, panels)
        if prev is not None and np.max(np.abs(G - prev)) <= tol * np.max(np.abs(np.diag(G))):
            return panels // 2
        prev = G
        panels *= 2
    return panels // 2


def quadrature_pairing(fam: BiorthogonalFamily, panels: Optional[int] = None) -> np.ndarray:
    """``G[j][k] = int int p_j q_k w`` by tensor quadrature, independent of the LDU."""
    (xs, wx), (ys, wy) = fam.quadrature(panels)
    Px = fam.p_matrix(xs) * wx
    Qy = fam.q_matrix(ys) * wy
    return Px @ fam.weight(xs, ys) @ Qy.T


def biorthogonality_residual(fam: BiorthogonalFamily) -> dict:
    """Off-diagonal pairing scaled by ``sqrt(h_j h_k)`` and diagonal mismatch."""
    G = quadrature_pairing(fam)
    h = fam.h
    scale = np.sqrt(np.abs(np.outer(h, h)))
    off = np.abs(G) / scale
    np.fill_diagonal(off, 0.0)
    diag = np.abs(np.diag(G) - h) / np.abs(h)
    return {"max_offdiag_scaled": float(off.max()), "max_diag_rel": float(diag.max())}


def check_parity(fam: BiorthogonalFamily, n_points: int = 25) -> float:
    x = np.linspace(0.1, 0.9, n_points) * fam.box[0]
    worst = 0.0
    for j in range(fam.degree + 1):
        a, b = fam.p(j, -x), (-1) ** j * fam.p(j, x)
        worst = max(worst, float(np.max(np.abs(a - b)) / max(1e-300, float(np.max(np.abs(b))))))
    return worst


# ---- zeros and interlacing -----------------------------------------------------

def polynomial_zeros(coeffs_mp, dps: int = 60) -> np.ndarray:
    deg = len(coeffs_mp) - 1
    if deg == 0:
        return np.array([])
    with mp.workdps(dps):
        r = mp.polyroots(list(reversed(coeffs_mp)), maxsteps=400, extraprec=4 * dps)
    r = np.array([complex(v) for v in r])
    return r


def zeros_report(fam: BiorthogonalFamily, which: str = "p") -> dict:
    """Reality/simplicity of the zeros and interlacing of consecutive degrees."""
    found = fam.p_zeros if which == "p" else fam.q_zeros
    zeros = []
    real_ok, simple_ok = True, True
    for z in found:
        if np.iscomplexobj(z):
            real_ok = False
        zr = np.sort(np.real(z))
        if zr.size > 1 and np.min(np.diff(zr)) <= 0.0:
            simple_ok = False
        zeros.append(zr)
    interlace = []
    for j in range(len(zeros) - 1):
        a, b = zeros[j], zeros[j + 1]
        ok = bool(np.all(b[:-1] < a) and np.all(a < b[1:])) if a.size else True
        interlace.append(ok)
    return {"zeros": zeros, "real": real_ok, "simple": simple_ok,
            "interlacing": interlace, "all_interlace": bool(all(interlace))}


# ---- multiple orthogonality ----------------------------------------------------

def weight_w(spec: PotentialSpec, n: int, k: int, x, tol: float = 1e-12) -> np.ndarray:
    """``w_k(x) = int y^k exp(-n (V(x) + W(y) - tau x y)) dy``, ``k = 0, 1, 2``.

    For each ``x`` the integration window is where the exponent lies within
    ``log(1e18)`` of its maximum (with room for ``y^k``); the window is split
    into 40-point Gauss-Legendre panels, which are doubled until two
    successive values agree to ``tol``.
    """
    if k not in (0, 1, 2):
        raise ValueError("k must be 0, 1 or 2 for quartic W")
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.empty(xs.shape)
    drop = math.log(1e18)
    for i, xv in enumerate(xs):
        g = lambda y: n * (eval_potential(spec, "W", y) - spec.tau * xv * y)
        s = np.linspace(-20.0, 20.0, 8001) + np.cbrt(spec.tau * xv)
        gs = g(s)
        gmin = float(gs.min())
        mk = gs - gmin - k * np.log1p(np.abs(s))
        inside = np.flatnonzero(mk < drop + 5.0)
        lo, hi = s[max(inside[0] - 1, 0)], s[min(inside[-1] + 1, s.size - 1)]
        panels, prev = 2, None
        while True:
            y, wy = panel_rule(lo, hi, panels)
            val = float(np.sum(wy * y ** k * np.exp(-(g(y) - gmin))))
            if prev is not None and abs(val - prev) <= tol * max(abs(val), abs(prev), 1e-300):
                break
            if prev is not None and panels > 256:
                break
            prev, panels = val, panels * 2
        out[i] = val * np.exp(-gmin - n * float(eval_potential(spec, "V", xv)))
    return out if np.ndim(x) else out[0]


def mop_ranges(j: int, r: int = 3) -> dict:
    """``k -> number of vanishing moments`` (``l = 0 .. ceil((j - k) / r) - 1``)."""
    return {k: max(0, -(-(j - k) // r)) for k in range(r)}


def verify_mop_conditions(fam: BiorthogonalFamily, j: int) -> dict:
    """All multiple-orthogonality integrals of ``p_j`` by quadrature.

    Each integral is scaled by ``int |p_j(x) x^l w_k(x)| dx``.
    """
    (xs, wx), (ys, wy) = fam.quadrature()
    W = fam.weight(xs, ys)
    pj = fam.p(j, xs)
    worst, entries = 0.0, []
    for k, count in mop_ranges(j).items():
        wk = W @ (wy * ys ** k)
        for l in range(count):
            f = pj * xs ** l * wk
            val = float(np.sum(wx * f))
            scale = float(np.sum(wx * np.abs(f)))
            r = abs(val) / scale if scale > 0 else 0.0
            worst = max(worst, r)
            entries.append({"k": k, "l": l, "integral": val, "scaled": r})
    return {"j": j, "n_conditions": len(entries), "max_scaled": worst, "entries": entries}


# ---- kernels -------------------------------------------------------------------

def _check_degree(fam, n):
    if fam.degree < n - 1:
        raise ValueError(f"family has degree {fam.degree}; kernel needs {n - 1}")


def kernel(fam: BiorthogonalFamily, which: str, u, v, n: Optional[int] = None) -> np.ndarray:
    """Kernel ``K^(1,1)``, ``K^(1,2)``, ``K^(2,1)`` or ``K^(2,2)`` on the grid ``u x v``.

    Sums run over ``k < n`` (default: the weight's ``n``) with ``1 / h_k``.
    """
    n = fam.n if n is None else n
    _check_degree(fam, n)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    hinv = 1.0 / fam.h[:n]
    which = str(which)
    if which == "11":
        return (fam.p_matrix(u, n) * hinv[:, None]).T @ fam.Q_matrix(v, n)
    if which == "12":
        return (fam.p_matrix(u, n) * hinv[:, None]).T @ fam.q_matrix(v, n)
    if which == "21":
        # K21(y, x): u are y values, v are x values
        return ((fam.P_matrix(u, n) * hinv[:, None]).T @ fam.Q_matrix(v, n)
                - fam.weight(v, u).T)
    if which == "22":
        return (fam.P_matrix(u, n) * hinv[:, None]).T @ fam.q_matrix(v, n)
    raise ValueError("which must be one of '11', '12', '21', '22'")


def kernel_diagonal(fam: BiorthogonalFamily, x, n: Optional[int] = None) -> np.ndarray:
    """``K^(1,1)(x, x)``: the mean eigenvalue density of ``M1`` times ``n``."""
    n = fam.n if n is None else n
    _check_degree(fam, n)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    hinv = 1.0 / fam.h[:n]
    return np.sum(fam.p_matrix(x, n) * hinv[:, None] * fam.Q_matrix(x, n), axis=0)


def kernel_checks(fam: BiorthogonalFamily, n: Optional[int] = None, n_probe: int = 7) -> dict:
    """Trace, positivity and reproducing property of ``K^(1,1)``."""
    n = fam.n if n is None else n
    (xs, wx), _ = fam.quadrature()
    diag = kernel_diagonal(fam, xs, n)
    trace = float(np.sum(wx * diag))
    probe = np.linspace(-0.6, 0.6, n_probe) * fam.box[0] * 0.5
    K_ps = kernel(fam, "11", probe, xs, n)          # K(x_i, s)
    K_sp = kernel(fam, "11", xs, probe, n)          # K(s, y_j)
    lhs = (K_ps * wx) @ K_sp
    rhs = kernel(fam, "11", probe, probe, n)
    scale = float(np.max(np.abs(rhs)))
    return {"n": n, "trace": trace, "trace_rel_error": abs(trace - n) / n,
            "min_diagonal": float(diag.min()),
            "reproducing_scaled": float(np.max(np.abs(lhs - rhs)) / scale)}


def mean_density(fam: BiorthogonalFamily, x, n: Optional[int] = None) -> np.ndarray:
    """``K^(1,1)(x, x) / n``."""
    n = fam.n if n is None else n
    return kernel_diagonal(fam, x, n) / n
