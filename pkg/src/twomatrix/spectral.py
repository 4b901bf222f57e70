"""Cauchy transforms of cell measures and the first-sheet function ``xi1``.

``xi1(z) = V'(z) - int dmu1(x) / (z - x)`` is analytic off the support of
``mu1``.  The checks here are the ones that can be made with ``mu1`` alone:
the jump ``xi1_+ - xi1_- = 2 pi i rho1`` across the support, the behaviour at
infinity, and (for quadratic ``V``) a least-squares probe of the quartic
equation that ``xi1`` satisfies together with the other three sheets.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .equilibrium.grid import REAL, DiscreteMeasure, Grid
from .potentials import PotentialSpec, eval_potential_derivative

logger = logging.getLogger(__name__)


def _log_ratio(z, a, b):
    """``log((z - a) / (z - b))`` accurate also when ``|z|`` is far from the cell."""
    w = (b - a) / (z - b)
    # log(1 + w) with an accurate real part for small |w|
    re = 0.5 * np.log1p(2.0 * w.real + (w.real ** 2 + w.imag ** 2))
    im = np.arctan2(w.imag, 1.0 + w.real)
    return re + 1j * im


def cauchy_transform(measure: DiscreteMeasure, z, side: Optional[str] = None) -> np.ndarray:
    """``int dmu(x) / (z - x)`` for a piecewise-constant measure on the real line.

    Off the real axis the cell integrals ``rho (log(z - a) - log(z - b))`` are
    summed directly.  For real ``z`` inside the grid a ``side`` of ``'+'``
    (upper half plane) or ``'-'`` is required; the value is the principal
    value plus ``-+ i pi rho`` of the containing cell.  Real points exactly on
    a cell edge are rejected because the principal value is singular there.
    """
    g = measure.grid
    if g.axis != REAL:
        raise ValueError("cauchy_transform expects a measure on the real line")
    zz = np.atleast_1d(np.asarray(z, dtype=complex))
    rho = measure.density
    a, b = g.lo, g.hi
    out = np.empty(zz.shape, dtype=complex)
    real = zz.imag == 0.0
    inside = real & (zz.real > g.edges[0]) & (zz.real < g.edges[-1])
    off = ~inside
    if np.any(off):
        zo = zz[off]
        out[off] = _log_ratio(zo[:, None], a[None, :], b[None, :]) @ rho
    if np.any(inside):
        if side not in ("+", "-"):
            raise ValueError("real points inside the grid need side='+' or side='-'")
        x = zz[inside].real
        if np.any(np.isin(x, g.edges)):
            raise ValueError("real evaluation point coincides with a cell edge")
        with np.errstate(divide="ignore"):
            pv = np.log(np.abs(x[:, None] - a[None, :])) - np.log(np.abs(x[:, None] - b[None, :]))
        val = pv @ rho
        k = np.searchsorted(g.edges, x, side="right") - 1
        sign = -1.0 if side == "+" else 1.0
        out[inside] = val + 1j * sign * np.pi * rho[k]
    return out if np.ndim(z) else out[0]


def xi1(spec: PotentialSpec, mu1: DiscreteMeasure, z, side: Optional[str] = None):
    """``V'(z) - C_mu1(z)``."""
    zz = np.asarray(z, dtype=complex)
    vp = eval_potential_derivative(spec, "V", zz)
    return vp - cauchy_transform(mu1, zz, side)


def support_interior_points(mu1: DiscreteMeasure, rel: float = 0.05, stride: int = 1) -> np.ndarray:
    """Cell midpoints where the density exceeds ``rel`` of its maximum."""
    d = mu1.density
    idx = np.flatnonzero(d > rel * d.max())[::stride]
    return mu1.grid.nodes[idx]


def jump_check(spec: PotentialSpec, mu1: DiscreteMeasure, x=None) -> dict:
    """Compare ``(xi1_+ - xi1_-) / (2 pi i)`` with the stored density."""
    pts = support_interior_points(mu1) if x is None else np.asarray(x, dtype=float)
    jp = xi1(spec, mu1, pts, "+") - xi1(spec, mu1, pts, "-")
    rho = mu1.density[[mu1.grid.cell_index(p) for p in pts]]
    recovered = (jp / (2j * np.pi)).real
    rel = np.abs(recovered - rho) / np.abs(rho)
    return {"n_points": int(pts.size), "max_rel_error": float(rel.max()),
            "max_imag_part": float(np.max(np.abs((jp / (2j * np.pi)).imag)))}


def _circle(radius: float, n: int, offset: float = 0.0):
    th = (np.arange(n) + offset) * 2.0 * np.pi / n + 0.1
    return radius * np.exp(1j * th)


def asymptotic_check(spec: PotentialSpec, mu1: DiscreteMeasure, factors=(10.0, 100.0),
                     n_angles: int = 64) -> dict:
    """``max |z (xi1 - V') + m|`` on circles of radius ``factor * R``.

    For a measure of mass ``m`` the limit of ``z (xi1 - V')`` is ``-m``.
    """
    R = mu1.grid.radius
    m = mu1.total_mass
    out = {}
    for f in factors:
        z = _circle(f * R, n_angles)
        val = z * (xi1(spec, mu1, z) - eval_potential_derivative(spec, "V", z))
        out[f"{f:g}R"] = float(np.max(np.abs(val + m)))
    return out


def pole_order_check(spec: PotentialSpec, mu1: DiscreteMeasure, factor: float = 100.0,
                     n_angles: int = 64) -> dict:
    """Magnitude range of ``xi1(z) / z^(deg V - 1)`` on a large circle."""
    z = _circle(factor * mu1.grid.radius, n_angles)
    order = spec.deg_v - 1
    q = np.abs(xi1(spec, mu1, z) / z ** order)
    return {"order": order, "min": float(q.min()), "max": float(q.max()),
            "bounded_nonzero": bool(np.isfinite(q).all() and q.min() > 0.0)}


# ---- quartic probe ---------------------------------------------------------

def _quartic_design(z, xi):
    """Rows of ``xi^4 = a1 z xi^3 - a2 xi^2 + a3 z xi - a4 z^2 - b4``.

    For even ``V`` of degree 2, ``xi1`` is odd, so ``e1`` and ``e3`` are odd
    and ``e2`` and ``e4`` are even polynomials; the degrees follow from the
    growth of the four branches at infinity (``z`` on the first sheet and
    ``z^(1/3)`` on the other three).
    """
    A = np.stack([z * xi ** 3, -xi ** 2, z * xi, -z ** 2, -np.ones_like(z)], axis=1)
    return A, xi ** 4


def _fit_quartic(z, xi):
    A, rhs = _quartic_design(z, xi)
    # column scaling keeps the least-squares problem well conditioned
    s = np.linalg.norm(A, axis=0)
    coef, *_ = np.linalg.lstsq(A / s, rhs, rcond=None)
    coef = coef / s
    return coef, float(np.linalg.cond(A / s))


def quartic_residual(coef, z, xi) -> np.ndarray:
    """``|xi^4 - e1 xi^3 + e2 xi^2 - e3 xi + e4| / |xi|^4``."""
    A, rhs = _quartic_design(z, xi)
    return np.abs(rhs - A @ coef) / np.abs(xi) ** 4


@dataclass
class QuarticProbe:
    coefficients: dict
    fit_residual: float
    heldout_residual: float
    condition: float
    perturbed_residual: float = float("nan")
    sensitivity_ratio: float = float("nan")
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def smooth_perturbation(mu: DiscreteMeasure, size: float, seed: int = 0, n_modes: int = 4,
                        edge: Optional[float] = None) -> DiscreteMeasure:
    """Masses times ``1 + size * u(x)`` with a random even profile ``max|u| = 1``.

    ``u`` is a random combination of ``cos(k pi x / edge)``, ``k = 1..n_modes``;
    the result keeps the total mass.
    """
    rng = np.random.default_rng(seed)
    x = mu.grid.nodes
    L = float(np.max(np.abs(x))) if edge is None else float(edge)
    c = rng.uniform(-1.0, 1.0, n_modes)
    u = sum(ck * np.cos((k + 1) * np.pi * x / L) for k, ck in enumerate(c))
    u = u / np.max(np.abs(u))
    m = mu.masses * (1.0 + size * u)
    m *= mu.total_mass / m.sum()
    return DiscreteMeasure(mu.grid, m)


def quartic_residual_probe(spec: PotentialSpec, mu1: DiscreteMeasure, radius: Optional[float] = None,
                           n_fit: int = 48, n_holdout: int = 31, perturb: float = 0.05,
                           seed: int = 0) -> QuarticProbe:
    """Fit the quartic equation of ``xi1`` on a circle and test it on other points.

    Only ``V(x) = c x**2`` is supported.  The fit circle defaults to 1.1 times
    the support radius: much further out the five coefficients cancel the
    leading Laurent terms of any odd function and the probe loses its power.
    The ``perturb`` control modulates the masses by a random smooth 5% profile
    (see :func:`smooth_perturbation`) and repeats fit and held-out evaluation.
    """
    if spec.deg_v != 2:
        raise ValueError("the quartic probe is implemented for quadratic V only")
    d = mu1.density
    edge = float(np.max(np.abs(mu1.grid.nodes[d > 1e-8 * d.max()])))
    r = 1.1 * edge if radius is None else float(radius)
    z_fit = _circle(r, n_fit)
    # held-out points: other angles and another radius
    z_out = np.concatenate([_circle(r, n_holdout, 0.37), _circle(1.2 * r, n_holdout, 0.71)])

    def probe(measure):
        coef, cond = _fit_quartic(z_fit, xi1(spec, measure, z_fit))
        fit_res = float(np.max(quartic_residual(coef, z_fit, xi1(spec, measure, z_fit))))
        out_res = float(np.max(quartic_residual(coef, z_out, xi1(spec, measure, z_out))))
        return coef, cond, fit_res, out_res

    coef, cond, fit_res, out_res = probe(mu1)
    names = ("a1", "a2", "a3", "a4", "b4")
    result = QuarticProbe({k: complex(c) for k, c in zip(names, coef)}, fit_res, out_res, cond)
    if cond > 1e12:
        result.notes.append(f"ill-conditioned fit (condition {cond:.2e}); no claim")
    if perturb > 0.0:
        _, _, _, pert_res = probe(smooth_perturbation(mu1, perturb, seed, edge=edge))
        result.perturbed_residual = pert_res
        result.sensitivity_ratio = pert_res / out_res if out_res > 0 else float("inf")
    return result


# ---- one-matrix oracle -----------------------------------------------------

def semicircle_measure(a: float, n_cells: int, mass: float = 1.0) -> DiscreteMeasure:
    """Exact cell masses of ``(2 mass / (pi a^2)) sqrt(a^2 - x^2)`` on ``[-a, a]``."""
    g = Grid.uniform(a, n_cells)

    def cdf(x):
        x = np.clip(x / a, -1.0, 1.0)
        return (x * np.sqrt(1.0 - x * x) + np.arcsin(x)) / np.pi + 0.5

    m = mass * (cdf(g.hi) - cdf(g.lo))
    return DiscreteMeasure(g, np.maximum(m, 0.0))


def one_matrix_quadratic_check(coef: float = 1.0, n_cells: int = 100_001, points=None) -> dict:
    """Residual of ``xi^2 - V' xi + Q = 0`` for ``V = coef x^2`` and its exact law.

    The equilibrium measure of ``coef x^2`` is the semicircle on
    ``[-a, a]`` with ``a^2 = 2/coef``; ``xi = V' - C`` then satisfies the
    quadratic with the constant ``Q = 2 coef``.
    """
    a = np.sqrt(2.0 / coef)
    mu = semicircle_measure(a, n_cells)
    spec = PotentialSpec((0.0, 0.0, coef), 0.0, 1.0)
    z = np.asarray([3.0, 2.0j, 1.0 + 1.0j, -2.5 + 0.5j, 0.3 + 0.8j, 10.0 - 4.0j]
                   if points is None else points, dtype=complex)
    xi = xi1(spec, mu, z)
    vp = eval_potential_derivative(spec, "V", z)
    Q = 2.0 * coef
    res = np.abs(xi * xi - vp * xi + Q)
    return {"n_cells": n_cells, "Q": Q, "max_residual": float(res.max()),
            "points": [complex(p) for p in z]}


def xi1_samples(spec: PotentialSpec, mu1: DiscreteMeasure, z) -> np.ndarray:
    """Rows ``(Re z, Im z, Re xi1, Im xi1)`` for export."""
    zz = np.atleast_1d(np.asarray(z, dtype=complex))
    v = xi1(spec, mu1, zz)
    return np.stack([zz.real, zz.imag, v.real, v.imag], axis=1)
