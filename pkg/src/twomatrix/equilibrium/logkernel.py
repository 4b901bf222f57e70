"""Cell-averaged logarithmic interaction between piecewise-constant measures.

Entry ``(i, j)`` of a kernel matrix is the mean of ``-log|u - v|`` over
``cell_i x cell_j``; with masses ``m`` the mutual energy of two discrete
measures is ``m_a @ K @ m_b``.  Nearby cell pairs use exact antiderivatives
(which removes the diagonal singularity), distant pairs use tensor
Gauss-Legendre rules whose order is picked from the pair's separation.
"""

from __future__ import annotations

import numpy as np

from .grid import IMAG, REAL, Grid

_GL6 = np.polynomial.legendre.leggauss(6)
_GL3 = np.polynomial.legendre.leggauss(3)
_CHUNK = 250_000


def _g(t):
    # second antiderivative of log|t|
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        v = 0.5 * t * t * np.log(np.abs(t)) - 0.75 * t * t
    return np.where(t == 0.0, 0.0, v)


def same_axis_log_integral(a, b, c, d):
    """Exact ``int_a^b int_c^d log|u - v| dv du``."""
    return _g(b - c) - _g(a - c) - _g(b - d) + _g(a - d)


def _f_cross(x, y):
    # mixed antiderivative of log(x^2 + y^2)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    r2 = x * x + y * y
    with np.errstate(divide="ignore", invalid="ignore"):
        out = x * y * np.log(r2) - 3.0 * x * y
        out = out + np.where(x != 0.0, x * x * np.arctan(y / x), 0.0)
        out = out + np.where(y != 0.0, y * y * np.arctan(x / y), 0.0)
    return np.where(r2 == 0.0, 0.0, out)


def cross_axis_log_integral(a, b, c, d):
    """Exact ``int_a^b int_c^d log|x - i y| dy dx`` (``x`` real, ``i y`` imaginary)."""
    return 0.5 * (_f_cross(b, d) - _f_cross(a, d) - _f_cross(b, c) + _f_cross(a, c))


def _gauss_mean(a, b, c, d, cross, rule):
    t, w = rule
    hu, hv = 0.5 * (b - a), 0.5 * (d - c)
    u = (0.5 * (a + b))[:, None] + hu[:, None] * t[None, :]
    v = (0.5 * (c + d))[:, None] + hv[:, None] * t[None, :]
    if cross:
        vals = -0.5 * np.log(u[:, :, None] ** 2 + v[:, None, :] ** 2)
    else:
        vals = -np.log(np.abs(u[:, :, None] - v[:, None, :]))
    return 0.25 * np.einsum("pij,i,j->p", vals, w, w)


def _interval_gap(a, b, c, d):
    return np.maximum(0.0, np.maximum(c - b, a - d))


def _dist_to_zero(a, b):
    return np.where((a <= 0.0) & (b >= 0.0), 0.0, np.minimum(np.abs(a), np.abs(b)))


def pair_log_means(a, b, c, d, cross: bool) -> np.ndarray:
    """Mean of ``-log`` distance over each pair of cells ``[a,b] x [c,d]``.

    Arrays are flattened pair lists; ``cross`` selects the real/imaginary
    distance ``sqrt(u**2 + v**2)``.
    """
    a, b, c, d = (np.asarray(z, dtype=float).ravel() for z in (a, b, c, d))
    wmax = np.maximum(b - a, d - c)
    if cross:
        sep = np.maximum(_dist_to_zero(a, b), _dist_to_zero(c, d))
    else:
        sep = _interval_gap(a, b, c, d)
    out = np.empty(a.size)
    near = sep < 2.0 * wmax
    mid = ~near & (sep < 10.0 * wmax)
    far = ~near & ~mid
    if np.any(near):
        i = near
        area = (b[i] - a[i]) * (d[i] - c[i])
        fn = cross_axis_log_integral if cross else same_axis_log_integral
        out[i] = -fn(a[i], b[i], c[i], d[i]) / area
    for mask, rule in ((mid, _GL6), (far, _GL3)):
        idx = np.flatnonzero(mask)
        step = max(1, _CHUNK // (rule[0].size ** 2))
        for s in range(0, idx.size, step):
            j = idx[s:s + step]
            out[j] = _gauss_mean(a[j], b[j], c[j], d[j], cross, rule)
    return out


def log_kernel_matrix(ga: Grid, gb: Grid, rows=None, cols=None) -> np.ndarray:
    """Matrix of cell-averaged ``log(1/|u - v|)`` between two grids.

    ``rows`` / ``cols`` optionally restrict the computation to index subsets.
    Distinct grids on the same axis must not overlap.
    """
    cross = ga.axis != gb.axis
    if not cross and ga is not gb and not np.array_equal(ga.edges, gb.edges):
        lo = max(ga.edges[0], gb.edges[0])
        hi = min(ga.edges[-1], gb.edges[-1])
        if lo < hi:
            raise ValueError("distinct grids on the same axis overlap")
    ri = np.arange(ga.n_cells) if rows is None else np.asarray(rows)
    ci = np.arange(gb.n_cells) if cols is None else np.asarray(cols)
    A, C = np.meshgrid(ri, ci, indexing="ij")
    vals = pair_log_means(ga.lo[A], ga.hi[A], gb.lo[C], gb.hi[C], cross)
    return vals.reshape(A.shape)


def mutual_energy(ma, ga: Grid, mb, gb: Grid) -> float:
    """``I(mu_a, mu_b)`` for two discrete measures."""
    return float(np.asarray(ma) @ log_kernel_matrix(ga, gb) @ np.asarray(mb))


def potential_at(grid: Grid, masses, points, axis: str = REAL) -> np.ndarray:
    """Logarithmic potential ``int log(1/|z - s|) dmu(s)`` at point locations.

    ``points`` are coordinates on ``axis`` (so ``z = x`` or ``z = i x``).  The
    cell integral is taken in closed form, so points may lie inside cells.
    """
    x = np.atleast_1d(np.asarray(points, dtype=float))
    lo, hi = grid.lo[None, :], grid.hi[None, :]
    dens = np.asarray(masses) / grid.widths
    xx = x[:, None]
    if axis == grid.axis:
        # int_lo^hi log|x - s| ds
        with np.errstate(divide="ignore", invalid="ignore"):
            def prim(t):
                return np.where(t == 0.0, 0.0, t * np.log(np.abs(t)) - t)
            integ = prim(xx - lo) - prim(xx - hi)
        return -np.sum(integ * dens[None, :], axis=1)
    # distance |x - i s| or |i x - s|: int log sqrt(x^2 + s^2) ds
    def prim2(s):
        with np.errstate(divide="ignore", invalid="ignore"):
            r = 0.5 * s * np.log(xx * xx + s * s) - s
            r = r + np.where(xx != 0.0, xx * np.arctan(s / np.where(xx == 0.0, 1.0, xx)), 0.0)
        return np.where((xx == 0.0) & (s == 0.0), 0.0, r)
    integ = prim2(hi) - prim2(lo)
    return -np.sum(integ * dens[None, :], axis=1)
