"""The three-measure equilibrium problem of the quartic two-matrix model.

``mu1`` lives on the real line (mass 1, field ``V1``), ``mu2`` on the
imaginary axis (mass 2/3, no field, bounded above by ``sigma2``) and ``mu3``
on the real line (mass 1/3, field ``V3``).  Consecutive measures attract, so
the interaction matrix is tridiagonal with ``-1/2`` off the diagonal.

Besides assembling and solving the problem this module reads off the
structural quantities of the minimiser: the support of ``mu1``, the half-width
``c2`` of the part of the imaginary axis where ``mu2`` saturates its
constraint, the half-width ``c3`` of the gap of ``mu3`` around 0, the local
exponents at every detected edge, and a regularity verdict.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage, optimize

from .equilibrium.grid import IMAG, REAL, Grid
from .equilibrium.solver import (EquilibriumProblem, EquilibriumSolution, MeasureBlock,
                                 NonConvergenceError, SolverOptions, check_growth_condition,
                                 minimize)
from .potentials import (PotentialSpec, effective_field_v1, effective_field_v3,
                         sigma2_density, x_star, y_star)

logger = logging.getLogger(__name__)

INTERACTION = np.array([[1.0, -0.5, 0.0],
                        [-0.5, 1.0, -0.5],
                        [0.0, -0.5, 1.0]])
MASSES = (1.0, 2.0 / 3.0, 1.0 / 3.0)
NAMES = ("mu1", "mu2", "mu3")

SUPPORT_REL = 1e-8
# a density at the origin below this fraction of its reference value counts as
# "nearly vanishing" (regularity and phase-boundary detection)
ORIGIN_REL = 0.1


@dataclass(frozen=True)
class Resolution:
    """Discretisation of the three measures.

    ``mu1`` gets a uniform grid on ``[-R1, R1]``; ``R1`` is the largest ``x``
    where ``V1(x) - (4/3) log(1 + x)`` is within ``field_margin`` of its minimum,
    times ``radius_factor``.  ``mu2`` and ``mu3`` share a uniform core of the
    same length scale and geometric tails out to ``outer_radius``: their
    densities decay only like ``|x|^(-5/3)``.  Both get a finer block around
    the origin: ``mu2`` on ``mu2_inner_fraction`` of the core, ``mu3`` on
    ``inner_factor * x*`` when ``alpha < 0``.
    """

    n_mu1: int = 401
    n_core: int = 401
    growth: float = 1.05
    outer_radius: float = 1e6
    field_margin: float = 6.0
    radius_factor: float = 1.1
    max_expand: int = 4
    sigma2_extra: float = 0.2
    inner_factor: float = 1.2
    mu2_inner_fraction: float = 0.1

    def __post_init__(self):
        if self.n_mu1 < 11 or self.n_core < 11:
            raise ValueError("need at least 11 cells per grid")
        if self.growth < 1.0:
            raise ValueError("growth factor must be >= 1")
        # odd counts keep one cell centred on the origin
        object.__setattr__(self, "n_mu1", int(self.n_mu1) | 1)
        object.__setattr__(self, "n_core", int(self.n_core) | 1)

    @classmethod
    def preset(cls, name: str) -> "Resolution":
        presets = {
            "coarse": cls(n_mu1=151, n_core=151, growth=1.12),
            "default": cls(),
            "fine": cls(n_mu1=801, n_core=801, growth=1.03),
        }
        if name not in presets:
            raise ValueError(f"unknown resolution preset {name!r}; choose from {sorted(presets)}")
        return presets[name]

    @property
    def origin_rel(self) -> float:
        """Relative density below which membership of 0 counts as marginal.

        The centre-cell average of a density that vanishes at 0 like a square
        root scales with the square root of the cell width, so the threshold
        does too: ``ORIGIN_REL`` at the default 401 cells, larger on coarser
        grids.
        """
        return ORIGIN_REL * float(np.sqrt(401.0 / self.n_mu1))

    def to_dict(self) -> dict:
        out = dict(self.__dict__)
        out["origin_rel"] = self.origin_rel
        return out


def mu1_radius(spec: PotentialSpec, res: Resolution) -> float:
    """Truncation radius for ``mu1`` from the confinement of its field."""
    xs = np.linspace(0.0, 10.0, 10001)
    for _ in range(8):
        f = effective_field_v1(spec, xs) - (4.0 / 3.0) * np.log1p(xs)
        inside = np.flatnonzero(f < f.min() + res.field_margin)
        if inside[-1] < xs.size - 1:
            return float(xs[inside[-1]] * res.radius_factor)
        xs = xs * 4.0
    raise ValueError("field V1 does not confine mu1 on any tested interval")


def assemble_problem(spec: PotentialSpec, resolution: Optional[Resolution] = None,
                     r1: Optional[float] = None) -> EquilibriumProblem:
    """Discretised three-measure problem for ``spec``.

    ``r1`` overrides the truncation radius of ``mu1``.
    """
    res = resolution or Resolution()
    R1 = mu1_radius(spec, res) if r1 is None else float(r1)
    core = max(R1, 1.5 * x_star(spec), 1.5 * y_star(spec))
    g1 = Grid.uniform(R1, res.n_mu1, REAL)
    outer = res.outer_radius
    required = MASSES[1] + res.sigma2_extra
    ys = y_star(spec)
    brk = (-ys, ys) if ys > 0.0 else ()
    # finer cells around 0 resolve short saturated intervals near the
    # transition where c2 shrinks to zero
    n_in = (res.n_core // 2) | 1
    r_in = res.mu2_inner_fraction * core
    if 0.0 < ys < r_in:
        # put +-y* on cell edges so the gap of sigma2 is made of whole cells
        h = ys / (np.ceil(ys * n_in / (2.0 * r_in) - 0.5) + 0.5)
        r_in = 0.5 * n_in * h
    while True:
        g2 = Grid.refined(r_in, n_in, core, res.n_core, max(outer, core), res.growth, IMAG)
        caps = g2.cell_integral(lambda t: sigma2_density(spec, t), 8, breakpoints=brk)
        if caps.sum() >= required:
            break
        if outer > 1e12:
            raise ValueError("sigma2 mass stays below 2/3 on every tested truncation")
        outer *= 10.0
    xs = x_star(spec)
    if xs > 0.0:
        # the gap edge of mu3 sits just inside (-x*, x*), where V3 has its kinks
        g3 = Grid.refined(res.inner_factor * xs, res.n_core // 2, core, res.n_core,
                          max(outer, core), res.growth, REAL)
    else:
        g3 = Grid.graded(core, res.n_core, max(outer, core), res.growth, REAL)
    blocks = (
        MeasureBlock(g1, MASSES[0], g1.cell_average(lambda x: effective_field_v1(spec, x)),
                     None, NAMES[0]),
        MeasureBlock(g2, MASSES[1], None, caps, NAMES[1]),
        MeasureBlock(g3, MASSES[2], g3.cell_average(lambda x: effective_field_v3(spec, x)),
                     None, NAMES[2]),
    )
    return EquilibriumProblem(blocks, INTERACTION)


@dataclass
class EdgeFit:
    """Local power law ``density ~ A |x - edge|^p`` near one support edge."""

    measure: str
    side: str
    edge: float
    exponent: float = float("nan")
    residual: float = float("nan")
    n_cells: int = 0
    indeterminate: bool = True
    note: str = ""

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class TwoMatrixSolution:
    spec: PotentialSpec
    resolution: Resolution
    base: EquilibriumSolution = field(repr=False)
    support_mu1: list
    c2: float
    c3: float
    origin: dict
    edge_fits: list = field(default_factory=list)
    regular: bool = False
    regularity_notes: list = field(default_factory=list)
    growth_report: list = field(default_factory=list, repr=False)
    expansions: int = 0

    @property
    def mu1(self):
        return self.base.measures[0]

    @property
    def mu2(self):
        return self.base.measures[1]

    @property
    def mu3(self):
        return self.base.measures[2]

    @property
    def edge_exponents(self) -> list:
        return [f.exponent for f in self.edge_fits if not f.indeterminate]

    def manifest(self) -> dict:
        out = self.base.manifest()
        out.update({
            "spec": self.spec.to_dict(),
            "resolution": self.resolution.to_dict(),
            "support_mu1": [list(iv) for iv in self.support_mu1],
            "c2": self.c2,
            "c3": self.c3,
            "origin": self.origin,
            "edges": [f.to_dict() for f in self.edge_fits],
            "regular": self.regular,
            "regularity_notes": list(self.regularity_notes),
            "growth_condition": self.growth_report,
            "radius_expansions": self.expansions,
        })
        return out


def support_mask(density, rel: float = SUPPORT_REL) -> np.ndarray:
    """Cells with density above ``rel * max``, cleaned of 1-2 cell speckle."""
    d = np.asarray(density, dtype=float)
    raw = d > rel * float(d.max()) if d.size and d.max() > 0 else np.zeros(d.shape, bool)
    st = np.ones(3, dtype=bool)
    mask = ndimage.binary_closing(raw, structure=st)
    mask = ndimage.binary_opening(mask, structure=st)
    # the morphology must not invent or erase mass-carrying cells at the ends
    mask[0], mask[-1] = raw[0], raw[-1]
    return mask


def mask_intervals(grid: Grid, mask) -> list:
    """Closed intervals covered by runs of ``True`` cells."""
    m = np.asarray(mask, dtype=bool)
    if not m.any():
        return []
    padded = np.concatenate([[False], m, [False]]).astype(int)
    starts = np.flatnonzero(np.diff(padded) == 1)
    stops = np.flatnonzero(np.diff(padded) == -1) - 1
    return [(float(grid.lo[a]), float(grid.hi[b])) for a, b in zip(starts, stops)]


def _center(grid: Grid) -> int:
    return grid.cell_index(0.0)


def _run_from_center(mask) -> int:
    """Number of consecutive ``True`` cells to the right of (and including) the centre."""
    m = np.asarray(mask, dtype=bool)
    c = m.size // 2
    if not m[c]:
        return 0
    off = np.flatnonzero(~m[c:])
    return int(off[0]) if off.size else m.size - c


def active_set(mu2, rel: float = 1e-9) -> np.ndarray:
    """Cells where ``mu2`` sits on its cap (this includes cells with zero cap)."""
    caps = mu2.caps
    slack = caps - mu2.masses
    scale = rel * float(np.max(caps / mu2.grid.widths))
    return slack / mu2.grid.widths <= scale


def gap_c2(mu2) -> float:
    """Half-width of the saturated interval around the origin (0 if none)."""
    k = _run_from_center(active_set(mu2))
    if k == 0:
        return 0.0
    g = mu2.grid
    return float(g.hi[_center(g) + k - 1])


def gap_c3(mu3, rel: float = SUPPORT_REL) -> float:
    """Half-width of the zero set of ``mu3`` around the origin (0 if none)."""
    k = _run_from_center(~support_mask(mu3.density, rel))
    if k == 0:
        return 0.0
    g = mu3.grid
    return float(g.lo[_center(g) + k])


def _fit_cell_power_law(dlo, dhi, dens, h):
    """Fit cell averages of ``A d^p exp(b d)`` with the edge offset free.

    ``dlo``/``dhi`` are the distances of the cell ends from a reference point;
    the true distance is ``d + s`` with ``s`` fitted.  Averaging the model over
    each cell (rather than sampling it at the midpoint) removes the bias of
    the cells nearest the edge.  Returns ``(p, rms residual, s)``.
    """
    logd = np.log(dens)

    def model(th):
        la, p, s, b = th
        a = np.maximum(dlo + s, 0.0)
        c = dhi + s
        return la + np.log((c ** (p + 1) - a ** (p + 1)) / ((p + 1) * (dhi - dlo))) + b * 0.5 * (a + c)

    x0 = [logd[-1] - 0.5 * np.log(dhi[-1]), 0.5, 0.25 * h, 0.0]
    lb = [-np.inf, -0.9, -0.99 * float(dlo.min()), -np.inf]
    ub = [np.inf, 3.0, h, np.inf]
    res = optimize.least_squares(lambda th: model(th) - logd, x0, bounds=(lb, ub),
                                 xtol=1e-14, ftol=1e-14)
    r = res.fun
    return float(res.x[1]), float(np.sqrt(np.mean(r * r))), float(res.x[2])


def fit_edge(grid: Grid, density, edge_cell: int, direction: int, measure: str, side: str,
             window: tuple = (5, 25), skip: int = 1) -> EdgeFit:
    """Exponent of the density at an edge.

    ``edge_cell`` is the outermost supported cell and ``direction`` points from
    the edge into the support (+1 or -1).  The fit uses up to ``window[1]``
    cells after skipping ``skip`` cells next to the edge, stopping at the first
    local maximum of the density and at half the length of the supported run;
    the edge position itself is a free parameter within the outermost cells.
    Fewer than ``window[0]`` usable cells make the result indeterminate.
    """
    d = np.asarray(density, dtype=float)
    n = d.size
    outer = float(grid.lo[edge_cell] if direction > 0 else grid.hi[edge_cell])
    fitres = EdgeFit(measure, side, outer)
    if edge_cell in (0, n - 1):
        fitres.note = "support reaches the truncation boundary"
        return fitres
    steps = np.arange(0, n)
    idx = edge_cell + direction * steps
    idx = idx[(idx >= 0) & (idx < n)]
    zero = np.flatnonzero(d[idx] <= 0.0)
    run = idx[:zero[0]] if zero.size else idx
    half = run[: max(1, run.size // 2)]
    # monotone rise from the edge
    rise = np.flatnonzero(np.diff(d[half]) <= 0.0)
    if rise.size:
        half = half[:rise[0] + 1]
    sel = half[skip:skip + window[1]]
    h = float(grid.widths[edge_cell])
    # the model is cell-exact, so graded cells are fine as long as the window
    # stays on a comparable length scale
    w = grid.widths[sel]
    sel = sel[np.flatnonzero(np.cumprod((w <= 2.0 * h) & (w >= 0.5 * h)))]
    if sel.size < window[0]:
        fitres.note = f"only {sel.size} cells in the fit window"
        return fitres
    near_end = np.where(direction > 0, grid.lo[sel], grid.hi[sel])
    far_end = np.where(direction > 0, grid.hi[sel], grid.lo[sel])
    p, err, s = _fit_cell_power_law(np.abs(near_end - outer), np.abs(far_end - outer), d[sel], h)
    fitres.exponent, fitres.residual, fitres.n_cells = p, err, int(sel.size)
    fitres.edge = float(outer - direction * s)
    fitres.indeterminate = False
    return fitres


def _edge_fits(sol: TwoMatrixSolution) -> list:
    fits = []
    g1, m1 = sol.mu1.grid, sol.mu1
    mask = support_mask(m1.density)
    padded = np.concatenate([[False], mask, [False]]).astype(int)
    starts = np.flatnonzero(np.diff(padded) == 1)
    stops = np.flatnonzero(np.diff(padded) == -1) - 1
    for a, b in zip(starts, stops):
        fits.append(fit_edge(g1, m1.density, int(a), +1, "mu1", "left"))
        fits.append(fit_edge(g1, m1.density, int(b), -1, "mu1", "right"))
    if sol.c2 > 0.0:
        g2 = sol.mu2.grid
        k = _run_from_center(active_set(sol.mu2))
        free_density = (sol.mu2.caps - sol.mu2.masses) / g2.widths
        c = _center(g2)
        # first unsaturated cell plays the role of the outermost supported cell
        fits.append(fit_edge(g2, free_density, c + k, +1, "sigma2-mu2", "upper"))
        fits.append(fit_edge(g2, free_density, c - k, -1, "sigma2-mu2", "lower"))
    if sol.c3 > 0.0:
        g3 = sol.mu3.grid
        k = _run_from_center(~support_mask(sol.mu3.density))
        c = _center(g3)
        fits.append(fit_edge(g3, sol.mu3.density, c + k, +1, "mu3", "right"))
        fits.append(fit_edge(g3, sol.mu3.density, c - k, -1, "mu3", "left"))
    return fits


def origin_summary(base_measures, spec: PotentialSpec) -> dict:
    """Densities at 0 and their reference scales, for the three sets."""
    m1, m2, m3 = base_measures
    g1, g2, g3 = m1.grid, m2.grid, m3.grid
    c1, c2, c3 = _center(g1), _center(g2), _center(g3)
    core3 = np.abs(g3.nodes) <= g1.radius
    free2 = (m2.caps - m2.masses) / g2.widths
    sig0 = float(m2.caps[c2] / g2.widths[c2])
    sat = active_set(m2)
    return {
        "rho1_0": float(m1.density[c1]),
        "rho1_max": float(m1.density.max()),
        "free2_0": float(free2[c2]),
        "sigma2_0": sig0,
        "saturated_0": bool(sat[c2]),
        "rho3_0": float(m3.density[c3]),
        "rho3_ref": float(m3.density[core3].max()),
        "in_mu1": bool(support_mask(m1.density)[c1]),
        "in_free2": not bool(sat[c2]),
        "in_mu3": bool(support_mask(m3.density)[c3]),
    }


def regularity_report(sol: TwoMatrixSolution, rel: float = ORIGIN_REL,
                      exponent_range=(0.35, 0.65), margin_tol: float = 1e-6) -> tuple:
    """``(regular, notes)`` from interior densities, edge exponents and EL margins."""
    notes = []
    ok = True
    m1 = sol.mu1
    mask = support_mask(m1.density)
    interior = mask & np.roll(mask, 5) & np.roll(mask, -5)
    dmax = float(m1.density.max())
    if np.any(interior):
        dmin = float(m1.density[interior].min())
        if dmin <= rel * dmax:
            ok = False
            notes.append(f"mu1 density nearly vanishes inside its support ({dmin:.3g} vs max {dmax:.3g})")
    for f in sol.edge_fits:
        if f.indeterminate:
            ok = False
            notes.append(f"{f.measure} {f.side} edge indeterminate: {f.note}")
        elif not exponent_range[0] <= f.exponent <= exponent_range[1]:
            ok = False
            notes.append(f"{f.measure} {f.side} edge exponent {f.exponent:.3f} outside {exponent_range}")
    o = sol.origin
    if sol.c2 == 0.0 and o["free2_0"] <= rel * o["sigma2_0"]:
        ok = False
        notes.append(f"sigma2 - mu2 nearly vanishes at 0 ({o['free2_0']:.3g} vs sigma2 {o['sigma2_0']:.3g})")
    if sol.c3 == 0.0 and o["rho3_0"] <= rel * o["rho3_ref"]:
        ok = False
        notes.append(f"mu3 density nearly vanishes at 0 ({o['rho3_0']:.3g})")
    # strict variational inequality away from the supports (cells next to an
    # edge are excluded: the inequality degenerates continuously there)
    for k, (mu, rep) in enumerate(zip(sol.base.measures, sol.base.el_report)):
        if k == 1:
            continue
        supp = mu.masses > 0.0
        near = ndimage.binary_dilation(supp, iterations=5)
        off = ~near
        if np.any(off):
            margin = float(np.min(rep.potential[off] - rep.level))
            if margin <= margin_tol:
                ok = False
                notes.append(f"{NAMES[k]} variational inequality not strict off support (margin {margin:.3g})")
    if not notes:
        notes.append("densities positive inside supports, square-root edges, strict inequalities")
    return ok, notes


def _touches_boundary(mu1) -> bool:
    mask = support_mask(mu1.density)
    return bool(mask[0] or mask[-1] or mask[1] or mask[-2])


def solve(spec: PotentialSpec, resolution: Optional[Resolution] = None,
          options: Optional[SolverOptions] = None, raise_on_failure: bool = True
          ) -> TwoMatrixSolution:
    """Solve the three-measure problem and extract its structure.

    The ``mu1`` window is enlarged by 1.5 and the problem re-solved whenever
    the support reaches the last cells of the grid.
    """
    res = resolution or Resolution()
    R1 = mu1_radius(spec, res)
    expansions = 0
    while True:
        problem = assemble_problem(spec, res, r1=R1)
        base = minimize(problem, options, raise_on_failure=False)
        if not (_touches_boundary(base.measures[0]) and expansions < res.max_expand):
            break
        expansions += 1
        R1 *= 1.5
        logger.info("support of mu1 reaches the grid end; enlarging R1 to %.4g", R1)
    if not base.converged and raise_on_failure:
        raise NonConvergenceError(
            f"two-matrix problem at alpha={spec.alpha}, tau={spec.tau} did not converge "
            f"(EL residual {base.el_residual:.3e})", base)
    funcs = (lambda x: effective_field_v1(spec, x), None, lambda x: effective_field_v3(spec, x))
    growth = check_growth_condition(problem, funcs)
    m1, m2, m3 = base.measures
    sol = TwoMatrixSolution(
        spec=spec, resolution=res, base=base,
        support_mu1=mask_intervals(m1.grid, support_mask(m1.density)),
        c2=gap_c2(m2), c3=gap_c3(m3),
        origin=origin_summary(base.measures, spec),
        growth_report=growth, expansions=expansions,
    )
    sol.edge_fits = _edge_fits(sol)
    sol.regular, sol.regularity_notes = regularity_report(sol)
    return sol


def edge_exponent_check(sol: TwoMatrixSolution, edge: Optional[str] = None) -> list:
    """Edge fits of a solution, optionally filtered by measure name."""
    if edge is None:
        return list(sol.edge_fits)
    return [f for f in sol.edge_fits if f.measure == edge]


def solve_one_matrix(v_coeffs, n_cells: int = 2001, radius: Optional[float] = None,
                     options: Optional[SolverOptions] = None) -> EquilibriumSolution:
    """Equilibrium measure of mass 1 in the field ``V`` (ascending coefficients).

    A single real measure on a uniform grid; the default radius is
    the largest ``|x|`` with ``V(x) - 2 log(1 + |x|) < min + 6``, times 1.1.
    """
    c = np.asarray(v_coeffs, dtype=float)
    V = lambda x: np.polynomial.polynomial.polyval(x, c)
    if radius is None:
        xs = np.linspace(0.0, 50.0, 50001)
        f = V(xs) - 2.0 * np.log1p(xs)
        radius = 1.1 * float(xs[np.flatnonzero(f < f.min() + 6.0)[-1]])
    g = Grid.uniform(radius, int(n_cells), REAL)
    block = MeasureBlock(g, 1.0, g.cell_average(V), None, "mu")
    problem = EquilibriumProblem((block,), np.array([[1.0]]))
    return minimize(problem, options, raise_on_failure=True)
