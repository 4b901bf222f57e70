"""Discretised vector equilibrium problems and their minimisation.

The energy of ``k`` measures with interaction matrix ``C`` is

    E = sum_ij c_ij I(mu_i, mu_j) + sum_j int V_j dmu_j,

and after discretisation it is the quadratic form ``m^T (C kron K) m + V^T m``
in the cell masses.  The minimiser is found by projected gradient descent
with Barzilai-Borwein steps on the product of capped simplices, followed by
Newton solves on the identified free set.  When all data are even under
``x -> -x`` the iteration runs on one half of each grid.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .grid import DiscreteMeasure, Grid
from .logkernel import log_kernel_matrix
from .projection import InfeasibleConstraintError, project_capped_simplex

logger = logging.getLogger(__name__)


class NotPositiveDefiniteError(ValueError):
    """Interaction matrix fails the Cholesky test."""


@dataclass(frozen=True, eq=False)
class MeasureBlock:
    """One unknown measure: its grid, total mass, cell-averaged field and caps."""

    grid: Grid
    mass: float
    field: Optional[np.ndarray] = None
    caps: Optional[np.ndarray] = None
    name: str = ""

    def __post_init__(self):
        if not self.mass > 0.0:
            raise ValueError("total mass must be positive")
        n = self.grid.n_cells
        f = np.zeros(n) if self.field is None else np.asarray(self.field, dtype=float)
        if f.shape != (n,) or not np.all(np.isfinite(f)):
            raise ValueError("field must be finite with one value per cell")
        object.__setattr__(self, "field", f)
        if self.caps is not None:
            c = np.asarray(self.caps, dtype=float)
            if c.shape != (n,) or np.any(c < 0.0):
                raise ValueError("caps must be nonnegative with one value per cell")
            if c.sum() < self.mass:
                raise InfeasibleConstraintError(
                    f"caps of {self.name or 'measure'} hold {c.sum():.6g} < {self.mass:.6g}")
            object.__setattr__(self, "caps", c)


def check_positive_definite(C) -> tuple:
    """``(is_pd, smallest_eigenvalue)`` for a symmetric matrix."""
    C = np.asarray(C, dtype=float)
    lam = float(np.linalg.eigvalsh(C).min())
    try:
        np.linalg.cholesky(C)
        ok = True
    except np.linalg.LinAlgError:
        ok = False
    return ok and lam > 0.0, lam


@dataclass(frozen=True, eq=False)
class EquilibriumProblem:
    blocks: tuple
    interaction: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        C = np.atleast_2d(np.asarray(self.interaction, dtype=float))
        k = len(self.blocks)
        if C.shape != (k, k):
            raise ValueError("interaction matrix must be k x k")
        if not np.allclose(C, C.T, rtol=0.0, atol=1e-14):
            raise ValueError("interaction matrix must be symmetric")
        ok, lam = check_positive_definite(C)
        if not ok:
            raise NotPositiveDefiniteError(
                f"interaction matrix is not positive definite (min eigenvalue {lam:.3g})")
        object.__setattr__(self, "blocks", tuple(self.blocks))
        object.__setattr__(self, "interaction", C)

    @property
    def n_measures(self) -> int:
        return len(self.blocks)

    def kernel(self, i: int, j: int) -> np.ndarray:
        """Full cell kernel between grids ``i`` and ``j`` (cached)."""
        key = ("K", i, j)
        if key not in self._cache:
            if ("K", j, i) in self._cache:
                self._cache[key] = self._cache[("K", j, i)].T
            else:
                self._cache[key] = log_kernel_matrix(self.blocks[i].grid, self.blocks[j].grid)
        return self._cache[key]

    def shifted(self, shifts: Sequence[float]) -> "EquilibriumProblem":
        """Same problem with each field moved by a constant."""
        blocks = [MeasureBlock(b.grid, b.mass, b.field + s, b.caps, b.name)
                  for b, s in zip(self.blocks, shifts)]
        return EquilibriumProblem(tuple(blocks), self.interaction)

    def is_even(self, rtol: float = 1e-12) -> bool:
        for b in self.blocks:
            if not b.grid.is_symmetric():
                return False
            scale = 1.0 + np.abs(b.field)
            if np.any(np.abs(b.field - b.field[::-1]) > rtol * scale):
                return False
            if b.caps is not None and np.any(
                    np.abs(b.caps - b.caps[::-1]) > rtol * (1e-300 + b.caps.max())):
                return False
        return True


def energy(problem: EquilibriumProblem, masses: Sequence[np.ndarray]) -> float:
    """Discrete energy ``sum c_ij m_i K_ij m_j + sum V_j m_j``."""
    C = problem.interaction
    total = 0.0
    for i, bi in enumerate(problem.blocks):
        mi = np.asarray(masses[i], dtype=float)
        total += float(bi.field @ mi)
        for j in range(problem.n_measures):
            if C[i, j] != 0.0:
                total += C[i, j] * float(mi @ problem.kernel(i, j) @ np.asarray(masses[j]))
    return total


def effective_potential(problem: EquilibriumProblem, masses: Sequence[np.ndarray], j: int) -> np.ndarray:
    """Cell-averaged ``U_j = 2 sum_i c_ji U^{mu_i} + V_j`` on grid ``j``."""
    C = problem.interaction
    U = problem.blocks[j].field.copy()
    for i in range(problem.n_measures):
        if C[j, i] != 0.0:
            U += 2.0 * C[j, i] * (problem.kernel(j, i) @ np.asarray(masses[i]))
    return U


def check_growth_condition(problem: EquilibriumProblem, field_funcs=None) -> list:
    """Tail test of ``V_i(x) - (sum_j c_ij m_j) log(1 + x^2)`` at R, 2R, 4R.

    ``field_funcs`` may supply callables for the fields so they can be read
    beyond the grid; otherwise the outermost cell values are used at R only
    and the trend is judged from the last cells of the grid.
    """
    C = problem.interaction
    m = np.array([b.mass for b in problem.blocks])
    reports = []
    for i, b in enumerate(problem.blocks):
        coef = float(C[i] @ m)
        R = b.grid.radius
        xs = np.array([R, 2.0 * R, 4.0 * R])
        if field_funcs is not None and field_funcs[i] is not None:
            vals = np.asarray(field_funcs[i](xs), dtype=float)
        else:
            nodes = b.grid.nodes
            right = nodes > 0
            xs = nodes[right][-3:] if right.sum() >= 3 else nodes[-3:]
            vals = b.field[-xs.size:]
        g = vals - coef * np.log1p(xs**2)
        trend = np.diff(g)
        ok = bool(np.all(trend >= -1e-12) and np.all(np.isfinite(g)))
        if coef <= 0.0 and np.all(np.abs(vals) < 1e-300):
            # no field and no net repulsion: nothing confines the measure
            ok = coef < 0.0
        reports.append({"measure": b.name or str(i), "points": xs.tolist(),
                        "values": g.tolist(), "coefficient": coef, "pass": ok})
    return reports


@dataclass
class SolverOptions:
    tol: float = 1e-6
    max_iter: int = 50_000
    step_min: float = 1e-6
    step_max: float = 1e6
    symmetrize: str = "auto"      # "auto" | "on" | "off"
    polish: bool = True
    check_every: int = 10
    active_window: int = 50
    refresh_every: int = 500
    support_rel: float = 1e-9

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class ELReport:
    level: float
    residual_on: float
    residual_off: float
    residual_cap: float
    potential: np.ndarray = field(repr=False)

    @property
    def residual(self) -> float:
        return max(self.residual_on, self.residual_off, self.residual_cap)

    def to_dict(self) -> dict:
        return {"level": self.level, "residual_on_support": self.residual_on,
                "residual_off_support": self.residual_off,
                "residual_at_cap": self.residual_cap, "residual": self.residual}


@dataclass
class EquilibriumSolution:
    problem: EquilibriumProblem = field(repr=False)
    measures: tuple
    energy_value: float
    el_report: tuple
    iterations: int
    converged: bool
    newton_steps: int = 0
    wall_time: float = 0.0
    energy_history: list = field(default_factory=list, repr=False)

    @property
    def el_residual(self) -> float:
        return max(r.residual for r in self.el_report)

    def masses(self) -> list:
        return [m.masses for m in self.measures]

    def manifest(self) -> dict:
        return {
            "masses": [m.total_mass for m in self.measures],
            "energy": self.energy_value,
            "el": [r.to_dict() for r in self.el_report],
            "el_residual": self.el_residual,
            "iterations": self.iterations,
            "newton_steps": self.newton_steps,
            "converged": self.converged,
            "truncation_radii": [m.grid.radius for m in self.measures],
            "grids": [m.grid.to_dict() for m in self.measures],
            "wall_time_s": self.wall_time,
        }


class NonConvergenceError(RuntimeError):
    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


def el_report(masses, U, caps, support_rel=1e-9, widths=None) -> ELReport:
    """Complementarity residuals of the variational conditions for one measure."""
    m = np.asarray(masses, dtype=float)
    dens = m if widths is None else m / widths
    cap = np.full_like(m, np.inf) if caps is None else np.asarray(caps, dtype=float)
    fixed = cap <= 0.0
    at_cap = ~fixed & (m >= cap * (1.0 - 1e-12))
    thr = support_rel * float(dens.max()) if dens.size else 0.0
    free = ~fixed & ~at_cap & (dens > thr)
    off = ~fixed & ~at_cap & ~free
    if np.any(free):
        level = float(np.sum(m[free] * U[free]) / np.sum(m[free]))
    elif np.any(at_cap):
        level = float(U[at_cap].max())
    else:
        level = float(U[~fixed].min())
    r_on = float(np.max(np.abs(U[free] - level))) if np.any(free) else 0.0
    r_off = float(np.max(np.maximum(0.0, level - U[off]))) if np.any(off) else 0.0
    r_cap = float(np.max(np.maximum(0.0, U[at_cap] - level))) if np.any(at_cap) else 0.0
    return ELReport(level, r_on, r_off, r_cap, np.asarray(U))


class _Reduced:
    """Half-grid coordinates and assembled interaction operator."""

    def __init__(self, problem: EquilibriumProblem, symmetric: bool):
        self.problem = problem
        self.symmetric = symmetric
        self.rep, self.mult, self.full2red, self.offsets = [], [], [], [0]
        for b in problem.blocks:
            n = b.grid.n_cells
            idx = np.arange(n)
            if symmetric:
                mirror = n - 1 - idx
                rep = idx[idx >= mirror]
                mult = np.where(rep == n - 1 - rep, 1.0, 2.0)
                pos = np.empty(n, dtype=int)
                pos[rep] = np.arange(rep.size)
                pos[n - 1 - rep] = np.arange(rep.size)
            else:
                rep, mult, pos = idx, np.ones(n), idx
            self.rep.append(rep)
            self.mult.append(mult)
            self.full2red.append(pos)
            self.offsets.append(self.offsets[-1] + rep.size)
        N = self.offsets[-1]
        C = problem.interaction
        A = np.zeros((N, N))
        for i, bi in enumerate(problem.blocks):
            for j, bj in enumerate(problem.blocks):
                if C[i, j] == 0.0:
                    continue
                if j < i and C[j, i] != 0.0:
                    # mult_i A_ij = (mult_j A_ji)^T
                    Aji = A[self.sl(j), self.sl(i)]
                    A[self.sl(i), self.sl(j)] = (self.mult[j][:, None] * Aji).T / self.mult[i][:, None]
                    continue
                if symmetric:
                    Kh = log_kernel_matrix(bi.grid, bj.grid, rows=self.rep[i])
                    F = np.zeros((self.rep[i].size, self.rep[j].size))
                    np.add.at(F.T, self.full2red[j], Kh.T)
                else:
                    F = problem.kernel(i, j)
                A[self.sl(i), self.sl(j)] = C[i, j] * F
        self.A = A
        self.M = np.concatenate(self.mult)
        self.V = np.concatenate([b.field[r] for b, r in zip(problem.blocks, self.rep)])
        caps = []
        for b, r in zip(problem.blocks, self.rep):
            caps.append(np.full(r.size, np.inf) if b.caps is None else b.caps[r])
        self.caps = np.concatenate(caps)
        self.block_id = np.concatenate([np.full(r.size, k) for k, r in enumerate(self.rep)])

    def sl(self, k):
        return slice(self.offsets[k], self.offsets[k + 1])

    def expand(self, v, k):
        return v[self.sl(k)][self.full2red[k]]

    def reduce(self, m, k):
        return np.asarray(m, dtype=float)[self.rep[k]]

    def project(self, y):
        out = np.empty_like(y)
        for k, b in enumerate(self.problem.blocks):
            s = self.sl(k)
            out[s] = project_capped_simplex(y[s], self.caps[s], b.mass, self.mult[k])
        return out

    def gradient(self, v):
        return 2.0 * (self.A @ v) + self.V

    def energy(self, v):
        return float(np.sum(self.M * v * (self.A @ v + self.V)))


def _initial_guess(red: _Reduced) -> np.ndarray:
    parts = []
    for k, b in enumerate(red.problem.blocks):
        g = b.grid
        x = g.nodes[red.rep[k]]
        w = g.widths[red.rep[k]]
        f = b.field[red.rep[k]]
        if np.ptp(f) > 0.0:
            shape = np.exp(-np.clip(f - f.min(), 0.0, 50.0))
        else:
            shape = 1.0 / (1.0 + x * x)
        parts.append(w * shape)
    y = np.concatenate(parts)
    for k, b in enumerate(red.problem.blocks):
        s = red.sl(k)
        y[s] *= b.mass / np.sum(red.mult[k] * y[s])
    return red.project(y)


def _el_residual(red: _Reduced, v, U, support_rel):
    reports = []
    for k, b in enumerate(red.problem.blocks):
        s = red.sl(k)
        reports.append(el_report(v[s], U[s], red.caps[s], support_rel,
                                 b.grid.widths[red.rep[k]]))
    return reports


def _bound_state(red, v):
    lower = v <= 0.0
    upper = np.isfinite(red.caps) & (v >= red.caps)
    return lower, upper


def _newton_free_set(red: _Reduced, v):
    """Minimiser of the energy with the current bound cells frozen.

    Returns None when the KKT system is singular.
    """
    lower, upper = _bound_state(red, v)
    free = ~lower & ~upper
    fidx = np.flatnonzero(free)
    if fidx.size == 0:
        return None
    k = red.problem.n_measures
    bid = red.block_id[fidx]
    present = np.unique(bid)
    Mf = red.M[fidx]
    # rows scaled by mult make the free block symmetric
    S = 2.0 * Mf[:, None] * red.A[np.ix_(fidx, fidx)]
    fixed = np.where(free, 0.0, v)
    rhs_top = -Mf * (red.V[fidx] + 2.0 * (red.A[fidx] @ fixed))
    E = np.zeros((fidx.size, present.size))
    E[np.arange(fidx.size), np.searchsorted(present, bid)] = Mf
    rhs_bot = np.array([red.problem.blocks[j].mass - float(np.sum(red.M[red.sl(j)] * fixed[red.sl(j)]))
                        for j in present])
    kkt = np.block([[S, -E], [-E.T, np.zeros((present.size, present.size))]])
    rhs = np.concatenate([rhs_top, -rhs_bot])
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(sol)):
        return None
    target = fixed.copy()
    target[fidx] = sol[:fidx.size]
    return target


def minimize(problem: EquilibriumProblem, options: Optional[SolverOptions] = None,
             raise_on_failure: bool = False) -> EquilibriumSolution:
    """Minimise the discrete energy over the product of capped simplices.

    Each accepted step is a convex combination of the iterate and its
    projected-gradient point, with the exact line minimiser of the quadratic
    energy, so the energy never increases.  Whenever the set of cells sitting
    on a bound has been stable for ``active_window`` iterations, the energy is
    minimised exactly over the remaining free cells and the iterate moves
    towards that point as far as feasibility allows.
    """
    opts = options or SolverOptions()
    t0 = time.perf_counter()
    if opts.symmetrize == "on" and not problem.is_even():
        raise ValueError("symmetrisation requested for data that are not even")
    symmetric = opts.symmetrize == "on" or (opts.symmetrize == "auto" and problem.is_even())
    red = _Reduced(problem, symmetric)
    M = red.M

    v = _initial_guess(red)
    U = red.gradient(v)
    E = red.energy(v)
    history = [E]
    alpha = 1.0 / max(1.0, float(np.max(np.abs(red.A).sum(axis=1))))
    converged = False
    newton_steps = 0
    stable = 0
    prev_state = None
    reports = _el_residual(red, v, U, opts.support_rel)
    it = 0
    for it in range(1, opts.max_iter + 1):
        w = red.project(v - alpha * U)
        d = w - v
        dd = float(np.sum(M * d * d))
        if dd == 0.0:
            reports = _el_residual(red, v, U, opts.support_rel)
            converged = max(r.residual for r in reports) < opts.tol
            if converged:
                break
            alpha = min(opts.step_max, 10.0 * alpha)
            continue
        Ad = red.A @ d
        gd = float(np.sum(M * U * d))
        dHd = float(np.sum(M * d * Ad))
        lam = 1.0 if dHd <= 0.0 else min(1.0, max(0.0, -gd / (2.0 * dHd)))
        if gd >= 0.0:
            lam = 0.0
        if lam > 0.0:
            v = v + lam * d
            U = U + 2.0 * lam * Ad
            E = E + lam * gd + lam * lam * dHd
            history.append(E)
            sy = 2.0 * lam * lam * dHd
            alpha = lam * lam * dd / sy if sy > 0.0 else opts.step_max
        else:
            alpha = alpha * 0.1
        alpha = min(opts.step_max, max(opts.step_min, alpha))
        # snap tiny round-off so bound cells are exactly on their bounds
        v = red.project(v)
        if it % opts.refresh_every == 0:
            U = red.gradient(v)
            E = red.energy(v)

        state = _bound_state(red, v)
        if prev_state is not None and all(np.array_equal(a, b) for a, b in zip(state, prev_state)):
            stable += 1
        else:
            stable = 0
        prev_state = state

        if opts.polish and stable >= opts.active_window:
            stable = 0
            target = _newton_free_set(red, v)
            if target is not None:
                newton_steps += 1
                d = target - v
                with np.errstate(divide="ignore", invalid="ignore"):
                    up = np.where(d > 0, (red.caps - v) / d, np.inf)
                    dn = np.where(d < 0, -v / d, np.inf)
                tmax = float(min(1.0, np.min(up), np.min(dn)))
                if tmax > 0.0:
                    vn = red.project(v + tmax * d)
                    En = red.energy(vn)
                    if En <= E + 1e-14 * max(1.0, abs(E)):
                        v, E = vn, En
                        U = red.gradient(v)
                        history.append(E)

        if it % opts.check_every == 0 or stable == 0:
            reports = _el_residual(red, v, U, opts.support_rel)
            if max(r.residual for r in reports) < opts.tol:
                converged = True
                break

    U = red.gradient(v)
    E = red.energy(v)
    reports = _el_residual(red, v, U, opts.support_rel)
    converged = converged or max(r.residual for r in reports) < opts.tol
    measures, full_reports = [], []
    for k, b in enumerate(problem.blocks):
        m = red.expand(v, k)
        measures.append(DiscreteMeasure(b.grid, m, b.caps))
        Uk = red.expand(U, k)
        r = reports[k]
        full_reports.append(ELReport(r.level, r.residual_on, r.residual_off, r.residual_cap, Uk))
    sol = EquilibriumSolution(problem, tuple(measures), E, tuple(full_reports), it,
                              converged, newton_steps, time.perf_counter() - t0, history)
    logger.info("minimize: %d iterations, %d newton, residual %.3e, energy %.12g",
                it, newton_steps, sol.el_residual, E)
    if not converged:
        msg = f"no convergence after {it} iterations (EL residual {sol.el_residual:.3e})"
        logger.warning(msg)
        if raise_on_failure:
            raise NonConvergenceError(msg, sol)
    return sol
