"""Metropolis sampling of the matrix pair ``(M1, M2)``.

The density is proportional to ``exp(-n Tr(V(M1) + W(M2) - tau M1 M2))`` on
pairs of ``n x n`` Hermitian matrices.  A number of independent chains run in
lock-step: every proposal changes one Hermitian entry pair ``(i, j), (j, i)``
of one matrix in all chains simultaneously, and each chain accepts or rejects
on its own.  Entries are visited in a fixed (systematic) order; every single
update is reversible with respect to the target, so the sweep leaves it
invariant.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from .potentials import PotentialSpec

logger = logging.getLogger(__name__)

ACCEPT_LO, ACCEPT_HI = 0.25, 0.5


@dataclass
class ChainConfig:
    n: int = 9
    n_chains: int = 400
    step: float = 0.3          # initial proposal scale (adapted during burn-in)
    burn_in: int = 200         # sweeps
    thin: int = 10             # sweeps between retained samples
    samples: int = 28          # retained samples per chain
    seed: int = 0
    check_every: int = 10000   # proposals between cached-action checks

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("n must be at least 2")
        for name in ("n_chains", "thin", "samples", "check_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.burn_in < 0 or not self.step > 0.0:
            raise ValueError("burn_in must be >= 0 and step > 0")
        if self.n % 3:
            logger.warning("n = %d is not a multiple of 3", self.n)

    @property
    def n_eigenvalues(self) -> int:
        return self.n * self.n_chains * self.samples

    def to_dict(self) -> dict:
        return asdict(self)


def trace_poly(coeffs, M: np.ndarray) -> np.ndarray:
    """``Tr P(M)`` for a batch of matrices (last two axes)."""
    n = M.shape[-1]
    out = np.zeros(M.shape[:-2])
    out = out + coeffs[0] * n if len(coeffs) else out
    power = None
    for k in range(1, len(coeffs)):
        power = M if power is None else power @ M
        if coeffs[k] != 0.0:
            out = out + coeffs[k] * np.real(np.trace(power, axis1=-2, axis2=-1))
    return out


def action(spec: PotentialSpec, m1: np.ndarray, m2: np.ndarray) -> np.ndarray:
    """``n Tr(V(M1) + W(M2) - tau M1 M2)`` (batched)."""
    n = m1.shape[-1]
    coupling = np.real(np.einsum("...ij,...ji->...", m1, m2))
    return n * (trace_poly(spec.v_coeffs, m1) + trace_poly(spec.w_coeffs, m2)
                - spec.tau * coupling)


@dataclass
class MatrixPairState:
    """Batch of chain states; ``m1``/``m2`` have shape ``(chains, n, n)``."""

    m1: np.ndarray
    m2: np.ndarray
    action: np.ndarray
    seed: int = 0

    @classmethod
    def zeros(cls, spec: PotentialSpec, n: int, n_chains: int, seed: int = 0) -> "MatrixPairState":
        m1 = np.zeros((n_chains, n, n), dtype=complex)
        m2 = np.zeros_like(m1)
        return cls(m1, m2, action(spec, m1, m2), seed)

    @property
    def n(self) -> int:
        return self.m1.shape[-1]

    def recompute(self, spec: PotentialSpec) -> np.ndarray:
        return action(spec, self.m1, self.m2)

    def is_hermitian(self) -> bool:
        return bool(np.array_equal(self.m1, np.conj(np.swapaxes(self.m1, -1, -2)))
                    and np.array_equal(self.m2, np.conj(np.swapaxes(self.m2, -1, -2))))


def _poly_entry_delta(coeffs, M, i, j, delta):
    """Change of ``Tr P(M)`` when ``M[i, j] += delta`` (and its mirror)."""
    d = len(coeffs) - 1
    if d >= 3:
        new = M.copy()
        _apply(new, i, j, delta)
        return trace_poly(coeffs, new) - trace_poly(coeffs, M)
    out = np.zeros(M.shape[0])
    if d >= 1 and i == j:
        out = out + coeffs[1] * delta.real
    if d >= 2:
        m = M[:, i, j]
        if i == j:
            out = out + coeffs[2] * ((m.real + delta.real) ** 2 - m.real ** 2)
        else:
            out = out + coeffs[2] * 2.0 * (np.abs(m + delta) ** 2 - np.abs(m) ** 2)
    return out


def _apply(M, i, j, delta):
    if i == j:
        M[:, i, i] += delta.real
    else:
        M[:, i, j] += delta
        M[:, j, i] = np.conj(M[:, i, j])


def action_delta(spec: PotentialSpec, state: MatrixPairState, which: int, i: int, j: int,
                 delta) -> np.ndarray:
    """Exact change of the action when entry ``(i, j)`` of matrix ``which`` moves by ``delta``.

    ``delta`` is one value per chain (real on the diagonal).  The coupling
    term changes by ``-n tau 2 Re(delta conj(other[i, j]))`` off the diagonal
    and ``-n tau delta other[i, i]`` on it.
    """
    n = state.n
    delta = np.broadcast_to(np.asarray(delta, dtype=complex), state.action.shape)
    M, other = (state.m1, state.m2) if which == 1 else (state.m2, state.m1)
    coeffs = spec.v_coeffs if which == 1 else spec.w_coeffs
    dpoly = _poly_entry_delta(coeffs, M, i, j, delta)
    o = other[:, i, j]
    if i == j:
        dc = delta.real * o.real
    else:
        dc = 2.0 * np.real(delta * np.conj(o))
    return n * (dpoly - spec.tau * dc)


@dataclass
class ChainResult:
    eigenvalues: np.ndarray         # shape (samples, chains, n)
    acceptance: dict
    steps: dict
    diagnostics: dict = field(default_factory=dict)
    config: Optional[ChainConfig] = None

    @property
    def flat(self) -> np.ndarray:
        return self.eigenvalues.ravel()

    def manifest(self) -> dict:
        return {"config": self.config.to_dict() if self.config else None,
                "acceptance": self.acceptance, "steps": self.steps,
                "diagnostics": self.diagnostics,
                "n_eigenvalues": int(self.eigenvalues.size)}


def _sweep(spec, state, rng, steps, counts, pairs, check):
    n_ch = state.action.shape[0]
    for which in (1, 2):
        M = state.m1 if which == 1 else state.m2
        s = steps[which]
        for i, j in pairs:
            if i == j:
                delta = s * rng.standard_normal(n_ch) + 0j
            else:
                z = rng.standard_normal((n_ch, 2)) * (s / math.sqrt(2.0))
                delta = z[:, 0] + 1j * z[:, 1]
            dS = action_delta(spec, state, which, i, j, delta)
            u = rng.random(n_ch)
            accept = np.log(u) < -dS
            if not np.all(np.isfinite(dS)):
                raise FloatingPointError("non-finite action change")
            delta = np.where(accept, delta, 0.0)
            _apply(M, i, j, delta)
            state.action = state.action + np.where(accept, dS, 0.0)
            counts[which][0] += int(accept.sum())
            counts[which][1] += n_ch
            check()


def run_chain(spec: PotentialSpec, config: Optional[ChainConfig] = None) -> ChainResult:
    """Run the chains and return the eigenvalues of ``M1`` at each retained sweep."""
    cfg = config or ChainConfig()
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n
    state = MatrixPairState.zeros(spec, n, cfg.n_chains, cfg.seed)
    pairs = [(i, j) for i in range(n) for j in range(i, n)]
    steps = {1: cfg.step, 2: cfg.step}
    counter = {"proposals": 0, "max_drift": 0.0}

    def check():
        counter["proposals"] += 1
        if counter["proposals"] % cfg.check_every == 0:
            exact = state.recompute(spec)
            drift = float(np.max(np.abs(exact - state.action) / np.maximum(1.0, np.abs(exact))))
            counter["max_drift"] = max(counter["max_drift"], drift)
            state.action = exact

    # burn-in with step adaptation towards the acceptance window
    for sweep in range(cfg.burn_in):
        counts = {1: [0, 0], 2: [0, 0]}
        _sweep(spec, state, rng, steps, counts, pairs, check)
        for w in (1, 2):
            rate = counts[w][0] / counts[w][1]
            if rate < ACCEPT_LO or rate > ACCEPT_HI:
                steps[w] *= math.exp(rate - 0.375)
    counts = {1: [0, 0], 2: [0, 0]}
    eig = np.empty((cfg.samples, cfg.n_chains, n))
    for k in range(cfg.samples):
        for _ in range(cfg.thin):
            _sweep(spec, state, rng, steps, counts, pairs, check)
        eig[k] = np.linalg.eigvalsh(state.m1)
    acc = {f"m{w}": counts[w][0] / max(1, counts[w][1]) for w in (1, 2)}
    diag = {"max_action_drift": counter["max_drift"], "proposals": counter["proposals"],
            "wall_time": time.perf_counter() - t0, "hermitian": state.is_hermitian(),
            "odd_moments": odd_moment_report(eig.ravel())}
    for w, rate in acc.items():
        if not ACCEPT_LO <= rate <= ACCEPT_HI:
            logger.warning("acceptance of %s is %.3f, outside [%.2f, %.2f]", w, rate,
                           ACCEPT_LO, ACCEPT_HI)
    return ChainResult(eig, acc, {f"m{w}": steps[w] for w in (1, 2)}, diag, cfg)


def odd_moment_report(x: np.ndarray, orders=(1, 3)) -> dict:
    out = {}
    for k in orders:
        v = x ** k
        out[k] = {"mean": float(v.mean()), "stderr": float(v.std() / math.sqrt(v.size))}
    return out


# ---- comparison with reference densities ---------------------------------------

def semicircle_cdf(x, radius: float = 2.0) -> np.ndarray:
    u = np.clip(np.asarray(x, dtype=float) / radius, -1.0, 1.0)
    return 0.5 + (u * np.sqrt(1.0 - u * u) + np.arcsin(u)) / math.pi


def _cdf_from_density(grid: np.ndarray, density: np.ndarray):
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (density[1:] + density[:-1]) * np.diff(grid))])
    cum /= cum[-1]
    return lambda x: np.interp(x, grid, cum)


@dataclass
class ComparisonReport:
    ks: float
    ks_pvalue: float
    chi2: float
    dof: int
    chi2_pvalue: float
    moments: list

    def passes_chi2(self, level: float = 0.01) -> bool:
        return self.chi2_pvalue >= level

    def to_dict(self) -> dict:
        return asdict(self)


def compare_to_reference(samples, density=None, cdf=None, grid=None, bins=40,
                         min_expected: float = 5.0, n_moments: int = 4) -> ComparisonReport:
    """KS distance, Pearson chi-square on a histogram, and a moment table.

    The reference is either a CDF callable, or a density sampled on ``grid``
    (or a density callable together with ``grid``).
    """
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    N = x.size
    if cdf is None:
        if grid is None:
            raise ValueError("a grid is needed with a density reference")
        g = np.asarray(grid, dtype=float)
        d = density(g) if callable(density) else np.asarray(density, dtype=float)
        cdf = _cdf_from_density(g, d)
        mean_ref = [float(np.trapezoid(g ** k * d, g) / np.trapezoid(d, g))
                    for k in range(1, n_moments + 1)]
    else:
        mean_ref = [None] * n_moments
    ks = stats.kstest(x, cdf)
    lo, hi = x[0], x[-1]
    edges = np.linspace(lo, hi, bins + 1)
    edges[0], edges[-1] = -np.inf, np.inf
    p = np.diff(cdf(edges))
    obs = np.histogram(x, bins=edges)[0].astype(float)
    exp_ = p * N
    # merge sparse bins until every expected count reaches min_expected
    o_m, e_m = [], []
    acc_o = acc_e = 0.0
    for o, e in zip(obs, exp_):
        acc_o += o
        acc_e += e
        if acc_e >= min_expected:
            o_m.append(acc_o)
            e_m.append(acc_e)
            acc_o = acc_e = 0.0
    if acc_e > 0 and e_m:
        o_m[-1] += acc_o
        e_m[-1] += acc_e
    o_m, e_m = np.array(o_m), np.array(e_m)
    chi2 = float(np.sum((o_m - e_m) ** 2 / e_m))
    dof = max(1, len(e_m) - 1)
    moments = [{"order": k, "sample": float(np.mean(x ** k)), "reference": mean_ref[k - 1]}
               for k in range(1, n_moments + 1)]
    return ComparisonReport(float(ks.statistic), float(ks.pvalue), chi2, dof,
                            float(stats.chi2.sf(chi2, dof)), moments)
