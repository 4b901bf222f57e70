"""Phase diagram of the quadratic model ``V(x) = x**2/2`` in the (alpha, tau) plane.

The four cases are told apart by which of the sets ``S(mu1)``, ``S(mu3)`` and
``S(sigma2 - mu2)`` contain the origin:

====  ==========  ==========  ==================
case  0 in mu1    0 in mu3    0 in sigma2 - mu2
====  ==========  ==========  ==================
I     yes         yes         no
II    no          yes         no
III   no          no          yes
IV    yes         no          no
====  ==========  ==========  ==================

The closed-form rules use the curves ``tau**2 = alpha + 2`` and
``alpha*tau**2 = -1``, which meet at ``(-1, 1)``.
"""

from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .equilibrium.solver import SolverOptions
from .potentials import PotentialSpec
from .two_matrix import Resolution, TwoMatrixSolution, active_set, solve, support_mask

logger = logging.getLogger(__name__)

CASE_I, CASE_II, CASE_III, CASE_IV = "I", "II", "III", "IV"
PAINLEVE = "PainleveII-boundary"
PEARCEY = "Pearcey-boundary"
MULTICRITICAL = "Multicritical"
INDETERMINATE = "boundary-indeterminate"

CASES = (CASE_I, CASE_II, CASE_III, CASE_IV)
LABELS = CASES + (PAINLEVE, PEARCEY, MULTICRITICAL, INDETERMINATE)

# (0 in S(mu1), 0 in S(mu3), 0 in S(sigma2 - mu2)) -> case
MEMBERSHIP = {
    (True, True, False): CASE_I,
    (False, True, False): CASE_II,
    (False, False, True): CASE_III,
    (True, False, False): CASE_IV,
}


def painleve_residual(alpha: float, tau: float) -> float:
    return tau * tau - (alpha + 2.0)


def pearcey_residual(alpha: float, tau: float) -> float:
    return alpha * tau * tau + 1.0


@dataclass
class PhasePoint:
    alpha: float
    tau: float
    case_label: str
    source: str
    margins: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.case_label not in LABELS:
            raise ValueError(f"unknown case label {self.case_label!r}")
        if self.source not in ("closed-form", "numeric"):
            raise ValueError("source must be 'closed-form' or 'numeric'")

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "tau": self.tau, "case_label": self.case_label,
                "source": self.source, "margins": dict(self.margins),
                "details": dict(self.details)}


def curve_margins(alpha: float, tau: float) -> dict:
    """Residuals of both curve equations at a point."""
    return {"painleve": painleve_residual(alpha, tau), "pearcey": pearcey_residual(alpha, tau)}


def classify_closed_form(alpha: float, tau: float, tol: float = 1e-3) -> PhasePoint:
    """Case from the position of ``(alpha, tau)`` relative to the two curves."""
    if not tau > 0.0:
        raise ValueError("tau must be positive")
    m = curve_margins(alpha, tau)
    on_p, on_q = abs(m["painleve"]) <= tol, abs(m["pearcey"]) <= tol
    if on_p and on_q:
        label = MULTICRITICAL
    elif on_q:
        label = PEARCEY
    elif m["pearcey"] < 0.0:
        label = CASE_III
    elif on_p:
        label = PAINLEVE
    elif m["painleve"] < 0.0:
        label = CASE_I
    else:
        label = CASE_II if alpha > -1.0 else CASE_IV
    return PhasePoint(float(alpha), float(tau), label, "closed-form", m)


def _gap_cells(mask) -> int:
    """Half-width (in cells) of the run of ``False`` around the centre cell."""
    m = np.asarray(mask, dtype=bool)
    c = m.size // 2
    if m[c]:
        return 0
    on = np.flatnonzero(m[c:])
    return int(on[0]) if on.size else m.size - c


def origin_indicators(sol: TwoMatrixSolution, rel: Optional[float] = None,
                      gap_cells: int = 0) -> dict:
    """Membership of 0 in the three sets, each with a 'marginal' flag.

    A membership is marginal when the density at 0 is below ``rel`` of its
    reference scale (default: the resolution's ``origin_rel``).  With
    ``gap_cells > 0`` a gap around 0 no wider than that many cells on each
    side is marginal too; this is off by default because genuine gaps can be
    that narrow on coarse grids far from any transition.
    """
    rel = sol.resolution.origin_rel if rel is None else float(rel)
    o = sol.origin
    gap1 = _gap_cells(support_mask(sol.mu1.density))
    gap3 = _gap_cells(support_mask(sol.mu3.density))
    gap2 = _gap_cells(~active_set(sol.mu2))   # saturated run = gap of sigma2 - mu2

    def flag(inside, ratio, gap):
        return (inside and ratio < rel) or (not inside and gap <= gap_cells)

    r1 = o["rho1_0"] / o["rho1_max"] if o["rho1_max"] > 0 else 0.0
    r3 = o["rho3_0"] / o["rho3_ref"] if o["rho3_ref"] > 0 else 0.0
    r2 = o["free2_0"] / o["sigma2_0"] if o["sigma2_0"] > 0 else 0.0
    return {
        "mu1": {"inside": o["in_mu1"], "ratio": r1, "gap_cells": gap1,
                "marginal": flag(o["in_mu1"], r1, gap1)},
        "mu3": {"inside": o["in_mu3"], "ratio": r3, "gap_cells": gap3,
                "marginal": flag(o["in_mu3"], r3, gap3)},
        # with a zero cap at 0 the origin is outside S(sigma2 - mu2) for structural
        # reasons (alpha > 0), whatever the size of the saturated interval
        "free2": {"inside": o["in_free2"], "ratio": r2, "gap_cells": gap2,
                  "marginal": o["sigma2_0"] > 0.0 and flag(o["in_free2"], r2, gap2)},
    }


def label_from_indicators(ind: dict) -> str:
    """Map membership (and marginal flags) to a case or boundary label."""
    a, b, c = ind["mu1"], ind["mu3"], ind["free2"]
    marg = {k for k, v in (("mu1", a), ("mu3", b), ("free2", c)) if v["marginal"]}
    if not marg:
        return MEMBERSHIP.get((a["inside"], b["inside"], c["inside"]), INDETERMINATE)
    if marg == {"mu1", "mu3", "free2"}:
        return MULTICRITICAL
    # across the parabola one of the real-axis sets opens a gap at 0; across
    # the other curve the saturated interval closes together with such a gap
    if marg in ({"mu1"}, {"mu3"}):
        return PAINLEVE
    if marg in ({"mu1", "free2"}, {"mu3", "free2"}):
        return PEARCEY
    return INDETERMINATE


def classify_numeric(alpha: float, tau: float, resolution: Optional[Resolution] = None,
                     options: Optional[SolverOptions] = None, rel: Optional[float] = None,
                     gap_cells: int = 0) -> PhasePoint:
    """Case read off the solved equilibrium measures for ``V = x**2/2``."""
    spec = PotentialSpec.quadratic(alpha, tau)
    sol = solve(spec, resolution, options, raise_on_failure=True)
    ind = origin_indicators(sol, rel, gap_cells)
    label = label_from_indicators(ind)
    details = {"c2": sol.c2, "c3": sol.c3, "indicators": ind,
               "origin_rel": sol.resolution.origin_rel if rel is None else rel,
               "el_residual": sol.base.el_residual, "iterations": sol.base.iterations}
    return PhasePoint(float(alpha), float(tau), label, "numeric", curve_margins(alpha, tau), details)


@dataclass
class SweepCell:
    alpha: float
    tau: float
    closed_form: str
    numeric: str
    c2: float
    c3: float
    painleve: float
    pearcey: float
    near_curve: bool
    error: str = ""

    @property
    def agree(self) -> bool:
        return self.closed_form == self.numeric

    @property
    def flagged(self) -> bool:
        return not self.agree


def sweep_axes(alpha_range=(-4.0, 4.0), tau_range=(0.0, 4.0), n_alpha: int = 40,
               n_tau: int = 40) -> tuple:
    """Grid values: left-open, right-closed steps so the upper ends are included."""
    da = (alpha_range[1] - alpha_range[0]) / n_alpha
    dt = (tau_range[1] - tau_range[0]) / n_tau
    alphas = alpha_range[0] + da * np.arange(1, n_alpha + 1)
    taus = tau_range[0] + dt * np.arange(1, n_tau + 1)
    return alphas, taus, da, dt


def near_curves(alpha: float, tau: float, da: float, dt: float) -> bool:
    """True when a curve passes through the box of one grid step around the point."""
    corners = [(alpha + sa * da, max(tau + st * dt, 1e-12)) for sa in (-1, 1) for st in (-1, 1)]
    for f in (painleve_residual, pearcey_residual):
        vals = np.array([f(a, t) for a, t in corners])
        if vals.min() <= 0.0 <= vals.max():
            return True
    return False


def _sweep_task(args):
    alpha, tau, res, opts, tol = args
    cf = classify_closed_form(alpha, tau, tol)
    try:
        num = classify_numeric(alpha, tau, res, opts)
        return cf.case_label, num.case_label, num.details["c2"], num.details["c3"], ""
    except Exception as exc:   # keep the sweep going; the cell is flagged
        logger.warning("sweep cell (%g, %g) failed: %s", alpha, tau, exc)
        return cf.case_label, INDETERMINATE, float("nan"), float("nan"), repr(exc)


def sweep(alpha_range=(-4.0, 4.0), tau_range=(0.0, 4.0), n_alpha: int = 40, n_tau: int = 40,
          resolution: Optional[Resolution] = None, options: Optional[SolverOptions] = None,
          tol: float = 1e-3, workers: int = 1) -> list:
    """Closed-form and numeric labels on a rectangular grid of parameters."""
    res = resolution or Resolution.preset("coarse")
    alphas, taus, da, dt = sweep_axes(alpha_range, tau_range, n_alpha, n_tau)
    tasks = [(float(a), float(t), res, options, tol) for t in taus for a in alphas]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_task, tasks, chunksize=4))
    else:
        results = [_sweep_task(t) for t in tasks]
    cells = []
    for (a, t, *_), (cf, num, c2, c3, err) in zip(tasks, results):
        cells.append(SweepCell(a, t, cf, num, c2, c3, painleve_residual(a, t),
                               pearcey_residual(a, t), near_curves(a, t, da, dt), err))
    return cells


def sweep_summary(cells: list) -> dict:
    far_bad = [c for c in cells if c.flagged and not c.near_curve]
    return {"cells": len(cells), "agree": sum(c.agree for c in cells),
            "disagree": sum(c.flagged for c in cells),
            "disagree_far_from_curves": len(far_bad),
            "far_cells": [(c.alpha, c.tau, c.closed_form, c.numeric) for c in far_bad]}


SWEEP_COLUMNS = ("alpha", "tau", "closed_form_label", "numeric_label", "agree", "near_curve",
                 "c2", "c3", "painleve_margin", "pearcey_margin")


def sweep_to_csv(cells: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for c in cells:
        w.writerow([repr(c.alpha), repr(c.tau), c.closed_form, c.numeric, int(c.agree),
                    int(c.near_curve), repr(c.c2), repr(c.c3), repr(c.painleve), repr(c.pearcey)])
    return buf.getvalue()
