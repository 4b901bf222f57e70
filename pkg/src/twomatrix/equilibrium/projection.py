"""Euclidean projection onto the capped simplex ``{0 <= w <= caps, sum(w) = m}``."""

from __future__ import annotations

import numpy as np


class InfeasibleConstraintError(ValueError):
    """The caps cannot hold the requested total mass."""


def project_capped_simplex(weights, caps, target_mass: float, mult=None,
                           tol: float = 1e-12, max_bisect: int = 200) -> np.ndarray:
    """Project ``weights`` onto ``{0 <= w <= caps, sum(mult * w) = target_mass}``.

    The projection is taken in the metric ``sum(mult * dw**2)``, for which the
    solution is ``clip(weights - lam, 0, caps)`` with one scalar shift ``lam``.
    ``lam`` is bracketed by bisection until the mass error is below ``tol`` and
    then fixed exactly on the final linear piece.  ``caps`` may contain
    ``inf`` (or be None for no caps).

    Raises
    ------
    InfeasibleConstraintError
        If ``sum(mult * caps) < target_mass``.
    """
    y = np.asarray(weights, dtype=float)
    mult = np.ones_like(y) if mult is None else np.asarray(mult, dtype=float)
    cap = np.full_like(y, np.inf) if caps is None else np.asarray(caps, dtype=float)
    target = float(target_mass)
    capacity = float(np.sum(mult * cap))
    if capacity < target * (1.0 - 1e-14):
        raise InfeasibleConstraintError(
            f"caps hold {capacity:.6g} < required mass {target:.6g}")

    def mass(lam):
        return float(np.sum(mult * np.clip(y - lam, 0.0, cap)))

    if np.all(y >= 0.0) and np.all(y <= cap) and abs(np.sum(mult * y) - target) <= tol:
        return y.copy()

    finite = cap[np.isfinite(cap)]
    span = max(target, float(finite.max()) if finite.size else 0.0) / float(mult.min())
    lo, hi = float(y.min()) - span - 1.0, float(y.max())
    lam = None
    for _ in range(max_bisect):
        mid = 0.5 * (lo + hi)
        m = mass(mid)
        if abs(m - target) <= 0.1 * tol:
            lam = mid
            break
        if m > target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-16 * max(1.0, abs(mid)):
            break
    if lam is None:
        lam = 0.5 * (lo + hi)
    # exact shift on the linear piece containing lam
    z = y - lam
    free = (z > 0.0) & (z < cap)
    if np.any(free):
        at_cap = z >= cap
        fixed = float(np.sum(mult[at_cap] * cap[at_cap]))
        lam_exact = (fixed + float(np.sum(mult[free] * y[free])) - target) / float(np.sum(mult[free]))
        w = np.clip(y - lam_exact, 0.0, cap)
        if abs(np.sum(mult * w) - target) <= abs(mass(lam) - target):
            return w
    return np.clip(y - lam, 0.0, cap)
