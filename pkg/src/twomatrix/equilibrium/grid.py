"""Cell grids on the real and imaginary axes, and measures living on them."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

REAL = "real"
IMAG = "imag"


@dataclass(frozen=True, eq=False)
class Grid:
    """A partition of ``[-R, R]`` on one axis into cells.

    ``edges`` are the cell boundaries; ``nodes`` are the cell midpoints.  For the
    imaginary axis the coordinate is ``Im z``.
    """

    edges: np.ndarray
    axis: str = REAL

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=float)
        if e.ndim != 1 or e.size < 2 or np.any(np.diff(e) <= 0.0):
            raise ValueError("grid edges must be strictly increasing")
        if self.axis not in (REAL, IMAG):
            raise ValueError(f"axis must be {REAL!r} or {IMAG!r}")
        e.setflags(write=False)
        object.__setattr__(self, "edges", e)

    @classmethod
    def uniform(cls, radius: float, n_cells: int, axis: str = REAL) -> "Grid":
        return cls(np.linspace(-radius, radius, n_cells + 1), axis)

    @classmethod
    def graded(cls, core_radius: float, n_core: int, radius: float,
               growth: float = 1.05, axis: str = REAL) -> "Grid":
        """Uniform core on ``[-core_radius, core_radius]`` plus geometric tails.

        Outside the core each cell is ``growth`` times wider than its inner
        neighbour until ``radius`` is reached; the last cell is stretched so
        the grid ends exactly at ``radius``.
        """
        if radius <= core_radius:
            return cls.uniform(core_radius, n_core, axis)
        h = 2.0 * core_radius / n_core
        right = [core_radius]
        while right[-1] < radius:
            h *= growth
            right.append(right[-1] + h)
        if len(right) > 2 and (radius - right[-2]) < 0.5 * (right[-1] - right[-2]):
            right.pop()
        right[-1] = radius
        right = np.asarray(right)
        core = np.linspace(-core_radius, core_radius, n_core + 1)
        return cls(np.concatenate([-right[::-1], core[1:-1], right]), axis)

    @classmethod
    def refined(cls, inner_radius: float, n_inner: int, core_radius: float, n_core: int,
                radius: float, growth: float = 1.05, axis: str = REAL) -> "Grid":
        """Like :meth:`graded`, with a finer uniform block around the origin.

        The block has ``n_inner`` (odd) cells of width ``2 inner_radius / n_inner``,
        one of them centred on 0.  Widths then grow geometrically to the core
        width, stay uniform up to ``core_radius`` and grow again up to
        ``radius``.  Falls back to :meth:`graded` when the block is not finer.
        """
        n_inner = int(n_inner) | 1
        h_core = 2.0 * core_radius / n_core
        h = 2.0 * inner_radius / n_inner
        if h >= h_core or inner_radius >= core_radius or growth <= 1.0:
            return cls.graded(core_radius, n_core, radius, growth, axis)
        right = list(0.5 * h + h * np.arange((n_inner + 1) // 2))
        while h * growth < h_core:
            h *= growth
            right.append(right[-1] + h)
        if right[-1] < core_radius:
            n_uniform = max(1, int(round((core_radius - right[-1]) / h_core)))
            h = (core_radius - right[-1]) / n_uniform
            right.extend(right[-1] + h * np.arange(1, n_uniform + 1))
        while right[-1] < radius:
            h *= growth
            right.append(right[-1] + h)
        if len(right) > 2 and (radius - right[-2]) < 0.5 * (right[-1] - right[-2]):
            right.pop()
        right[-1] = max(right[-1], radius)
        right = np.asarray(right)
        return cls(np.concatenate([-right[::-1], right]), axis)

    @property
    def nodes(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def lo(self) -> np.ndarray:
        return self.edges[:-1]

    @property
    def hi(self) -> np.ndarray:
        return self.edges[1:]

    @property
    def n_cells(self) -> int:
        return self.edges.size - 1

    @property
    def radius(self) -> float:
        return float(max(-self.edges[0], self.edges[-1]))

    def is_symmetric(self, rtol: float = 1e-12) -> bool:
        e = self.edges
        return bool(np.allclose(e, -e[::-1], rtol=0.0, atol=rtol * self.radius))

    def cell_index(self, x: float) -> int:
        """Index of the cell containing ``x`` (right-closed at the last edge)."""
        i = int(np.searchsorted(self.edges, x, side="right") - 1)
        return min(max(i, 0), self.n_cells - 1)

    def cell_average(self, func, order: int = 6) -> np.ndarray:
        """Average of ``func`` over every cell by Gauss-Legendre quadrature."""
        t, w = np.polynomial.legendre.leggauss(order)
        c, h = self.nodes, self.widths
        pts = c[:, None] + 0.5 * h[:, None] * t[None, :]
        vals = np.asarray(func(pts), dtype=float)
        return 0.5 * vals @ w

    def cell_integral(self, func, order: int = 8, breakpoints=()) -> np.ndarray:
        """Integral of ``func`` over every cell, splitting cells at ``breakpoints``."""
        t, w = np.polynomial.legendre.leggauss(order)
        lo, hi = self.lo.copy(), self.hi.copy()
        total = np.zeros(self.n_cells)
        pieces = [(lo, hi)]
        for b in breakpoints:
            new = []
            for a, c in pieces:
                m = np.clip(b, a, c)
                new += [(a, m), (m, c)]
            pieces = new
        for a, c in pieces:
            mid, half = 0.5 * (a + c), 0.5 * (c - a)
            pts = mid[:, None] + half[:, None] * t[None, :]
            total += half * (np.asarray(func(pts), dtype=float) @ w)
        return total

    def mirror_index(self) -> np.ndarray:
        return np.arange(self.n_cells)[::-1]

    def to_dict(self) -> dict:
        return {"axis": self.axis, "n_cells": self.n_cells, "radius": self.radius,
                "min_width": float(self.widths.min()), "max_width": float(self.widths.max())}


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Piecewise-constant measure: one nonnegative mass per grid cell."""

    grid: Grid
    masses: np.ndarray
    caps: Optional[np.ndarray] = None

    def __post_init__(self):
        m = np.asarray(self.masses, dtype=float)
        if m.shape != (self.grid.n_cells,):
            raise ValueError("one mass per cell expected")
        if np.any(m < 0.0):
            raise ValueError("masses must be nonnegative")
        if self.caps is not None:
            c = np.asarray(self.caps, dtype=float)
            if c.shape != m.shape:
                raise ValueError("one cap per cell expected")
            if np.any(m > c + 1e-14):
                raise ValueError("masses exceed caps")
            object.__setattr__(self, "caps", c)
        object.__setattr__(self, "masses", m)

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum())

    @property
    def density(self) -> np.ndarray:
        return self.masses / self.grid.widths

    def moment(self, k: int) -> float:
        return float(np.sum(self.masses * self.grid.nodes**k))
