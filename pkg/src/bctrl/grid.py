"""Grid metadata, interior fields and boundary controls.

The domain is the unit square with ``n`` interior nodes per side and
spacing ``h = 1 / (n + 1)``. Row index ``i`` runs along ``x2`` and column
index ``j`` along ``x1``. The boundary control holds one value per ghost
node adjacent to the interior; the four corner ghosts are never read by
the 5-point stencil and are not represented.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class InvalidBoundsError(ValueError):
    pass


def _frozen(a, shape) -> np.ndarray:
    a = np.array(a, dtype=float)
    if a.shape != shape:
        raise ValueError(f"expected shape {shape}, got {a.shape}")
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Grid:
    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"grid size must be a positive integer, got {self.n}")
        object.__setattr__(self, "n", int(self.n))

    @property
    def h(self) -> float:
        return 1.0 / (self.n + 1)

    def coordinates(self) -> np.ndarray:
        """Interior node coordinates along one axis, ``(k + 1) * h``."""
        return (np.arange(self.n) + 1.0) * self.h


@dataclass(frozen=True, eq=False)
class DomainField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values, (self.grid.n, self.grid.n)))

    def __eq__(self, other):
        return (
            isinstance(other, DomainField)
            and self.grid == other.grid
            and np.array_equal(self.values, other.values)
        )


@dataclass(frozen=True, eq=False)
class BoundaryValues:
    """Dirichlet data on the four edges, ``n`` values each.

    ``top``/``bottom`` are indexed by column (left to right), ``left``/
    ``right`` by row (top to bottom).
    """

    grid: Grid
    top: np.ndarray
    bottom: np.ndarray
    left: np.ndarray
    right: np.ndarray

    def __post_init__(self):
        n = self.grid.n
        for name in ("top", "bottom", "left", "right"):
            object.__setattr__(self, name, _frozen(getattr(self, name), (n,)))

    def __eq__(self, other):
        return (
            isinstance(other, BoundaryValues)
            and self.grid == other.grid
            and all(
                np.array_equal(getattr(self, k), getattr(other, k))
                for k in ("top", "bottom", "left", "right")
            )
        )

    @classmethod
    def constant(cls, grid: Grid, value: float) -> BoundaryValues:
        e = np.full(grid.n, float(value))
        return cls(grid, e, e, e, e)

    @classmethod
    def from_ring(cls, grid: Grid, ring) -> BoundaryValues:
        """Inverse of :meth:`as_ring`."""
        n = grid.n
        ring = np.asarray(ring, dtype=float)
        if ring.shape != (4 * n,):
            raise ValueError(f"ring of length {4 * n} expected, got {ring.shape}")
        return cls(
            grid,
            top=ring[:n],
            right=ring[n : 2 * n],
            bottom=ring[2 * n : 3 * n][::-1],
            left=ring[3 * n :][::-1],
        )

    def as_ring(self) -> np.ndarray:
        """Clockwise sequence starting at the top-left corner.

        Top left to right, right top to bottom, bottom right to left,
        left bottom to top.
        """
        return np.concatenate([self.top, self.right, self.bottom[::-1], self.left[::-1]])

    def map(self, fn) -> BoundaryValues:
        return BoundaryValues(self.grid, fn(self.top), fn(self.bottom), fn(self.left), fn(self.right))


def as_ring(b: BoundaryValues) -> np.ndarray:
    return b.as_ring()


def from_ring(grid: Grid, ring) -> BoundaryValues:
    return BoundaryValues.from_ring(grid, ring)


def edges_of_array(a: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    return a[0, :], a[-1, :], a[:, 0], a[:, -1]


def extract_edges(f: DomainField) -> BoundaryValues:
    """Outer rows and columns of an interior field.

    Corner entries land in both a row edge and a column edge, so an
    ``n x n`` field yields exactly ``4 n`` values.
    """
    top, bottom, left, right = edges_of_array(f.values)
    return BoundaryValues(f.grid, top, bottom, left, right)


def _check_bounds(lo, hi):
    if lo > hi:
        raise InvalidBoundsError(f"lower bound {lo} exceeds upper bound {hi}")


def clamp_boundary(b: BoundaryValues, lo: float, hi: float) -> BoundaryValues:
    _check_bounds(lo, hi)
    return b.map(lambda e: np.clip(e, lo, hi))


def clamp_domain(f: DomainField, lo: float, hi: float) -> DomainField:
    _check_bounds(lo, hi)
    return DomainField(f.grid, np.clip(f.values, lo, hi))
