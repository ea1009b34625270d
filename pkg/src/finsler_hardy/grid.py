"""Uniform rectangular grids and the fields sampled on them."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FIELD_KINDS = ("scalar", "covector", "vector", "density", "distance")


class GridMismatch(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class GridDomain:
    """Node-centred grid on the box [lo, hi] with ``shape[k]`` nodes along axis k."""

    lo: np.ndarray
    hi: np.ndarray
    shape: tuple

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, float)).copy()
        hi = np.atleast_1d(np.asarray(self.hi, float)).copy()
        shape = tuple(int(s) for s in np.broadcast_to(np.asarray(self.shape), lo.shape))
        if lo.shape != hi.shape or np.any(hi <= lo):
            raise ValueError("grid bounds must satisfy hi > lo per axis")
        if min(shape) < 3:
            raise ValueError("grid needs at least 3 nodes per axis")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "shape", shape)

    @classmethod
    def cube(cls, n: int, nodes: int, lo: float = -1.0, hi: float = 1.0) -> "GridDomain":
        return cls(np.full(n, lo), np.full(n, hi), (nodes,) * n)

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def spacing(self) -> np.ndarray:
        return (self.hi - self.lo) / (np.asarray(self.shape) - 1)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(l, h, s) for l, h, s in zip(self.lo, self.hi, self.shape)]

    def points(self) -> np.ndarray:
        """Node coordinates, shape ``shape + (dim,)``."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def nearest_index(self, p) -> tuple:
        idx = np.rint((np.asarray(p, float) - self.lo) / self.spacing).astype(int)
        return tuple(int(i) for i in idx)

    def index_to_point(self, idx) -> np.ndarray:
        return self.lo + np.asarray(idx) * self.spacing

    def boundary_distance_cells(self) -> np.ndarray:
        """Per node, the number of cells to the nearest box face."""
        d = None
        for k, s in enumerate(self.shape):
            i = np.arange(s)
            dk = np.minimum(i, s - 1 - i)
            sh = [1] * self.dim
            sh[k] = s
            dk = dk.reshape(sh)
            d = dk if d is None else np.minimum(d, dk)
        return np.broadcast_to(d, self.shape)

    def same_as(self, other: "GridDomain") -> bool:
        return (
            self.shape == other.shape
            and np.array_equal(self.lo, other.lo)
            and np.array_equal(self.hi, other.hi)
        )

    def describe(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist(), "shape": list(self.shape)}


@dataclass(eq=False)
class Field:
    """Values sampled on a grid.  Vector-like kinds carry a trailing axis of length ``dim``."""

    grid: GridDomain
    values: np.ndarray
    kind: str = "scalar"

    def __post_init__(self):
        if self.kind not in FIELD_KINDS:
            raise ValueError(f"unknown field kind {self.kind!r}")
        v = np.asarray(self.values, float)
        expect = self.grid.shape + ((self.grid.dim,) if self.kind in ("covector", "vector") else ())
        if v.shape != expect:
            raise GridMismatch(f"{self.kind} field values have shape {v.shape}, expected {expect}")
        self.values = v


def ScalarField(grid, values) -> Field:
    return Field(grid, values, "scalar")


def CovectorField(grid, values) -> Field:
    return Field(grid, values, "covector")


def VectorField(grid, values) -> Field:
    return Field(grid, values, "vector")


def require_same_grid(*fields) -> GridDomain:
    g = fields[0].grid
    for f in fields[1:]:
        if not g.same_as(f.grid):
            raise GridMismatch("fields live on different grids")
    return g
