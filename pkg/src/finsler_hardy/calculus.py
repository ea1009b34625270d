"""Discrete differential, Finsler gradient, divergence and Finsler-Laplacian on grids."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .grid import Field, GridDomain, require_same_grid
from .measure import integrate
from .structures import FinslerStructure, eval_F, legendre_transform, polar_transform

log = logging.getLogger(__name__)


def differential(u: Field) -> Field:
    """Du by central differences inside, second-order one-sided at the box faces."""
    g = u.grid
    if min(g.shape) < 3:
        raise ValueError("differential needs >= 3 nodes per axis")
    parts = np.gradient(u.values, *g.spacing, edge_order=2)
    if g.dim == 1:
        parts = [parts]
    return Field(g, np.stack(parts, axis=-1), "covector")


def finsler_gradient(S: FinslerStructure, u: Field, Du: Field | None = None) -> Field:
    """Nodewise Legendre transform of the differential."""
    Du = differential(u) if Du is None else Du
    V = legendre_transform(S, Du.grid.points(), Du.values)
    return Field(Du.grid, V, "vector")


def divergence(V: Field, density: Field) -> Field:
    """(1/sigma) sum_i d_i(sigma V^i), central differences."""
    g = require_same_grid(V, density)
    sigma = density.values
    flux = sigma[..., None] * V.values
    total = np.zeros(g.shape)
    for i in range(g.dim):
        total += np.gradient(flux[..., i], g.spacing[i], axis=i, edge_order=2)
    return Field(g, total / sigma)


def finsler_laplacian(S: FinslerStructure, u: Field, density: Field) -> Field:
    return divergence(finsler_gradient(S, u), density)


def pairing(alpha: Field, V: Field) -> np.ndarray:
    """alpha(V) per node."""
    return np.einsum("...i,...i->...", alpha.values, V.values)


def adjointness_defect(u: Field, V: Field, Du: Field, density: Field) -> float:
    """int u div V dv + int Du(V) dv; zero for compactly supported data up to discretisation.

    ``Du`` should be the exact differential, so that the defect measures the
    error of the discrete divergence alone.
    """
    require_same_grid(u, V, Du, density)
    a = integrate(u.values * divergence(V, density).values, density)
    b = integrate(pairing(Du, V), density)
    return a + b


# test functions ---------------------------------------------------------


class TestFunctionError(ValueError):
    pass


def smoothstep5(t):
    """C^2 ramp: 0 for t <= 0, 1 for t >= 1."""
    t = np.clip(t, 0.0, 1.0)
    return t**3 * (10 - 15 * t + 6 * t * t)


@dataclass(frozen=True)
class TestFunction:
    """Nonnegative C^2 bump (1 - |x-c|^2/R^2)^3, switched off within ``epsilon`` of each pole.

    The excision factor rises from 0 at distance ``epsilon`` to 1 at
    ``2 * epsilon`` from a pole (Euclidean distance in the chart).  With
    ``pole_order = k > 0`` the bump is further multiplied by |x - p|^(2k) for
    every pole, so u vanishes to order 2k there independently of ``epsilon``;
    the product is then rescaled to peak at 1 (the scale is taken on a fixed
    lattice, so it does not depend on the grid being sampled).
    """

    center: tuple
    radius: float
    epsilon: float = 0.0
    poles: tuple = field(default_factory=tuple)
    pole_order: int = 0

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "poles", tuple(tuple(float(c) for c in p) for p in self.poles))
        if self.radius <= 0:
            raise TestFunctionError("support radius must be positive")
        if self.epsilon < 0:
            raise TestFunctionError("excision radius must be >= 0")
        if self.pole_order < 0 or int(self.pole_order) != self.pole_order:
            raise TestFunctionError("pole_order must be a nonnegative integer")
        scale = 1.0
        if self.pole_order and self.poles:
            n = len(self.center)
            t = np.linspace(-1.0, 1.0, 41 if n <= 3 else 11)
            lattice = np.stack(np.meshgrid(*[t] * n, indexing="ij"), -1).reshape(-1, n)
            peak = float(np.max(self._profile(np.asarray(self.center) + self.radius * lattice)))
            if peak <= 0:
                raise TestFunctionError("profile vanishes identically")
            scale = 1.0 / peak
        object.__setattr__(self, "_scale", scale)

    def _profile(self, x):
        c = np.asarray(self.center, float)
        r2 = np.sum((x - c) ** 2, axis=-1) / self.radius**2
        u = np.clip(1.0 - r2, 0.0, None) ** 3
        for p in self.poles if self.pole_order else ():
            q = np.sum((x - np.asarray(p, float)) ** 2, axis=-1) / self.radius**2
            u = u * q**self.pole_order
        return u

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        u = self._scale * self._profile(x)
        if self.epsilon > 0:
            for p in self.poles:
                d = np.linalg.norm(x - np.asarray(p, float), axis=-1)
                u = u * smoothstep5((d - self.epsilon) / self.epsilon)
        return u

    def with_epsilon(self, eps: float) -> "TestFunction":
        return TestFunction(self.center, self.radius, eps, self.poles, self.pole_order)

    def to_dict(self) -> dict:
        return {"center": list(self.center), "radius": self.radius, "epsilon": self.epsilon,
                "poles": [list(p) for p in self.poles], "pole_order": self.pole_order}


def make_test_function(spec: TestFunction, grid: GridDomain) -> Field:
    h = float(np.max(grid.spacing))
    # a vanishing order at the poles stands in for excision only when epsilon is 0
    excised = spec.epsilon > 0 or not spec.pole_order
    if spec.poles and excised and spec.epsilon <= 2 * h * (1 - 1e-12):
        raise TestFunctionError(f"excision radius {spec.epsilon} must exceed 2h = {2 * h}")
    c = np.asarray(spec.center, float)
    if np.any(c - spec.radius < grid.lo - 1e-12) or np.any(c + spec.radius > grid.hi + 1e-12):
        raise TestFunctionError("test function support leaves the grid")
    u = spec(grid.points())
    if not np.any(u > 0):
        raise TestFunctionError("pole excision removes the whole support; u vanishes identically")
    return Field(grid, u)
