"""Finsler distance fields to (or from) a pole, and their eikonal residuals."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import minimize

from . import _fmm
from .grid import Field, GridDomain
from .structures import FinslerStructure, eval_F, polar_transform

log = logging.getLogger(__name__)

TO_POLE = "to_pole"
FROM_POLE = "from_pole"


class PoleError(ValueError):
    pass


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class PoleSet:
    poles: np.ndarray

    def __post_init__(self):
        p = np.atleast_2d(np.asarray(self.poles, float))
        if p.shape[0] < 2:
            raise PoleError("need at least two poles")
        if self.min_separation_of(p) <= 0:
            raise PoleError("poles must be pairwise distinct")
        object.__setattr__(self, "poles", p)

    @staticmethod
    def min_separation_of(p) -> float:
        d = np.linalg.norm(p[:, None, :] - p[None, :, :], axis=-1)
        d[np.diag_indices(len(p))] = np.inf
        return float(d.min())

    @property
    def m(self) -> int:
        return len(self.poles)

    @property
    def min_separation(self) -> float:
        return self.min_separation_of(self.poles)

    def check_grid(self, grid: GridDomain, margin_cells: int = 2):
        for x in self.poles:
            check_pole(grid, x, margin_cells)

    def __iter__(self):
        return iter(self.poles)

    def __len__(self):
        return self.m


def check_pole(grid: GridDomain, pole, margin_cells: int = 2):
    pole = np.asarray(pole, float)
    if pole.shape != (grid.dim,):
        raise PoleError(f"pole has {pole.size} components, grid is {grid.dim}-D")
    lo = grid.lo + margin_cells * grid.spacing
    hi = grid.hi - margin_cells * grid.spacing
    if np.any(pole < lo) or np.any(pole > hi):
        raise PoleError(f"pole {pole.tolist()} is not {margin_cells} cells inside the grid")


@dataclass(eq=False)
class DistanceField(Field):
    pole: np.ndarray = None
    pole_index: int = 0
    direction: str = TO_POLE
    eikonal_residual: np.ndarray | None = None
    accept_order: np.ndarray | None = field(default=None, repr=False)
    undercut: int = 0

    def __post_init__(self):
        self.kind = "distance"
        super().__post_init__()


# variational oracle -----------------------------------------------------


def _clip_to_domain(S: FinslerStructure, P):
    P = np.clip(P, S.lo, S.hi)
    if S.family == "funk":
        r = np.linalg.norm(P, axis=-1, keepdims=True)
        lim = 1.0 - S.funk_margin
        P = np.where(r > lim, P * (lim / np.maximum(r, 1e-300)), P)
    return P


def curve_length(S: FinslerStructure, verts) -> float:
    """Sum of F(midpoint, step) over the polyline's segments."""
    verts = np.asarray(verts, float)
    steps = np.diff(verts, axis=0)
    mids = 0.5 * (verts[1:] + verts[:-1])
    return float(np.sum(eval_F(S, mids, steps, check=False)))


def variational_distance_oracle(
    S: FinslerStructure, a, b, segments: int = 8, restarts: int = 2, seed: int = 0
) -> float:
    """Upper bound on d_F(a, b): the shortest polyline found from a to b.

    Interior vertices are optimised jointly by bounded L-BFGS from the straight
    segment and from ``restarts`` random perturbations of it.
    """
    a = S.check_points(a)
    b = S.check_points(b)
    if segments < 1:
        raise ValueError("segments must be >= 1")
    if np.array_equal(a, b):
        return 0.0
    n = S.dim
    t = np.linspace(0.0, 1.0, segments + 1)[:, None]
    line = a + t * (b - a)
    if segments == 1:
        return curve_length(S, line)
    rng = np.random.default_rng(seed)
    scale = 0.1 * np.linalg.norm(b - a)

    def length(z):
        inner = z.reshape(segments - 1, n)
        clipped = _clip_to_domain(S, inner)
        pen = 1e3 * np.sum((inner - clipped) ** 2)
        return curve_length(S, np.vstack([a, clipped, b])) + pen

    lo = np.tile(S.lo, segments - 1)
    hi = np.tile(S.hi, segments - 1)
    best = curve_length(S, line)
    for r in range(restarts + 1):
        z0 = line[1:-1].copy()
        if r:
            z0 = _clip_to_domain(S, z0 + scale * rng.normal(size=z0.shape))
        res = minimize(length, z0.ravel(), method="L-BFGS-B", bounds=list(zip(lo, hi)),
                       options={"ftol": 1e-15, "gtol": 1e-11, "maxiter": 500})
        z = _clip_to_domain(S, res.x.reshape(segments - 1, n))
        best = min(best, curve_length(S, np.vstack([a, z, b])))
    return best


# fast marching ----------------------------------------------------------


@lru_cache(maxsize=None)
def _stencil(n: int, h: tuple):
    offsets, simplices, partners, tri_of = _fmm.build_stencil(n)
    hv = np.asarray(h)
    Pinv = np.zeros((len(simplices), n, n))
    PinvT = np.zeros_like(Pinv)
    if n == 3:
        for s, verts in enumerate(simplices):
            P = -offsets[verts] * hv
            Pinv[s] = np.linalg.inv(P)
            PinvT[s] = Pinv[s].T
    return offsets, simplices, partners, tri_of, Pinv, PinvT


def solve_distance(
    S: FinslerStructure,
    grid: GridDomain,
    pole,
    direction: str = TO_POLE,
    pole_index: int = 0,
    ring_cells: int = 2,
    ring_radius: float = 0.0,
    oracle_segments: int = 4,
    undercut_tol: float = 0.01,
) -> DistanceField:
    """First-arrival distance d_F(x, pole) (``to_pole``) or d_F(pole, x) (``from_pole``).

    ``to_pole`` is solved as the ``from_pole`` problem of the reversed
    structure, since d_F(x, p) = d_{F~}(p, x) with F~(x, y) = F(x, -y).
    Nodes within ``ring_cells`` of the pole are initialised with the
    variational oracle.
    """
    if direction not in (TO_POLE, FROM_POLE):
        raise ValueError(f"direction must be {TO_POLE!r} or {FROM_POLE!r}")
    if grid.dim not in (2, 3):
        raise ValueError("fast marching is implemented for 2-D and 3-D grids")
    if grid.dim != S.dim:
        raise ValueError("grid and structure dimensions differ")
    pole = np.asarray(pole, float)
    check_pole(grid, pole, ring_cells)
    march = S.reversed() if direction == TO_POLE else S
    pts = grid.points().reshape(-1, grid.dim)
    if not np.all(S.contains(pts)):
        raise PoleError("grid extends outside the structure's domain")

    if march.is_homogeneous:
        A, b = march.coefficients(np.zeros((1, grid.dim)))
        cidx = np.zeros(grid.size, np.int64)
    else:
        A, b = march.coefficients(pts)
        cidx = np.arange(grid.size, dtype=np.int64)
    A = np.ascontiguousarray(A, float)
    b = np.ascontiguousarray(b, float)
    H = np.ascontiguousarray(np.linalg.inv(A))

    values = np.full(grid.size, np.inf)
    state = np.zeros(grid.size, np.int8)
    ip = np.array(grid.nearest_index(pole))
    reach = np.maximum(ring_cells, np.ceil(ring_radius / grid.spacing).astype(int))
    ring = [np.arange(max(i - r, 0), min(i + r, s - 1) + 1)
            for i, r, s in zip(ip, reach, grid.shape)]
    ring_idx = np.stack(np.meshgrid(*ring, indexing="ij"), -1).reshape(-1, grid.dim)
    if ring_radius > 0:
        near = np.linalg.norm(grid.index_to_point(ring_idx) - pole, axis=-1) <= ring_radius
        cheb = np.max(np.abs(ring_idx - ip), axis=-1) <= ring_cells
        ring_idx = ring_idx[near | cheb]
    flat = np.ravel_multi_index(ring_idx.T, grid.shape)
    for f, idx in zip(flat, ring_idx):
        x = grid.index_to_point(idx)
        values[f] = variational_distance_oracle(S, x, pole, segments=oracle_segments, restarts=0) \
            if direction == TO_POLE else \
            variational_distance_oracle(S, pole, x, segments=oracle_segments, restarts=0)
        state[f] = 2

    offsets, simplices, partners, tri_of, Pinv, PinvT = _stencil(grid.dim, tuple(grid.spacing))
    order = np.empty(grid.size)
    count, undercut = _fmm.fast_march(
        np.asarray(grid.shape, np.int64), grid.spacing.astype(float), A, b, H, cidx,
        values, state, offsets, simplices, partners, tri_of, Pinv, PinvT, order,
    )
    if not np.all(np.isfinite(values)):
        raise SolverError("fast marching left unreached nodes")
    if undercut > undercut_tol * grid.size:
        raise SolverError(
            f"{undercut} non-monotone updates: grid too coarse for the anisotropy ratio"
        )
    if undercut:
        log.info("fast marching: %d updates undercut the front", undercut)
    out = DistanceField(
        grid, values.reshape(grid.shape), pole=pole, pole_index=pole_index, direction=direction,
        accept_order=order[:count], undercut=int(undercut),
    )
    out.eikonal_residual = eikonal_residual(S, out).values
    return out


def exact_homogeneous_distance(S: FinslerStructure, grid: GridDomain, pole, direction=TO_POLE):
    """d_F for translation-invariant structures: F(pole - x) or F(x - pole)."""
    if not S.is_homogeneous:
        raise ValueError("closed form needs constant coefficients")
    pts = grid.points()
    y = (pole - pts) if direction == TO_POLE else (pts - pole)
    return eval_F(S, pts, y)


# residual ---------------------------------------------------------------


def pole_mask(grid: GridDomain, pole, cells: int = 2, radius: float = 0.0) -> np.ndarray:
    """True where a node is within ``cells`` of the pole or the box, or within ``radius`` of the pole."""
    idx = np.indices(grid.shape)
    ip = np.asarray(grid.nearest_index(pole)).reshape((-1,) + (1,) * grid.dim)
    cheb = np.max(np.abs(idx - ip), axis=0)
    mask = (cheb <= cells) | (grid.boundary_distance_cells() < cells)
    if radius > 0:
        mask |= np.linalg.norm(grid.points() - pole, axis=-1) < radius
    return mask


def eikonal_residual(
    S: FinslerStructure, field: DistanceField, mask_cells: int = 2, mask_radius: float = 0.0
) -> Field:
    """|F*(x, Dd) - 1| with the structure matching the field's direction; masked nodes are NaN."""
    from .calculus import differential

    march = S.reversed() if field.direction == TO_POLE else S
    D = differential(Field(field.grid, field.values)).values
    res = np.abs(polar_transform(march, field.grid.points(), D) - 1.0)
    res[pole_mask(field.grid, field.pole, mask_cells, mask_radius)] = np.nan
    return Field(field.grid, res)


def eikonal_convergence(S: FinslerStructure, grids, pole, direction: str = FROM_POLE,
                        mask_radius: float = 0.5) -> dict:
    """Masked eikonal residual on successively finer grids and the observed orders between them."""
    pole = np.asarray(pole, float)
    levels = []
    for g in grids:
        d = solve_distance(S, g, pole, direction)
        r = eikonal_residual(S, d, mask_radius=mask_radius).values
        levels.append({"h": float(np.max(g.spacing)), "max": float(np.nanmax(r)),
                       "mean": float(np.nanmean(r)), "shape": list(g.shape)})
    order = lambda key: [float(np.log(a[key] / b[key]) / np.log(a["h"] / b["h"]))
                         for a, b in zip(levels, levels[1:])]
    return {"levels": levels, "order_max": order("max"), "order_mean": order("mean"),
            "mask_radius": mask_radius, "direction": direction}
