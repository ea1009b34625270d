"""Busemann-Hausdorff volume density and grid quadrature."""
from __future__ import annotations

from dataclasses import dataclass
from math import gamma, pi

import numpy as np

from .grid import Field, GridDomain, GridMismatch
from .structures import FinslerStructure, eval_F

DEFAULT_MC_SAMPLES = 200_000
MIN_MC_SAMPLES = 1_000


def unit_ball_volume(n: int) -> float:
    """Euclidean volume of the unit ball in R^n."""
    return pi ** (n / 2) / gamma(n / 2 + 1)


def volume_density(
    S: FinslerStructure, x, mc_samples: int = DEFAULT_MC_SAMPLES, seed: int = 0, method: str = "auto"
) -> tuple[float, float]:
    """sigma_F(x) = omega_n / Vol(B_x(1)) with its standard error.

    ``auto`` uses sqrt(det A(x)) for reversible quadratic families and Monte
    Carlo rejection sampling otherwise; ``mc`` forces sampling.
    """
    x = S.check_points(np.asarray(x, float))
    if method not in ("auto", "mc"):
        raise ValueError(f"unknown method {method!r}")
    if method == "auto" and S.family in ("euclidean", "riemannian"):
        A, _ = S.coefficients(x)
        return float(np.sqrt(np.linalg.det(A))), 0.0
    if mc_samples < MIN_MC_SAMPLES:
        raise ValueError(f"mc_samples must be >= {MIN_MC_SAMPLES}")
    n = S.dim
    rng = np.random.default_rng(seed)
    e = rng.normal(size=(8192, n))
    e /= np.linalg.norm(e, axis=1, keepdims=True)
    # the unit ball is not centrally symmetric; bound it from sampled directions
    R = 1.1 * float(np.max(1.0 / eval_F(S, x, e, check=False)))
    hits = 0
    done = 0
    chunk = 1 << 16
    while done < mc_samples:
        k = min(chunk, mc_samples - done)
        y = rng.uniform(-R, R, size=(k, n))
        hits += int(np.count_nonzero(eval_F(S, x, y, check=False) < 1.0))
        done += k
    if hits == 0:
        raise ValueError("degenerate metric: no samples fell inside the unit ball")
    p = hits / mc_samples
    vol = (2 * R) ** n * p
    sigma = unit_ball_volume(n) / vol
    stderr = sigma * np.sqrt((1 - p) / (p * mc_samples))
    return float(sigma), float(stderr)


def randers_density_closed_form(S: FinslerStructure, x) -> float:
    """sqrt(det A) (1 - |b|^2_{A^-1})^((n+1)/2): the density of a Randers unit ball (an ellipsoid)."""
    A, b = S.coefficients(np.asarray(x, float))
    beta2 = float(b @ np.linalg.solve(A, b))
    return float(np.sqrt(np.linalg.det(A)) * (1 - beta2) ** ((S.dim + 1) / 2))


@dataclass(eq=False)
class VolumeDensityField(Field):
    mc_samples: int = 0
    mc_stderr: np.ndarray | None = None

    def __post_init__(self):
        self.kind = "density"
        super().__post_init__()
        if np.any(self.values <= 0):
            raise ValueError("volume density must be positive")


def volume_density_field(
    S: FinslerStructure,
    grid: GridDomain,
    mc_samples: int = DEFAULT_MC_SAMPLES,
    seed: int = 0,
    method: str = "auto",
) -> VolumeDensityField:
    """Density on every node; one evaluation is shared when the coefficients are constant."""
    pts = grid.points()
    if S.is_homogeneous:
        s, e = volume_density(S, pts.reshape(-1, grid.dim)[0], mc_samples, seed, method)
        sigma = np.full(grid.shape, s)
        err = np.full(grid.shape, e)
    elif method == "auto" and S.family in ("euclidean", "riemannian"):
        A, _ = S.coefficients(pts)
        sigma = np.sqrt(np.linalg.det(A))
        err = np.zeros(grid.shape)
    else:
        flat = pts.reshape(-1, grid.dim)
        seeds = np.random.SeedSequence(seed).spawn(len(flat))
        out = np.array([
            volume_density(S, p, mc_samples, int(ss.generate_state(1)[0]), method)
            for p, ss in zip(flat, seeds)
        ])
        sigma = out[:, 0].reshape(grid.shape)
        err = out[:, 1].reshape(grid.shape)
    return VolumeDensityField(grid, sigma, mc_samples=mc_samples, mc_stderr=err)


def quadrature_weights(grid: GridDomain) -> np.ndarray:
    """Volumes of the node-centred dual cells clipped to the box (midpoint rule on dual cells)."""
    w = np.ones(grid.shape)
    for k, s in enumerate(grid.shape):
        wk = np.ones(s)
        wk[0] = wk[-1] = 0.5
        sh = [1] * grid.dim
        sh[k] = s
        w = w * wk.reshape(sh)
    return w * grid.cell_volume


def integrate(field: Field | np.ndarray, density: Field, mask: np.ndarray | None = None) -> float:
    """Sum over nodes of field * sigma * cell volume; nodes where ``mask`` is False are skipped."""
    values = field.values if isinstance(field, Field) else np.asarray(field, float)
    if isinstance(field, Field) and not field.grid.same_as(density.grid):
        raise GridMismatch("field and density live on different grids")
    if values.shape != density.grid.shape:
        raise GridMismatch(f"field shape {values.shape} does not match grid {density.grid.shape}")
    integrand = values * density.values * quadrature_weights(density.grid)
    if mask is not None:
        integrand = np.where(mask, integrand, 0.0)
    return float(np.sum(integrand))
