"""Minkowski norms on tangent spaces: Finsler structures, their duals and Legendre maps.

Every built-in family is of Randers form

    F(x, y) = sqrt(y^T A(x) y) + <b(x), y>,     |b(x)|_{A(x)^{-1}} < 1,

(Euclidean: A = I, b = 0; Riemannian: b = 0; Funk: A and b determined by the
position in the unit ball).  This makes closed forms available for the
polar transform, the Legendre transform and the fundamental tensor.  The
generic numerical routes (sphere maximisation, finite-difference Hessian)
only use ``eval_F`` and serve as independent cross-checks.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

log = logging.getLogger(__name__)

FAMILIES = ("euclidean", "riemannian", "randers", "funk")


class StructureError(ValueError):
    """Invalid Finsler structure parameters or evaluation point."""


class DomainError(StructureError):
    pass


class AdmissibilityError(StructureError):
    pass


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class FinslerStructure:
    """A Finsler structure of Randers form on an axis-aligned box.

    ``A`` is the base quadratic form and ``b`` the drift one-form, both constant
    in chart coordinates; ``conformal`` scales the base form by
    ``1 + conformal * |x|^2`` (the drift is left alone), giving a nonconstant
    Riemannian or Randers structure.  ``reverse`` swaps the structure for
    ``F(x, -y)``.
    """

    family: str
    dim: int
    lo: np.ndarray
    hi: np.ndarray
    A: np.ndarray | None = None
    b: np.ndarray | None = None
    conformal: float = 0.0
    funk_margin: float = 1e-3
    reverse: bool = False
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise StructureError(f"unknown family {self.family!r}")
        if self.dim < 2:
            raise StructureError("dimension must be >= 2")
        lo = np.broadcast_to(np.asarray(self.lo, float), (self.dim,)).copy()
        hi = np.broadcast_to(np.asarray(self.hi, float), (self.dim,)).copy()
        if np.any(hi <= lo):
            raise StructureError("domain box must have hi > lo on every axis")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        n = self.dim
        A = np.eye(n) if self.A is None else np.asarray(self.A, float)
        if A.shape != (n, n):
            raise StructureError(f"A must be {n}x{n}, got {A.shape}")
        if not np.allclose(A, A.T, rtol=0, atol=1e-14):
            raise StructureError("A must be symmetric")
        if np.linalg.eigvalsh(A)[0] <= 0:
            raise StructureError("A must be positive definite")
        b = np.zeros(n) if self.b is None else np.asarray(self.b, float)
        if b.shape != (n,):
            raise StructureError(f"b must have {n} components, got {b.shape}")
        if self.family in ("euclidean", "funk"):
            A, b = np.eye(n), np.zeros(n)
        elif self.family == "riemannian":
            b = np.zeros(n)
        if self.family == "euclidean" and self.conformal:
            raise StructureError("conformal factor not allowed for the euclidean family")
        if self.conformal < 0:
            raise StructureError("conformal coefficient must be >= 0")
        A.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        if self.family == "randers":
            worst = float(np.sqrt(b @ np.linalg.solve(A, b)))
            if worst >= 1.0:
                raise AdmissibilityError(
                    f"Randers drift has dual norm {worst:.6g} >= 1; structure is not admissible"
                )

    # construction -------------------------------------------------------

    @classmethod
    def euclidean(cls, dim: int, lo=-1.0, hi=1.0) -> "FinslerStructure":
        return cls("euclidean", dim, lo, hi)

    @classmethod
    def riemannian(cls, A, lo=-1.0, hi=1.0, conformal=0.0) -> "FinslerStructure":
        A = np.atleast_2d(np.asarray(A, float))
        return cls("riemannian", A.shape[0], lo, hi, A=A, conformal=conformal)

    @classmethod
    def randers(cls, A, b, lo=-1.0, hi=1.0, conformal=0.0) -> "FinslerStructure":
        A = np.atleast_2d(np.asarray(A, float))
        return cls("randers", A.shape[0], lo, hi, A=A, b=b, conformal=conformal)

    @classmethod
    def funk(cls, dim: int, margin: float = 1e-3) -> "FinslerStructure":
        return cls("funk", dim, -1.0, 1.0, funk_margin=margin)

    @classmethod
    def from_config(cls, cfg: Mapping[str, Any]) -> "FinslerStructure":
        """Build from a record like ``{"family": "randers", "dim": 3, "b": [...]}``."""
        family = str(cfg.get("family", "euclidean")).lower()
        dim = int(cfg.get("dim", 3))
        lo = cfg.get("lo", -1.0)
        hi = cfg.get("hi", 1.0)
        A = cfg.get("A")
        if A is not None:
            A = np.asarray(A, float)
            if A.ndim == 1:
                A = np.diag(A)
        b = cfg.get("b")
        return cls(
            family,
            dim,
            lo,
            hi,
            A=A,
            b=None if b is None else np.asarray(b, float),
            conformal=float(cfg.get("conformal", 0.0)),
            funk_margin=float(cfg.get("funk_margin", 1e-3)),
            params=dict(cfg),
        )

    def reversed(self) -> "FinslerStructure":
        """The reverse structure F~(x, y) = F(x, -y)."""
        return FinslerStructure(
            self.family, self.dim, self.lo, self.hi, A=self.A, b=self.b,
            conformal=self.conformal, funk_margin=self.funk_margin,
            reverse=not self.reverse, params=self.params,
        )

    # properties ---------------------------------------------------------

    @property
    def is_reversible(self) -> bool:
        return self.family in ("euclidean", "riemannian") or (
            self.family == "randers" and not np.any(self.b)
        )

    @property
    def is_riemannian(self) -> bool:
        return self.is_reversible

    @property
    def is_homogeneous(self) -> bool:
        """True when the coefficients do not depend on the base point."""
        return self.family != "funk" and self.conformal == 0.0

    def describe(self) -> dict:
        d = {"family": self.family, "dim": self.dim, "lo": self.lo.tolist(), "hi": self.hi.tolist()}
        if self.family in ("riemannian", "randers"):
            d["A"] = self.A.tolist()
            d["conformal"] = self.conformal
        if self.family == "randers":
            d["b"] = self.b.tolist()
        if self.family == "funk":
            d["funk_margin"] = self.funk_margin
        if self.reverse:
            d["reverse"] = True
        return d

    # points -------------------------------------------------------------

    def contains(self, x, atol: float = 1e-12) -> np.ndarray:
        x = np.asarray(x, float)
        inside = np.all((x >= self.lo - atol) & (x <= self.hi + atol), axis=-1)
        if self.family == "funk":
            inside &= np.linalg.norm(x, axis=-1) <= 1.0 - self.funk_margin + atol
        return inside

    def check_points(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        if x.shape[-1] != self.dim:
            raise StructureError(f"point has {x.shape[-1]} components, expected {self.dim}")
        if not np.all(self.contains(x)):
            raise DomainError(f"point outside the domain of the {self.family} structure")
        return x

    # coefficients -------------------------------------------------------

    def coefficients(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Randers data (A(x), b(x)) broadcast over the leading axes of ``x``."""
        x = np.asarray(x, float)
        lead = x.shape[:-1]
        n = self.dim
        if self.family == "funk":
            r2 = np.einsum("...i,...i->...", x, x)[..., None]
            q = 1.0 - r2
            A = (q[..., None] * np.eye(n) + x[..., :, None] * x[..., None, :]) / (q[..., None] ** 2)
            b = x / q
        else:
            A = np.broadcast_to(self.A, lead + (n, n))
            b = np.broadcast_to(self.b, lead + (n,))
            if self.conformal:
                c = 1.0 + self.conformal * np.einsum("...i,...i->...", x, x)
                A = A * c[..., None, None]
        if self.reverse:
            b = -b
        return A, b

    def dual_coefficients(self, x) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(H, w, lam) with H = A^-1, w = H b, lam = 1 - <b, w>."""
        A, b = self.coefficients(x)
        if self.is_homogeneous:
            H = np.linalg.inv(A.reshape(-1, self.dim, self.dim)[0])
            H = np.broadcast_to(H, A.shape)
        else:
            H = np.linalg.inv(A)
        w = np.einsum("...ij,...j->...i", H, b)
        lam = 1.0 - np.einsum("...i,...i->...", b, w)
        return H, w, lam


def _quad(M, u, v=None):
    v = u if v is None else v
    return np.einsum("...i,...ij,...j->...", u, M, v)


# evaluation -------------------------------------------------------------


def eval_F(S: FinslerStructure, x, y, check: bool = True) -> np.ndarray:
    """F(x, y), vectorised over leading axes."""
    x = S.check_points(x) if check else np.asarray(x, float)
    y = np.asarray(y, float)
    if not np.all(np.isfinite(y)):
        raise StructureError("tangent vector must be finite")
    if S.family == "funk":
        yy = -y if S.reverse else y
        r2 = np.einsum("...i,...i->...", x, x)
        xy = np.einsum("...i,...i->...", x, yy)
        yn2 = np.einsum("...i,...i->...", yy, yy)
        q = 1.0 - r2
        # positive root of (1-|x|^2) F^2 - 2<x,y> F - |y|^2 = 0
        return (xy + np.sqrt(xy * xy + q * yn2)) / q
    A, b = S.coefficients(x)
    return np.sqrt(np.maximum(_quad(A, y), 0.0)) + np.einsum("...i,...i->...", b, y)


def fundamental_tensor(S: FinslerStructure, x, y, method: str = "auto") -> np.ndarray:
    """Hessian of F^2/2 in y.  ``method`` is ``"exact"``, ``"fd"`` or ``"auto"``."""
    x = S.check_points(x)
    y = np.asarray(y, float)
    if np.any(np.linalg.norm(y, axis=-1) == 0):
        raise StructureError("fundamental tensor undefined at y = 0")
    if method == "fd":
        g = _fd_hessian_half_F2(S, x, y)
    elif method in ("auto", "exact"):
        A, b = S.coefficients(x)
        a = np.sqrt(_quad(A, y))
        ell = np.einsum("...ij,...j->...i", A, y) / a[..., None]
        F = a + np.einsum("...i,...i->...", b, y)
        g = (F / a)[..., None, None] * (A - ell[..., :, None] * ell[..., None, :])
        lb = ell + b
        g = g + lb[..., :, None] * lb[..., None, :]
    else:
        raise ValueError(f"unknown method {method!r}")
    lam_min = np.linalg.eigvalsh(g)[..., 0]
    if np.any(lam_min <= -1e-8):
        raise StructureError(
            f"fundamental tensor not positive definite (min eigenvalue {lam_min.min():.3g})"
        )
    return g


def _fd_hessian_half_F2(S, x, y):
    n = S.dim
    x, y = np.broadcast_arrays(x, y)
    h = 1e-4 * np.maximum(np.linalg.norm(y, axis=-1), 1.0)
    E = np.eye(n)
    f = lambda yy: 0.5 * eval_F(S, x, yy, check=False) ** 2
    f0 = f(y)
    g = np.empty(y.shape[:-1] + (n, n))
    for i in range(n):
        ei = E[i] * h[..., None]
        g[..., i, i] = (f(y + ei) - 2 * f0 + f(y - ei)) / h**2
        for j in range(i + 1, n):
            ej = E[j] * h[..., None]
            v = (f(y + ei + ej) - f(y + ei - ej) - f(y - ei + ej) + f(y - ei - ej)) / (4 * h**2)
            g[..., i, j] = g[..., j, i] = v
    return g


# duality ----------------------------------------------------------------


def polar_transform(S: FinslerStructure, x, alpha, method: str = "auto") -> np.ndarray:
    """F*(x, alpha) = sup_{y != 0} alpha(y) / F(x, y)."""
    x = S.check_points(x)
    alpha = np.asarray(alpha, float)
    if not np.all(np.isfinite(alpha)):
        raise StructureError("covector must be finite")
    if method == "numeric":
        return polar_search(S, x, alpha).value
    if method not in ("auto", "closed"):
        raise ValueError(f"unknown method {method!r}")
    H, w, lam = S.dual_coefficients(x)
    return _dual_norm(H, w, lam, alpha)


def _dual_norm(H, w, lam, alpha):
    aw = np.einsum("...i,...i->...", alpha, w)
    s = np.sqrt(np.maximum(lam * _quad(H, alpha) + aw * aw, 0.0))
    return (s - aw) / lam


def legendre_transform(S: FinslerStructure, x, alpha, method: str = "auto") -> np.ndarray:
    """J*(x, alpha): the maximiser of alpha(y) - F(x, y)^2 / 2 (zero for alpha = 0)."""
    x = S.check_points(x)
    alpha = np.asarray(alpha, float)
    if method == "numeric":
        res = polar_search(S, x, alpha)
        y = res.direction
        Fy = eval_F(S, x, y, check=False)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = (res.value / Fy)[..., None] * y
        return np.where((res.value == 0)[..., None], 0.0, out)
    if method not in ("auto", "closed"):
        raise ValueError(f"unknown method {method!r}")
    H, w, lam = S.dual_coefficients(x)
    return _legendre(H, w, lam, alpha)


def _legendre(H, w, lam, alpha):
    aw = np.einsum("...i,...i->...", alpha, w)
    Ha = np.einsum("...ij,...j->...i", H, alpha)
    s = np.sqrt(np.maximum(lam * _quad(H, alpha) + aw * aw, 0.0))
    Fs = (s - aw) / lam
    safe = np.where(s > 0, s, 1.0)
    grad = ((lam[..., None] * Ha + aw[..., None] * w) / safe[..., None] - w) / lam[..., None]
    return np.where((s > 0)[..., None], Fs[..., None] * grad, 0.0)


@dataclass
class PolarSearch:
    value: np.ndarray
    direction: np.ndarray
    converged: np.ndarray
    iterations: int


def sphere_directions(n: int, count: int) -> np.ndarray:
    """Quasi-uniform unit vectors (Fibonacci lattice for n = 3)."""
    if n == 2:
        t = 2 * np.pi * (np.arange(count) + 0.5) / count
        return np.stack([np.cos(t), np.sin(t)], axis=-1)
    if n == 3:
        k = np.arange(count) + 0.5
        z = 1 - 2 * k / count
        phi = np.pi * (3 - np.sqrt(5)) * k
        r = np.sqrt(1 - z * z)
        return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)
    from scipy.stats import norm, qmc

    u = qmc.Halton(n, scramble=False).random(count + 1)[1:]
    v = norm.ppf(u)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def polar_search(
    S: FinslerStructure, x, alpha, starts: int = 32, tol: float = 1e-10, max_iter: int = 2000
) -> PolarSearch:
    """Multistart projected gradient ascent of alpha(y)/F(x,y) on the unit sphere.

    Only ``eval_F`` is used, so this is independent of the closed-form dual.
    """
    x = np.asarray(x, float)
    alpha = np.asarray(alpha, float)
    x, alpha = np.broadcast_arrays(x, alpha)
    lead = alpha.shape[:-1]
    n = S.dim
    xs = np.repeat(x.reshape(-1, 1, n), starts, axis=1)
    al = np.repeat(alpha.reshape(-1, 1, n), starts, axis=1)
    Y = np.broadcast_to(sphere_directions(n, starts), xs.shape).copy()

    def phi(Y):
        return np.einsum("...i,...i->...", al, Y) / eval_F(S, xs, Y, check=False)

    def grad(Y):
        hd = 1e-6
        G = np.empty_like(Y)
        for i in range(n):
            e = np.zeros(n)
            e[i] = hd
            G[..., i] = (phi(Y + e) - phi(Y - e)) / (2 * hd)
        # project onto the tangent space of the sphere
        return G - np.einsum("...i,...i->...", G, Y)[..., None] * Y

    val = phi(Y)
    step = np.full(val.shape, 0.5)
    done = np.zeros(val.shape, bool)
    it = 0
    for it in range(1, max_iter + 1):
        G = grad(Y)
        trial = Y + step[..., None] * G
        trial /= np.linalg.norm(trial, axis=-1, keepdims=True)
        tv = phi(trial)
        better = tv > val
        move = np.linalg.norm(trial - Y, axis=-1)
        upd = better & ~done
        Y = np.where(upd[..., None], trial, Y)
        val = np.where(upd, tv, val)
        step = np.where(better, np.minimum(step * 1.5, 10.0), step * 0.5)
        done |= (upd & (move < tol)) | (step * np.linalg.norm(G, axis=-1) < tol)
        if done.all():
            break
    best = np.argmax(val, axis=1)
    rows = np.arange(val.shape[0])
    value = np.maximum(val[rows, best], 0.0)
    direction = Y[rows, best]
    converged = done[rows, best]
    if not converged.all():
        log.warning("polar transform search did not converge at %d point(s)", int((~converged).sum()))
    # alpha = 0: the sup is 0 and every direction attains it
    zero = np.all(alpha.reshape(-1, n) == 0, axis=-1)
    value[zero] = 0.0
    return PolarSearch(value.reshape(lead), direction.reshape(lead + (n,)), converged.reshape(lead), it)
