"""Sampled estimates of the reversibility constant r_F and the uniformity constant l_F."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.stats import norm, qmc

from .structures import FinslerStructure, eval_F, fundamental_tensor, polar_transform

log = logging.getLogger(__name__)

UNBOUNDED_R = 1e6
CHUNK = 256


@dataclass
class ConstantsEstimate:
    r_F: float = 1.0
    l_F: float = 1.0
    sample_count: int = 0
    r_witness: tuple | None = None
    l_witness: tuple | None = None
    refinement_iterations: int = 0
    r_unbounded: bool = False
    flags: list = field(default_factory=list)
    seed: int = 0

    def bracket(self, rel: float = 1e-2) -> tuple[float, float]:
        """Conservative (l_lo, r_hi): sampling overestimates the infimum and underestimates the supremum."""
        return max(self.l_F * (1 - rel), 0.0), self.r_F * (1 + rel)

    def to_dict(self) -> dict:
        wit = lambda w: None if w is None else [np.asarray(a).tolist() for a in w]
        return {
            "r_F": None if self.r_unbounded and not np.isfinite(self.r_F) else self.r_F,
            "l_F": self.l_F,
            "sample_count": self.sample_count,
            "r_witness": wit(self.r_witness),
            "l_witness": wit(self.l_witness),
            "refinement_iterations": self.refinement_iterations,
            "r_unbounded": self.r_unbounded,
            "flags": list(self.flags),
            "seed": self.seed,
        }


# sampling ---------------------------------------------------------------


def _log2_ceil(k: int) -> int:
    # Sobol balance needs power-of-two draws; callers trim the excess
    return max(int(k - 1).bit_length(), 0)


def domain_points(S: FinslerStructure, count: int, seed: int = 0, radius: float | None = None) -> np.ndarray:
    """Scrambled Sobol points in the domain, optionally restricted to the ball |x| <= radius."""
    lo, hi = S.lo.copy(), S.hi.copy()
    lim = radius
    if S.family == "funk":
        lim = min(radius if radius is not None else 1.0, 1.0 - S.funk_margin)
    if lim is not None:
        lo, hi = np.maximum(lo, -lim), np.minimum(hi, lim)
    sob = qmc.Sobol(S.dim, scramble=True, seed=seed)
    out = []
    have = 0
    while have < count:
        m = _log2_ceil(max(2 * count, 64)) if not out else _log2_ceil(sob.num_generated)
        z = lo + (hi - lo) * sob.random_base2(m)
        if lim is not None:
            z = z[np.linalg.norm(z, axis=-1) <= lim]
        out.append(z)
        have += len(z)
    return np.concatenate(out)[:count]


def unit_directions(n: int, count: int, seed: int = 0) -> np.ndarray:
    u = qmc.Sobol(n, scramble=True, seed=seed).random_base2(_log2_ceil(count))[:count]
    v = norm.ppf(np.clip(u, 1e-12, 1 - 1e-12))
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _project(S: FinslerStructure, x, radius=None):
    x = np.clip(x, S.lo, S.hi)
    lim = radius
    if S.family == "funk":
        lim = min(radius if radius is not None else 1.0, 1.0 - S.funk_margin)
    if lim is not None:
        r = np.linalg.norm(x)
        if r > lim:
            x = x * (lim / r)
    return x


def _chunked(fn, items, threads: int):
    """Map over fixed chunks; results come back in chunk order whatever the thread count."""
    chunks = [items[i:i + CHUNK] for i in range(0, len(items), CHUNK)]
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(fn, chunks))
    return [fn(c) for c in chunks]


# reversibility ----------------------------------------------------------


def _reversibility_ratio(S, x, y):
    return eval_F(S, x, y, check=False) / eval_F(S, x, -y, check=False)


def estimate_reversibility(
    S: FinslerStructure,
    domain_samples: int = 4096,
    direction_samples: int = 256,
    seed: int = 0,
    refine: int = 8,
    radius: float | None = None,
    threads: int = 1,
) -> ConstantsEstimate:
    """sup over samples of F(x,y)/F(x,-y), then Nelder-Mead refinement from the best witnesses."""
    if domain_samples < 1 or direction_samples < 1:
        raise ValueError("sample counts must be >= 1")
    est = ConstantsEstimate(seed=seed, sample_count=domain_samples * direction_samples)
    if S.is_reversible:
        x0 = domain_points(S, 1, seed, radius)[0]
        est.r_witness = (x0, np.eye(S.dim)[0])
        return est
    X = domain_points(S, domain_samples, seed, radius)
    Y = unit_directions(S.dim, direction_samples, seed + 1)

    def block(xs):
        R = _reversibility_ratio(S, xs[:, None, :], Y[None, :, :])
        return R.max(axis=1), R.argmax(axis=1)

    parts = _chunked(block, X, threads)
    best_val = np.concatenate([p[0] for p in parts])
    best_dir = np.concatenate([p[1] for p in parts])
    order = np.argsort(-best_val, kind="stable")
    r = float(best_val[order[0]])
    wit = (X[order[0]], Y[best_dir[order[0]]])
    iters = 0
    n = S.dim
    for k in order[:refine]:
        z0 = np.concatenate([X[k], Y[best_dir[k]]])

        def neg(z):
            x = _project(S, z[:n], radius)
            y = z[n:]
            if not np.any(y):
                return 0.0
            return -float(_reversibility_ratio(S, x, y))

        res = minimize(neg, z0, method="Nelder-Mead",
                       options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 2000})
        iters += int(res.nit)
        if -res.fun > r:
            r = float(-res.fun)
            y = res.x[n:]
            wit = (_project(S, res.x[:n], radius), y / np.linalg.norm(y))
    est.r_F = max(r, 1.0)
    est.r_witness = wit
    est.refinement_iterations = iters
    if est.r_F > UNBOUNDED_R or not np.isfinite(est.r_F):
        est.r_unbounded = True
        est.flags.append("r_F unbounded")
    return est


# uniformity -------------------------------------------------------------


def _min_ratio(Gv, Gw):
    """min_y (y.Gv.y)/(y.Gw.y) and its minimiser, via the generalised eigenproblem."""
    L = np.linalg.cholesky(Gw)
    Linv = np.linalg.inv(L)
    M = Linv @ Gv @ np.swapaxes(Linv, -1, -2)
    M = 0.5 * (M + np.swapaxes(M, -1, -2))
    lam, vec = np.linalg.eigh(M)
    y = np.einsum("...ji,...j->...i", Linv, vec[..., :, 0])
    return lam[..., 0], y


def uniformity_ratio(S: FinslerStructure, x, y, v, w) -> np.ndarray:
    """g_(x,v)(y,y) / g_(x,w)(y,y)."""
    gv = fundamental_tensor(S, x, v)
    gw = fundamental_tensor(S, x, w)
    q = lambda g: np.einsum("...i,...ij,...j->...", y, g, y)
    return q(gv) / q(gw)


def estimate_uniformity(
    S: FinslerStructure,
    domain_samples: int = 4096,
    triple_samples: int = 256,
    seed: int = 0,
    refine: int = 8,
    radius: float | None = None,
    threads: int = 1,
) -> ConstantsEstimate:
    """inf over sampled (x, v, w) of min_y g_v(y,y)/g_w(y,y), then Nelder-Mead refinement.

    The innermost infimum over y is exact: it is the smallest generalised
    eigenvalue of the pencil (g_v, g_w).
    """
    if domain_samples < 1 or triple_samples < 1:
        raise ValueError("sample counts must be >= 1")
    n = S.dim
    est = ConstantsEstimate(seed=seed, sample_count=domain_samples * triple_samples)
    if S.is_riemannian:
        x0 = domain_points(S, 1, seed, radius)[0]
        e = np.eye(n)[0]
        est.l_witness = (x0, e, e, e)
        return est
    X = domain_points(S, domain_samples, seed, radius)
    VW = unit_directions(2 * n, triple_samples, seed + 2)
    V = VW[:, :n] / np.linalg.norm(VW[:, :n], axis=-1, keepdims=True)
    W = VW[:, n:] / np.linalg.norm(VW[:, n:], axis=-1, keepdims=True)

    def block(xs):
        xb = np.broadcast_to(xs[:, None, :], (len(xs), len(V), n))
        gv = fundamental_tensor(S, xb, np.broadcast_to(V, xb.shape))
        gw = fundamental_tensor(S, xb, np.broadcast_to(W, xb.shape))
        lam, _ = _min_ratio(gv, gw)
        return lam.min(axis=1), lam.argmin(axis=1)

    parts = _chunked(block, X, threads)
    best_val = np.concatenate([p[0] for p in parts])
    best_idx = np.concatenate([p[1] for p in parts])
    order = np.argsort(best_val, kind="stable")

    def evaluate(x, v, w):
        gv = fundamental_tensor(S, x, v)
        gw = fundamental_tensor(S, x, w)
        lam, y = _min_ratio(gv, gw)
        return float(lam), y

    k0 = order[0]
    l, y0 = evaluate(X[k0], V[best_idx[k0]], W[best_idx[k0]])
    wit = (X[k0], y0 / np.linalg.norm(y0), V[best_idx[k0]], W[best_idx[k0]])
    iters = 0
    for k in order[:refine]:
        z0 = np.concatenate([X[k], V[best_idx[k]], W[best_idx[k]]])

        def obj(z):
            x = _project(S, z[:n], radius)
            v, w = z[n:2 * n], z[2 * n:]
            if not np.any(v) or not np.any(w):
                return 1.0
            return evaluate(x, v, w)[0]

        res = minimize(obj, z0, method="Nelder-Mead",
                       options={"xatol": 1e-10, "fatol": 1e-13, "maxiter": 3000})
        iters += int(res.nit)
        if res.fun < l:
            x = _project(S, res.x[:n], radius)
            v, w = res.x[n:2 * n], res.x[2 * n:]
            l, y = evaluate(x, v, w)
            wit = (x, y / np.linalg.norm(y), v / np.linalg.norm(v), w / np.linalg.norm(w))
    est.l_F = float(np.clip(l, 0.0, 1.0))
    est.l_witness = wit
    est.refinement_iterations = iters
    return est


def estimate_constants(S: FinslerStructure, domain_samples=4096, direction_samples=256,
                       seed=0, refine=8, radius=None, threads=1) -> ConstantsEstimate:
    r = estimate_reversibility(S, domain_samples, direction_samples, seed, refine, radius, threads)
    l = estimate_uniformity(S, domain_samples, direction_samples, seed, refine, radius, threads)
    r.l_F = l.l_F
    r.l_witness = l.l_witness
    r.sample_count += l.sample_count
    r.refinement_iterations += l.refinement_iterations
    r.flags += l.flags
    if l.l_F > 0.01 and r.r_unbounded:
        r.flags.append("inconsistent: l_F > 0 with unbounded r_F")
    return r


def degeneracy_sweep(S: FinslerStructure, radii, domain_samples=4096, direction_samples=256,
                     seed=0, refine=8, threads=1) -> list[ConstantsEstimate]:
    """Constants on nested balls |x| <= radius; flags r_F growth and l_F decay toward the boundary."""
    out = [estimate_constants(S, domain_samples, direction_samples, seed, refine, r, threads)
           for r in radii]
    rs = [e.r_F for e in out]
    ls = [e.l_F for e in out]
    if len(out) > 1 and all(b > a for a, b in zip(rs, rs[1:])):
        for e in out:
            e.flags.append("r_F grows with sub-domain radius")
        out[-1].r_unbounded = True
    if len(out) > 1 and all(b < a for a, b in zip(ls, ls[1:])):
        for e in out:
            e.flags.append("l_F decreases toward 0 with sub-domain radius")
    return out


def check_convexity_inequality(S: FinslerStructure, x, alpha, beta, t, l_F: float) -> np.ndarray:
    """t F*^2(a) + (1-t) F*^2(b) - l t(1-t) F*^2(b-a) - F*^2(t a + (1-t) b); >= 0 for valid l."""
    alpha = np.asarray(alpha, float)
    beta = np.asarray(beta, float)
    t = np.asarray(t, float)
    if np.any((t < 0) | (t > 1)):
        raise ValueError("t must lie in [0, 1]")
    f = lambda a: polar_transform(S, x, a) ** 2
    tt = t[..., None] if t.ndim else t
    margin = t * f(alpha) + (1 - t) * f(beta) - l_F * t * (1 - t) * f(beta - alpha) \
        - f(tt * alpha + (1 - tt) * beta)
    return np.where((t == 0) | (t == 1), 0.0, margin)
