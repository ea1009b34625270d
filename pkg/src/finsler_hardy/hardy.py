"""Margins of the Hardy-type inequalities: pointwise lemmas, integral theorems and flat cases.

Every check returns an :class:`InequalityReport` with ``margin = lhs - rhs``
and ``passed = margin >= -tolerance``.  The inequalities are written so that
``lhs`` is the side claimed to be larger.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from itertools import combinations

import numpy as np
from scipy import integrate

from .calculus import differential, divergence, finsler_laplacian, smoothstep5
from .constants import ConstantsEstimate, domain_points
from .distance import DistanceField, pole_mask
from .grid import Field, require_same_grid
from .measure import integrate as quad
from .structures import FinslerStructure, legendre_transform, polar_transform

log = logging.getLogger(__name__)

INEQUALITY_IDS = (
    "Eq1", "Eq2", "Eq3", "Eq4", "Eq5", "Eq7", "Eq9", "Eq10", "Eq11", "Eq12",
    "BipolarPointwise", "Remark1ExpansionIdentity", "Remark1DivIdentity", "Remark1Equivalence",
)
CHECKED = "checked"
NOT_APPLICABLE = "not_applicable"
EXPLORATORY = "exploratory"


@dataclass
class InequalityReport:
    inequality_id: str
    lhs: float
    rhs: float
    margin: float
    tolerance: float
    passed: bool
    terms: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)
    status: str = CHECKED

    def __post_init__(self):
        if self.inequality_id not in INEQUALITY_IDS:
            raise ValueError(f"unknown inequality id {self.inequality_id!r}")

    @classmethod
    def make(cls, inequality_id, lhs, rhs, tolerance=0.0, terms=None, metadata=None,
             extra_checks=None, status=CHECKED):
        """Build a report; ``extra_checks`` (name -> bool) must all hold for a pass."""
        lhs = float(lhs)
        rhs = float(rhs)
        margin = lhs - rhs
        ok = bool(margin >= -tolerance)
        terms = dict(terms or {})
        if extra_checks:
            terms["checks"] = {k: bool(v) for k, v in extra_checks.items()}
            ok = ok and all(extra_checks.values())
        return cls(inequality_id, lhs, rhs, margin, float(tolerance), ok, terms,
                   dict(metadata or {}), status)

    @classmethod
    def not_applicable(cls, inequality_id, reason, metadata=None):
        md = dict(metadata or {})
        md["reason"] = reason
        nan = float("nan")
        return cls(inequality_id, nan, nan, nan, 0.0, True, {}, md, NOT_APPLICABLE)

    @property
    def gating(self) -> bool:
        return self.status == CHECKED

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if np.isfinite(v) else str(v)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, Fraction):
        return str(x)
    return x


def theorems_applicable(est: ConstantsEstimate) -> tuple[bool, str]:
    if est.r_unbounded:
        return False, "reversibility constant unbounded; uniformity constant degenerates to 0"
    if not est.l_F > 0:
        return False, "uniformity constant is 0"
    return True, ""


# pointwise inequalities -------------------------------------------------


def _fs2(S, x, a):
    return polar_transform(S, x, a) ** 2


def _pair(a, v):
    return np.einsum("...i,...i->...", a, v)


def pointwise_margins(S: FinslerStructure, x, alpha, beta, t, l_F: float, r_F: float) -> dict:
    """Per-sample (lhs, rhs) of the convexity and proof-chain inequalities."""
    fa = _fs2(S, x, alpha)
    fb = _fs2(S, x, beta)
    fma = _fs2(S, x, -alpha)
    fsum = _fs2(S, x, alpha + beta)
    fdiff = _fs2(S, x, beta - alpha)
    aJb = _pair(alpha, legendre_transform(S, x, beta))
    tt = t
    mix = _fs2(S, x, tt[:, None] * alpha + (1 - tt)[:, None] * beta)
    inv_r = 0.0 if not np.isfinite(r_F) else 1.0 / r_F
    return {
        "Eq7": (tt * fa + (1 - tt) * fb - l_F * tt * (1 - tt) * fdiff, mix),
        "Eq9": (2 * fa + 2 * fb - l_F * fdiff, fsum),
        "Eq10": (fdiff, fb - 2 * aJb + l_F * fma),
        "Eq11": (np.sqrt(fma), np.sqrt(fa) * inv_r),
        "Eq12": ((2 - (l_F * inv_r) ** 2) * fa + (2 - l_F) * fb + 2 * l_F * aJb, fsum),
    }


def sample_covectors(S: FinslerStructure, samples: int, seed: int = 0, radius: float | None = None):
    """Base points, covector pairs with magnitudes spread over two decades, and t in [0, 1]."""
    rng = np.random.default_rng(seed)
    x = domain_points(S, samples, seed=seed, radius=radius)
    n = S.dim

    def cov():
        v = rng.normal(size=(samples, n))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return v * 10.0 ** rng.uniform(-1, 1, size=(samples, 1))

    alpha = cov()
    beta = cov()
    # include exact ties and opposite pairs, where several bounds are tight
    k = samples // 20
    beta[:k] = alpha[:k]
    beta[k:2 * k] = -alpha[k:2 * k]
    t = rng.uniform(0, 1, size=samples)
    return x, alpha, beta, t


def pointwise_suite(
    S: FinslerStructure,
    est: ConstantsEstimate,
    samples: int = 100_000,
    seed: int = 0,
    tolerance: float = 1e-8,
    bracket: float = 1e-2,
    radius: float | None = None,
    constants: tuple[float, float] | None = None,
) -> list[InequalityReport]:
    """Worst-case margins over random (x, alpha, beta, t) with bracketed constants.

    ``constants`` overrides (l_F, r_F); otherwise the estimate is widened by
    ``bracket`` (l_F lowered, r_F raised) so that sampling error in the
    estimate cannot fabricate a violation.
    """
    if constants is None:
        if est.r_unbounded:
            l_F, r_F = 0.0, float("inf")
        else:
            l_F, r_F = est.bracket(bracket)
    else:
        l_F, r_F = constants
    x, alpha, beta, t = sample_covectors(S, samples, seed, radius)
    pairs = pointwise_margins(S, x, alpha, beta, t, l_F, r_F)
    out = []
    for key, (lhs, rhs) in pairs.items():
        m = lhs - rhs
        i = int(np.argmin(m))
        out.append(InequalityReport.make(
            key, lhs[i], rhs[i], tolerance,
            terms={"min_margin": float(m[i]), "mean_margin": float(np.mean(m)),
                   "violations": int(np.count_nonzero(m < -tolerance)),
                   "witness": {"x": x[i], "alpha": alpha[i], "beta": beta[i], "t": float(t[i])}},
            metadata={"samples": samples, "seed": seed, "l_F": l_F, "r_F": r_F,
                      "structure": S.describe(), "radius": radius},
        ))
    return out


def validity_monotonicity(S, est, factors=((0.9, 1.1), (0.5, 2.0), (0.0, 10.0)), samples=20_000,
                          seed=0, radius=None) -> dict:
    """Re-run the suite with weaker constants (l' <= l, r' >= r); every pass must persist."""
    l, r = est.bracket()
    base = all(rep.passed for rep in pointwise_suite(S, est, samples, seed, radius=radius))
    result = {"base": base, "pairs": []}
    for fl, fr in factors:
        reps = pointwise_suite(S, est, samples, seed, radius=radius, constants=(l * fl, r * fr))
        result["pairs"].append({"l_F": l * fl, "r_F": r * fr, "passed": all(p.passed for p in reps)})
    result["consistent"] = (not base) or all(p["passed"] for p in result["pairs"])
    return result


# coefficients -----------------------------------------------------------


def multipolar_coefficients(l_F, r_F, n: int, m: int) -> dict:
    """Coefficients of the multipolar inequality: left factor, squared-sum factor, divergence factor."""
    return {
        "lhs": 2 - (l_F / r_F) ** 2,
        "square": (l_F - 2) * Fraction(n - 2) ** 2 / m**2 if isinstance(l_F, Fraction)
        else (l_F - 2) * (n - 2) ** 2 / m**2,
        "div": l_F * Fraction(n - 2, m) if isinstance(l_F, Fraction) else l_F * (n - 2) / m,
    }


def bipolar_coefficients(l_F, r_F, n: int) -> dict:
    """Coefficients of the bipolar inequality (difference, divergence, inverse-square terms)."""
    c = 2 - (l_F / r_F) ** 2
    q = Fraction(n - 2) if isinstance(l_F, Fraction) else float(n - 2)
    return {
        "difference": l_F * (2 - l_F) / c * q**2 / 4,
        "div": l_F / c * q / 2,
        "inverse_square": -(2 - l_F) / c * q**2 / 2,
    }


def check_coefficient_reduction(n: int = 3) -> dict:
    """With r_F = l_F = 1 the bipolar coefficients are (n-2)^2/4, (n-2)/2 and -(n-2)^2/2, exactly."""
    one = Fraction(1)
    got = bipolar_coefficients(one, one, n)
    want = {
        "difference": Fraction((n - 2) ** 2, 4),
        "div": Fraction(n - 2, 2),
        "inverse_square": -Fraction((n - 2) ** 2, 2),
    }
    assert got == want, f"coefficient reduction failed: {got} != {want}"
    return {"got": got, "expected": want, "exact": True}


# integral theorems ------------------------------------------------------


@dataclass
class PoleData:
    """Quantities derived from the distance fields that every theorem check reuses."""

    grid: object
    d: np.ndarray        # (m, *shape)
    Dd: np.ndarray       # (m, *shape, n)
    valid: np.ndarray    # nodes away from every pole (d_i > 0)

    @classmethod
    def from_fields(cls, fields) -> "PoleData":
        if len(fields) < 2:
            raise ValueError("need at least two distance fields")
        g = require_same_grid(*fields)
        d = np.stack([f.values for f in fields])
        Dd = np.stack([differential(Field(g, f.values)).values for f in fields])
        return cls(g, d, Dd, np.all(d > 0, axis=0))

    def quotients(self) -> np.ndarray:
        safe = np.where(self.d > 0, self.d, 1.0)
        return np.where(self.valid[None, ..., None], self.Dd / safe[..., None], 0.0)


def _check_direction(fields):
    for f in fields:
        if isinstance(f, DistanceField) and f.direction != "to_pole":
            raise ValueError("theorem weights need distances to the poles (to_pole)")


def multipolar_terms(S: FinslerStructure, fields, u: Field, density: Field) -> dict:
    """The integrals entering the multipolar inequality, with both divergence evaluations."""
    _check_direction(fields)
    P = PoleData.from_fields(fields)
    g = require_same_grid(u, density, *fields)
    x = g.points()
    Q = P.quotients().sum(axis=0)
    u2 = u.values**2
    Du = differential(u).values
    Du2 = differential(Field(g, u2)).values
    JQ = legendre_transform(S, x, Q)
    strong = divergence(Field(g, JQ, "vector"), density).values
    return {
        "energy": quad(polar_transform(S, x, Du) ** 2, density),
        "square": quad(polar_transform(S, x, Q) ** 2 * u2, density),
        "div_weak": -quad(_pair(Du2, JQ), density),
        "div_strong": quad(strong * u2, density),
        "u2": quad(u2, density),
    }


def verify_multipolar(S, fields, u: Field, density: Field, l_F: float, r_F: float,
                      tolerance: float = 0.0, metadata=None, terms=None) -> InequalityReport:
    """Multipolar inequality with the weak divergence term (authoritative) and the strong one reported."""
    n = S.dim
    m = len(fields)
    if n < 3:
        raise ValueError("the multipolar inequality needs n >= 3")
    md = {"m": m, "n": n, "l_F": l_F, "r_F": r_F, **(metadata or {})}
    if not l_F > 0:
        return InequalityReport.not_applicable("Eq4", "uniformity constant is 0", md)
    T = terms if terms is not None else multipolar_terms(S, fields, u, density)
    c = multipolar_coefficients(l_F, r_F, n, m)
    lhs = c["lhs"] * T["energy"]
    rhs = c["square"] * T["square"] + c["div"] * T["div_weak"]
    rhs_strong = c["square"] * T["square"] + c["div"] * T["div_strong"]
    return InequalityReport.make(
        "Eq4", lhs, rhs, tolerance,
        terms={**T, "coefficients": c, "rhs_strong": rhs_strong, "margin_strong": lhs - rhs_strong},
        metadata=md,
    )


def bipolar_terms(S, fields, u: Field, density: Field) -> dict:
    _check_direction(fields)
    if len(fields) != 2:
        raise ValueError("bipolar inequality takes exactly two poles")
    P = PoleData.from_fields(fields)
    g = require_same_grid(u, density, *fields)
    x = g.points()
    q = P.quotients()
    u2 = u.values**2
    Du = differential(u).values
    Du2 = differential(Field(g, u2)).values
    JQ = legendre_transform(S, x, q[0] + q[1])
    safe = np.where(P.d > 0, P.d, 1.0)
    inv2 = np.where(P.valid, (1.0 / safe**2).sum(axis=0), 0.0)
    return {
        "energy": quad(polar_transform(S, x, Du) ** 2, density),
        "difference": quad(polar_transform(S, x, q[1] - q[0]) ** 2 * u2, density),
        "div_weak": -quad(_pair(Du2, JQ), density),
        "div_strong": quad(divergence(Field(g, JQ, "vector"), density).values * u2, density),
        "inverse_square": quad(inv2 * u2, density),
    }


def verify_bipolar(S, fields, u: Field, density: Field, l_F: float, r_F: float,
                   tolerance: float = 0.0, metadata=None, terms=None) -> InequalityReport:
    n = S.dim
    md = {"n": n, "l_F": l_F, "r_F": r_F, **(metadata or {})}
    if not l_F > 0:
        return InequalityReport.not_applicable("Eq5", "uniformity constant is 0", md)
    T = terms if terms is not None else bipolar_terms(S, fields, u, density)
    c = bipolar_coefficients(l_F, r_F, n)
    parts = {
        "difference": c["difference"] * T["difference"],
        "div": c["div"] * T["div_weak"],
        "inverse_square": c["inverse_square"] * T["inverse_square"],
    }
    rhs = sum(parts.values())
    rhs_strong = rhs - parts["div"] + c["div"] * T["div_strong"]
    return InequalityReport.make(
        "Eq5", T["energy"], rhs, tolerance,
        terms={**T, "coefficients": c, "rhs_parts": parts, "rhs_strong": rhs_strong},
        metadata=md,
    )


def bipolar_pointwise(S, fields, l_F: float, mask_cells: int = 2, mask_radius: float = 0.0,
                      required_fraction: float = 0.99, metadata=None) -> InequalityReport:
    """Nodewise bound F*^2(Dd1/d1 + Dd2/d2) <= 2(1/d1^2 + 1/d2^2) - l_F F*^2(Dd2/d2 - Dd1/d1).

    The bound presumes F*(Dd_i) = 1.  Each node gets the tolerance implied by
    the discrete eikonal defect of the solved fields, measured with the
    structure in which they are eikonal (the reverse one for distances to a
    pole).  Failing nodes are split into those where the bound still holds
    with the actual values F*^2(Dd_i) in place of 1 (the failure is the
    substitution itself) and the rest (kinks of the distance, i.e. cut-locus
    candidates, or solver error).
    """
    _check_direction(fields)
    P = PoleData.from_fields(fields)
    g = P.grid
    x = g.points()
    mask = P.valid.copy()
    for f in fields:
        mask &= ~pole_mask(g, f.pole, mask_cells, mask_radius)
    q = P.quotients()
    d = np.where(P.d > 0, P.d, 1.0)
    lhs = polar_transform(S, x, q[0] + q[1]) ** 2
    fdiff = polar_transform(S, x, q[1] - q[0]) ** 2
    rhs = 2 * (1 / d[0] ** 2 + 1 / d[1] ** 2) - l_F * fdiff
    rev = S.reversed()
    defect = sum(np.abs(polar_transform(rev, x, P.Dd[i]) ** 2 - 1) / d[i] ** 2 for i in range(2))
    tol = 2 * defect + 1e-9 * np.abs(rhs)
    actual = 2 * sum(polar_transform(S, x, P.Dd[i]) ** 2 / d[i] ** 2 for i in range(2)) - l_F * fdiff
    margin = rhs - lhs
    ok = (margin >= -tol) & mask
    bad = (~ok) & mask
    orientation = bad & (actual - lhs >= -1e-9 * np.abs(actual))
    total = int(np.count_nonzero(mask))
    frac = np.count_nonzero(ok) / total
    worst = np.where(mask, margin + tol, np.inf)
    i = np.unravel_index(int(np.argmin(worst)), g.shape)
    return InequalityReport.make(
        "BipolarPointwise", frac, required_fraction, 0.0,
        terms={
            "nodes": total, "failures": int(np.count_nonzero(bad)),
            "failures_orientation": int(np.count_nonzero(orientation)),
            "failures_cut_locus_candidates": int(np.count_nonzero(bad & ~orientation)),
            "worst_node": {"x": x[i], "lhs": float(lhs[i]), "rhs": float(rhs[i]),
                           "tolerance": float(tol[i])},
            "fraction_with_actual_norms": float(
                np.count_nonzero((actual - lhs >= -tol) & mask) / total),
        },
        metadata={"l_F": l_F, "mask_cells": mask_cells, "mask_radius": mask_radius,
                  **(metadata or {})},
    )


# Riemannian reduction ---------------------------------------------------


def _require_riemannian(S):
    if not S.is_riemannian:
        raise ValueError("the reduction needs a Euclidean or Riemannian structure")


def riemannian_terms(S, fields, u: Field, density: Field) -> dict:
    """The two right-hand sides (squared sum + divergence form, pairwise + Laplacian form)."""
    _require_riemannian(S)
    _check_direction(fields)
    n = S.dim
    m = len(fields)
    P = PoleData.from_fields(fields)
    g = require_same_grid(u, density, *fields)
    x = g.points()
    q = P.quotients()
    u2 = u.values**2
    Du2 = differential(Field(g, u2)).values
    norm2 = lambda a: polar_transform(S, x, a) ** 2
    JQ = legendre_transform(S, x, q.sum(axis=0))
    square = quad(norm2(q.sum(axis=0)) * u2, density)
    div_weak = -quad(_pair(Du2, JQ), density)
    pairs = sum(quad(norm2(q[i] - q[j]) * u2, density) for i, j in combinations(range(m), 2))
    lap = 0.0
    for k, f in enumerate(fields):
        L = finsler_laplacian(S, Field(g, f.values), density).values
        d = np.where(P.valid, P.d[k], 1.0)
        lap += quad(np.where(P.valid, (d * L - (n - 1)) / d**2, 0.0) * u2, density)
    c = (n - 2) / m
    return {
        "rhs_squared_sum": -c**2 * square + c * div_weak,
        "rhs_pairwise": c**2 * pairs + c * lap,
        "square": square, "div_weak": div_weak, "pairs": pairs, "laplacian_term": lap,
    }


def verify_riemannian_equivalence(S, fields, u, density, rel_tol: float = 1e-2,
                                  metadata=None, terms=None) -> InequalityReport:
    """Relative gap between the two evaluations of the Riemannian right-hand side."""
    T = terms if terms is not None else riemannian_terms(S, fields, u, density)
    a, b = T["rhs_squared_sum"], T["rhs_pairwise"]
    gap = abs(a - b) / max(abs(a), abs(b), 1e-300)
    return InequalityReport.make(
        "Remark1Equivalence", rel_tol, gap, 0.0,
        terms={**T, "relative_gap": gap},
        metadata={"h": float(np.max(fields[0].grid.spacing)), **(metadata or {})},
    )


def expansion_identity(S, fields, mask_radius: float = 0.0, mask_cells: int = 2, metadata=None
                       ) -> InequalityReport:
    """|sum grad d_i/d_i|^2 = m sum 1/d_i^2 - sum_{i<j} |grad d_i/d_i - grad d_j/d_j|^2 nodewise.

    On discrete fields the two sides differ by exactly m sum (|grad d_i|^2 - 1)/d_i^2
    (the eikonal defect), so the report checks that algebra to roundoff and
    records the defect itself as the discretisation error.
    """
    _require_riemannian(S)
    P = PoleData.from_fields(fields)
    g = P.grid
    x = g.points()
    m = len(fields)
    q = P.quotients()
    d = np.where(P.d > 0, P.d, 1.0)
    norm2 = lambda a: polar_transform(S, x, a) ** 2
    left = norm2(q.sum(axis=0))
    right = m * (1 / d**2).sum(axis=0) - sum(norm2(q[i] - q[j]) for i, j in combinations(range(m), 2))
    defect = m * sum((norm2(P.Dd[i]) - 1) / d[i] ** 2 for i in range(m))
    mask = P.valid.copy()
    for f in fields:
        mask &= ~pole_mask(g, f.pole, mask_cells, mask_radius)
    scale = np.abs(left) + np.abs(right) + 1.0
    algebra = np.max(np.where(mask, np.abs(left - right - defect) / scale, 0.0))
    rel_defect = np.where(mask, np.abs(defect) / np.maximum(np.abs(right), 1e-300), np.nan)
    return InequalityReport.make(
        "Remark1ExpansionIdentity", 1e-10, algebra, 0.0,
        terms={"algebra_residual": float(algebra),
               "defect_max": float(np.nanmax(rel_defect)),
               "defect_mean": float(np.nanmean(rel_defect))},
        metadata={"h": float(np.max(g.spacing)), "mask_radius": mask_radius, **(metadata or {})},
    )


def div_identity_error(S, field, density, mask_radius: float = 0.25, mask_cells: int = 2) -> dict:
    """div(grad d / d) against (d Lap d - 1)/d^2, both evaluated discretely on the same grid."""
    _require_riemannian(S)
    g = require_same_grid(field, density)
    x = g.points()
    d = field.values
    Dd = differential(Field(g, d)).values
    safe = np.where(d > 0, d, 1.0)
    V = legendre_transform(S, x, Dd / safe[..., None])
    left = divergence(Field(g, V, "vector"), density).values
    L = finsler_laplacian(S, Field(g, d), density).values
    right = (safe * L - 1) / safe**2
    mask = ~pole_mask(g, field.pole, mask_cells, mask_radius) & (d > 0)
    # one more layer away from the box so both stencils are interior
    mask &= g.boundary_distance_cells() >= 3
    err = np.abs(left - right)[mask]
    return {"max": float(err.max()), "mean": float(err.mean()), "h": float(np.max(g.spacing))}


def observed_order(errors, hs) -> float:
    """Least-squares slope of log(error) against log(h)."""
    e = np.log(np.asarray(errors, float))
    h = np.log(np.asarray(hs, float))
    return float(np.polyfit(h, e, 1)[0])


def verify_div_identity(S, fields_by_grid, densities, mask_radius=0.25, min_order=0.9,
                        metadata=None) -> InequalityReport:
    """Convergence of the discrete product-rule identity under grid refinement (mean norm)."""
    rows = [div_identity_error(S, f, dn, mask_radius) for f, dn in zip(fields_by_grid, densities)]
    order = observed_order([r["mean"] for r in rows], [r["h"] for r in rows])
    shrinking = all(b["mean"] < a["mean"] for a, b in zip(rows, rows[1:]))
    return InequalityReport.make(
        "Remark1DivIdentity", order, min_order, 0.0,
        terms={"levels": rows, "order_mean": order,
               "order_max": observed_order([r["max"] for r in rows], [r["h"] for r in rows])},
        metadata={"mask_radius": mask_radius, **(metadata or {})},
        extra_checks={"shrinking": shrinking},
    )


# flat space -------------------------------------------------------------


def flat_unipolar(grid, u: Field, pole=None, tolerance: float = 0.0) -> InequalityReport:
    """Euclidean |grad u|^2 >= (n-2)^2/4 u^2/|x - p|^2 with the exact distance."""
    n = grid.dim
    x = grid.points()
    p = np.zeros(n) if pole is None else np.asarray(pole, float)
    r2 = np.sum((x - p) ** 2, axis=-1)
    w = np.where(r2 > 0, 1.0 / np.where(r2 > 0, r2, 1.0), 0.0)
    ones = Field(grid, np.ones(grid.shape), "density")
    Du = differential(u).values
    lhs = quad(np.sum(Du**2, axis=-1), ones)
    rhs = (n - 2) ** 2 / 4 * quad(w * u.values**2, ones)
    return InequalityReport.make("Eq1", lhs, rhs, tolerance, metadata={"pole": p, "n": n})


def flat_pair_weights(x, poles) -> np.ndarray:
    """sum_{i<j} |(x-x_i)/|x-x_i|^2 - (x-x_j)/|x-x_j|^2|^2."""
    poles = [np.asarray(p, float) for p in poles]
    vs = []
    for p in poles:
        y = x - p
        r2 = np.sum(y * y, axis=-1, keepdims=True)
        vs.append(np.where(r2 > 0, y / np.where(r2 > 0, r2, 1.0), 0.0))
    return sum(np.sum((vs[i] - vs[j]) ** 2, axis=-1) for i, j in combinations(range(len(vs)), 2))


def flat_multipolar(grid, u: Field, poles, tolerance: float = 0.0) -> InequalityReport:
    n = grid.dim
    m = len(poles)
    ones = Field(grid, np.ones(grid.shape), "density")
    Du = differential(u).values
    lhs = quad(np.sum(Du**2, axis=-1), ones)
    rhs = (n - 2) ** 2 / m**2 * quad(flat_pair_weights(grid.points(), poles) * u.values**2, ones)
    return InequalityReport.make("Eq2", lhs, rhs, tolerance,
                                 metadata={"m": m, "n": n, "constant": (n - 2) ** 2 / m**2})


def crude_pair_bound(grid, u: Field, poles) -> InequalityReport:
    """Away from the poles (|x - x_i| >= 1 on the support) each pair weight is at most 4."""
    x = grid.points()
    m = len(poles)
    supp = u.values > 0
    dmin = min(float(np.min(np.linalg.norm(x[supp] - np.asarray(p), axis=-1))) for p in poles)
    if dmin < 1.0:
        raise ValueError("crude bound needs the support at distance >= 1 from every pole")
    ones = Field(grid, np.ones(grid.shape), "density")
    weighted = quad(flat_pair_weights(x, poles) * u.values**2, ones)
    bound = m * (m - 1) / 2 * 4 * quad(u.values**2, ones)
    return InequalityReport.make("Eq2", bound, weighted, 0.0,
                                 metadata={"check": "pair weight bound", "min_pole_distance": dmin},
                                 status=EXPLORATORY)


def radial_profile(r, eps: float, n: int = 3):
    """Truncated Hardy extremal: eps^-a inside eps, r^-a up to 1, C^2 cutoff on [1, 2]; a = (n-2)/2."""
    a = (n - 2) / 2
    r = np.asarray(r, float)
    core = np.where(r < eps, eps**-a, np.power(np.maximum(r, eps), -a))
    return core * (1 - smoothstep5(r - 1.0))


def _radial_derivative(r, eps, n):
    a = (n - 2) / 2
    s = smoothstep5(r - 1.0)
    t = np.clip(r - 1.0, 0, 1)
    ds = 30 * t**2 * (1 - t) ** 2
    core = np.where(r < eps, eps**-a, np.power(np.maximum(r, eps), -a))
    dcore = np.where(r < eps, 0.0, -a * np.power(np.maximum(r, eps), -a - 1))
    return dcore * (1 - s) - core * ds


def rayleigh_quotient(eps: float, n: int = 3) -> float:
    """int |u'|^2 r^(n-1) dr / int u^2 r^(n-3) dr for the truncated profile, by adaptive quadrature.

    The ranges [0, eps], [eps, 1] and [1, 2] are integrated separately; the
    middle one in the variable s = log r, where the integrands are smooth.
    """
    def log_part(fn):
        val, _ = integrate.quad(lambda s: fn(np.exp(s)) * np.exp(s), np.log(eps), 0.0, limit=200)
        return val

    num_mid = log_part(lambda r: _radial_derivative(r, eps, n) ** 2 * r ** (n - 1))
    den_mid = log_part(lambda r: radial_profile(r, eps, n) ** 2 * r ** (n - 3))
    num_out, _ = integrate.quad(lambda r: _radial_derivative(r, eps, n) ** 2 * r ** (n - 1), 1, 2)
    den_out, _ = integrate.quad(lambda r: radial_profile(r, eps, n) ** 2 * r ** (n - 3), 1, 2)
    # u is constant on [0, eps]: no gradient energy, weight eps^-(n-2) r^(n-3)
    den_in = eps ** -(n - 2) * eps ** (n - 2) / (n - 2)
    return (num_mid + num_out) / (den_in + den_mid + den_out)


def sharpness_probe(eps_values=(1e-1, 1e-2, 1e-4, 1e-8, 1e-16, 1e-32), n: int = 3,
                    final_bound: float = 0.30) -> InequalityReport:
    """Rayleigh quotients of truncated extremals; must decrease strictly and stay above (n-2)^2/4."""
    q = [rayleigh_quotient(e, n) for e in eps_values]
    sharp = (n - 2) ** 2 / 4
    decreasing = all(b < a for a, b in zip(q, q[1:]))
    return InequalityReport.make(
        "Eq1", min(q), sharp, 0.0,
        terms={"epsilon": list(eps_values), "quotients": q, "final": q[-1]},
        metadata={"n": n, "probe": "sharpness"},
        extra_checks={"strictly_decreasing": decreasing, "final_below_bound": q[-1] <= final_bound},
    )


# tolerance --------------------------------------------------------------


def richardson_tolerance(fine: float, coarse: float, h_fine: float, h_coarse: float,
                         order: float = 1.0) -> float:
    """Error estimate of the fine-grid value from a two-grid pair of observed order ``order``."""
    ratio = h_coarse / h_fine
    if ratio <= 1:
        raise ValueError("coarse spacing must exceed fine spacing")
    return abs(fine - coarse) / (ratio**order - 1)


def relative_variation(values) -> float:
    v = np.asarray(values, float)
    return float((v.max() - v.min()) / max(abs(v.mean()), 1e-300))
