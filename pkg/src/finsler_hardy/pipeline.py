"""Stage orchestration: distances, densities and test functions feeding the verifiers."""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import hardy
from .calculus import TestFunction, make_test_function
from .constants import ConstantsEstimate
from .distance import TO_POLE, DistanceField, PoleSet, exact_homogeneous_distance, solve_distance
from .grid import GridDomain
from .measure import volume_density_field
from .structures import FinslerStructure

log = logging.getLogger(__name__)


@dataclass
class Workspace:
    """Caches fields per grid so that every check on a grid shares one solve per pole."""

    S: FinslerStructure
    threads: int = 1
    mc_samples: int = 200_000
    seed: int = 0
    timings: dict = field(default_factory=dict)
    _fields: dict = field(default_factory=dict, repr=False)
    _density: dict = field(default_factory=dict, repr=False)

    @staticmethod
    def _gkey(grid: GridDomain):
        return (tuple(grid.lo), tuple(grid.hi), grid.shape)

    def density(self, grid: GridDomain):
        k = self._gkey(grid)
        if k not in self._density:
            t = time.perf_counter()
            self._density[k] = volume_density_field(self.S, grid, self.mc_samples, self.seed)
            self._tick("density", t)
        return self._density[k]

    def distances(self, grid: GridDomain, poles) -> list:
        poles = [np.asarray(p, float) for p in poles]
        k = self._gkey(grid)
        todo = [(i, p) for i, p in enumerate(poles) if (k, tuple(p)) not in self._fields]
        if todo:
            t = time.perf_counter()
            solve = lambda ip: solve_distance(self.S, grid, ip[1], TO_POLE, pole_index=ip[0])
            if self.threads > 1 and len(todo) > 1:
                with ThreadPoolExecutor(self.threads) as ex:
                    done = list(ex.map(solve, todo))
            else:
                done = [solve(ip) for ip in todo]
            for (i, p), f in zip(todo, done):
                self._fields[(k, tuple(p))] = f
            self._tick("distances", t)
        return [self._fields[(k, tuple(p))] for p in poles]

    def exact_distances(self, grid: GridDomain, poles) -> list:
        """Closed-form distances to the poles (constant-coefficient structures only)."""
        return [DistanceField(grid, exact_homogeneous_distance(self.S, grid, np.asarray(p, float)),
                              pole=np.asarray(p, float), pole_index=i)
                for i, p in enumerate(poles)]

    def _tick(self, stage, t0):
        self.timings[stage] = self.timings.get(stage, 0.0) + time.perf_counter() - t0


@dataclass
class TheoremSettings:
    """Grids and excision ladder for one integral-theorem study."""

    fine: GridDomain
    coarse: GridDomain
    test: TestFunction
    eps_cells: tuple = (16, 8, 4)
    base_cells: int = 8
    bracket: float = 1e-2
    eps_variation: float = 0.2
    square_agreement: float = 0.01
    richardson_order: float = 1.0

    def h(self, grid):
        return float(np.max(grid.spacing))


def _test_on(ws, tf: TestFunction, grid: GridDomain, eps: float, poles):
    spec = TestFunction(tf.center, tf.radius, eps, tuple(tuple(p) for p in poles), tf.pole_order)
    return make_test_function(spec, grid)


def _theorem_study(ws: Workspace, poles, st: TheoremSettings, est: ConstantsEstimate, kind: str):
    """Shared ladder for the multipolar and bipolar theorems.

    Margins are evaluated on the fine grid at every excision radius of the
    ladder; the tolerance comes from the fine/coarse pair at the base radius.
    """
    S = ws.S
    ident = "Eq4" if kind == "multipolar" else "Eq5"
    ok, why = hardy.theorems_applicable(est)
    md = {"poles": [list(map(float, p)) for p in poles], "structure": S.describe()}
    if not ok:
        return hardy.InequalityReport.not_applicable(ident, why, md), None
    l_F, r_F = est.bracket(st.bracket)
    termfn = hardy.multipolar_terms if kind == "multipolar" else hardy.bipolar_terms
    verify = hardy.verify_multipolar if kind == "multipolar" else hardy.verify_bipolar
    hf, hc = st.h(st.fine), st.h(st.coarse)
    Ff = ws.distances(st.fine, poles)
    Fc = ws.distances(st.coarse, poles)
    dens_f, dens_c = ws.density(st.fine), ws.density(st.coarse)

    ladder = []
    for k in st.eps_cells:
        u = _test_on(ws, st.test, st.fine, k * hf, poles)
        T = termfn(S, Ff, u, dens_f)
        rep = verify(S, Ff, u, dens_f, l_F, r_F, terms=T)
        ladder.append({"eps_cells": k, "epsilon": k * hf, "margin": rep.margin,
                       "margin_strong": rep.terms.get("margin_strong",
                                                      rep.lhs - rep.terms.get("rhs_strong", np.nan)),
                       "terms": T})
    eps = st.base_cells * hf
    u_f = _test_on(ws, st.test, st.fine, eps, poles)
    u_c = _test_on(ws, st.test, st.coarse, eps, poles)
    Tf = termfn(S, Ff, u_f, dens_f)
    Tc = termfn(S, Fc, u_c, dens_c)
    rf = verify(S, Ff, u_f, dens_f, l_F, r_F, terms=Tf)
    rc = verify(S, Fc, u_c, dens_c, l_F, r_F, terms=Tc)
    tol = hardy.richardson_tolerance(rf.margin, rc.margin, hf, hc, st.richardson_order)
    margins = [row["margin"] for row in ladder]
    variation = hardy.relative_variation(margins)
    checks = {
        "eps_stable": variation < st.eps_variation,
        "ladder_nonnegative": all(m >= -tol for m in margins),
    }
    extra = {"eps_variation": variation, "coarse_margin": rc.margin,
             "ladder": [{k: v for k, v in row.items() if k != "terms"} for row in ladder]}
    if kind == "multipolar":
        agree = abs(Tf["square"] - Tc["square"]) / max(abs(Tf["square"]), 1e-300)
        checks["square_term_grid_agreement"] = agree <= st.square_agreement
        extra["square_term_grid_gap"] = agree
    report = verify(S, Ff, u_f, dens_f, l_F, r_F, tolerance=tol, terms=Tf,
                    metadata={**md, "epsilon": eps, "grid": st.fine.describe(),
                              "coarse_grid": st.coarse.describe(), "test_function": st.test.to_dict()})
    report = hardy.InequalityReport.make(
        report.inequality_id, report.lhs, report.rhs, tol,
        terms={**report.terms, **extra}, metadata=report.metadata, extra_checks=checks,
    )
    return report, Ff


def multipolar_study(ws: Workspace, poles, st: TheoremSettings, est: ConstantsEstimate):
    PoleSet(np.asarray(poles, float))
    return _theorem_study(ws, poles, st, est, "multipolar")[0]


def bipolar_study(ws: Workspace, poles, st: TheoremSettings, est: ConstantsEstimate,
                  mask_radius: float = 0.0, required_fraction: float = 0.99):
    """Integral bipolar inequality plus its nodewise pointwise bound on the fine grid."""
    PoleSet(np.asarray(poles, float))
    if len(poles) != 2:
        raise ValueError("bipolar study takes exactly two poles")
    report, Ff = _theorem_study(ws, poles, st, est, "bipolar")
    if Ff is None:
        return [report, hardy.InequalityReport.not_applicable(
            "BipolarPointwise", report.metadata.get("reason", ""), report.metadata)]
    l_F, _ = est.bracket(st.bracket)
    pw = hardy.bipolar_pointwise(ws.S, Ff, l_F, mask_radius=mask_radius,
                                 required_fraction=required_fraction,
                                 metadata={"grid": st.fine.describe()})
    return [report, pw]


def riemannian_study(ws: Workspace, poles, grids, test: TestFunction, eps_cells: int = 8,
                     rel_tol: float = 1e-2, div_mask_radius: float = 0.25, min_order: float = 0.9,
                     exact: bool = True):
    """Reduction checks on a sequence of grids (coarse to fine, the last one gating).

    With ``exact`` and constant coefficients the identities are evaluated on
    closed-form distance fields, so that what is measured is the quadrature
    of the two equivalent forms rather than the distance solver's first-order
    error; the solver-based gap on the finest grid is still reported.
    """
    S = ws.S
    if not S.is_riemannian:
        return []
    use_exact = exact and S.is_homogeneous
    fields = ws.exact_distances if use_exact else ws.distances
    gaps, reps = [], []
    hs = [float(np.max(g.spacing)) for g in grids]
    eps = eps_cells * hs[-1]
    for g in grids:
        u = _test_on(ws, test, g, eps, poles)
        reps.append(hardy.verify_riemannian_equivalence(S, fields(g, poles), u, ws.density(g), rel_tol,
                                                        metadata={"epsilon": eps}))
        gaps.append(reps[-1].terms["relative_gap"])
    shrinking = all(b < a for a, b in zip(gaps, gaps[1:]))
    last = reps[-1]
    extra = {"gaps": gaps, "h": hs, "distance_source": "closed_form" if use_exact else "solver"}
    if use_exact:
        u = _test_on(ws, test, grids[-1], eps, poles)
        solver = hardy.verify_riemannian_equivalence(S, ws.distances(grids[-1], poles), u,
                                                     ws.density(grids[-1]), rel_tol)
        extra["solver_relative_gap"] = solver.terms["relative_gap"]
    equiv = hardy.InequalityReport.make(
        last.inequality_id, last.lhs, last.rhs, 0.0,
        terms={**last.terms, **extra},
        metadata={**last.metadata, "grid": grids[-1].describe()},
        extra_checks={"gap_shrinking": shrinking},
    )
    fields0 = [fields(g, poles[:1])[0] for g in grids]
    div = hardy.verify_div_identity(S, fields0, [ws.density(g) for g in grids],
                                    mask_radius=div_mask_radius, min_order=min_order)
    exp_levels = [hardy.expansion_identity(S, fields(g, poles), mask_radius=div_mask_radius)
                  for g in grids]
    defects = [r.terms["defect_mean"] for r in exp_levels]
    e = exp_levels[-1]
    expansion = hardy.InequalityReport.make(
        e.inequality_id, e.lhs, e.rhs, 0.0,
        terms={**e.terms, "defect_mean_levels": defects,
               "defect_order": hardy.observed_order(defects, hs)},
        metadata=e.metadata,
        extra_checks={"defect_shrinking": all(b < a for a, b in zip(defects, defects[1:]))},
    )
    return [equiv, div, expansion]


def flat_study(grid: GridDomain, poles, test: TestFunction, eps_cells: int = 8):
    """Flat unipolar and multipolar margins on the grid, the radial sharpness probe and the crude bound."""
    n = grid.dim
    h = float(np.max(grid.spacing))
    origin = np.zeros(n)
    u1 = make_test_function(TestFunction(test.center, test.radius, eps_cells * h, (tuple(origin),),
                                         test.pole_order), grid)
    um = make_test_function(TestFunction(test.center, test.radius, eps_cells * h,
                                         tuple(tuple(p) for p in poles), test.pole_order), grid)
    out = [hardy.flat_unipolar(grid, u1, origin), hardy.flat_multipolar(grid, um, poles),
           hardy.sharpness_probe()]
    # support well away from poles pushed outside the box
    c = (grid.lo + grid.hi) / 2
    r = 0.4 * float(np.min(grid.hi - grid.lo)) / 2
    shift = np.r_[1.5 + r, np.zeros(n - 1)]
    ub = make_test_function(TestFunction(tuple(c), r), grid)
    far = [c + shift, c - shift]
    out.append(hardy.crude_pair_bound(grid, ub, far))
    return out
