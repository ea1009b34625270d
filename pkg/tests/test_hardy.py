import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from finsler_hardy import hardy
from finsler_hardy.calculus import TestFunction as Bump, make_test_function
from finsler_hardy.constants import ConstantsEstimate, degeneracy_sweep, estimate_constants
from finsler_hardy.distance import DistanceField, exact_homogeneous_distance
from finsler_hardy.grid import Field, GridDomain
from finsler_hardy.hardy import InequalityReport
from finsler_hardy.measure import volume_density_field
from finsler_hardy.structures import FinslerStructure, polar_transform

EUC = FinslerStructure.euclidean(3)
RAND = FinslerStructure.randers(np.eye(3), [0.5, 0.0, 0.0])
POLES = [np.array([0.35, 0.0, 0.0]), np.array([-0.35, 0.0, 0.0])]


def exact_fields(S, g, poles):
    return [DistanceField(g, exact_homogeneous_distance(S, g, p), pole=p, pole_index=i)
            for i, p in enumerate(poles)]


def test_pointwise_equalities_euclidean():
    a = np.array([[1.0, 0.0, 0.0]])
    m = hardy.pointwise_margins(EUC, np.zeros((1, 3)), a, a.copy(), np.array([0.5]), 1.0, 1.0)
    lhs, rhs = m["Eq9"]
    assert lhs[0] - rhs[0] == pytest.approx(0.0, abs=1e-15)
    a = np.random.default_rng(0).normal(size=(20, 3))
    lhs, rhs = hardy.pointwise_margins(EUC, np.zeros((20, 3)), a, a, np.full(20, 0.3), 1.0, 1.0)["Eq11"]
    np.testing.assert_allclose(lhs - rhs, 0.0, atol=1e-14)


def test_pointwise_suite_randers():
    est = estimate_constants(RAND, 256, 64)
    reps = hardy.pointwise_suite(RAND, est, samples=20_000)
    assert [r.inequality_id for r in reps] == ["Eq7", "Eq9", "Eq10", "Eq11", "Eq12"]
    assert all(r.passed and r.terms["violations"] == 0 for r in reps)


def test_pointwise_suite_detects_bad_constants():
    reps = hardy.pointwise_suite(RAND, ConstantsEstimate(), samples=5_000, constants=(1.0, 1.0))
    assert not all(r.passed for r in reps)


def test_validity_monotonicity():
    est = estimate_constants(RAND, 256, 64)
    res = hardy.validity_monotonicity(RAND, est, samples=5_000)
    assert res["base"] and res["consistent"] and len(res["pairs"]) == 3


def test_coefficient_reduction_exact():
    for n in (3, 4, 5):
        assert hardy.check_coefficient_reduction(n)["exact"]
    c = hardy.bipolar_coefficients(Fraction(1), Fraction(1), 3)
    assert c == {"difference": Fraction(1, 4), "div": Fraction(1, 2), "inverse_square": Fraction(-1, 2)}


@given(lhs=st.floats(-1e6, 1e6), rhs=st.floats(-1e6, 1e6), tol=st.floats(0, 10))
def test_report_invariants(lhs, rhs, tol):
    r = InequalityReport.make("Eq4", lhs, rhs, tol)
    assert r.margin == lhs - rhs
    assert r.passed == (r.margin >= -tol)


def test_report_checks_and_json():
    r = InequalityReport.make("Eq5", 2.0, 1.0, 0.0, extra_checks={"stable": False})
    assert not r.passed and r.terms["checks"] == {"stable": False}
    na = InequalityReport.not_applicable("Eq4", "degenerate")
    assert na.passed and not na.gating
    json.dumps(na.to_dict())
    with pytest.raises(ValueError):
        InequalityReport.make("Eq99", 1, 0)


def test_theorems_not_applicable_for_funk():
    sweep = degeneracy_sweep(FinslerStructure.funk(3), [0.5, 0.9, 0.99, 0.999], 128, 32)
    ok, why = hardy.theorems_applicable(sweep[-1])
    assert not ok and "unbounded" in why
    rep = hardy.verify_multipolar(EUC, [], None, None, 0.0, np.inf)
    assert rep.status == hardy.NOT_APPLICABLE


def test_bisector_closed_form():
    a = 0.35
    for y in (0.1, 0.4, 0.8):
        x = np.array([0.0, y, 0.0])
        d2 = a * a + y * y
        q = [(x - p) / d2 for p in POLES]
        lhs = polar_transform(EUC, x, q[0] + q[1]) ** 2
        rhs = 2 * (2 / d2) - polar_transform(EUC, x, q[1] - q[0]) ** 2
        assert lhs == pytest.approx(4 * y * y / d2**2)
        assert rhs - lhs == pytest.approx(0.0, abs=1e-12)


def test_bipolar_pointwise_exact_euclidean():
    g = GridDomain.cube(3, 33)
    rep = hardy.bipolar_pointwise(EUC, exact_fields(EUC, g, POLES), 1.0)
    assert rep.passed and rep.lhs == 1.0


def test_expansion_identity_equal_distance_node():
    # m = 2 at a node equidistant from both poles
    x = np.array([0.0, 0.3, 0.0])
    d = np.linalg.norm(x - POLES[0])
    g1, g2 = (x - POLES[0]) / d, (x - POLES[1]) / d
    left = np.sum((g1 / d + g2 / d) ** 2)
    right = 2 * (2 / d**2) - np.sum((g1 / d - g2 / d) ** 2)
    assert left == pytest.approx(2 / d**2 + 2 * g1 @ g2 / d**2, abs=1e-10)
    assert right == pytest.approx(left, abs=1e-10)


def test_expansion_identity_report():
    g = GridDomain.cube(3, 33)
    rep = hardy.expansion_identity(EUC, exact_fields(EUC, g, POLES + [np.array([0.0, 0.3, 0.1])]),
                                   mask_radius=0.25)
    assert rep.passed and rep.terms["algebra_residual"] <= 1e-10


def test_div_identity_converges():
    rows = []
    for N in (33, 65):
        g = GridDomain.cube(3, N)
        rows.append(hardy.div_identity_error(EUC, exact_fields(EUC, g, POLES[:1])[0],
                                             volume_density_field(EUC, g)))
    order = hardy.observed_order([r["mean"] for r in rows], [r["h"] for r in rows])
    assert order >= 0.9


def test_multipolar_and_bipolar_small_grid():
    g = GridDomain.cube(3, 49, -0.75, 0.75)
    h = g.spacing[0]
    fields = exact_fields(EUC, g, POLES)
    dens = volume_density_field(EUC, g)
    u = make_test_function(Bump((0, 0, 0), 0.72, 8 * h, tuple(map(tuple, POLES)), 2), g)
    rep = hardy.verify_multipolar(EUC, fields, u, dens, 1.0, 1.0)
    assert rep.passed
    T = rep.terms
    # weak and strong divergence evaluations agree to discretisation accuracy
    assert abs(T["div_weak"] - T["div_strong"]) <= 0.05 * abs(T["div_weak"])
    b = hardy.verify_bipolar(EUC, fields, u, dens, 1.0, 1.0)
    assert b.passed and set(b.terms["rhs_parts"]) == {"difference", "div", "inverse_square"}


def test_riemannian_equivalence_small_grid():
    S = FinslerStructure.riemannian(np.diag([1.0, 1.21, 1.44]), -0.75, 0.75)
    gaps = []
    for N in (49, 73):
        g = GridDomain.cube(3, N, -0.75, 0.75)
        u = make_test_function(Bump((0, 0, 0), 0.72, 0.125, tuple(map(tuple, POLES)), 2), g)
        rep = hardy.verify_riemannian_equivalence(S, exact_fields(S, g, POLES), u, volume_density_field(S, g))
        gaps.append(rep.terms["relative_gap"])
    assert gaps[1] < gaps[0] and gaps[1] < 1e-2, gaps


def test_flat_cases():
    g = GridDomain.cube(3, 49, -0.75, 0.75)
    h = g.spacing[0]
    u1 = make_test_function(Bump((0, 0, 0), 0.72, 8 * h, ((0.0, 0.0, 0.0),), 2), g)
    assert hardy.flat_unipolar(g, u1).passed
    u2 = make_test_function(Bump((0, 0, 0), 0.72, 8 * h, tuple(map(tuple, POLES)), 2), g)
    eq2 = hardy.flat_multipolar(g, u2, POLES)
    assert eq2.passed and eq2.metadata["constant"] == 0.25


def test_crude_bound_is_exploratory():
    g = GridDomain.cube(3, 33)
    u = make_test_function(Bump((0, 0, 0), 0.3), g)
    rep = hardy.crude_pair_bound(g, u, [np.array([1.5, 0, 0]), np.array([-1.5, 0, 0])])
    assert rep.status == hardy.EXPLORATORY and not rep.gating and rep.passed
    with pytest.raises(ValueError):
        hardy.crude_pair_bound(g, u, POLES)


def test_sharpness_probe():
    rep = hardy.sharpness_probe()
    q = rep.terms["quotients"]
    assert all(b < a for a, b in zip(q, q[1:]))
    assert min(q) > 0.25 and q[-1] <= 0.30 and rep.passed


def test_richardson_tolerance():
    assert hardy.richardson_tolerance(1.0, 1.5, 0.1, 0.2, 1.0) == pytest.approx(0.5)
    assert hardy.richardson_tolerance(1.0, 1.5, 0.1, 0.2, 2.0) == pytest.approx(0.5 / 3)
    with pytest.raises(ValueError):
        hardy.richardson_tolerance(1.0, 1.5, 0.2, 0.1)
