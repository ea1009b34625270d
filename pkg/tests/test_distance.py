import numpy as np
import pytest

from finsler_hardy.constants import estimate_reversibility
from finsler_hardy.distance import (FROM_POLE, TO_POLE, DistanceField, PoleError, PoleSet,
                                    eikonal_convergence, eikonal_residual, exact_homogeneous_distance,
                                    solve_distance, variational_distance_oracle)
from finsler_hardy.grid import GridDomain
from finsler_hardy.structures import FinslerStructure, eval_F

EUC3 = FinslerStructure.euclidean(3)
RAND3 = FinslerStructure.randers(np.eye(3), [0.5, 0.0, 0.0], lo=-1.2, hi=1.2)
RAND2 = FinslerStructure.randers(np.eye(2), [0.5, 0.0])


def test_euclidean_node_distance():
    g = GridDomain.cube(3, 41)
    d = solve_distance(EUC3, g, np.zeros(3), FROM_POLE)
    h = g.spacing[0]
    assert d.values[20 + 6, 20 + 8, 20] == pytest.approx(0.5, abs=2 * h)
    assert d.values[20, 20, 20] == 0.0


def test_randers_from_pole_straight_lines():
    g = GridDomain.cube(3, 25, -1.2, 1.2)
    d = solve_distance(RAND3, g, np.zeros(3), FROM_POLE)
    h = g.spacing[0]
    assert d.values[22, 12, 12] == pytest.approx(1.5, abs=2 * h)
    assert d.values[2, 12, 12] == pytest.approx(0.5, abs=2 * h)
    assert d.values[12, 12, 12] == 0.0


def test_to_pole_is_reversed_from_pole():
    g = GridDomain.cube(2, 33)
    to = solve_distance(RAND2, g, np.zeros(2), TO_POLE)
    frm = solve_distance(RAND2.reversed(), g, np.zeros(2), FROM_POLE)
    np.testing.assert_allclose(to.values, frm.values, rtol=0, atol=1e-12)


def test_oracle_examples():
    assert variational_distance_oracle(EUC3, np.zeros(3), np.ones(3) * 0.5, 6) == pytest.approx(
        np.sqrt(3) / 2, abs=1e-10)
    a, b = np.array([-0.3, 0.2, 0.1]), np.array([0.4, -0.5, 0.3])
    closed = eval_F(RAND3, a, b - a)
    assert variational_distance_oracle(RAND3, a, b, 8) == pytest.approx(closed, abs=1e-4)


def test_oracle_asymmetry_bounded_by_reversibility():
    a, b = np.array([-0.5, 0.0, 0.0]), np.array([0.5, 0.1, 0.0])
    fwd = variational_distance_oracle(RAND3, a, b, 6)
    back = variational_distance_oracle(RAND3, b, a, 6)
    r = estimate_reversibility(RAND3, 128, 32).r_F
    assert fwd != pytest.approx(back)
    assert max(fwd / back, back / fwd) <= r + 1e-9


def test_solver_below_oracle_and_causal():
    g = GridDomain.cube(2, 65)
    d = solve_distance(RAND2, g, np.zeros(2), FROM_POLE)
    assert np.all(np.diff(d.accept_order) >= -1e-12)
    h = g.spacing[0]
    rng = np.random.default_rng(0)
    for idx in rng.integers(0, 65, size=(10, 2)):
        x = g.index_to_point(idx)
        oracle = variational_distance_oracle(RAND2, np.zeros(2), x, 8)
        assert d.values[tuple(idx)] <= oracle + 3 * h


def test_triangle_inequality():
    g = GridDomain.cube(2, 65)
    rng = np.random.default_rng(1)
    h = g.spacing[0]
    a = np.zeros(2)
    da = solve_distance(RAND2, g, a, FROM_POLE).values
    for bi in rng.integers(8, 57, size=(4, 2)):
        b = g.index_to_point(bi)
        db = solve_distance(RAND2, g, b, FROM_POLE).values
        cs = rng.integers(0, 65, size=(250, 2))
        lhs = da[cs[:, 0], cs[:, 1]]
        rhs = da[tuple(bi)] + db[cs[:, 0], cs[:, 1]]
        assert np.all(lhs <= rhs + 3 * h)


def test_asymmetry_bound():
    g = GridDomain.cube(2, 65)
    to = solve_distance(RAND2, g, np.zeros(2), TO_POLE).values
    frm = solve_distance(RAND2, g, np.zeros(2), FROM_POLE).values
    ok = frm > 0
    r = estimate_reversibility(RAND2, 128, 32).r_F
    assert np.max(to[ok] / frm[ok]) <= r + 0.05


def test_residual_of_constant_field_is_one():
    g = GridDomain.cube(2, 33)
    f = DistanceField(g, np.ones(g.shape), pole=np.zeros(2), direction=FROM_POLE)
    r = eikonal_residual(FinslerStructure.euclidean(2), f).values
    assert np.nanmin(r) == 1.0 and np.nanmax(r) == 1.0


def test_residual_converges_2d():
    for S in (FinslerStructure.euclidean(2), RAND2):
        study = eikonal_convergence(S, [GridDomain.cube(2, 129), GridDomain.cube(2, 257)], np.zeros(2))
        assert study["order_max"][0] >= 0.9


def test_exact_distance_matches_solver():
    g = GridDomain.cube(2, 129)
    d = solve_distance(RAND2, g, np.array([0.1, -0.2]), TO_POLE)
    ex = exact_homogeneous_distance(RAND2, g, np.array([0.1, -0.2]), TO_POLE)
    assert np.max(np.abs(d.values - ex)) < 3 * g.spacing[0]


def test_pole_errors():
    with pytest.raises(PoleError, match="pairwise distinct"):
        PoleSet(np.array([[0.1, 0, 0], [0.1, 0, 0]]))
    with pytest.raises(PoleError):
        solve_distance(EUC3, GridDomain.cube(3, 17), np.array([0.99, 0, 0]))
