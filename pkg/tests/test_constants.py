import numpy as np
import pytest
from hypothesis import given, strategies as st

from finsler_hardy.constants import (check_convexity_inequality, degeneracy_sweep, estimate_constants,
                                     estimate_reversibility, estimate_uniformity, uniformity_ratio)
from finsler_hardy.structures import FinslerStructure


def test_reversible_families_exact(families):
    for name in ("euclidean", "riemannian"):
        est = estimate_constants(families[name], 64, 16)
        assert est.r_F == 1.0 and est.l_F == 1.0


def test_randers_reversibility_matches_dense_oracle(families):
    S = families["randers"]
    est = estimate_reversibility(S, 256, 64)
    y = np.random.default_rng(3).normal(size=(200_000, 3))
    x = np.zeros((200_000, 3))
    from finsler_hardy.structures import eval_F

    dense = np.max(eval_F(S, x, y) / eval_F(S, x, -y))
    assert est.r_F == pytest.approx(3.0, abs=1e-3)
    assert est.r_F >= dense - 1e-12
    assert est.r_F > 1


def test_randers_uniformity_against_brute_force(families):
    S = families["randers"]
    est = estimate_uniformity(S, 256, 64)
    rng = np.random.default_rng(4)
    n = 1_000_000
    x = np.zeros((n, 3))
    y, v, w = (rng.normal(size=(n, 3)) for _ in range(3))
    brute = uniformity_ratio(S, x, y, v, w).min()
    assert 0 < est.l_F < 1
    assert est.l_F <= brute
    assert est.l_F == pytest.approx(brute, rel=1e-2)


def test_monotone_under_more_samples():
    S = FinslerStructure.randers(np.diag([1.0, 2.0, 3.0]), [0.2, -0.3, 0.4])
    small = estimate_constants(S, 16, 8, refine=0)
    big = estimate_constants(S, 256, 64, refine=0)
    assert big.r_F >= small.r_F
    assert big.l_F <= small.l_F


def test_ranges_and_implication(families):
    for S in families.values():
        est = estimate_constants(S, 128, 32, radius=0.9 if S.family == "funk" else None)
        assert est.r_F >= 1 and 0 <= est.l_F <= 1
        if est.l_F > 0.01:
            assert np.isfinite(est.r_F) and not est.r_unbounded


def test_funk_sweep_degenerates(families):
    sweep = degeneracy_sweep(families["funk"], [0.5, 0.9, 0.99, 0.999], 256, 64)
    ls = [e.l_F for e in sweep]
    assert all(b < a for a, b in zip(ls, ls[1:]))
    assert sweep[-1].r_F > 100 and sweep[-1].r_unbounded
    assert any("grows" in f for f in sweep[-1].flags)


def test_deterministic_across_threads(families):
    a = estimate_constants(families["randers"], 512, 32, seed=5, threads=1)
    b = estimate_constants(families["randers"], 512, 32, seed=5, threads=4)
    assert (a.r_F, a.l_F) == (b.r_F, b.l_F)


def test_sample_count_validation(families):
    with pytest.raises(ValueError):
        estimate_reversibility(families["randers"], 0, 4)


def test_convexity_endpoints_and_parallelogram(families):
    E = families["euclidean"]
    x = np.zeros(3)
    a, b = np.array([1.0, 0, 0]), np.array([0.0, 1, 0])
    assert check_convexity_inequality(E, x, a, b, 0.5, 1.0) == pytest.approx(0.0, abs=1e-15)
    S = families["randers"]
    for t in (0.0, 1.0):
        assert check_convexity_inequality(S, x, a, b + 0.3, t, 0.1) == 0.0


def test_convexity_with_estimated_constant(families):
    S = families["randers"]
    l, _ = estimate_constants(S, 256, 64).bracket()
    rng = np.random.default_rng(6)
    x = rng.uniform(-0.5, 0.5, size=(10_000, 3))
    m = check_convexity_inequality(S, x, rng.normal(size=(10_000, 3)), rng.normal(size=(10_000, 3)),
                                   rng.uniform(size=10_000), l)
    assert m.min() >= -1e-8


@given(t=st.floats(0.0, 1.0), seed=st.integers(0, 2**16))
def test_convexity_property(families, t, seed):
    rng = np.random.default_rng(seed)
    S = families["randers"]
    m = check_convexity_inequality(S, np.zeros(3), rng.normal(size=3), rng.normal(size=3), t, 1 / 9 * 0.99)
    assert m >= -1e-10
