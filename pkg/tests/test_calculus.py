import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from finsler_hardy import calculus as fc
from finsler_hardy.calculus import (adjointness_defect, differential, divergence, finsler_gradient,
                                    finsler_laplacian, make_test_function)
from finsler_hardy.grid import Field, GridDomain
from finsler_hardy.measure import volume_density_field
from finsler_hardy.structures import FinslerStructure, eval_F, polar_transform

G = GridDomain.cube(3, 33)
X = G.points()
EUC = FinslerStructure.euclidean(3)
RIEM = FinslerStructure.riemannian(np.diag([1.0, 4.0, 9.0]))
RAND = FinslerStructure.randers(np.eye(3), [0.5, 0.0, 0.0])


def test_differential_exact_cases():
    np.testing.assert_array_equal(differential(Field(G, np.full(G.shape, 2.5))).values, 0.0)
    a = np.array([0.3, -1.1, 2.0])
    np.testing.assert_allclose(differential(Field(G, X @ a)).values, np.broadcast_to(a, X.shape), atol=1e-12)
    r2 = np.sum(X**2, axis=-1)
    assert np.max(np.abs(differential(Field(G, r2)).values - 2 * X)) <= 1e-10


def test_gradient_examples():
    u = Field(G, np.sin(X[..., 0]) * X[..., 1] + X[..., 2] ** 2)
    Du = differential(u).values
    np.testing.assert_allclose(finsler_gradient(EUC, u).values, Du, atol=1e-14)
    np.testing.assert_allclose(finsler_gradient(RIEM, u).values, Du / np.array([1.0, 4.0, 9.0]), atol=1e-14)


def test_randers_gradient_identity():
    u = Field(G, np.sin(2 * X[..., 0]) * np.cos(X[..., 1]) + X[..., 2])
    Du = differential(u).values.reshape(-1, 3)
    V = finsler_gradient(RAND, u).values.reshape(-1, 3)
    x = X.reshape(-1, 3)
    idx = np.random.default_rng(0).choice(len(x), 1000, replace=False)
    np.testing.assert_allclose(eval_F(RAND, x[idx], V[idx]), polar_transform(RAND, x[idx], Du[idx]),
                               rtol=1e-6, atol=1e-12)


def test_nonlinearity_witness():
    # at the origin: Du = (1,0,0) and Dv = (-1,0,0) with u + v constant
    u = Field(G, X[..., 0])
    v = Field(G, -X[..., 0])
    s = Field(G, np.zeros(G.shape))
    i = (16, 16, 16)
    lhs = finsler_gradient(RAND, s).values[i]
    rhs = finsler_gradient(RAND, u).values[i] + finsler_gradient(RAND, v).values[i]
    assert np.linalg.norm(lhs - rhs) > 0.1


def test_divergence_examples():
    dens = volume_density_field(EUC, G)
    inner = G.boundary_distance_cells() >= 1
    np.testing.assert_allclose(divergence(Field(G, X, "vector"), dens).values[inner], 3.0, atol=1e-12)
    errs = []
    for N in (33, 65):
        g = GridDomain.cube(3, N)
        x = g.points()
        d = np.linalg.norm(x, axis=-1)
        safe = np.where(d > 0, d, 1.0)
        V = x / safe[..., None] ** 2
        div = divergence(Field(g, V, "vector"), volume_density_field(EUC, g)).values
        far = (d > 0.4) & (g.boundary_distance_cells() >= 2)
        errs.append(np.max(np.abs(div[far] - 1 / d[far] ** 2)))
    assert errs[1] < errs[0] / 3


def test_laplacian_examples():
    dens = volume_density_field(EUC, G)
    inner = G.boundary_distance_cells() >= 1
    r2 = np.sum(X**2, axis=-1)
    assert np.max(np.abs(finsler_laplacian(EUC, Field(G, r2), dens).values[inner] - 6.0)) <= 1e-8
    A = np.array([[2.0, 0.3, 0.0], [0.3, 1.0, 0.1], [0.0, 0.1, 1.5]])
    S = FinslerStructure.riemannian(A)
    Hs = np.array([[1.0, 0.5, 0.0], [0.5, 2.0, 0.2], [0.0, 0.2, -1.0]])
    u = 0.5 * np.einsum("...i,ij,...j->...", X, Hs, X)
    lap = finsler_laplacian(S, Field(G, u), volume_density_field(S, G)).values
    assert np.max(np.abs(lap[inner] - np.trace(np.linalg.solve(A, Hs)))) <= 1e-8
    errs = []
    for N in (33, 65):
        g = GridDomain.cube(3, N)
        d = np.linalg.norm(g.points(), axis=-1)
        L = finsler_laplacian(EUC, Field(g, d), volume_density_field(EUC, g)).values
        far = (d > 0.4) & (g.boundary_distance_cells() >= 2)
        errs.append(np.max(np.abs(L[far] - 2 / d[far])))
    assert errs[1] < errs[0] / 3


def _adjoint_data(g):
    P = g.points()
    x = P - np.array([0.1, -0.05, 0.08])
    bump = np.clip(1 - np.sum(x**2, axis=-1) / 0.64, 0, None)
    u = bump**4 * (1 + P[..., 0])
    Du = np.stack([4 * bump**3 * (-2 * x[..., k] / 0.64) * (1 + P[..., 0]) + (bump**4 if k == 0 else 0)
                   for k in range(3)], -1)
    V = np.stack([np.sin(2 * P[..., 1]) + P[..., 2] + 0.3, np.cos(P[..., 0]) + P[..., 2] ** 2,
                  P[..., 0] * P[..., 1] + 1], -1) * bump[..., None] ** 3
    return Field(g, u), Field(g, V, "vector"), Field(g, Du, "covector")


def adjointness_order(S):
    errs = []
    for N in (33, 65):
        g = GridDomain.cube(3, N)
        u, V, Du = _adjoint_data(g)
        errs.append(abs(adjointness_defect(u, V, Du, volume_density_field(S, g, 20_000))))
    return float(np.log(errs[0] / errs[1]) / np.log(2)), errs


@pytest.mark.parametrize("S", [EUC, RAND, FinslerStructure.riemannian(np.diag([1.0, 2.0, 3.0]), conformal=0.5)],
                         ids=["euclidean", "randers", "conformal"])
def test_adjointness_order(S):
    order, _ = adjointness_order(S)
    assert order >= 1.8


def test_test_function_basics():
    tf = fc.TestFunction((0.0, 0.0, 0.0), 0.8)
    assert tf(np.zeros(3)) == 1.0
    assert tf(np.array([0.9, 0, 0])) == 0.0
    ex = fc.TestFunction((0.0, 0.0, 0.0), 0.8, epsilon=0.1, poles=((0.3, 0.0, 0.0),))
    assert ex(np.array([0.3, 0.0, 0.0])) == 0.0
    assert ex(np.array([0.35, 0.0, 0.0])) == 0.0
    po = fc.TestFunction((0.0, 0.0, 0.0), 0.8, poles=((0.3, 0.0, 0.0),), pole_order=2)
    assert po(np.array([0.3, 0.0, 0.0])) == 0.0
    # normalised on a fixed lattice, so the sampled peak is 1 up to lattice resolution
    assert np.max(make_test_function(po, G).values) == pytest.approx(1.0, abs=1e-2)


def test_test_function_errors():
    with pytest.raises(fc.TestFunctionError):
        make_test_function(fc.TestFunction((0, 0, 0), 0.5, epsilon=G.spacing[0], poles=((0.1, 0, 0),)), G)
    with pytest.raises(fc.TestFunctionError):
        make_test_function(fc.TestFunction((0, 0, 0), 0.1, epsilon=0.3, poles=((0.0, 0, 0),)), G)
    with pytest.raises(fc.TestFunctionError):
        make_test_function(fc.TestFunction((0.5, 0, 0), 0.8), G)
    with pytest.raises(fc.TestFunctionError):
        fc.TestFunction((0, 0, 0), -1.0)


@given(x=arrays(float, (64, 3), elements=st.floats(-1, 1)), eps=st.floats(0.01, 0.2),
       k=st.integers(0, 3))
def test_test_function_properties(x, eps, k):
    poles = ((0.3, 0.0, 0.0), (-0.2, 0.25, 0.0))
    tf = fc.TestFunction((0.0, 0.0, 0.0), 0.7, eps, poles, k)
    u = tf(x)
    assert np.all(u >= 0)
    assert np.all(u[np.linalg.norm(x, axis=1) >= 0.7] == 0)
    for p in poles:
        assert np.all(u[np.linalg.norm(x - np.asarray(p), axis=1) <= eps] == 0)
