import numpy as np
import pytest
from scipy.integrate import quad as quad1d

from finsler_hardy.grid import Field, GridDomain, GridMismatch
from finsler_hardy.measure import (integrate, randers_density_closed_form, unit_ball_volume,
                                   volume_density, volume_density_field)
from finsler_hardy.structures import FinslerStructure


def test_unit_ball_volumes():
    assert unit_ball_volume(2) == pytest.approx(np.pi)
    assert unit_ball_volume(3) == pytest.approx(4 * np.pi / 3)


def test_euclidean_density_mc(families):
    s, e = volume_density(families["euclidean"], np.zeros(3), 200_000, method="mc")
    assert abs(s - 1.0) <= 3 * e


def test_riemannian_density_closed_and_mc(families):
    S = families["riemannian"]
    assert volume_density(S, np.zeros(3))[0] == pytest.approx(6.0, abs=1e-12)
    s, e = volume_density(S, np.zeros(3), 200_000, method="mc")
    assert abs(s - 6.0) <= 3 * e


def test_randers_density_mc(families):
    S = families["randers"]
    s, e = volume_density(S, np.zeros(3), 200_000)
    assert randers_density_closed_form(S, np.zeros(3)) == pytest.approx(0.5625)
    assert abs(s - 0.5625) <= 3 * e


def test_too_few_samples(families):
    with pytest.raises(ValueError):
        volume_density(families["randers"], np.zeros(3), 10)


def test_mc_stderr_slope(families):
    S = families["randers"]
    ns = [4_000, 40_000, 400_000]
    errs = [volume_density(S, np.zeros(3), n, seed=1)[1] for n in ns]
    slope = np.polyfit(np.log(ns), np.log(errs), 1)[0]
    assert slope == pytest.approx(-0.5, abs=0.1)


def test_conformal_field_matches_closed_form():
    S = FinslerStructure.riemannian(np.diag([1.0, 2.0, 3.0]), conformal=0.5)
    g = GridDomain.cube(3, 5)
    dens = volume_density_field(S, g)
    x = g.points().reshape(-1, 3)[7]
    s, e = volume_density(S, x, 100_000, method="mc")
    assert abs(dens.values.reshape(-1)[7] - s) <= 3 * e


def test_integrate_constants(families):
    g = GridDomain.cube(3, 17, 0.0, 1.0)
    one = Field(g, np.ones(g.shape))
    assert integrate(one, volume_density_field(families["euclidean"], g)) == pytest.approx(1.0, abs=1e-12)
    assert integrate(one, volume_density_field(families["riemannian"], g)) == pytest.approx(6.0, abs=1e-12)


def test_integrate_gaussian_against_1d_quadrature(families):
    g = GridDomain.cube(3, 129)
    x = g.points()
    f = np.exp(-4 * x[..., 0] ** 2) * np.exp(-9 * x[..., 1] ** 2) * np.exp(-(x[..., 2] - 0.1) ** 2 * 16)
    one_d = [quad1d(fn, -1, 1, epsabs=1e-14)[0] for fn in (
        lambda t: np.exp(-4 * t * t), lambda t: np.exp(-9 * t * t), lambda t: np.exp(-16 * (t - 0.1) ** 2))]
    val = integrate(Field(g, f), volume_density_field(families["euclidean"], g))
    assert val == pytest.approx(np.prod(one_d), abs=1e-4)


def test_grid_mismatch(families):
    a, b = GridDomain.cube(3, 5), GridDomain.cube(3, 7)
    with pytest.raises(GridMismatch):
        integrate(Field(a, np.ones(a.shape)), volume_density_field(families["euclidean"], b))
