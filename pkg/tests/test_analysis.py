import numpy as np
import pytest

from staticext import tensorcalc as tc
from staticext.analysis import (MassError, adm_mass, cokernel_residual, conformal_dh_check, convexity_probe_sphere,
                                green_identity_residual, green_identity_terms, random_killing_field,
                                random_smooth_pair, regge_teitelboim, rt_first_variation_check,
                                schwarzschild_pair, static_vacuum_residual)
from staticext.mesh import Chart, ChartError, Surface


@pytest.fixture(scope="module")
def chart():
    return Chart(Surface.sphere(), 16, 12, 24)


def flat(chart):
    return np.broadcast_to(tc.EYE, (chart.n_nodes, 3, 3)).copy(), np.ones(chart.n_nodes)


def test_flat_mass_is_zero(chart):
    g, _ = flat(chart)
    assert adm_mass(chart, g) == 0.0


def test_schwarzschild_mass(chart):
    g, _ = schwarzschild_pair(chart, 0.1)
    assert adm_mass(chart, g) == pytest.approx(0.1, rel=1e-2)


def test_mass_rejects_non_decaying_metric(chart):
    g, _ = flat(chart)
    g = g + 0.1 * chart.radius[:, None, None] * tc.EYE[None]
    with pytest.raises(MassError):
        adm_mass(chart, g)


def test_schwarzschild_pair_validates_mass(chart):
    with pytest.raises(ValueError):
        schwarzschild_pair(chart, 2.5)


def test_schwarzschild_is_static_vacuum(chart):
    g, u = schwarzschild_pair(chart, 0.05)
    assert static_vacuum_residual(chart, g, u) < 1e-5


def test_random_pair_is_reproducible(chart):
    h1, v1 = random_smooth_pair(chart, 5)
    h2, v2 = random_smooth_pair(chart, 5)
    assert np.array_equal(h1, h2) and np.array_equal(v1, v2)
    h3, _ = random_smooth_pair(chart, 6)
    assert not np.array_equal(h1, h3)


def test_green_identity_is_antisymmetric(chart):
    h, v = random_smooth_pair(chart, 1)
    i12, i21, b12, b21 = green_identity_terms(chart, h, v, h, v)
    assert i12 == i21 and b12 == b21
    assert green_identity_residual(chart, h, v, 0 * h, 0 * v) == 0.0


def test_cokernel_vanishes_at_flat(chart):
    g, u = flat(chart)
    X, dX = random_killing_field(chart)
    assert cokernel_residual(chart, g, u, X, dX) == 0.0


def test_conformal_dh_identity(chart):
    v = chart.x[:, 0] / chart.radius**3
    assert conformal_dh_check(chart, v) < 1e-4


def test_convexity_probe(chart):
    assert convexity_probe_sphere(chart, 0.0) == 0.0
    p = convexity_probe_sphere(chart, 0.3)
    assert p == pytest.approx(convexity_probe_sphere(chart, -0.3), rel=1e-10)
    assert p >= -1e-10
    with pytest.raises(ChartError):
        convexity_probe_sphere(Chart(Surface.sphere(2.0), 12, 8, 16), 0.3)


def test_rt_functional_flat(chart):
    g, u = flat(chart)
    assert regge_teitelboim(chart, g, u).value == 0.0


def test_rt_first_variation(chart):
    v = 0.2 / chart.radius + 0.1 * chart.x[:, 2] / chart.radius**3
    fd, formula = rt_first_variation_check(chart, v)
    assert fd == pytest.approx(formula, rel=1e-2, abs=1e-4)
