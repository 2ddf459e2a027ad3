import numpy as np
import pytest

from staticext import tensorcalc as tc
from staticext.mesh import Chart, Surface, refine
from staticext.system import schwarzschild_fields


@pytest.fixture(scope="module")
def chart():
    return Chart(Surface.sphere(), 16, 12, 24)


def test_inverse_and_determinant():
    rng = np.random.default_rng(1)
    B = rng.standard_normal((5, 3, 3))
    g = np.einsum("nij,nkj->nik", B, B) + 3 * tc.EYE[None]
    assert np.allclose(np.einsum("nij,njk->nik", g, tc.inv3(g)), tc.EYE[None], atol=1e-12)
    assert np.allclose(tc.det3(g), np.linalg.det(g))


def test_components_roundtrip():
    c = np.arange(12.0).reshape(2, 6)
    assert np.array_equal(tc.components_from_sym(tc.sym_from_components(c)), c)


def test_flat_metric_is_ricci_flat(chart):
    g = np.broadcast_to(tc.EYE, (chart.n_nodes, 3, 3)).copy()
    assert np.max(np.abs(tc.ricci_field(chart, g))) == 0.0


def _conformal_error(chart):
    # g = psi^4 gbar has R = -8 psi^-5 Lap psi; psi = 1 + c r^-2 gives Lap psi = 2 c r^-4
    r = chart.radius
    c = 0.05
    psi = 1 + c / r**2
    g = (psi**4)[:, None, None] * tc.EYE[None]
    R = tc.scalar_curvature_field(chart, g)
    return np.max(np.abs(R - (-8 * psi**-5 * 2 * c / r**4)))


def test_conformally_flat_scalar_curvature_converges(chart):
    e1, e2 = _conformal_error(chart), _conformal_error(refine(chart))
    assert e1 < 5e-3
    assert np.log2(e1 / e2) >= 1.8


def test_schwarzschild_scalar_flat(chart):
    g, _ = schwarzschild_fields(chart.x, 0.1)
    assert np.max(np.abs(tc.scalar_curvature_field(chart, g))) < 1e-5


def test_mean_curvature_of_spheres(chart):
    g = np.broadcast_to(tc.EYE, (chart.n_nodes, 3, 3)).copy()
    assert np.allclose(tc.mean_curvature_field(chart, g), 2.0, atol=1e-12)
    big = Chart(Surface.sphere(2.0), 16, 12, 24)
    g = np.broadcast_to(tc.EYE, (big.n_nodes, 3, 3)).copy()
    assert np.allclose(tc.mean_curvature_field(big, g), 1.0, atol=1e-12)


def test_linearized_ricci_forms_agree(chart):
    x = chart.x
    r = chart.radius
    h = np.einsum("ni,nj->nij", x, x) / (r**5)[:, None, None]
    a = tc.lin_ricci_flat(chart, h)
    b = tc.lin_ricci_flat_bianchi_form(chart, h)
    assert np.max(np.abs(a - b)) < 1e-8 * max(1.0, np.max(np.abs(a)))


def test_linearized_ricci_matches_difference_quotient(chart):
    x = chart.x
    r = chart.radius
    h = (1.0 / r**2)[:, None, None] * tc.EYE[None] + 0.3 * np.einsum("ni,nj->nij", x, x) / (r**6)[:, None, None]
    eps = 1e-6
    fd = (tc.ricci_field(chart, tc.EYE[None] + eps * h) - tc.ricci_field(chart, tc.EYE[None] - eps * h)) / (2 * eps)
    lin = tc.lin_ricci_flat(chart, h)
    assert np.max(np.abs(fd - lin)) < 1e-6 * np.max(np.abs(lin))


def _mean_curvature_lin_gap(chart):
    r = chart.radius
    x = chart.x
    h = (x[:, 0] / r**3)[:, None, None] * tc.EYE[None] + np.einsum("ni,nj->nij", x, x) / (r**5)[:, None, None]
    eps = 1e-6
    fd = (tc.mean_curvature_field(chart, tc.EYE[None] + eps * h)
          - tc.mean_curvature_field(chart, tc.EYE[None] - eps * h)) / (2 * eps)
    return np.max(np.abs(fd - tc.lin_mean_curvature_flat(chart, h)))


def test_linearized_mean_curvature_consistent(chart):
    # both are discretizations of the same operator, so they agree up to truncation error
    e1, e2 = _mean_curvature_lin_gap(chart), _mean_curvature_lin_gap(refine(chart))
    assert e1 < 1e-3
    assert e2 < e1 / 16
