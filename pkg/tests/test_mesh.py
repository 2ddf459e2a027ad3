import numpy as np
import pytest

from staticext.mesh import Chart, ChartError, Surface, fd_weights, fejer_weights, refine

ELLIPSOID = Surface(((0, 0, 1.0), (2, 0, 0.1)))


def test_fd_weights_exact_on_polynomials():
    off = np.arange(-3, 4)
    for m in (1, 2):
        w = fd_weights(off, m)
        for p in range(7):
            exact = 0.0 if p < m else np.prod(np.arange(p - m + 1, p + 1)) * 0.0**(p - m)
            assert np.dot(w, off.astype(float) ** p) == pytest.approx(exact, abs=1e-10)


def test_fejer_weights_integrate_sine():
    n = 12
    th = (np.arange(n) + 0.5) * np.pi / n
    w = fejer_weights(n)
    assert np.sum(w * np.sin(th) ** 0) == pytest.approx(2.0, rel=1e-12)
    assert np.sum(w * np.cos(th) ** 2) == pytest.approx(2.0 / 3.0, rel=1e-12)


def test_surface_validation():
    with pytest.raises(ChartError):
        Surface(((1, 2, 0.1),))
    with pytest.raises(ChartError):
        Surface.sphere(-1.0)
    with pytest.raises(ChartError):
        Surface.from_config({"type": "harmonics", "lmax": 1, "coeffs": [{"l": 2, "m": 0, "value": 0.1}]})
    with pytest.raises(ChartError):
        Chart(Surface(((0, 0, 0.5), (1, 0, 1.0))), 12, 8, 16)


def test_surface_sampling_matches_expansion():
    th = np.linspace(0.1, 3.0, 7)
    r, *_ = ELLIPSOID.radius(th, 0.3)
    assert np.allclose(r, 1.0 + 0.1 * 0.5 * (3 * np.cos(th) ** 2 - 1), atol=1e-12)


@pytest.mark.parametrize("shape", [(3, 8, 16), (12, 8, 15), (12, 8, 2)])
def test_grid_too_small(shape):
    with pytest.raises(ChartError):
        Chart(Surface.sphere(), *shape)


def test_chart_maps_surface_to_s_one():
    c = Chart(ELLIPSOID, 12, 8, 16)
    _, th, ph = (a[c.boundary] for a in c.coords)
    r, *_ = ELLIPSOID.radius(th, ph)
    assert np.allclose(c.radius[c.boundary], r, atol=1e-14)
    assert np.all(c.det > 0)


def test_normal_outward_and_unit():
    c = Chart(ELLIPSOID, 12, 8, 16)
    b = c.boundary
    nu = c.normal[b]
    assert np.allclose(np.linalg.norm(nu, axis=1), 1.0, atol=1e-12)
    # independent normal from a finite-difference cross product of the parametrization
    _, th, ph = (a[b] for a in c.coords)

    def X(t, p):
        r, *_ = ELLIPSOID.radius(t, p)
        return r[:, None] * np.stack([np.sin(t) * np.cos(p), np.sin(t) * np.sin(p), np.cos(t)], 1)

    e = 1e-6
    n = np.cross((X(th + e, ph) - X(th - e, ph)) / (2 * e), (X(th, ph + e) - X(th, ph - e)) / (2 * e))
    n /= np.linalg.norm(n, axis=1)[:, None]
    assert np.max(np.abs(n - nu)) < 1e-8
    assert np.all(np.einsum("nk,nk->n", nu, X(th, ph)) > 0)


def test_sphere_area():
    for order in (2, 6):
        c = Chart(Surface.sphere(), 12, 8, 16, order)
        assert c.surface_integral(np.ones(len(c.boundary))) == pytest.approx(4 * np.pi, rel=1e-3)


def _decaying_integral(order, n):
    c = Chart(Surface.sphere(), *n, order)
    r = c.radius
    # exact: 4 pi (pi / 8 + 1 / 4)
    return c.volume_integral(1.0 / (1.0 + r * r) ** 2), 4 * np.pi * (np.pi / 8 + 0.25)


def test_volume_quadrature_second_order():
    e1 = abs(np.subtract(*_decaying_integral(2, (12, 8, 16))))
    e2 = abs(np.subtract(*_decaying_integral(2, (24, 16, 32))))
    assert np.log2(e1 / e2) >= 1.8


def test_volume_quadrature_high_order():
    val, exact = _decaying_integral(6, (16, 12, 24))
    assert val == pytest.approx(exact, rel=1e-6)


def test_gradient_of_decaying_function_converges():
    errs = []
    for n in [(12, 8, 16), (24, 16, 32)]:
        c = Chart(ELLIPSOID, *n, order=2)
        r = c.radius
        errs.append(np.max(np.abs(c.grad(1.0 / r) + c.x / (r**3)[:, None])))
    assert errs[1] < errs[0] / 3


def test_laplacian_of_monopole_exact():
    # 1/r is linear in the compactified radial coordinate, so the stencils are exact
    for order in (2, 6):
        c = Chart(Surface.sphere(), 12, 8, 16, order=order)
        f = 1.0 / c.radius
        assert np.max(np.abs((c.laplacian @ f)[c.interior_mask])) < 1e-10


def test_laplacian_of_harmonic_function_converges():
    errs = []
    for n in [(12, 8, 16), (24, 16, 32)]:
        c = Chart(ELLIPSOID, *n, order=6)
        f = c.x[:, 2] / c.radius**3
        errs.append(np.max(np.abs((c.laplacian @ f)[c.interior_mask])))
    assert errs[1] < errs[0] / 16


def test_refine_doubles_grid():
    c = Chart(Surface.sphere(), 12, 8, 16, order=4)
    f = refine(c)
    assert f.shape == (24, 16, 32) and f.order == 4
