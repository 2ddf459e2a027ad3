import numpy as np
import pytest

from staticext.mesh import Chart, Surface
from staticext.system import (N_FIELDS, State, StaticSystem, flat_data, residual_T, residual_Tbar,
                              schwarzschild_data, schwarzschild_fields)

N_KILLING = 6


@pytest.fixture(scope="module")
def system():
    return StaticSystem(Chart(Surface.sphere(), 12, 8, 16))


def test_flat_state_has_zero_residual(system):
    r = system.residual(State.flat(system.n), flat_data(system.chart))
    assert np.max(np.abs(r)) < 1e-13


def test_system_is_square(system):
    A = system.linearize_flat()
    assert A.shape == (system.size, system.size)
    assert system.size == N_FIELDS * system.n + N_KILLING


def test_state_vector_roundtrip(system):
    rng = np.random.default_rng(0)
    x = rng.standard_normal(system.size)
    assert np.array_equal(State.from_vector(x, system.n).to_vector(), x)


def test_state_from_metric(system):
    g, u = schwarzschild_fields(system.chart.x, 0.1)
    s = State.from_metric(g, u)
    assert np.allclose(s.g, g) and np.allclose(s.u, u)
    assert not np.any(s.w) and not np.any(s.c)


def test_jacobian_at_flat_matches_assembled_linearization(system):
    J = system.jacobian(State.flat(system.n), flat_data(system.chart))
    L = system.linearize_flat()
    assert abs(J - L).max() < 1e-10 * abs(L).max()


def test_residual_accepts_complex_states(system):
    s = State.flat(system.n)
    s.v = s.v + 1e-30j * np.ones(system.n) / system.chart.radius
    r = system.residual(s, flat_data(system.chart))
    assert np.iscomplexobj(r)


def test_jacobian_matches_difference_quotient(system):
    data = schwarzschild_data(system.chart, 0.05)
    g, u = schwarzschild_fields(system.chart.x, 0.05)
    s0 = State.from_metric(g, u)
    rng = np.random.default_rng(3)
    d = rng.standard_normal(system.size) * 1e-3
    J = system.jacobian(s0, data)
    x0 = s0.to_vector()
    eps = 1e-6
    fd = (system.residual(State.from_vector(x0 + eps * d, system.n), data)
          - system.residual(State.from_vector(x0 - eps * d, system.n), data)) / (2 * eps)
    assert np.max(np.abs(fd - J @ d)) < 1e-6 * np.max(np.abs(fd))


def test_unmodified_residual_of_schwarzschild(system):
    chart = system.chart
    g, u = schwarzschild_fields(chart.x, 0.05)
    interior, boundary = residual_T(chart, g, u, schwarzschild_data(chart, 0.05), system)
    assert interior.shape[1] == 7 and boundary.shape[1] == 7
    # tangential metric and mean curvature rows are satisfied by the exact solution
    assert np.max(np.abs(boundary[:, 3:7])) < 1e-6


def test_modified_residual_of_flat(system):
    r = residual_Tbar(system, State.flat(system.n), flat_data(system.chart))
    assert np.max(np.abs(r)) < 1e-13
