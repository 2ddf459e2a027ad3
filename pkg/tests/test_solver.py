import numpy as np
import pytest

from staticext.mesh import Chart, Surface
from staticext.solver import (MaxIterError, NewtonSettings, PositivityError, detect_gap, factorize,
                              newton_solve, singular_spectrum)
from staticext.system import State, StaticSystem, flat_data, schwarzschild_data


@pytest.fixture(scope="module")
def setup():
    S = StaticSystem(Chart(Surface.sphere(), 12, 8, 16))
    A = S.linearize_flat()
    return S, A, factorize(A, S)


def test_linear_solve_roundtrip(setup):
    S, A, F = setup
    x = np.random.default_rng(0).standard_normal(S.size)
    y = F.solve(A @ x)
    assert np.max(np.abs(y - x)) < 1e-9 * np.max(np.abs(x))
    z = F.solve(A.T @ x, trans=True)
    assert np.max(np.abs(z - x)) < 1e-9 * np.max(np.abs(x))


def test_zero_rhs_gives_zero(setup):
    S, _, F = setup
    assert not np.any(F.solve(np.zeros(S.size)))


def test_detect_gap():
    n, ratio = detect_gap(np.array([1e-9, 2e-9, 3e-9, 1e-3, 2e-3]))
    assert n == 3 and ratio == pytest.approx(1e-3 / 3e-9)


def test_spectrum_of_diagonal_matrix():
    import scipy.sparse as sp
    d = np.array([1e-8, 1.0, 2.0, 3.0, 4.0, 5.0])
    sp_ = singular_spectrum(sp.diags(d).tocsr(), 2, dense_limit=10)
    # column scaling normalizes a diagonal matrix to the identity
    assert np.allclose(sp_.values, 1.0)


def test_newton_flat_converges_immediately(setup):
    S, _, F = setup
    state, rep = newton_solve(S, flat_data(S.chart), factor=F)
    assert rep.converged and rep.n_iterations == 0
    assert np.max(np.abs(state.to_vector())) == 0.0


def test_newton_reports_partial_history_on_iteration_budget(setup):
    S, _, F = setup
    with pytest.raises(MaxIterError) as err:
        newton_solve(S, schwarzschild_data(S.chart, 0.05), NewtonSettings(max_iter=1), factor=F)
    rep = err.value.report
    assert rep.status == "max_iter" and not rep.converged
    assert len(rep.iterations) == 2
    assert rep.iterations[1]["residual_max"] < rep.iterations[0]["residual_max"]


def test_newton_rejects_unknown_mode(setup):
    S, _, F = setup
    with pytest.raises(ValueError):
        newton_solve(S, schwarzschild_data(S.chart, 0.05), NewtonSettings(jacobian="secant"), factor=F)


def test_newton_positivity_failure(setup):
    S, _, F = setup
    start = State.flat(S.n)
    start.v[:] = -2.0  # negative lapse; a short step cannot restore positivity
    with pytest.raises(PositivityError):
        newton_solve(S, flat_data(S.chart), NewtonSettings(jacobian="frozen", damping=0.1, max_halvings=0),
                     initial=start, factor=F)
