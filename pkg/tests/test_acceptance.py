"""Acceptance criteria 1-13.

Each test prints one PASS/FAIL line (also collected into the terminal
summary) with the measured quantities.  Runtimes are reported next to the
target budget; they are not asserted because the budgets refer to an
eight-core desktop.

Run alone with ``pytest tests/test_acceptance.py -v``.
"""
from __future__ import annotations

import sys
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from staticext import analysis as an
from staticext.mesh import Surface
from staticext.rng import LCG
from staticext.solver import NewtonSettings, newton_solve, singular_spectrum, factorize
from staticext.system import (BoundaryData, State, flat_data, induced_metric_components, residual_T,
                              residual_Tbar, schwarzschild_data, schwarzschild_fields)
from staticext import tensorcalc as tc

ROUNDOFF = 1e-12


def record(n: int, ok: bool, msg: str, elapsed: float, budget: str) -> None:
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {msg}  [{elapsed:.1f} s; budget {budget}]"
    ACCEPTANCE_LINES[n] = line
    print(line)


def order(coarse: float, fine: float) -> float:
    return float(np.log2(coarse / fine)) if coarse > 0 and fine > 0 else float("inf")


def _flat_boundary_rows(chart, system):
    """Boundary rows of the Euclidean pair against the exact data of the
    sphere: Euclidean induced metric and H = 2 / R."""
    eye = np.broadcast_to(tc.EYE, (chart.n_nodes, 3, 3)).copy()
    R = float(chart.radius[chart.boundary][0])
    data = BoundaryData(induced_metric_components(chart, eye), np.full(len(chart.boundary), 2.0 / R))
    return residual_T(chart, eye, np.ones(chart.n_nodes), data, system)


def test_criterion_01_flat_exactness(baseline, refined):
    t0 = time.perf_counter()
    ri, rb = _flat_boundary_rows(baseline.chart, baseline.system)
    _, rb2 = _flat_boundary_rows(refined.chart, refined.system)
    interior = float(np.max(np.abs(ri)))
    b1, b2 = float(np.max(np.abs(rb))), float(np.max(np.abs(rb2)))
    p = order(b1, b2)
    at_roundoff = b1 <= ROUNDOFF and b2 <= ROUNDOFF
    ok = interior == 0.0 and b1 <= 1e-3 and b2 <= 2.5e-4 and (at_roundoff or p >= 1.8)
    record(1, ok, f"interior max {interior:.1e}; boundary {b1:.2e} -> {b2:.2e}"
           + (" (round-off, order not measurable)" if at_roundoff else f", order {p:.2f}"),
           time.perf_counter() - t0, "5 s")
    assert ok


def test_criterion_02_schwarzschild_static_vacuum(baseline, refined):
    t0 = time.perf_counter()
    r = [an.static_vacuum_residual(s.chart, *an.schwarzschild_pair(s.chart, 0.1))
         for s in (baseline, refined)]
    p = order(*r)
    ok = p >= 1.8
    record(2, ok, f"max |u Ric - Hess u|, |Lap u|: {r[0]:.3e} -> {r[1]:.3e}, order {p:.2f}",
           time.perf_counter() - t0, "30 s")
    assert ok


def _kernel_capture(setup, spectrum):
    n = setup.chart.n_nodes
    V = spectrum.vectors[:, :6]
    out = []
    for a in range(6):
        k = np.zeros(7 * n)
        k[:6 * n] = tc.components_from_sym(setup.basis.lie[a]).T.ravel()
        ks = k * spectrum.col_scale
        ks /= np.linalg.norm(ks)
        out.append(float(np.linalg.norm(V.T @ ks) ** 2))
    return out


@pytest.fixture(scope="session")
def L_spectrum(baseline):
    S = baseline.system
    L = baseline.Lbar[:7 * S.n, :7 * S.n]
    return singular_spectrum(L, 12, factorize(L, S, "operator"), S)


def test_criterion_03_kernel_dimension(baseline, L_spectrum):
    t0 = time.perf_counter()
    sp_ = L_spectrum
    cap = _kernel_capture(baseline, sp_)
    ratio = float(sp_.values[6] / sp_.values[5])
    ok = sp_.gap_index == 6 and ratio >= 100 and min(cap) >= 0.99
    record(3, ok, f"nullity {sp_.gap_index}, value7/value6 = {ratio:.1f}, "
           f"min captured energy {min(cap):.5f}", time.perf_counter() - t0, "2 min")
    assert ok


def test_criterion_04_lbar_invertibility(baseline, refined, L_spectrum):
    t0 = time.perf_counter()
    s1 = singular_spectrum(baseline.Lbar, 3, baseline.factor, baseline.system).values[0]
    s2 = singular_spectrum(refined.Lbar, 3, refined.factor, refined.system).values[0]
    sigma6 = float(L_spectrum.values[5])
    above = s1 >= 10 * sigma6
    shrink = 1.0 - s2 / s1
    ok = above and shrink <= 0.30
    record(4, ok, f"sigma_min(Lbar) {s1:.3e} vs 10*sigma6(L) {10 * sigma6:.3e} ({'ok' if above else 'low'}); "
           f"refined {s2:.3e}, shrink {100 * shrink:.0f}% (limit 30%)", time.perf_counter() - t0, "3 min")
    assert ok


def test_criterion_05_newton_trivial(baseline):
    t0 = time.perf_counter()
    state, rep = newton_solve(baseline.system, flat_data(baseline.chart), NewtonSettings(tol=1e-10),
                              factor=baseline.factor)
    dev = float(max(np.max(np.abs(state.g - tc.EYE[None])), np.max(np.abs(state.u - 1.0))))
    ok = rep.converged and rep.n_iterations <= 2 and rep.final_residual <= 1e-10 and dev <= 1e-10
    record(5, ok, f"{rep.n_iterations} iterations, residual {rep.final_residual:.1e}, "
           f"|(g, u) - (gbar, 1)| {dev:.1e}, mass {rep.adm_mass:.1e}", time.perf_counter() - t0, "1 min")
    assert ok


def _schwarzschild_run(setup, m=0.05):
    chart = setup.chart
    state, rep = newton_solve(setup.system, schwarzschild_data(chart, m), NewtonSettings(tol=1e-10),
                              factor=setup.factor)
    g, u = schwarzschild_fields(chart.x, m)
    _, rb = residual_T(chart, g, u, schwarzschild_data(chart, m), setup.system)
    # tangential and mean-curvature rows of the exact solution; the gauge
    # rows are excluded because isotropic coordinates are in another gauge
    bdy_err = float(np.max(np.abs(rb[:, 3:7])))
    return state, rep, bdy_err


def test_criterion_06_newton_schwarzschild(baseline, refined):
    t0 = time.perf_counter()
    runs = [_schwarzschild_run(s) for s in (baseline, refined)]
    lines, ok = [], True
    for (state, rep, bdy), tol, name in zip(runs, (0.05, 0.02), ("baseline", "refined")):
        rel = abs(rep.adm_mass - 0.05) / 0.05
        gauge = max(rep.gauge["static_harmonic"], max(abs(x) for x in rep.gauge["orthogonality"]))
        good = (rep.converged and rep.n_iterations <= 8 and rel <= tol and gauge <= 1e-6
                and rep.w_norm <= 10 * bdy)
        ok = ok and good
        lines.append(f"{name}: {rep.n_iterations} it, mass {rep.adm_mass:.5f} ({100 * rel:.2f}%), "
                     f"gauge {gauge:.1e}, w_norm {rep.w_norm:.1e} (bdy err {bdy:.1e})")
    w1, w2 = runs[0][1].w_norm, runs[1][1].w_norm
    # w_norm is exactly zero up to round-off on both grids; decrease is
    # only meaningful above the round-off floor
    decreasing = w2 <= w1 or max(w1, w2) <= ROUNDOFF
    ok = ok and decreasing
    record(6, ok, "; ".join(lines), time.perf_counter() - t0, "5 min")
    assert ok


def test_criterion_07_positive_mass(baseline):
    t0 = time.perf_counter()
    state, rep = newton_solve(baseline.system, flat_data(baseline.chart, 0.98), NewtonSettings(tol=1e-10),
                              factor=baseline.factor)
    ok = rep.converged and rep.adm_mass > 0
    record(7, ok, f"{rep.n_iterations} iterations, adm_mass {rep.adm_mass:.5f}", time.perf_counter() - t0,
           "5 min")
    assert ok


SEED = 42


def test_criterion_08_green_identity(baseline, refined):
    t0 = time.perf_counter()
    res = []
    for i in range(5):
        pair = []
        for s in (baseline, refined):
            h1, v1 = an.random_smooth_pair(s.chart, SEED + 2 * i)
            h2, v2 = an.random_smooth_pair(s.chart, SEED + 2 * i + 1)
            pair.append(an.green_identity_residual(s.chart, h1, v1, h2, v2))
        res.append(pair)
    orders = [order(*p) for p in res]
    ok = all(p[0] <= 5e-3 for p in res) and all(o >= 1.5 for o in orders)
    record(8, ok, f"baseline max {max(p[0] for p in res):.2e}, refined max {max(p[1] for p in res):.2e}, "
           f"min order {min(orders):.2f}", time.perf_counter() - t0, "2 min")
    assert ok


def test_criterion_09_cokernel_identities(baseline, refined):
    t0 = time.perf_counter()
    c = baseline.chart
    g, u = an.schwarzschild_pair(c, 0.1)
    nonlin = []
    for a in range(3):
        X, dX, _ = baseline.basis.jets(a)
        nonlin.append(an.cokernel_residual(c, g, u, X, dX))
    lin = []
    for i in range(5):
        pair = []
        for s in (baseline, refined):
            h, v = an.random_smooth_pair(s.chart, SEED + i)
            X, dX = an.random_killing_field(s.chart, s.basis, SEED + 100 + i)
            pair.append(an.lin_cokernel_residual(s.chart, h, v, X, dX))
        lin.append(pair)
    orders = [order(*p) for p in lin]
    ok = max(nonlin) <= 5e-3 and all(p[0] <= 5e-3 for p in lin) and all(o >= 1.5 for o in orders)
    record(9, ok, f"schwarzschild max {max(nonlin):.1e}; linearized baseline max "
           f"{max(p[0] for p in lin):.2e}, min order {min(orders):.2f}", time.perf_counter() - t0, "2 min")
    assert ok


def test_criterion_10_conformal_dh(baseline):
    t0 = time.perf_counter()
    c = baseline.chart
    r = c.radius
    errs = [an.conformal_dh_check(c, 1.0 / r), an.conformal_dh_check(c, c.x[:, 0] / r**3)]
    ok = max(errs) <= 1e-3
    record(10, ok, f"v = 1/r: {errs[0]:.1e}; v = x1/r^3: {errs[1]:.1e}", time.perf_counter() - t0, "30 s")
    assert ok


def test_criterion_11_linearization_consistency(baseline):
    t0 = time.perf_counter()
    S = baseline.system
    data = flat_data(baseline.chart)
    rng = LCG(SEED)
    r0 = residual_Tbar(S, State.flat(S.n), data)
    eps = 1e-5
    errs = []
    for _ in range(5):
        xi = rng.uniform(S.size, -1.0, 1.0)
        lin = baseline.Lbar @ xi
        fd = (residual_Tbar(S, State.from_vector(eps * xi, S.n), data) - r0) / eps
        errs.append(float(np.linalg.norm(fd - lin) / np.linalg.norm(lin)))
    ok = max(errs) <= 1e-4
    record(11, ok, f"max relative error {max(errs):.2e} at eps = 1e-5", time.perf_counter() - t0, "1 min")
    assert ok


def test_criterion_12_static_regularity_scan(baseline):
    t0 = time.perf_counter()
    c = baseline.chart
    table = an.static_regularity_scan(Surface.sphere(), 0.9, 1.1, 11, grid=c.shape, k=12)
    nul = table.nullities
    ok = len(nul) == 11 and all(n == 6 for n in nul)
    record(12, ok, f"nullities {nul} on a {c.ns}x{c.ntheta}x{c.nphi} grid", time.perf_counter() - t0,
           "20 min")
    assert ok


def test_criterion_13_convexity_probe(baseline):
    t0 = time.perf_counter()
    vals = {cc: an.convexity_probe_sphere(baseline.chart, cc) for cc in (-1.0, -0.5, 0.5, 1.0)}
    rel = abs(vals[1.0] - 16 * np.pi) / (16 * np.pi)
    ok = rel <= 0.01 and all(v >= 0 for v in vals.values())
    record(13, ok, f"c = 1: {vals[1.0]:.4f} vs 16 pi ({100 * rel:.3f}%); values "
           + ", ".join(f"{k:+.1f}: {v:.3f}" for k, v in vals.items()), time.perf_counter() - t0, "10 s")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s"]))
