"""Linear solves with the flat operator, Newton iteration and spectra.

The flat linearisation has a block structure that allows solving it
without factorising the whole coupled matrix:

* the gauge-field block is a Dirichlet Laplacian per component;
* away from the surface every (h, v) row is the same weighted scalar
  Laplacian acting on its own field, so all seven fields share one scalar
  factorisation, and the coupling between fields lives entirely in the
  surface rows; eliminating the interior leaves a dense Schur complement
  of size 7 x (number of surface nodes);
* the six Killing coefficients are eliminated with a 6 x 6 bordered system.

This keeps memory use far below a general sparse LU of the coupled system,
which matters on refined grids.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, asdict

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .gauge import N_KILLING, GaugeResiduals, gauge_residuals
from .linalg import BlockDiagonalFactorization, Factorization, backend_name, factorize_scalar
from .system import N_FIELDS, BoundaryData, State, StaticSystem

log = logging.getLogger(__name__)


class StructureError(RuntimeError):
    """The operator does not have the block structure of a flat linearisation."""


def _sub(A, rows, cols):
    return A[rows][:, cols]


class _Refining:
    """Iterative refinement on top of a direct solve (``_solve_once``).

    The flat operator has six nearly singular directions, so one pass of a
    direct solve can lose several digits; a few correction steps recover them.
    """

    refine_steps = 3

    def solve(self, b, trans: bool = False):
        b = np.asarray(b, dtype=float)
        if b.ndim == 2:
            return np.column_stack([self.solve(b[:, j], trans) for j in range(b.shape[1])])
        A = self._A.T.tocsr() if trans else self._A
        x = self._solve_once(b, trans)
        scale = np.abs(b).max() or 1.0
        for _ in range(self.refine_steps):
            r = b - A @ x
            if np.abs(r).max() <= 1e-14 * scale:
                break
            x = x + self._solve_once(r, trans)
        return x


class SchurFactorization(_Refining):
    """Solves with the (h, v) block of the flat operator (7N x 7N).

    ``A`` must have, in interior rows, the same scalar operator on the
    row's own field and nothing else.
    """

    def __init__(self, A: sp.csr_matrix, n: int, boundary: np.ndarray, nfields: int = 7,
                 chunk: int = 256, check: bool = True, period: int | None = None):
        A = sp.csr_matrix(A)
        self._A = A
        self.n, self.nf = n, nfields
        mask = np.ones(n, dtype=bool)
        mask[boundary] = False
        I = np.where(mask)[0]
        B = np.asarray(boundary)
        self.I, self.B = I, B
        nI, nB = len(I), len(B)
        rowsI = np.concatenate([f * n + I for f in range(nfields)])
        rowsB = np.concatenate([f * n + B for f in range(nfields)])
        self.rowsI, self.rowsB = rowsI, rowsB

        ref = 0
        lap_II = _sub(A, ref * n + I, ref * n + I).tocsr()
        lap_IB = _sub(A, ref * n + I, ref * n + B).tocsr()
        if check:
            tol = 1e-12 * abs(lap_II).max()
            for f in range(nfields):
                rows = A[f * n + I]
                for g in range(nfields):
                    blk = rows[:, g * n:(g + 1) * n]
                    if g == f:
                        dII = blk[:, I] - lap_II
                        dIB = blk[:, B] - lap_IB
                        err = max(abs(dII).max() if dII.nnz else 0.0, abs(dIB).max() if dIB.nnz else 0.0)
                    else:
                        err = abs(blk).max() if blk.nnz else 0.0
                    if err > tol:
                        raise StructureError(f"interior rows of field {f} are not a shared scalar operator "
                                             f"(deviation {err:.3e} in field {g})")
        self.lap = factorize_scalar(lap_II, period)
        self.lap_IB = lap_IB

        A_BI = A[rowsB][:, rowsI].tocsc()
        A_BB = A[rowsB][:, rowsB].toarray()
        self.A_BI = A_BI.tocsr()
        # interior nodes actually touched by the surface rows
        touched = np.unique(np.concatenate([A_BI[:, f * nI:(f + 1) * nI].tocoo().col for f in range(nfields)]))
        self.touched = touched
        GT = np.empty((len(touched), nB))
        for s in range(0, nB, chunk):
            e = min(nB, s + chunk)
            rhs = lap_IB[:, s:e].toarray()
            GT[:, s:e] = self.lap.solve(rhs)[touched]
        S = A_BB
        for f in range(nfields):
            blk = A_BI[:, f * nI + touched]
            S[:, f * nB:(f + 1) * nB] -= blk @ GT
        self.lu = sla.lu_factor(S, overwrite_a=True, check_finite=False)

    def _lap_solve(self, rhs, trans=False):
        """Apply the scalar interior inverse to each field of a (7 nI,) vector."""
        nI = len(self.I)
        R = rhs.reshape(self.nf, nI).T
        X = self.lap.solve(np.ascontiguousarray(R), trans=trans)
        return X.T.ravel()

    def _lapIB(self, xB):
        nB = len(self.B)
        X = xB.reshape(self.nf, nB).T
        return (self.lap_IB @ X).T.ravel()

    def _lapIB_T(self, xI):
        nI = len(self.I)
        X = xI.reshape(self.nf, nI).T
        return (self.lap_IB.T @ X).T.ravel()

    def _solve_once(self, b, trans: bool = False):
        bI, bB = b[self.rowsI], b[self.rowsB]
        x = np.empty_like(b)
        if not trans:
            t = self._lap_solve(bI)
            xB = sla.lu_solve(self.lu, bB - self.A_BI @ t, check_finite=False)
            xI = self._lap_solve(bI - self._lapIB(xB))
        else:
            t = self._lap_solve(bI, trans=True)
            xB = sla.lu_solve(self.lu, bB - self._lapIB_T(t), trans=1, check_finite=False)
            xI = self._lap_solve(bI - self.A_BI.T @ xB, trans=True)
        x[self.rowsI] = xI
        x[self.rowsB] = xB
        return x


class FlatOperatorFactorization(_Refining):
    """Solves with the full modified flat operator (10N + 6 square)."""

    def __init__(self, Lbar: sp.csr_matrix, system: StaticSystem):
        n = system.n
        self.n = n
        self.shape = Lbar.shape
        Lbar = sp.csr_matrix(Lbar)
        self._A = Lbar
        y = np.arange(7 * n)
        z = np.arange(7 * n, 10 * n)
        cc = np.arange(10 * n, 10 * n + N_KILLING)
        self.y, self.z, self.cc = y, z, cc
        if abs(_sub(Lbar, z, y)).max() > 0 or abs(_sub(Lbar, cc, z)).max() > 0:
            raise StructureError("gauge rows couple to the metric unknowns")
        self.A_yz = _sub(Lbar, y, z).tocsr()
        self.A_yc = _sub(Lbar, y, cc).toarray()
        self.A_zc = _sub(Lbar, z, cc).toarray()
        self.C_y = _sub(Lbar, cc, y).toarray()
        period = system.chart.nphi
        self.Ayy = SchurFactorization(_sub(Lbar, y, y), n, system.chart.boundary, period=period)
        Azz = _sub(Lbar, z, z)
        if BlockDiagonalFactorization.applies(Azz, 3):
            self.Azz = BlockDiagonalFactorization(Azz, 3, period)
        else:
            self.Azz = Factorization(Azz)
        self.Z = self.Azz.solve(self.A_zc)
        self.Yc = self.Ayy.solve(self.A_yc - self.A_yz @ self.Z)
        self.M = self.C_y @ self.Yc
        self.Mlu = sla.lu_factor(self.M)

    def _solve_once(self, b, trans: bool = False):
        by, bz, bc = b[self.y], b[self.z], b[self.cc]
        if not trans:
            z0 = self.Azz.solve(bz)
            y0 = self.Ayy._solve_once(by - self.A_yz @ z0)
            c = sla.lu_solve(self.Mlu, self.C_y @ y0 - bc)
            z = z0 - self.Z @ c
            y = y0 - self.Yc @ c
            return np.concatenate([y, z, c])
        q0 = self.Ayy._solve_once(by, trans=True)
        Q = self.Ayy.solve(self.C_y.T, trans=True) if not hasattr(self, "_Q") else self._Q
        self._Q = Q
        Mt = self.A_yc.T - self.Z.T @ self.A_yz.T
        pc = sla.lu_solve(self.Mlu, Mt @ q0 - bc + self.Z.T @ bz, trans=1)
        py = q0 - Q @ pc
        pz = self.Azz.solve(bz - self.A_yz.T @ py, trans=True)
        return np.concatenate([py, pz, pc])


def factorize(A: sp.csr_matrix, system: StaticSystem | None = None, kind: str = "auto"):
    """Factorise the flat modified operator (``kind='flat'``), its (h, v)
    block (``'operator'``) or any matrix (``'general'``)."""
    if kind == "general" or system is None:
        return Factorization(A)
    try:
        if kind in ("auto", "flat") and A.shape[0] == system.size:
            return FlatOperatorFactorization(A, system)
        if kind in ("auto", "operator") and A.shape[0] == 7 * system.n:
            return SchurFactorization(A, system.n, system.chart.boundary, period=system.chart.nphi)
    except StructureError as exc:
        if kind != "auto":
            raise
        log.info("falling back to a general sparse LU: %s", exc)
    return Factorization(A)


# ---------------------------------------------------------------------------
# spectra
# ---------------------------------------------------------------------------

@dataclass
class Spectrum:
    values: np.ndarray  # ascending singular values of the column-scaled operator
    vectors: np.ndarray  # right singular vectors (scaled variables), one per column
    col_scale: np.ndarray
    gap_index: int  # number of values below the largest consecutive ratio
    gap_ratio: float

    @property
    def ambiguous(self) -> bool:
        return self.gap_ratio < 10.0


def detect_gap(values: np.ndarray):
    v = np.sort(np.asarray(values))
    ratios = v[1:] / np.maximum(v[:-1], 1e-300)
    i = int(np.argmax(ratios))
    return i + 1, float(ratios[i])


def singular_spectrum(A: sp.spmatrix, k: int = 12, factor=None, system: StaticSystem | None = None,
                      tol: float = 1e-10, dense_limit: int = 0) -> Spectrum:
    """k smallest singular values of A D^-1, D the column norms of A.

    Computed as the largest singular values of D A^-1 through a
    factorisation of A (ARPACK), or densely if ``A.shape[0] <= dense_limit``.
    """
    A = sp.csr_matrix(A)
    D = np.sqrt(np.asarray(A.multiply(A).sum(axis=0))).ravel()
    if A.shape[0] <= dense_limit:
        U, s, Vt = np.linalg.svd(A.toarray() / D, full_matrices=False)
        order = np.argsort(s)[:k]
        vals, vecs = s[order], Vt[order].T
    else:
        if factor is None:
            factor = factorize(A, system)
        n = A.shape[0]
        op = spla.LinearOperator((n, n), dtype=float,
                                 matvec=lambda x: D * factor.solve(np.ravel(x)),
                                 rmatvec=lambda x: factor.solve(D * np.ravel(x), trans=True))
        U, s, Vt = spla.svds(op, k=k, which="LM", tol=tol, random_state=np.random.RandomState(0),
                             solver="arpack")
        # singular triplet of D A^-1: (1/sigma) with left vector -> right vector of A D^-1
        order = np.argsort(-s)
        vals = 1.0 / s[order]
        vecs = U[:, order]
    gi, ratio = detect_gap(vals)
    return Spectrum(vals, vecs, D, gi, ratio)


# ---------------------------------------------------------------------------
# Newton iteration
# ---------------------------------------------------------------------------

@dataclass
class IterationRecord:
    residual_max: float
    residual_l2: float
    step_norm: float
    damping: float


@dataclass
class SolveReport:
    status: str  # converged | max_iter | diverged | positivity
    converged: bool
    iterations: list  # IterationRecord dicts; entry 0 is the initial state
    n_iterations: int
    final_residual: float
    gauge: dict
    adm_mass: float
    mass_consistent: bool
    w_norm: float
    killing_coefficients: list
    spectrum: dict
    backend: str
    message: str = ""
    settings: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


class NewtonError(RuntimeError):
    """Newton iteration failed; ``report`` holds the partial history."""

    status = "failed"

    def __init__(self, message: str, report: SolveReport | None = None):
        super().__init__(message)
        self.report = report


class DivergenceError(NewtonError):
    """Residual grew over consecutive steps or became non-finite."""

    status = "diverged"


class MaxIterError(NewtonError):
    """Iteration budget exhausted before reaching the tolerance."""

    status = "max_iter"


class PositivityError(NewtonError):
    """Every damped step lost positivity of g or u."""

    status = "positivity"


@dataclass
class NewtonSettings:
    """``jacobian`` selects the step: 'frozen' applies the flat inverse
    directly, 'krylov' solves with the exact Jacobian by GMRES preconditioned
    with the flat inverse, 'refresh' refactorises the exact Jacobian."""

    tol: float = 1e-10
    max_iter: int = 20
    damping: float = 1.0
    jacobian: str = "krylov"
    krylov_rtol: float = 1e-6
    krylov_maxiter: int = 60
    max_halvings: int = 4
    divergence_window: int = 3
    spectrum_k: int = 0


def w_norm(state: State) -> float:
    """max |What| over the nodes plus |c|; zero exactly when W vanishes."""
    return float(np.max(np.linalg.norm(state.w, axis=1)) + np.linalg.norm(state.c))


def _mass(chart, g):
    from .analysis import MassError, adm_mass

    try:
        return float(adm_mass(chart, g)), True, ""
    except MassError as exc:
        return float(adm_mass(chart, g, rtol=np.inf)), False, f"mass: {exc}"
    except (ValueError, RuntimeError) as exc:
        return 0.0, False, f"mass: {exc}"


def _report(system, state, hist, status, msg, s, t0, spectrum):
    log.info("newton finished (%s) after %.2f s", status, time.perf_counter() - t0)
    gr = gauge_residuals(system.chart, state.g, state.u, system.basis)
    mass, ok, mmsg = _mass(system.chart, state.g)
    msg = "; ".join(m for m in (msg, mmsg) if m)
    return SolveReport(status, status == "converged", [asdict(h) for h in hist], len(hist) - 1,
                       hist[-1].residual_max,
                       {"static_harmonic": gr.static_harmonic_max,
                        "orthogonality": [float(x) for x in gr.orthogonality]},
                       mass, ok, w_norm(state), [float(x) for x in state.c], spectrum,
                       backend_name(), msg, asdict(s))


def jacobian_operator(system: StaticSystem, state: State, data: BoundaryData, eps: float = 1e-30):
    """Matrix-free exact Jacobian of the weighted residual by complex step."""
    x0 = state.to_vector()

    def mv(v):
        z = State.from_vector(x0 + 1j * eps * np.ravel(v), system.n)
        return system.residual(z, data).imag / eps

    return spla.LinearOperator((system.size, system.size), matvec=mv, dtype=float)


def krylov_step(system: StaticSystem, state: State, data: BoundaryData, r: np.ndarray, factor,
                rtol: float = 1e-6, maxiter: int = 60):
    """Solve J dx = r by right-preconditioned GMRES with the flat inverse."""
    J = jacobian_operator(system, state, data)
    n = system.size
    AM = spla.LinearOperator((n, n), matvec=lambda y: J @ factor.solve(np.ravel(y)), dtype=float)
    y, info = spla.gmres(AM, r, rtol=rtol, atol=0.0, restart=maxiter, maxiter=1)
    if info != 0:
        log.info("gmres stopped at its iteration limit (%d)", maxiter)
    return factor.solve(y)


def operator_spectra(system: StaticSystem, k: int, factor=None) -> dict:
    """k smallest column-scaled singular values of L and of the modified L-bar."""
    Lbar = system.linearize_flat()
    n = N_FIELDS * system.n
    L = Lbar[:n, :n]
    sl = singular_spectrum(L, k, factorize(L, system, "operator"), system)
    sb = singular_spectrum(Lbar, k, factor or factorize(Lbar, system), system)
    return {"L": [float(x) for x in sl.values], "Lbar": [float(x) for x in sb.values],
            "nullity_L": int(sl.gap_index), "gap_ratio_L": float(sl.gap_ratio)}


def newton_solve(system: StaticSystem, data: BoundaryData, settings: NewtonSettings | None = None,
                 initial: State | None = None, factor=None):
    """Newton iteration for the modified system, preconditioned or frozen
    at the flat linearisation (see :class:`NewtonSettings`).

    Returns (state, report) on convergence.  Otherwise raises a
    :class:`NewtonError` subclass (divergence, iteration budget, positivity)
    whose ``report`` carries the partial history.
    """
    s = settings or NewtonSettings()
    t0 = time.perf_counter()
    state = initial.copy() if initial is not None else State.flat(system.n)
    if factor is None:
        factor = factorize(system.linearize_flat(), system)
    spectrum = {"L": [], "Lbar": [], "nullity_L": 0, "gap_ratio_L": 0.0}
    if s.spectrum_k > 0:
        spectrum = operator_spectra(system, s.spectrum_k, factor)
    r = system.residual(state, data)
    hist = [IterationRecord(float(np.max(np.abs(r))), float(np.linalg.norm(r)), 0.0, 0.0)]
    growth = 0

    def fail(cls, msg):
        rep = _report(system, state, hist, cls.status, msg, s, t0, spectrum)
        return cls(msg, rep)

    while hist[-1].residual_max > s.tol:
        if len(hist) - 1 >= s.max_iter:
            raise fail(MaxIterError, f"no convergence in {s.max_iter} iterations")
        if s.jacobian == "krylov":
            dx = krylov_step(system, state, data, r, factor, s.krylov_rtol, s.krylov_maxiter)
        elif s.jacobian == "refresh":
            dx = Factorization(system.jacobian(state, data)).solve(r)
        elif s.jacobian == "frozen":
            dx = factor.solve(r)
        else:
            raise ValueError(f"unknown jacobian mode {s.jacobian!r}")
        step = s.damping
        x0 = state.to_vector()
        best = None
        for _ in range(s.max_halvings + 1):
            trial = State.from_vector(x0 - step * dx, system.n)
            if _positive(trial):
                r_new = system.residual(trial, data)
                if best is None or np.max(np.abs(r_new)) < np.max(np.abs(best[1])):
                    best = (trial, r_new, step)
                if np.max(np.abs(r_new)) < hist[-1].residual_max:
                    break
            step *= 0.5
        if best is None:
            raise fail(PositivityError, "metric or lapse lost positivity for every damped step")
        state, r, step = best
        hist.append(IterationRecord(float(np.max(np.abs(r))), float(np.linalg.norm(r)),
                                    float(step * np.max(np.abs(dx))), float(step)))
        log.info("newton %d residual %.3e step %.3g", len(hist) - 1, hist[-1].residual_max, step)
        growth = growth + 1 if hist[-1].residual_max > hist[-2].residual_max else 0
        if not np.isfinite(hist[-1].residual_max):
            raise fail(DivergenceError, "residual is not finite")
        if growth >= s.divergence_window:
            raise fail(DivergenceError, f"residual grew for {growth} consecutive steps")
    return state, _report(system, state, hist, "converged", "", s, t0, spectrum)


def _positive(state: State) -> bool:
    g = state.g
    try:
        np.linalg.cholesky(g)
    except np.linalg.LinAlgError:
        return False
    return bool(np.all(state.u > 0))
