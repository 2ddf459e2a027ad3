"""Discrete static vacuum boundary value problem in harmonic-type gauge.

Unknowns, per node: the six upper-triangle components of h = g - gbar,
v = u - 1 and the decaying part What of the gauge vector field
W = sum_a c_a K_a + What, plus the six Killing coefficients c.

Row map (field-major, ``10 * N + 6`` rows).  Row ``f * N + n`` is

* at an interior node n, component f of
  ``(-u Ric + Hess u - D(beta g + du) + eta S,
  Lap u + eta (-div W + W(u) / u), div S)`` with
  S = L_W g - (div W) g - u^{-1} W(u) g,
* at a surface node n, component f of
  ``(beta g + du - S(nu, .), g^T - tau, H - phi, W)``; the three
  tangential entries are (11, 12, 22) in the Euclidean tangent frame,

followed by six rows <h, L_{X_a} gbar> (one per gauge field, unit row norm).
Rows are multiplied by fixed weights (see :class:`RowWeights`) so that the
flat linearisation has O(1) diagonal entries.

The Jacobian is obtained exactly by complex-step differentiation of the
pointwise residuals with respect to the nodal jet (values plus first and
second Cartesian derivatives), composed with the sparse derivative
operators of the chart.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from . import tensorcalc as tc
from .gauge import (N_KILLING, HarmonicKillingBasis, default_r_eta, eta_weight,
                    harmonic_killing_basis, weight_rho)
from .mesh import Chart, prune

N_FIELDS = 10
N_METRIC = 6
FIELD_NAMES = ("h11", "h12", "h13", "h22", "h23", "h33", "v", "w1", "w2", "w3")
BOUNDARY_ROW_NAMES = ("gauge1", "gauge2", "gauge3", "tan11", "tan12", "tan22",
                      "mean_curvature", "w1", "w2", "w3")
INTERIOR_ROW_NAMES = ("E11", "E12", "E13", "E22", "E23", "E33", "E_u", "Y1", "Y2", "Y3")
_IU = tc._IU
_D2 = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))
N_JET = 10  # value, 3 first, 6 second derivatives
_TAN = ((0, 0), (0, 1), (1, 1))


# ---------------------------------------------------------------------------
# state and data
# ---------------------------------------------------------------------------

@dataclass
class State:
    """h (N, 6), v (N,), w (N, 3), c (6,)."""

    h: np.ndarray
    v: np.ndarray
    w: np.ndarray
    c: np.ndarray

    @classmethod
    def flat(cls, n: int) -> "State":
        return cls(np.zeros((n, 6)), np.zeros(n), np.zeros((n, 3)), np.zeros(N_KILLING))

    @classmethod
    def from_vector(cls, x: np.ndarray, n: int) -> "State":
        F = x[:N_FIELDS * n].reshape(N_FIELDS, n).T
        return cls(F[:, :6].copy(), F[:, 6].copy(), F[:, 7:].copy(), x[N_FIELDS * n:].copy())

    @classmethod
    def from_metric(cls, g: np.ndarray, u: np.ndarray) -> "State":
        n = len(u)
        return cls(tc.components_from_sym(g - tc.EYE[None]), u - 1.0, np.zeros((n, 3)), np.zeros(N_KILLING))

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.fields.T.ravel(), self.c])

    @property
    def fields(self) -> np.ndarray:
        return np.column_stack([self.h, self.v, self.w])

    @property
    def g(self) -> np.ndarray:
        return tc.sym_from_components(self.h) + tc.EYE[None]

    @property
    def u(self) -> np.ndarray:
        return 1.0 + self.v

    def copy(self) -> "State":
        return State(self.h.copy(), self.v.copy(), self.w.copy(), self.c.copy())


@dataclass
class BoundaryData:
    """Prescribed induced metric (Euclidean-frame components tau_11, tau_12,
    tau_22 at each surface node) and mean curvature."""

    tau: np.ndarray  # (Nb, 3)
    phi: np.ndarray  # (Nb,)
    label: str = "custom"


def induced_metric_components(chart: Chart, g: np.ndarray) -> np.ndarray:
    T = tc.tangential_part(chart, g[chart.boundary])
    return np.stack([T[:, a, b] for a, b in _TAN], axis=1)


def flat_data(chart: Chart, mean_curvature_scale: float = 1.0) -> BoundaryData:
    """Data induced by the Euclidean metric; H from the discrete operator."""
    g = np.broadcast_to(tc.EYE, (chart.n_nodes, 3, 3)).copy()
    H = tc.mean_curvature_field(chart, g)
    return BoundaryData(induced_metric_components(chart, g), mean_curvature_scale * H, "flat")


def schwarzschild_fields(x: np.ndarray, m: float):
    """Isotropic Schwarzschild metric and lapse at positions x."""
    r = np.linalg.norm(x, axis=-1)
    psi = 1.0 + m / (2.0 * r)
    g = (psi**4)[:, None, None] * tc.EYE[None]
    u = (1.0 - m / (2.0 * r)) / psi
    return g, u


def schwarzschild_data(chart: Chart, m: float) -> BoundaryData:
    """Schwarzschild data.  On a centred round sphere the mean curvature is
    the closed form psi^-2 (2 / R + 4 psi' / psi); otherwise it is taken
    from the discrete operator applied to the sampled metric."""
    g, _ = schwarzschild_fields(chart.x, m)
    tau = induced_metric_components(chart, g)
    if chart.surface.is_round:
        R = float(chart.radius[chart.boundary][0])
        psi = 1 + m / (2 * R)
        dpsi = -m / (2 * R * R)
        H = np.full(len(chart.boundary), (2 / R + 4 * dpsi / psi) / psi**2)
    else:
        H = tc.mean_curvature_field(chart, g)
    return BoundaryData(tau, H, f"schwarzschild(m={m})")


# ---------------------------------------------------------------------------
# pointwise residuals
# ---------------------------------------------------------------------------

def _unpack(J):
    """Jet array (n, 10 fields, 10 derivs) -> tensorcalc arrays.  The metric
    and lapse entries of the jet are perturbations from (gbar, 1)."""
    n = J.shape[0]
    val = J[:, :, 0]
    d1 = J[:, :, 1:4]  # [n, f, k]
    d2 = np.empty((n, N_FIELDS, 3, 3), dtype=J.dtype)
    for q, (k, l) in enumerate(_D2):
        d2[:, :, k, l] = J[:, :, 4 + q]
        d2[:, :, l, k] = J[:, :, 4 + q]
    g = tc._sym_last(val[:, :6]) + tc.EYE[None]
    dg = tc._sym_last(d1[:, :6, :].transpose(0, 2, 1))  # [n, k, i, j]
    ddg = tc._sym_last(d2[:, :6].transpose(0, 2, 3, 1))  # [n, k, l, i, j]
    u = 1.0 + val[:, 6]
    du = d1[:, 6, :]
    ddu = d2[:, 6]
    w = val[:, 7:]
    dw = d1[:, 7:, :].transpose(0, 2, 1)  # [n, k, j]
    ddw = d2[:, 7:].transpose(0, 2, 3, 1)  # [n, k, l, j]
    return g, dg, ddg, u, du, ddu, w, dw, ddw


def _gauge_tensor(g, dg, gi, G, u, du, w, dw):
    """S_ij = L_W g - (div W) g - u^-1 W(u) g and pieces reused elsewhere."""
    wl = np.einsum("njk,nk->nj", g, w)
    # nabla_i W_j = d_i(g_jk W^k) - Gamma^k_ij W_k
    dwl = np.einsum("nijk,nk->nij", dg, w) + np.einsum("njk,nik->nij", g, dw)
    nab = dwl - np.einsum("nkij,nk->nij", G, wl)
    div = np.einsum("nkk->n", dw) + np.einsum("nkkl,nl->n", G, w)
    wu = np.einsum("nk,nk->n", w, du)
    S = nab + np.swapaxes(nab, 1, 2) - (div + wu / u)[:, None, None] * g
    return S, div, wu, wl, dwl


def interior_residual(J, eta):
    """Interior equations at every node of the jet, shape (n, 10)."""
    g, dg, ddg, u, du, ddu, w, dw, ddw = _unpack(J)
    gi = tc.inv3(g)
    G = tc.christoffel(gi, dg)
    dG = tc.d_christoffel(gi, dg, ddg)
    Ric = (np.einsum("nkkij->nij", dG) - np.einsum("njkki->nij", dG)
           + np.einsum("nkkl,nlij->nij", G, G) - np.einsum("nkjl,nlki->nij", G, G))
    hess = ddu - np.einsum("nkij,nk->nij", G, du)
    V = tc.bianchi_flat(dg) + du
    dV = tc.d_bianchi_flat(ddg) + ddu
    DV = 0.5 * (dV + np.swapaxes(dV, 1, 2)) - np.einsum("nkij,nk->nij", G, V)
    S, div, wu, wl, dwl = _gauge_tensor(g, dg, gi, G, u, du, w, dw)

    E1 = -u[:, None, None] * Ric + hess - DV + eta[:, None, None] * S
    E2 = np.einsum("nij,nij->n", gi, hess) + eta * (-div + wu / u)

    # divergence of S: g^{ik} (d_k S_ij - Gamma^l_ki S_lj - Gamma^l_kj S_il)
    dwl_k = np.einsum("nkijl,nl->nkij", ddg, w) + np.einsum("nijl,nkl->nkij", dg, dw) \
        + np.einsum("nkjl,nil->nkij", dg, dw) + np.einsum("njl,nkil->nkij", g, ddw)
    dwlow = np.einsum("nklm,nm->nkl", dg, w) + np.einsum("nlm,nkm->nkl", g, dw)  # d_k W_l
    dnab = dwl_k - np.einsum("nklij,nl->nkij", dG, wl) - np.einsum("nlij,nkl->nkij", G, dwlow)
    ddiv = np.einsum("nkll->nk", ddw) + np.einsum("nkllm,nm->nk", dG, w) + np.einsum("nllm,nkm->nk", G, dw)
    dwu = (np.einsum("nkm,nm->nk", dw, du) + np.einsum("nm,nkm->nk", w, ddu)) / u[:, None] \
        - (wu / u**2)[:, None] * du
    a = div + wu / u
    dS = dnab + np.swapaxes(dnab, 2, 3) - (ddiv + dwu)[:, :, None, None] * g[:, None] \
        - a[:, None, None, None] * dg
    E3 = (np.einsum("nik,nkij->nj", gi, dS) - np.einsum("nik,nlki,nlj->nj", gi, G, S)
          - np.einsum("nik,nlkj,nil->nj", gi, G, S))
    return np.concatenate([tc.components_from_sym(E1), E2[:, None], E3], axis=1)


def boundary_residual(J, n, dn, frame, tau, phi):
    """Boundary conditions at surface nodes, shape (nb, 10)."""
    g, dg, ddg, u, du, ddu, w, dw, ddw = _unpack(J)
    gi = tc.inv3(g)
    G = tc.christoffel(gi, dg)
    V = tc.bianchi_flat(dg) + du
    S, *_ = _gauge_tensor(g, dg, gi, G, u, du, w, dw)
    A, nu, _ = tc.second_fundamental_form(g, dg, n, dn, gi)
    H = np.einsum("nij,nij->n", gi, A)
    gauge = V - np.einsum("ni,nij->nj", nu, S)
    T = np.einsum("nai,nij,nbj->nab", frame, g, frame)
    tan = np.stack([T[:, a, b] for a, b in _TAN], axis=1) - tau
    return np.concatenate([gauge, tan, (H - phi)[:, None], w], axis=1)


# ---------------------------------------------------------------------------
# discrete system
# ---------------------------------------------------------------------------

@dataclass
class RowWeights:
    interior: np.ndarray  # (N, 10)
    boundary: np.ndarray  # (Nb, 10)


class StaticSystem:
    """The modified operator on a chart with fixed eta and gauge basis."""

    def __init__(self, chart: Chart, r_eta: float | None = None, q: float = 0.75,
                 basis: HarmonicKillingBasis | None = None):
        self.chart = chart
        self.q = q
        self.r_eta = default_r_eta(chart) if r_eta is None else float(r_eta)
        self.eta = eta_weight(chart.radius, self.r_eta)
        self._basis = basis

    # -- geometry -----------------------------------------------------------
    @property
    def n(self) -> int:
        return self.chart.n_nodes

    @property
    def size(self) -> int:
        return N_FIELDS * self.n + N_KILLING

    @cached_property
    def basis(self) -> HarmonicKillingBasis:
        if self._basis is None:
            self._basis = harmonic_killing_basis(self.chart)
        return self._basis

    @cached_property
    def _bgeo(self):
        c = self.chart
        b = c.boundary
        return -c.grad_s[b], -c.hess_s[b], c.tangent_frame[b]

    @cached_property
    def weights(self) -> RowWeights:
        c = self.chart
        diag = np.abs(c.laplacian.diagonal())
        wi = np.empty((self.n, N_FIELDS))
        wi[:, :6] = 2.0 / diag[:, None]
        wi[:, 6:] = 1.0 / diag[:, None]
        b = c.boundary
        dn = np.linalg.norm(c.grad_s[b], axis=1) * 11.0 / (6.0 * c.ds)
        wb = np.ones((len(b), N_FIELDS))
        wb[:, 0:3] = 1.0 / dn[:, None]
        wb[:, 6] = 2.0 / dn
        return RowWeights(wi, wb)

    @cached_property
    def killing_jets(self) -> np.ndarray:
        """Jets of K_a in the W slots, shape (6, N, 3, 10)."""
        K = self.basis.K
        dK = self.basis.dK
        out = np.zeros((N_KILLING, self.n, 3, N_JET))
        out[:, :, :, 0] = K
        out[:, :, :, 1:4] = np.transpose(dK, (0, 2, 1))[:, None]  # [a, j, k] = d_k K^j
        return out

    @cached_property
    def orth_rows(self) -> np.ndarray:
        """Coefficients (6, N, 6) of the orthogonality rows on h components,
        each row normalised to unit Euclidean norm."""
        c = self.chart
        wq = c.volume_weights * weight_rho(c.x)
        mult = np.array([1, 2, 2, 1, 2, 1.0])
        rows = np.empty((N_KILLING, self.n, 6))
        for a in range(N_KILLING):
            rows[a] = wq[:, None] * tc.components_from_sym(self.basis.lie[a]) * mult[None]
            rows[a] /= np.linalg.norm(rows[a])
        return rows

    # -- jets ------------------------------------------------------------------
    def jet(self, state: State) -> np.ndarray:
        c = self.chart
        F = state.fields
        J = np.empty((self.n, N_FIELDS, N_JET), dtype=np.result_type(F, state.c))
        J[:, :, 0] = F
        for k in range(3):
            J[:, :, 1 + k] = c.D1[k] @ F
        for q, kl in enumerate(_D2):
            J[:, :, 4 + q] = c.D2[kl] @ F
        if np.any(state.c):
            J[:, 7:, :] += np.einsum("a,anjd->njd", state.c, self.killing_jets)
        return J

    # -- residuals ------------------------------------------------------------
    def residual(self, state: State, data: BoundaryData, weighted: bool = True) -> np.ndarray:
        """Residual of the modified system as a vector in the row map."""
        J = self.jet(state)
        b = self.chart.boundary
        R = interior_residual(J, self.eta)
        n, dn, fr = self._bgeo
        R[b] = boundary_residual(J[b], n, dn, fr, data.tau, data.phi)
        if weighted:
            W = self.weights.interior.copy()
            W[b] = self.weights.boundary
            R = R * W
        orth = np.einsum("anf,nf->a", self.orth_rows, state.h)
        return np.concatenate([R.T.ravel(), orth])

    def split(self, r: np.ndarray):
        """(interior rows (N_int, 10), boundary rows (Nb, 10), orthogonality (6,))."""
        R = r[:N_FIELDS * self.n].reshape(N_FIELDS, self.n).T
        return R[self.chart.interior_mask], R[self.chart.boundary], r[N_FIELDS * self.n:]

    # -- Jacobian ---------------------------------------------------------------
    def jacobian(self, state: State, data: BoundaryData, eps: float = 1e-30) -> sp.csr_matrix:
        """Exact Jacobian of the weighted residual by complex-step."""
        c = self.chart
        N = self.n
        b = c.boundary
        J = self.jet(state).astype(complex)
        n, dn, fr = self._bgeo
        coef = np.zeros((N, N_FIELDS, N_FIELDS, N_JET))  # [node, row field, col field, deriv]
        Jb = J[b]
        flat = not np.any(J)
        if flat:
            # interior coefficients at the flat state are affine in eta and
            # otherwise the same at every node
            Ji = np.zeros((2, N_FIELDS, N_JET), dtype=complex)
            eta_i = np.array([0.0, 1.0])
        else:
            Ji, eta_i = J, self.eta
        for f in range(N_FIELDS):
            for d in range(N_JET):
                Jp = Ji.copy()
                Jp[:, f, d] += 1j * eps
                ri = interior_residual(Jp, eta_i).imag / eps
                if flat:
                    ri = ri[0][None] + self.eta[:, None] * (ri[1] - ri[0])[None]
                Jpb = Jb.copy()
                Jpb[:, f, d] += 1j * eps
                rb = boundary_residual(Jpb, n, dn, fr, data.tau, data.phi).imag / eps
                ri[b] = rb
                coef[:, :, f, d] = ri
        W = self.weights.interior.copy()
        W[b] = self.weights.boundary
        coef *= W[:, :, None, None]
        return self._assemble(coef)

    def _ops(self):
        c = self.chart
        return [sp.identity(self.n, format="csr")] + list(c.D1) + [c.D2[kl] for kl in _D2]

    def _assemble(self, coef) -> sp.csr_matrix:
        ops = self._ops()
        N = self.n
        scale = np.max(np.abs(coef))
        tol = 1e-14 * scale
        blocks = [[None] * N_FIELDS for _ in range(N_FIELDS)]
        for e in range(N_FIELDS):
            for f in range(N_FIELDS):
                acc = None
                for d in range(N_JET):
                    cf = coef[:, e, f, d]
                    if np.max(np.abs(cf)) <= tol:
                        continue
                    term = sp.diags(cf) @ ops[d]
                    acc = term if acc is None else acc + term
                blocks[e][f] = prune(acc) if acc is not None else sp.csr_matrix((N, N))
        main = sp.bmat(blocks, format="csr")
        # Killing coefficient columns
        kc = np.einsum("nefd,anfd->ena", coef[:, :, 7:, :], self.killing_jets).reshape(N_FIELDS * N, N_KILLING)
        orth = sp.csr_matrix(np.concatenate([np.transpose(self.orth_rows, (0, 2, 1)).reshape(N_KILLING, 6 * N),
                                             np.zeros((N_KILLING, 4 * N))], axis=1))
        top = sp.hstack([main, sp.csr_matrix(kc)])
        bottom = sp.hstack([orth, sp.csr_matrix((N_KILLING, N_KILLING))])
        out = sp.vstack([top, bottom], format="csr")
        out.eliminate_zeros()
        return out

    def linearize_flat(self) -> sp.csr_matrix:
        """Modified linear operator at (gbar, 1, W = 0)."""
        return self.jacobian(State.flat(self.n), flat_data(self.chart))

    def operator_indices(self):
        """Indices of the (h, v) unknowns and the matching rows: the unmodified
        operator is the submatrix of the modified one on these."""
        return np.arange(7 * self.n)


def residual_T(chart: Chart, g: np.ndarray, u: np.ndarray, data: BoundaryData,
               system: StaticSystem | None = None):
    """Unmodified operator minus data: returns (interior (N_int, 7), boundary (Nb, 7)).

    Interior columns: the six components of -u Ric + Hess u - D(beta g + du)
    and Lap u.  Boundary columns: beta g + du (3), tangential metric minus tau
    (3), H minus phi.
    """
    if system is None:
        system = StaticSystem(chart)
    st = State.from_metric(g, u)
    r = system.residual(st, data, weighted=False)
    ri, rb, _ = system.split(r)
    return ri[:, :7], rb[:, :7]


def residual_Tbar(system: StaticSystem, state: State, data: BoundaryData) -> np.ndarray:
    return system.residual(state, data)
