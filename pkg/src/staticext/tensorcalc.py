"""Curvature and related quantities of Cartesian-component fields.

Pointwise functions take per-node arrays with a leading node axis and
derivative indices first:

* metric ``g[n, i, j]``, ``dg[n, k, i, j] = d_k g_ij``,
  ``ddg[n, k, l, i, j] = d_k d_l g_ij``
* scalar ``du[n, k]``, ``ddu[n, k, l]``
* vector ``w[n, j]``, ``dw[n, k, j] = d_k w^j``, ``ddw[n, k, l, j]``

They only use arithmetic and ``einsum`` so complex inputs work, which is
what the complex-step Jacobian relies on.  The field-level wrappers take a
:class:`~staticext.mesh.Chart` and node arrays and do the differentiation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import Chart

EYE = np.eye(3)
_IU = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))


# ---------------------------------------------------------------------------
# pointwise algebra
# ---------------------------------------------------------------------------

def inv3(g):
    """Inverse of a batch of 3x3 matrices by cofactors (complex safe)."""
    a, b, c = g[:, 0, 0], g[:, 0, 1], g[:, 0, 2]
    d, e, f = g[:, 1, 0], g[:, 1, 1], g[:, 1, 2]
    p, q, r = g[:, 2, 0], g[:, 2, 1], g[:, 2, 2]
    C = np.empty_like(g)
    C[:, 0, 0] = e * r - f * q
    C[:, 0, 1] = c * q - b * r
    C[:, 0, 2] = b * f - c * e
    C[:, 1, 0] = f * p - d * r
    C[:, 1, 1] = a * r - c * p
    C[:, 1, 2] = c * d - a * f
    C[:, 2, 0] = d * q - e * p
    C[:, 2, 1] = b * p - a * q
    C[:, 2, 2] = a * e - b * d
    det = a * C[:, 0, 0] + b * C[:, 1, 0] + c * C[:, 2, 0]
    return C / det[:, None, None]


def det3(g):
    return (g[:, 0, 0] * (g[:, 1, 1] * g[:, 2, 2] - g[:, 1, 2] * g[:, 2, 1])
            - g[:, 0, 1] * (g[:, 1, 0] * g[:, 2, 2] - g[:, 1, 2] * g[:, 2, 0])
            + g[:, 0, 2] * (g[:, 1, 0] * g[:, 2, 1] - g[:, 1, 1] * g[:, 2, 0]))


def christoffel_lower(dg):
    """Gamma_{k ij} = (d_i g_kj + d_j g_ki - d_k g_ij) / 2, indexed [n, k, i, j]."""
    return 0.5 * (np.einsum("nikj->nkij", dg) + np.einsum("njki->nkij", dg) - dg)


def christoffel(gi, dg):
    """Gamma^k_ij indexed [n, k, i, j]."""
    return np.einsum("nkl,nlij->nkij", gi, christoffel_lower(dg))


def d_christoffel(gi, dg, ddg):
    """d_m Gamma^k_ij indexed [n, m, k, i, j]."""
    low = christoffel_lower(dg)
    dlow = 0.5 * (np.einsum("nmikj->nmkij", ddg) + np.einsum("nmjki->nmkij", ddg) - ddg)
    dgi = -np.einsum("nka,nmab,nbl->nmkl", gi, dg, gi)
    return np.einsum("nmkl,nlij->nmkij", dgi, low) + np.einsum("nkl,nmlij->nmkij", gi, dlow)


def ricci(g, dg, ddg, gi=None):
    """Ricci tensor from the coordinate formula."""
    if gi is None:
        gi = inv3(g)
    G = christoffel(gi, dg)
    dG = d_christoffel(gi, dg, ddg)
    return (np.einsum("nkkij->nij", dG) - np.einsum("njkki->nij", dG)
            + np.einsum("nkkl,nlij->nij", G, G) - np.einsum("nkjl,nlki->nij", G, G))


def scalar_curvature(g, dg, ddg, gi=None):
    if gi is None:
        gi = inv3(g)
    return np.einsum("nij,nij->n", gi, ricci(g, dg, ddg, gi))


def hessian_scalar(gi, dg, du, ddu):
    """Covariant Hessian of a scalar."""
    return ddu - np.einsum("nkij,nk->nij", christoffel(gi, dg), du)


def laplacian_scalar(gi, dg, du, ddu):
    return np.einsum("nij,nij->n", gi, hessian_scalar(gi, dg, du, ddu))


def bianchi_flat(dg):
    """One-form -div g + d(tr g) / 2 taken with the Euclidean reference."""
    return -np.einsum("nkkj->nj", dg) + 0.5 * np.einsum("njkk->nj", dg)


def d_bianchi_flat(ddg):
    """d_i of :func:`bianchi_flat`, indexed [n, i, j]."""
    return -np.einsum("nikkj->nij", ddg) + 0.5 * np.einsum("nijkk->nij", ddg)


def unit_normal(g, n, gi=None):
    """g-unit normal vector nu^i and the normalisation |n|_g for a covector n."""
    if gi is None:
        gi = inv3(g)
    up = np.einsum("nij,nj->ni", gi, n)
    norm = np.sqrt(np.einsum("ni,ni->n", up, n))
    return up / norm[:, None], norm


def second_fundamental_form(g, dg, n, dn, gi=None):
    """A_ij = (L_nu g)_ij projected tangentially, halved.

    ``n`` is a covector normal to the level sets (any positive multiple of
    the conormal) and ``dn[n, i, j] = d_i n_j``.  The normal vector field is
    nu = g^{-1} n / |n|_g.  Returns (A, nu, P) where P[i, j] is the
    g-orthogonal projector onto the tangent space with the first index up.
    """
    if gi is None:
        gi = inv3(g)
    nu, N = unit_normal(g, n, gi)
    dgi = -np.einsum("nka,nmab,nbl->nmkl", gi, dg, gi)
    up = np.einsum("nij,nj->ni", gi, n)
    dup = np.einsum("nmkl,nl->nmk", dgi, n) + np.einsum("nkl,nml->nmk", gi, dn)
    dN = (np.einsum("nmab,na,nb->nm", dgi, n, n) + 2 * np.einsum("nab,nma,nb->nm", gi, dn, n)) / (2 * N[:, None])
    dnu = dup / N[:, None, None] - np.einsum("nk,nm->nmk", up, dN) / (N**2)[:, None, None]
    lie = (np.einsum("nk,nkij->nij", nu, dg) + np.einsum("nkj,nik->nij", g, dnu)
           + np.einsum("nik,njk->nij", g, dnu))
    nlow = n / N[:, None]
    P = EYE[None] - np.einsum("ni,nj->nij", nu, nlow)  # P^i_j
    A = 0.5 * np.einsum("nai,nab,nbj->nij", P, lie, P)
    return A, nu, P


def mean_curvature(g, dg, n, dn, gi=None):
    """Trace of the second fundamental form with respect to g."""
    if gi is None:
        gi = inv3(g)
    A, _, _ = second_fundamental_form(g, dg, n, dn, gi)
    return np.einsum("nij,nij->n", gi, A)


# ---------------------------------------------------------------------------
# field level
# ---------------------------------------------------------------------------

def sym_from_components(c):
    """(N, 6) upper-triangle components -> (N, 3, 3)."""
    return _sym_last(c)


def components_from_sym(t):
    return np.stack([t[:, i, j] for i, j in _IU], axis=1)


@dataclass
class MetricJet:
    """Metric with its first two Cartesian derivatives at every node."""

    g: np.ndarray
    dg: np.ndarray
    ddg: np.ndarray

    @classmethod
    def from_metric(cls, chart: Chart, g: np.ndarray) -> "MetricJet":
        """``g`` has shape (N, 3, 3) and must tend to the identity at infinity."""
        h = components_from_sym(g - EYE[None])
        dg = _sym_last(chart.grad(h))  # [n, k, i, j]
        ddg = _sym_last(chart.hessian(h))  # [n, k, l, i, j]
        return cls(np.asarray(g, dtype=float), dg, ddg)

    @property
    def gi(self):
        return inv3(self.g)


def _sym_last(d):
    """(..., 6) upper-triangle components in the last axis -> (..., 3, 3)."""
    out = np.empty(d.shape[:-1] + (3, 3), dtype=d.dtype)
    for a, (i, j) in enumerate(_IU):
        out[..., i, j] = d[..., a]
        out[..., j, i] = d[..., a]
    return out


def scalar_jet(chart: Chart, u: np.ndarray, at_infinity: float = 1.0):
    """Return (du, ddu) for a scalar tending to ``at_infinity``."""
    v = u - at_infinity
    du = chart.grad(v)
    ddu = chart.hessian(v)
    return du, ddu


def ricci_field(chart: Chart, g: np.ndarray) -> np.ndarray:
    j = MetricJet.from_metric(chart, g)
    return ricci(j.g, j.dg, j.ddg)


def scalar_curvature_field(chart: Chart, g: np.ndarray) -> np.ndarray:
    j = MetricJet.from_metric(chart, g)
    return scalar_curvature(j.g, j.dg, j.ddg)


def hessian_field(chart: Chart, g: np.ndarray, u: np.ndarray) -> np.ndarray:
    j = MetricJet.from_metric(chart, g)
    du, ddu = scalar_jet(chart, u)
    return hessian_scalar(j.gi, j.dg, du, ddu)


def laplacian_field(chart: Chart, g: np.ndarray, u: np.ndarray) -> np.ndarray:
    j = MetricJet.from_metric(chart, g)
    du, ddu = scalar_jet(chart, u)
    return laplacian_scalar(j.gi, j.dg, du, ddu)


def _boundary_geometry(chart: Chart, idx=None):
    if idx is None:
        idx = chart.boundary
    return -chart.grad_s[idx], -chart.hess_s[idx]


def second_fundamental_form_field(chart: Chart, g: np.ndarray):
    """Second fundamental form of the surface in (exterior, g), Cartesian
    components at the boundary nodes."""
    j = MetricJet.from_metric(chart, g)
    b = chart.boundary
    n, dn = _boundary_geometry(chart)
    A, _, _ = second_fundamental_form(j.g[b], j.dg[b], n, dn)
    return A


def mean_curvature_field(chart: Chart, g: np.ndarray) -> np.ndarray:
    """Mean curvature of the surface in (exterior, g) at the boundary nodes."""
    j = MetricJet.from_metric(chart, g)
    b = chart.boundary
    n, dn = _boundary_geometry(chart)
    return mean_curvature(j.g[b], j.dg[b], n, dn)


def tangential_part(chart: Chart, t: np.ndarray, idx=None) -> np.ndarray:
    """Components t(e_a, e_b) in the Euclidean tangent frame, shape (M, 2, 2)."""
    if idx is None:
        idx = chart.boundary
    F = chart.tangent_frame[idx]
    return np.einsum("nai,nij,nbj->nab", F, t, F)


# ---------------------------------------------------------------------------
# linearisations at the Euclidean metric
# ---------------------------------------------------------------------------

def lin_ricci_flat(chart: Chart, h: np.ndarray) -> np.ndarray:
    """DRic(h) at the flat metric, index form."""
    dd = _sym_last(chart.hessian(components_from_sym(h)))  # [n, k, l, i, j]
    tr = np.einsum("nklii->nkl", dd)
    return 0.5 * (np.einsum("nkikj->nij", dd) + np.einsum("nkjki->nij", dd)
                  - np.einsum("nkkij->nij", dd) - tr)


def lin_ricci_flat_bianchi_form(chart: Chart, h: np.ndarray) -> np.ndarray:
    """DRic(h) = -Lap(h)/2 - D(beta h) at the flat metric."""
    dd = _sym_last(chart.hessian(components_from_sym(h)))
    lap = np.einsum("nkkij->nij", dd)
    dbeta = d_bianchi_flat(dd)
    return -0.5 * lap - 0.5 * (dbeta + np.swapaxes(dbeta, 1, 2))


def lin_scalar_flat(chart: Chart, h: np.ndarray) -> np.ndarray:
    """DR(h) = -Lap tr h + div div h at the flat metric."""
    dd = _sym_last(chart.hessian(components_from_sym(h)))
    return -np.einsum("nkkii->n", dd) + np.einsum("nijij->n", dd)


def flat_boundary_frame(chart: Chart):
    """Euclidean unit normal nu, its derivative d_i nu_j, projector, A and H at
    the boundary nodes (normal extended as the normalised gradient of s)."""
    b = chart.boundary
    g = np.broadcast_to(EYE, (len(b), 3, 3)).copy()
    dg = np.zeros((len(b), 3, 3, 3))
    n, dn = _boundary_geometry(chart)
    A, nu, P = second_fundamental_form(g, dg, n, dn)
    N = np.linalg.norm(n, axis=1)
    dnu = dn / N[:, None, None] - np.einsum("nj,nk,nik->nij", n, n, dn) / (N**3)[:, None, None]
    return nu, dnu, P, A, np.einsum("nii->n", A)


def lin_sff_flat(chart: Chart, h: np.ndarray):
    """DA(h) = (L_nu h)^T / 2 - L_omega gbar^T / 2 - h(nu, nu) A / 2 at the
    flat metric, omega = h(nu, .)^T.  Cartesian components at boundary nodes."""
    b = chart.boundary
    nu_b, dnu_b, P, A, _ = flat_boundary_frame(chart)
    hc = components_from_sym(h)
    dh = _sym_last(chart.grad(hc))[b]  # [n, k, i, j]
    hb = h[b]
    lie = (np.einsum("nk,nkij->nij", nu_b, dh) + np.einsum("nkj,nik->nij", hb, dnu_b)
           + np.einsum("nik,njk->nij", hb, dnu_b))
    # omega on all nodes so that its tangential derivative can be taken
    nu_all = chart.normal
    Pall = EYE[None] - np.einsum("ni,nj->nij", nu_all, nu_all)
    om = np.einsum("nij,njk,nk->ni", Pall, h, nu_all)
    dom = chart.grad(om)[b]  # [n, k, j] = d_k omega_j
    lom = np.einsum("nai,naj->nij", P, np.einsum("nak,nkj->naj", dom, P))
    lom = lom + np.swapaxes(lom, 1, 2)
    hnn = np.einsum("ni,nij,nj->n", nu_b, hb, nu_b)
    proj = lambda t: np.einsum("nai,nab,nbj->nij", P, t, P)
    return 0.5 * proj(lie) - 0.5 * lom - 0.5 * hnn[:, None, None] * A


def lin_mean_curvature_flat(chart: Chart, h: np.ndarray) -> np.ndarray:
    """DH(h) = nu(tr h^T) / 2 - div_S omega - h(nu, nu) H / 2 at the flat metric."""
    b = chart.boundary
    nu_b, _, P, A, H = flat_boundary_frame(chart)
    hc = components_from_sym(h)
    dh = _sym_last(chart.grad(hc))[b]
    hb = h[b]
    nudh = np.einsum("nk,nkij->nij", nu_b, dh)
    dtrT = np.einsum("nii->n", nudh) - np.einsum("ni,nij,nj->n", nu_b, nudh, nu_b)
    nu_all = chart.normal
    Pall = EYE[None] - np.einsum("ni,nj->nij", nu_all, nu_all)
    om = np.einsum("nij,njk,nk->ni", Pall, h, nu_all)
    dom = chart.grad(om)[b]
    div_om = np.einsum("nkj,nkj->n", P, dom)
    hnn = np.einsum("ni,nij,nj->n", nu_b, hb, nu_b)
    return 0.5 * dtrT - div_om - 0.5 * hnn * H


def directional_linearization(op, x0, dx, eps: float = 1e-6):
    """Central difference (op(x0 + eps dx) - op(x0 - eps dx)) / (2 eps)."""
    return (op(x0 + eps * dx) - op(x0 - eps * dx)) / (2 * eps)
