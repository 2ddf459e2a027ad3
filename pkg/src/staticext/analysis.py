"""Exact solutions, mass, integral identities, probes and the nullity scan.

All identities here are evaluated with the chart quadrature; their
residuals are discretization errors and should shrink under refinement.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import tensorcalc as tc
from .gauge import harmonic_killing_basis, kappa0
from .mesh import Chart, ChartError, Surface
from .rng import LCG
from .system import StaticSystem, schwarzschild_fields

log = logging.getLogger(__name__)

EYE = tc.EYE


class MassError(ValueError):
    """Flux integrals at the two extraction radii disagree: g does not decay."""


# ---------------------------------------------------------------------------
# exact solutions and random test fields
# ---------------------------------------------------------------------------

def schwarzschild_pair(chart: Chart, m: float):
    """Isotropic Schwarzschild (g, u) sampled on the chart nodes."""
    if not 0.0 <= m < 2.0:
        raise ValueError(f"mass parameter must satisfy 0 <= m < 2, got {m}")
    return schwarzschild_fields(chart.x, m)


def static_vacuum_residual(chart: Chart, g: np.ndarray, u: np.ndarray) -> float:
    """max over all nodes of |u Ric - Hess u| and |Lap u|."""
    r1 = u[:, None, None] * tc.ricci_field(chart, g) - tc.hessian_field(chart, g, u)
    r2 = tc.laplacian_field(chart, g, u)
    return float(max(np.max(np.abs(r1)), np.max(np.abs(r2))))


def _centres(rng: LCG, n: int, radius: float):
    """Points drawn inside a ball of the given radius."""
    out = []
    while len(out) < n:
        p = rng.uniform(3, -radius, radius)
        if np.linalg.norm(p) < radius:
            out.append(p)
    return np.array(out)


def random_smooth_pair(chart: Chart, seed: int, n_terms: int = 3):
    """Smooth decaying (h, v) built from off-centre Coulomb-type terms.

    Each component is sum_k c_k / |x - p_k| + d_k . (x - p_k) / |x - p_k|^3
    with centres p_k inside the surface, so the fields are smooth in the
    exterior, decay like 1/r and are not resolved exactly by the stencils.
    """
    rng = LCG(seed)
    rmin = float(np.min(chart.radius[chart.boundary]))
    x = chart.x
    comps = []
    for _ in range(7):
        P = _centres(rng, n_terms, 0.5 * rmin)
        f = np.zeros(chart.n_nodes)
        for p in P:
            c = rng.uniform(None, -1.0, 1.0)
            d = rng.uniform(3, -1.0, 1.0)
            y = x - p
            r = np.linalg.norm(y, axis=1)
            f += c / r + (y @ d) / r**3
        comps.append(f)
    h = tc.sym_from_components(np.stack(comps[:6], axis=1))
    return h, comps[6]


# ---------------------------------------------------------------------------
# ADM mass
# ---------------------------------------------------------------------------

def mass_flux(chart: Chart, g: np.ndarray, level: int):
    """(1/16 pi) times the flux of d_i g_ij - d_j g_ii through an s-level.

    Returns (mass estimate, area radius of the level).
    """
    dg = tc._sym_last(chart.grad(tc.components_from_sym(g - EYE[None])))  # [n, k, i, j]
    idx = chart.level(level)
    d = dg[idx]
    flux = np.einsum("niij->nj", d) - np.einsum("njii->nj", d)
    w = chart.level_area_weights(level)
    val = np.sum(w * np.einsum("nj,nj->n", flux, chart.normal[idx])) / (16 * np.pi)
    return float(val), float(np.sqrt(np.sum(w) / (4 * np.pi)))


def adm_mass(chart: Chart, g: np.ndarray, s_levels=(0.4, 0.2), rtol: float = 0.5,
             atol: float = 1e-8, details: bool = False):
    """ADM mass by flux integrals on the s-levels nearest ``s_levels``,
    Richardson-extrapolated in 1/r.

    Raises :class:`MassError` when the two flux values differ by more than
    ``rtol`` relative to the larger one (and more than ``atol``).
    """
    idx = [int(np.argmin(np.abs(chart.s - s0))) for s0 in s_levels]
    if idx[0] == idx[1]:
        raise ChartError("grid too coarse to separate the mass extraction levels")
    (m1, r1), (m2, r2) = (mass_flux(chart, g, i) for i in idx)
    big = max(abs(m1), abs(m2))
    if abs(m1 - m2) > max(rtol * big, atol):
        raise MassError(f"flux mass {m1:.6g} at r={r1:.3g} vs {m2:.6g} at r={r2:.3g}: metric not decaying")
    mass = (r2 * m2 - r1 * m1) / (r2 - r1)
    if details:
        return mass, {"levels": idx, "radii": [r1, r2], "flux_mass": [m1, m2]}
    return mass


# ---------------------------------------------------------------------------
# Regge-Teitelboim functional
# ---------------------------------------------------------------------------

@dataclass
class RTValue:
    value: float
    mass_term: float
    volume_term: float


def regge_teitelboim(chart: Chart, g: np.ndarray, u: np.ndarray) -> RTValue:
    """F(g, u) = -16 pi m_ADM(g) + integral of u R_g dvol_g (n = 3)."""
    j = tc.MetricJet.from_metric(chart, g)
    R = tc.scalar_curvature(j.g, j.dg, j.ddg)
    dvol = np.sqrt(tc.det3(j.g))
    vol = chart.volume_integral(u * R * dvol)
    mt = -16 * np.pi * adm_mass(chart, g)
    return RTValue(mt + vol, mt, vol)


def rt_first_variation_check(chart: Chart, v: np.ndarray, ds: float = 1e-3):
    """Central difference in s of F((1 + s v)^2 gbar, 1) against the boundary
    formula integral over the surface of A . h^T + 2 DH(h) with h = 2 v gbar.

    ``v`` must be harmonic and decaying.  Returns (difference quotient,
    boundary formula).
    """
    def F(s):
        g = ((1 + s * v) ** 2)[:, None, None] * EYE[None]
        return regge_teitelboim(chart, g, np.ones(chart.n_nodes)).value

    fd = (F(ds) - F(-ds)) / (2 * ds)
    h = 2 * v[:, None, None] * EYE[None]
    _, _, P, A, _ = tc.flat_boundary_frame(chart)
    hT = np.einsum("nai,nab,nbj->nij", P, h[chart.boundary], P)
    integrand = np.einsum("nij,nij->n", A, hT) + 2 * tc.lin_mean_curvature_flat(chart, h)
    return fd, chart.surface_integral(integrand)


# ---------------------------------------------------------------------------
# Green-type identity
# ---------------------------------------------------------------------------

@dataclass
class GreenOperands:
    """P(h, v) at every node and Q(h, v) at the boundary nodes, flat pair."""

    P_metric: np.ndarray  # (N, 3, 3)
    P_scalar: np.ndarray  # (N,)
    Q_metric: np.ndarray  # (Nb, 3, 3), tangential
    Q_scalar: np.ndarray  # (Nb,)
    bartnik_metric: np.ndarray  # h^T on the boundary
    bartnik_scalar: np.ndarray  # DH(h)


def green_operands(chart: Chart, h: np.ndarray, v: np.ndarray) -> GreenOperands:
    b = chart.boundary
    dric = tc.lin_ricci_flat(chart, h)
    dR = tc.lin_scalar_flat(chart, h)
    hess = chart.hessian(v)
    lap = np.einsum("nkk->n", hess)
    P1 = -dric + hess + (-lap + 0.5 * dR)[:, None, None] * EYE[None]

    nu, _, Pj, A, _ = tc.flat_boundary_frame(chart)
    proj = lambda t: np.einsum("nai,nab,nbj->nij", Pj, t, Pj)
    hT = proj(h[b])
    trT = np.einsum("nii->n", hT)
    DA = tc.lin_sff_flat(chart, h)
    dH = tc.lin_mean_curvature_flat(chart, h)
    nuv = np.einsum("nk,nk->n", chart.grad(v)[b], nu)
    AhT = A @ hT
    circ = 0.5 * (AhT + np.swapaxes(AhT, 1, 2))
    vb = v[b]
    Q1 = (vb[:, None, None] * A + DA - nuv[:, None, None] * Pj - 2 * circ
          + 0.5 * trT[:, None, None] * A)
    Q2 = 2 * vb + trT
    return GreenOperands(P1, dR, Q1, Q2, hT, dH)


def green_identity_terms(chart: Chart, h1, v1, h2, v2):
    """The four integrals (I12, I21, B12, B21) of the Green-type identity
    I12 - I21 + B12 - B21 = 0."""
    o1, o2 = green_operands(chart, h1, v1), green_operands(chart, h2, v2)

    def vol(o, h, v):
        return chart.volume_integral(np.einsum("nij,nij->n", o.P_metric, h) + o.P_scalar * v)

    def bdy(o, other):
        return chart.surface_integral(np.einsum("nij,nij->n", o.Q_metric, other.bartnik_metric)
                                      + o.Q_scalar * other.bartnik_scalar)

    return vol(o1, h2, v2), vol(o2, h1, v1), bdy(o1, o2), bdy(o2, o1)


def green_identity_residual(chart: Chart, h1, v1, h2, v2) -> float:
    """|I12 - I21 + B12 - B21| normalized by the sum of the absolute terms."""
    i12, i21, b12, b21 = green_identity_terms(chart, h1, v1, h2, v2)
    total = i12 - i21 + b12 - b21
    scale = abs(i12) + abs(i21) + abs(b12) + abs(b21)
    return 0.0 if scale == 0.0 else abs(total) / scale


# ---------------------------------------------------------------------------
# cokernel identities
# ---------------------------------------------------------------------------

def _inner_g(gi, S, T):
    return np.einsum("nik,njl,nij,nkl->n", gi, gi, S, T)


def cokernel_terms(chart: Chart, g: np.ndarray, u: np.ndarray, X: np.ndarray, dX: np.ndarray,
                   absolute: bool = False):
    """Integrals of <-u Ric, zeta1>, <Hess u, zeta1> and Lap u * zeta2 with
    zeta0(X) = (L_X g - (div_g X + X(u)/u) g, -div_g X + X(u)/u).

    ``dX[n, k, j]`` is d_k X^j.  With ``absolute`` the integrands are taken
    in absolute value, which gives the scale used for normalization.
    """
    j = tc.MetricJet.from_metric(chart, g)
    gi = j.gi
    du, ddu = tc.scalar_jet(chart, u)
    G = tc.christoffel(gi, j.dg)
    ric = tc.ricci(j.g, j.dg, j.ddg, gi)
    hess = ddu - np.einsum("nkij,nk->nij", G, du)
    lap = np.einsum("nij,nij->n", gi, hess)
    lie = (np.einsum("nk,nkij->nij", X, j.dg) + np.einsum("nkj,nik->nij", j.g, dX)
           + np.einsum("nik,njk->nij", j.g, dX))
    div = np.einsum("nkk->n", dX) + np.einsum("nkkl,nl->n", G, X)
    xu = np.einsum("nk,nk->n", X, du) / u
    z1 = lie - (div + xu)[:, None, None] * j.g
    z2 = -div + xu
    dvol = np.sqrt(tc.det3(j.g))
    f = np.abs if absolute else (lambda a: a)
    return np.array([chart.volume_integral(f(_inner_g(gi, -u[:, None, None] * ric, z1)) * dvol),
                     chart.volume_integral(f(_inner_g(gi, hess, z1)) * dvol),
                     chart.volume_integral(f(lap * z2) * dvol)])


def lin_cokernel_terms(chart: Chart, h: np.ndarray, v: np.ndarray, X: np.ndarray, dX: np.ndarray,
                       absolute: bool = False):
    """Integrals of <-DRic(h), kappa1>, <Hess v, kappa1> and Lap v * kappa2."""
    f = np.abs if absolute else (lambda a: a)
    k1, k2 = kappa0(chart, X, dX)
    dric = tc.lin_ricci_flat(chart, h)
    hess = chart.hessian(v)
    lap = np.einsum("nkk->n", hess)
    return np.array([chart.volume_integral(f(np.einsum("nij,nij->n", -dric, k1))),
                     chart.volume_integral(f(np.einsum("nij,nij->n", hess, k1))),
                     chart.volume_integral(f(lap * k2))])


def _normalized(terms, scales) -> float:
    scale = float(np.sum(scales))
    return 0.0 if scale == 0.0 else abs(float(np.sum(terms))) / scale


def cokernel_residual(chart, g, u, X, dX) -> float:
    """|integral <(-u Ric + Hess u, Lap u), zeta0(X)>_g dvol_g| divided by the
    integral of the absolute values of the three integrands."""
    return _normalized(cokernel_terms(chart, g, u, X, dX),
                       cokernel_terms(chart, g, u, X, dX, absolute=True))


def lin_cokernel_residual(chart, h, v, X, dX) -> float:
    """|integral <(-DRic(h) + Hess v, Lap v), kappa0(X)>| divided by the
    integral of the absolute values of the three integrands."""
    return _normalized(lin_cokernel_terms(chart, h, v, X, dX),
                       lin_cokernel_terms(chart, h, v, X, dX, absolute=True))


# ---------------------------------------------------------------------------
# conformal DH identity and the sphere convexity probe
# ---------------------------------------------------------------------------

def conformal_dh_check(chart: Chart, v: np.ndarray) -> float:
    """max |DH(2 v gbar) - (-v H + 2 nu(v))| over the boundary nodes."""
    b = chart.boundary
    nu, _, _, _, H = tc.flat_boundary_frame(chart)
    lhs = tc.lin_mean_curvature_flat(chart, 2 * v[:, None, None] * EYE[None])
    rhs = -v[b] * H + 2 * np.einsum("nk,nk->n", chart.grad(v)[b], nu)
    return float(np.max(np.abs(lhs - rhs)))


def convexity_probe_sphere(chart: Chart, c: float) -> float:
    """Integral over the unit sphere of 2v (DH0(2v gbar^T) - DH(2v gbar)), v = c/r.

    DH0 on a round sphere is -2c in closed form (the image is a round sphere
    of radius 1 + c s); DH(2 v gbar) is evaluated with the conformal formula.
    """
    surf = chart.surface
    if not surf.is_round or abs(surf.coeffs[0][2] - 1.0) > 1e-14:
        raise ChartError("the convexity probe needs the unit sphere")
    b = chart.boundary
    v = c / chart.radius
    nu, _, _, _, H = tc.flat_boundary_frame(chart)
    dh = -v[b] * H + 2 * np.einsum("nk,nk->n", chart.grad(v)[b], nu)
    dh0 = np.full(len(b), -2.0 * c)
    return chart.surface_integral(2 * v[b] * (dh0 - dh))


# ---------------------------------------------------------------------------
# nullity scan
# ---------------------------------------------------------------------------

@dataclass
class NullityRow:
    t: float
    singular_values: list
    nullity: int
    gap_ratio: float
    ambiguous: bool
    error: str = ""


@dataclass
class NullityTable:
    rows: list = field(default_factory=list)

    @property
    def nullities(self):
        return [r.nullity for r in self.rows]

    def to_dict(self):
        return {"rows": [r.__dict__ for r in self.rows]}


def nullity(chart: Chart, k: int = 12, **system_kw):
    """Spectrum of the unmodified flat operator L on the chart's exterior."""
    from .solver import factorize, singular_spectrum

    S = StaticSystem(chart, **system_kw)
    n = 7 * S.n
    L = S.linearize_flat()[:n, :n]
    return singular_spectrum(L, k, factorize(L, S, "operator"), S)


def static_regularity_scan(surface: Surface, t_min: float, t_max: float, steps: int,
                           grid=(12, 8, 16), k: int = 12, order: int | None = None,
                           **system_kw) -> NullityTable:
    """Nullity of L on the exteriors of t * surface for ``steps`` values of t."""
    table = NullityTable()
    kw = {} if order is None else {"order": order}
    for t in np.linspace(t_min, t_max, steps):
        try:
            chart = Chart(surface.dilate(float(t)), *grid, **kw)
            sp_ = nullity(chart, k, **system_kw)
            row = NullityRow(float(t), [float(x) for x in sp_.values], int(sp_.gap_index),
                             float(sp_.gap_ratio), bool(sp_.ambiguous))
        except Exception as exc:  # recorded, scan continues
            log.warning("scan point t=%g failed: %s", t, exc)
            row = NullityRow(float(t), [], -1, 0.0, True, str(exc))
        table.rows.append(row)
    return table


def random_killing_field(chart: Chart, basis=None, seed: int = 42):
    """A random combination of the harmonic Killing basis, with derivative."""
    basis = basis or harmonic_killing_basis(chart)
    w = LCG(seed).uniform(6, -1.0, 1.0)
    X = np.einsum("a,anj->nj", w, basis.X)
    dX = sum(w[a] * basis.jets(a)[1] for a in range(6))
    return X, dX
