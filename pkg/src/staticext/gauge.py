"""Gauge conditions, Killing fields and the harmonic vector fields that
vanish on the surface.

The space of admissible gauge fields consists of Euclidean-harmonic vector
fields X with X = 0 on the surface and X - K decaying for a Euclidean
Killing field K.  We store X = K + Y where Y solves the Dirichlet problem
Lap Y = 0, Y = -K on the surface, Y = 0 at infinity.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .linalg import factorize_scalar
from .mesh import Chart
from .tensorcalc import EYE, bianchi_flat, components_from_sym, _sym_last

N_KILLING = 6


def eta_weight(r, r_eta: float):
    """1 inside r_eta, r_eta / r beyond 2 r_eta, C^1 cubic blend in between."""
    r = np.asarray(r, dtype=float)
    R = float(r_eta)
    out = np.where(r <= R, 1.0, R / np.maximum(r, 1e-300))
    mid = (r > R) & (r < 2 * R)
    if np.any(mid):
        t = (r[mid] - R) / R
        # Hermite data: value 1, slope 0 at t=0; value 1/2, slope -1/4 (per unit t) at t=1
        h00 = 2 * t**3 - 3 * t**2 + 1
        h01 = -2 * t**3 + 3 * t**2
        h11 = t**3 - t**2
        out = np.array(out, dtype=float)
        out[mid] = h00 * 1.0 + h01 * 0.5 + h11 * (-0.25)
    return out


def default_r_eta(chart: Chart) -> float:
    return 2.0 * float(np.max(chart.radius[chart.boundary]))


def weight_rho(x):
    """rho = 1 / (1 + |x|^2)."""
    return 1.0 / (1.0 + np.sum(np.asarray(x) ** 2, axis=-1))


def killing_fields(x: np.ndarray):
    """Values K_a(x) and constant derivatives dK_a[k, j] = d_k K^j for the
    three translations followed by the three rotations e_a x X."""
    vals = np.empty((N_KILLING, len(x), 3))
    dK = np.zeros((N_KILLING, 3, 3))
    for a in range(3):
        vals[a] = EYE[a]
        vals[3 + a] = np.cross(EYE[a], x)
        for k in range(3):
            dK[3 + a, k] = np.cross(EYE[a], EYE[k])
    return vals, dK


def dirichlet_laplacian(chart: Chart) -> sp.csr_matrix:
    """Euclidean Laplacian with boundary rows replaced by the identity."""
    L = chart.laplacian
    b = chart.boundary
    mask = np.ones(chart.n_nodes)
    mask[b] = 0.0
    D = sp.diags(mask) @ L
    E = sp.csr_matrix((np.ones(len(b)), (b, b)), shape=L.shape)
    out = (D + E).tocsr()
    out.eliminate_zeros()
    return out


def lie_flat(chart: Chart, vec: np.ndarray) -> np.ndarray:
    """L_X gbar = d_i X_j + d_j X_i for a node vector field (N, 3)."""
    d = chart.grad(vec)  # [n, k, j]
    return d + np.swapaxes(d, 1, 2)


def div_flat(chart: Chart, vec: np.ndarray) -> np.ndarray:
    return sum(chart.D1[k] @ vec[:, k] for k in range(3))


def weighted_inner(chart: Chart, h: np.ndarray, k: np.ndarray) -> float:
    """<h, k> = integral of h_ij k_ij rho over the exterior."""
    return chart.volume_integral(np.einsum("nij,nij->n", h, k) * weight_rho(chart.x))


@dataclass
class HarmonicKillingBasis:
    """Basis X_a = K_a + Y_a of the admissible gauge fields."""

    chart: Chart
    Y: np.ndarray  # (6, N, 3)
    K: np.ndarray  # (6, N, 3)
    dK: np.ndarray  # (6, 3, 3)
    lie: np.ndarray  # (6, N, 3, 3) = L_{X_a} gbar
    gram: np.ndarray  # (6, 6)

    @property
    def X(self) -> np.ndarray:
        return self.K + self.Y

    def __len__(self):
        return N_KILLING

    def jets(self, a: int):
        """(X, dX, ddX) of the a-th field in the tensorcalc layout."""
        c = self.chart
        Y = self.Y[a]
        dX = c.grad(Y) + self.dK[a][None]
        ddX = c.hessian(Y)
        return self.X[a], dX, ddX


def harmonic_killing_basis(chart: Chart, factor=None) -> HarmonicKillingBasis:
    """Solve for Y_a and assemble L_{X_a} gbar and its Gram matrix."""
    if factor is None:
        factor = factorize_scalar(dirichlet_laplacian(chart), chart.nphi)
    K, dK = killing_fields(chart.x)
    b = chart.boundary
    rhs = np.zeros((chart.n_nodes, 3 * N_KILLING))
    for a in range(N_KILLING):
        rhs[b, 3 * a:3 * a + 3] = -K[a][b]
    sol = factor.solve(rhs)
    Y = np.stack([sol[:, 3 * a:3 * a + 3] for a in range(N_KILLING)])
    lie = np.stack([lie_flat(chart, Y[a]) for a in range(N_KILLING)])
    gram = np.array([[weighted_inner(chart, lie[a], lie[c]) for c in range(N_KILLING)]
                     for a in range(N_KILLING)])
    return HarmonicKillingBasis(chart, Y, K, dK, lie, gram)


# ---------------------------------------------------------------------------
# gauge residuals
# ---------------------------------------------------------------------------

@dataclass
class GaugeResiduals:
    static_harmonic: np.ndarray  # (N, 3) one-form beta g + du
    orthogonality: np.ndarray  # (6,)

    @property
    def static_harmonic_max(self) -> float:
        return float(np.max(np.abs(self.static_harmonic)))

    @property
    def orthogonality_max(self) -> float:
        return float(np.max(np.abs(self.orthogonality)))


def static_harmonic_residual(chart: Chart, g: np.ndarray, u: np.ndarray) -> np.ndarray:
    """beta_gbar g + du with beta g = -div g + d(tr g) / 2 (Euclidean reference)."""
    h = components_from_sym(g - EYE[None])
    dg = _sym_last(chart.grad(h))
    return bianchi_flat(dg) + chart.grad(u - 1.0)


def orthogonality_residual(chart: Chart, g: np.ndarray, basis: HarmonicKillingBasis,
                           normalized: bool = False) -> np.ndarray:
    """<g - gbar, L_{X_a} gbar> in the rho-weighted L2 product, a = 1..6.

    With ``normalized`` each entry is divided by sqrt(gram[a, a]).
    """
    h = g - EYE[None]
    out = np.array([weighted_inner(chart, h, basis.lie[a]) for a in range(N_KILLING)])
    if normalized:
        out = out / np.sqrt(np.diag(basis.gram))
    return out


def gauge_residuals(chart, g, u, basis) -> GaugeResiduals:
    return GaugeResiduals(static_harmonic_residual(chart, g, u),
                          orthogonality_residual(chart, g, basis))


def kappa0(chart: Chart, X: np.ndarray, dX: np.ndarray | None = None):
    """(2 beta* X, -div X) = (L_X gbar - (div X) gbar, -div X) at the flat metric."""
    if dX is None:
        dX = chart.grad(X)
    lie = dX + np.swapaxes(dX, 1, 2)
    div = np.einsum("nkk->n", dX)
    return lie - div[:, None, None] * EYE[None], -div
