"""Compactified exterior chart, finite-difference operators and quadrature.

The exterior of a star-shaped surface r = r(theta, phi) is mapped to the slab
s in (0, 1] by x = (r(theta, phi) / s) * omega(theta, phi).  s = 1 is the
surface, s -> 0 is spatial infinity.  Nodes sit at s_i = i / ns (i = 1..ns),
so infinity is a ghost layer on which every perturbation field is zero.
Polar nodes are offset by half a cell; stencils that cross a pole continue
on the opposite meridian (phi + pi), which is why nphi must be even.

Tensor fields are stored in Cartesian components, one array of node values
per component, nodes flattened in C order over (s, theta, phi).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.special import bernoulli, lpmv


class ChartError(ValueError):
    """Invalid surface or grid description."""


# ---------------------------------------------------------------------------
# Surface
# ---------------------------------------------------------------------------

def _legendre(l: int, m: int, theta: np.ndarray):
    """P_l^m(cos theta) without the Condon-Shortley phase, with its first
    two theta derivatives."""
    x = np.cos(theta)
    st = np.sin(theta)
    sign = (-1.0) ** m
    p = sign * lpmv(m, l, x)
    pm1 = sign * lpmv(m, l - 1, x) if l - 1 >= m else np.zeros_like(x)
    dp = (l * x * p - (l + m) * pm1) / st
    ddp = -(x / st) * dp - (l * (l + 1) - m * m / st**2) * p
    return p, dp, ddp


@dataclass(frozen=True)
class Surface:
    """Star-shaped surface r(theta, phi) = sum value * P_l^|m|(cos theta) * trig(m phi).

    trig is cos(m phi) for m > 0, 1 for m = 0 and sin(|m| phi) for m < 0.
    Associated Legendre functions are unnormalized and carry no
    Condon-Shortley phase, so the unit sphere is ``[(0, 0, 1.0)]`` and
    r = 1 + 0.1 P_2(cos theta) is ``[(0, 0, 1.0), (2, 0, 0.1)]``.
    """

    coeffs: tuple = ((0, 0, 1.0),)

    def __post_init__(self):
        norm = []
        for c in self.coeffs:
            if isinstance(c, dict):
                c = (c["l"], c["m"], c["value"])
            l, m, val = int(c[0]), int(c[1]), float(c[2])
            if l < 0 or abs(m) > l:
                raise ChartError(f"invalid harmonic index (l={l}, m={m})")
            norm.append((l, m, val))
        object.__setattr__(self, "coeffs", tuple(norm))

    @classmethod
    def sphere(cls, radius: float = 1.0) -> "Surface":
        if radius <= 0:
            raise ChartError("sphere radius must be positive")
        return cls(((0, 0, float(radius)),))

    @property
    def is_round(self) -> bool:
        return all(l == 0 for l, _, v in self.coeffs if v != 0.0)

    def dilate(self, t: float) -> "Surface":
        return Surface(tuple((l, m, t * v) for l, m, v in self.coeffs))

    def radius(self, theta, phi):
        """Return r and its derivatives (r_t, r_p, r_tt, r_tp, r_pp)."""
        theta = np.asarray(theta, dtype=float)
        phi = np.asarray(phi, dtype=float)
        out = [np.zeros(np.broadcast(theta, phi).shape) for _ in range(6)]
        for l, m, val in self.coeffs:
            if val == 0.0:
                continue
            am = abs(m)
            p, dp, ddp = _legendre(l, am, theta)
            if m > 0:
                f, df, ddf = np.cos(m * phi), -m * np.sin(m * phi), -m * m * np.cos(m * phi)
            elif m < 0:
                f, df, ddf = np.sin(am * phi), am * np.cos(am * phi), -am * am * np.sin(am * phi)
            else:
                f, df, ddf = np.ones_like(phi), np.zeros_like(phi), np.zeros_like(phi)
            out[0] += val * p * f
            out[1] += val * dp * f
            out[2] += val * p * df
            out[3] += val * ddp * f
            out[4] += val * dp * df
            out[5] += val * p * ddf
        return tuple(out)

    @classmethod
    def from_config(cls, cfg: dict) -> "Surface":
        kind = cfg.get("type")
        if kind == "sphere":
            return cls.sphere(float(cfg.get("radius", 1.0)))
        if kind == "harmonics":
            lmax = int(cfg["lmax"])
            coeffs = []
            for c in cfg["coeffs"]:
                if int(c["l"]) > lmax:
                    raise ChartError(f"coefficient l={c['l']} exceeds lmax={lmax}")
                coeffs.append((c["l"], c["m"], c["value"]))
            return cls(tuple(coeffs))
        raise ChartError(f"unknown surface type {kind!r}")


# ---------------------------------------------------------------------------
# 1D stencils
# ---------------------------------------------------------------------------

def fd_weights(offsets, m: int) -> np.ndarray:
    """Weights w with sum_j w_j f(x0 + offsets_j) ~ f^(m)(x0) for unit spacing."""
    off = np.asarray(offsets, dtype=float)
    k = np.arange(len(off))
    V = off[None, :] ** k[:, None]
    rhs = np.zeros(len(off))
    rhs[m] = float(np.prod(np.arange(1, m + 1)))
    return np.linalg.solve(V, rhs)


def _s_operator(ns: int, ds: float, m: int, order: int) -> sp.csr_matrix:
    """m-th derivative in s on nodes s_i = (i + 1) ds, i = 0..ns-1.

    The ghost node s = 0 carries the value zero and may appear in stencils;
    nothing beyond s = 1 is used.  Centred stencils of the given order are
    used where they fit.  Near s = 0 the window is shifted by one extra
    point.  Near s = 1 the order tapers to the widest centred stencil that
    fits, and the last node uses a four-point one-sided stencil; wide
    one-sided closures there produce spurious boundary-layer modes.  For
    order > 2 the first derivative at the second-to-last node uses a
    five-point window ending at s = 1, which keeps it fourth order.
    """
    half = order // 2
    A = sp.lil_matrix((ns, ns))
    for i in range(ns):
        lo, hi = i - half, i + half
        if lo < -1:
            lo = -1
            hi = lo + 2 * half + 1
        elif hi > ns - 1:
            hh = min(half, ns - 1 - i)
            lo, hi = i - hh, i + hh
            if hh == 0:
                lo = ns - 4
            elif hh == 1 and m == 1 and order > 2:
                lo, hi = ns - 5, ns - 1
        idx = np.arange(lo, hi + 1)
        wts = fd_weights(idx - i, m) / ds**m
        for j, c in zip(idx, wts):
            if j >= 0:
                A[i, j] = c
    return A.tocsr()


def prune(A: sp.spmatrix, rtol: float = 1e-13) -> sp.csr_matrix:
    """Drop entries below ``rtol`` times their row's largest magnitude.

    Sums of chart operators whose cross terms cancel analytically (the
    Laplacian on a round sphere) leave round-off entries that only add fill.
    """
    A = sp.csr_matrix(A, copy=True)
    if A.nnz == 0:
        return A
    mag = np.abs(A.data)
    rowmax = np.maximum.reduceat(mag, A.indptr[:-1][np.diff(A.indptr) > 0])
    counts = np.diff(A.indptr)
    thresh = np.repeat(rtol * rowmax, counts[counts > 0])
    A.data[mag <= thresh] = 0.0
    A.eliminate_zeros()
    return A


def fejer_weights(n: int) -> np.ndarray:
    """Fejer's first rule for the integral over [-1, 1] in x = cos(theta),
    nodes at theta_j = (j + 1/2) pi / n."""
    th = (np.arange(n) + 0.5) * np.pi / n
    k = np.arange(1, n // 2 + 1)
    return 2.0 / n * (1 - 2 * np.sum(np.cos(2 * np.outer(th, k)) / (4 * k**2 - 1), axis=1))


def gregory_end_weights(m: int) -> np.ndarray:
    """End corrections c_0..c_{m-1} (unit spacing) added to the trapezoid
    weights at one end so that polynomials of degree < m integrate exactly.

    They reproduce the end terms sum_j B_2j / (2j)! f^(2j-1) of the
    Euler-Maclaurin expansion.
    """
    B = bernoulli(m + 1)
    k = np.arange(m)
    target = np.array([B[kk + 1] / (kk + 1) if kk % 2 == 1 else 0.0 for kk in k])
    V = np.arange(m, dtype=float)[None, :] ** k[:, None]
    V[0, 0] = 1.0
    return np.linalg.solve(V, target)


def _s_rule(ns: int, ds: float, m: int) -> np.ndarray:
    """Weights on nodes s_i = i ds (i = 1..ns) for the integral over [0, 1].

    [s_1, 1] uses the trapezoid rule with end corrections; [0, s_1] the
    integral of the polynomial interpolating the first m nodes.
    """
    m = min(m, ns)
    w = np.full(ns, 1.0)
    w[0] = w[-1] = 0.5
    c = gregory_end_weights(m)
    w[:m] += c
    w[ns - m:] += c[::-1]
    # first cell: integral over t in [0, 1] of the Lagrange basis on nodes 1..m
    nodes = np.arange(1, m + 1, dtype=float)
    k = np.arange(m)
    V = nodes[None, :] ** k[:, None]
    w[:m] += np.linalg.solve(V, 1.0 / (k + 1))
    return w * ds


def _periodic_offsets(order: int):
    half = order // 2
    return np.arange(-half, half + 1)


# ---------------------------------------------------------------------------
# Chart
# ---------------------------------------------------------------------------

_PAIRS = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))


@dataclass
class Chart:
    """Grid over the compactified exterior of ``surface``."""

    surface: Surface
    ns: int
    ntheta: int
    nphi: int
    order: int = 6
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.ns < 4:
            raise ChartError("need at least 4 nodes in s")
        if self.ntheta < 2:
            raise ChartError("need at least 2 nodes in theta")
        if self.order not in (2, 4, 6):
            raise ChartError("stencil order must be 2, 4 or 6")
        if self.ns < self.order + 2 or self.ntheta < self.order // 2:
            raise ChartError("grid too small for the stencil order")
        if self.nphi < 4 or self.nphi % 2:
            raise ChartError("nphi must be even and at least 4 (pole wrap pairs phi with phi + pi)")
        th = (np.arange(self.ntheta) + 0.5) * np.pi / self.ntheta
        ph = np.arange(self.nphi) * 2 * np.pi / self.nphi
        r, *_ = self.surface.radius(th[:, None], ph[None, :])
        if np.any(r <= 0):
            raise ChartError("surface radius must be positive everywhere (star-shaped)")

    # -- grid ---------------------------------------------------------------
    @property
    def shape(self):
        return (self.ns, self.ntheta, self.nphi)

    @property
    def n_nodes(self) -> int:
        return self.ns * self.ntheta * self.nphi

    @property
    def ds(self) -> float:
        return 1.0 / self.ns

    @property
    def dtheta(self) -> float:
        return np.pi / self.ntheta

    @property
    def dphi(self) -> float:
        return 2 * np.pi / self.nphi

    @cached_property
    def s(self) -> np.ndarray:
        return np.arange(1, self.ns + 1) * self.ds

    @cached_property
    def theta(self) -> np.ndarray:
        return (np.arange(self.ntheta) + 0.5) * self.dtheta

    @cached_property
    def phi(self) -> np.ndarray:
        return np.arange(self.nphi) * self.dphi

    def index(self, i, j, k):
        return (np.asarray(i) * self.ntheta + np.asarray(j)) * self.nphi + np.asarray(k)

    @cached_property
    def coords(self):
        """(s, theta, phi) at every node, each of shape (N,)."""
        S, T, P = np.meshgrid(self.s, self.theta, self.phi, indexing="ij")
        return S.ravel(), T.ravel(), P.ravel()

    @cached_property
    def boundary(self) -> np.ndarray:
        """Node indices on the surface (s = 1)."""
        return np.arange((self.ns - 1) * self.ntheta * self.nphi, self.n_nodes)

    @cached_property
    def interior_mask(self) -> np.ndarray:
        m = np.ones(self.n_nodes, dtype=bool)
        m[self.boundary] = False
        return m

    def level(self, i: int) -> np.ndarray:
        """Node indices on the s-level with zero-based index i."""
        n2 = self.ntheta * self.nphi
        return np.arange(i * n2, (i + 1) * n2)

    # -- embedding ---------------------------------------------------------
    @cached_property
    def _embedding(self):
        S, T, P = self.coords
        r, rt, rp, rtt, rtp, rpp = self.surface.radius(T, P)
        st, ct, sph, cph = np.sin(T), np.cos(T), np.sin(P), np.cos(P)
        z = np.zeros_like(T)
        w = np.stack([st * cph, st * sph, ct], -1)
        wt = np.stack([ct * cph, ct * sph, -st], -1)
        wp = np.stack([-st * sph, st * cph, z], -1)
        wtt = -w
        wtp = np.stack([-ct * sph, ct * cph, z], -1)
        wpp = np.stack([-st * cph, -st * sph, z], -1)
        c = lambda a: a[:, None]
        s1 = c(1.0 / S)
        x = c(r) * w * s1
        xs = -c(r) * w * s1**2
        xt = (c(rt) * w + c(r) * wt) * s1
        xp = (c(rp) * w + c(r) * wp) * s1
        xss = 2 * c(r) * w * s1**3
        xst = -(c(rt) * w + c(r) * wt) * s1**2
        xsp = -(c(rp) * w + c(r) * wp) * s1**2
        xtt = (c(rtt) * w + 2 * c(rt) * wt + c(r) * wtt) * s1
        xtp = (c(rtp) * w + c(rt) * wp + c(rp) * wt + c(r) * wtp) * s1
        xpp = (c(rpp) * w + 2 * c(rp) * wp + c(r) * wpp) * s1
        M = np.stack([xs, xt, xp], -1)  # M[n, i, a] = dx^i / dxi^a
        X2 = np.empty((len(S), 3, 3, 3))  # X2[n, i, a, b]
        for (a, b), arr in {(0, 0): xss, (0, 1): xst, (0, 2): xsp, (1, 1): xtt,
                            (1, 2): xtp, (2, 2): xpp}.items():
            X2[:, :, a, b] = arr
            X2[:, :, b, a] = arr
        return x, M, X2

    @property
    def x(self) -> np.ndarray:
        """Cartesian positions, shape (N, 3)."""
        return self._embedding[0]

    @cached_property
    def radius(self) -> np.ndarray:
        return np.linalg.norm(self.x, axis=1)

    @cached_property
    def jac(self) -> np.ndarray:
        """J[n, a, i] = d xi^a / d x^i."""
        return np.linalg.inv(self._embedding[1])

    @cached_property
    def hess_xi(self) -> np.ndarray:
        """H[n, a, i, j] = d^2 xi^a / dx^i dx^j."""
        _, _, X2 = self._embedding
        J = self.jac
        return -np.einsum("nak,nkbc,nbi,ncj->naij", J, X2, J, J)

    @cached_property
    def det(self) -> np.ndarray:
        return np.abs(np.linalg.det(self._embedding[1]))

    # -- surface geometry ---------------------------------------------------
    @cached_property
    def normal(self) -> np.ndarray:
        """Euclidean unit covector -grad s / |grad s| at every node.

        On the surface this is the normal pointing toward infinity; off the
        surface it is the normal of the level sets of s.
        """
        g = -self.jac[:, 0, :]
        return g / np.linalg.norm(g, axis=1)[:, None]

    @cached_property
    def grad_s(self) -> np.ndarray:
        return self.jac[:, 0, :]

    @cached_property
    def hess_s(self) -> np.ndarray:
        return self.hess_xi[:, 0]

    @cached_property
    def tangent_frame(self) -> np.ndarray:
        """Euclidean orthonormal frame (t1, t2) of the level sets, shape (N, 2, 3)."""
        M = self._embedding[1]
        t1 = M[:, :, 1] / np.linalg.norm(M[:, :, 1], axis=1)[:, None]
        t2 = M[:, :, 2] - np.sum(M[:, :, 2] * t1, 1)[:, None] * t1
        t2 /= np.linalg.norm(t2, axis=1)[:, None]
        return np.stack([t1, t2], 1)

    # -- quadrature ---------------------------------------------------------
    @cached_property
    def s_weights(self) -> np.ndarray:
        """Quadrature weights on [0, 1] for nodes s_1..s_ns.

        The base rule is the trapezoid rule with the value at s = 0
        extrapolated linearly from the first two nodes (second order).  For
        stencil orders above two, end-corrected trapezoid weights with a
        polynomial first cell are exact for polynomials up to degree order + 1.
        """
        w = np.full(self.ns, self.ds)
        w[0] = 2.0 * self.ds
        w[1] = 0.5 * self.ds
        w[-1] = 0.5 * self.ds
        if self.order > 2:
            w = _s_rule(self.ns, self.ds, self.order + 2)
        return w

    @cached_property
    def _theta_weights(self) -> np.ndarray:
        """Weights for the integral of f(theta) sin(theta) over (0, pi),
        divided by sin(theta_j) so that they multiply the area element."""
        if self.order > 2:
            return fejer_weights(self.ntheta) / np.sin(self.theta)
        # exact integral of sin(theta) over each theta cell
        return np.full(self.ntheta, 2.0 * np.sin(0.5 * self.dtheta))

    @cached_property
    def _angle_factor(self) -> np.ndarray:
        """Angular weight per node of one s-level (theta-major, phi fastest)."""
        return np.repeat(self._theta_weights, self.nphi) * self.dphi

    @cached_property
    def volume_weights(self) -> np.ndarray:
        w = np.repeat(self.s_weights, self.ntheta * self.nphi)
        return self.det * w * np.tile(self._angle_factor, self.ns)

    def level_area_weights(self, i: int) -> np.ndarray:
        """Euclidean area weights of the s-level surface with index i."""
        idx = self.level(i)
        M = self._embedding[1][idx]
        a = np.linalg.norm(np.cross(M[:, :, 1], M[:, :, 2]), axis=1)
        return a * self._angle_factor

    @cached_property
    def area_weights(self) -> np.ndarray:
        """Euclidean area weights on the surface, aligned with ``boundary``."""
        return self.level_area_weights(self.ns - 1)

    def volume_integral(self, f: np.ndarray) -> float:
        """Integral of a node field over the exterior with the Euclidean volume."""
        return float(np.sum(self.volume_weights * f))

    def surface_integral(self, f: np.ndarray) -> float:
        """Integral over the surface of a field given at the boundary nodes."""
        return float(np.sum(self.area_weights * f))

    # -- derivative operators ----------------------------------------------
    @cached_property
    def xi_ops(self) -> dict:
        """Sparse derivative operators in (s, theta, phi), keyed by index tuples."""
        ns, nt, nph = self.shape
        It, Ip = sp.identity(nt), sp.identity(nph)
        Ds1 = sp.kron(sp.kron(_s_operator(ns, self.ds, 1, self.order), It), Ip, format="csr")
        Ds2 = sp.kron(sp.kron(_s_operator(ns, self.ds, 2, self.order), It), Ip, format="csr")
        Dt1 = self.angular_operator(1, 1)
        Dt2 = self.angular_operator(1, 2)
        Dp1 = self.angular_operator(2, 1)
        Dp2 = self.angular_operator(2, 2)
        return {
            (0,): Ds1, (1,): Dt1, (2,): Dp1,
            (0, 0): Ds2, (1, 1): Dt2, (2, 2): Dp2,
            (0, 1): (Ds1 @ Dt1).tocsr(), (0, 2): (Ds1 @ Dp1).tocsr(), (1, 2): (Dt1 @ Dp1).tocsr(),
        }

    def angular_operator(self, axis: int, m: int, offsets=None) -> sp.csr_matrix:
        """Centred m-th derivative along theta (axis 1) or phi (axis 2).

        Stencils in theta that cross a pole continue on the opposite meridian.
        """
        ns, nt, nph = self.shape
        N = self.n_nodes
        if offsets is None:
            offsets = _periodic_offsets(self.order + 2 * ((m - 1) // 2))
        wts = fd_weights(offsets, m) / (self.dtheta if axis == 1 else self.dphi) ** m
        i, j, k = np.meshgrid(np.arange(ns), np.arange(nt), np.arange(nph), indexing="ij")
        i, j, k = i.ravel(), j.ravel(), k.ravel()
        row = self.index(i, j, k)
        rows, cols, vals = [], [], []
        for o, w in zip(offsets, wts):
            if w == 0.0:
                continue
            if axis == 1:
                jj = j + o
                lo, hi = jj < 0, jj >= nt
                kk = np.where(lo | hi, (k + nph // 2) % nph, k)
                jj = np.where(lo, -1 - jj, np.where(hi, 2 * nt - 1 - jj, jj))
                col = self.index(i, jj, kk)
            else:
                col = self.index(i, j, (k + o) % nph)
            rows.append(row)
            cols.append(col)
            vals.append(np.full(N, w))
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(N, N))

    @cached_property
    def D1(self) -> list:
        """Cartesian first-derivative operators [d/dx, d/dy, d/dz]."""
        J = self.jac
        ops = self.xi_ops
        return [sum(sp.diags(J[:, a, i]) @ ops[(a,)] for a in range(3)).tocsr() for i in range(3)]

    @cached_property
    def D2(self) -> dict:
        """Cartesian second-derivative operators keyed by (i, j) with i <= j.

        Use :meth:`d2` for either index order.
        """
        J, H = self.jac, self.hess_xi
        ops = self.xi_ops
        out = {}
        for i, j in _PAIRS:
            acc = None
            for a in range(3):
                for b in range(a, 3):
                    c = J[:, a, i] * J[:, b, j]
                    if a != b:
                        c = c + J[:, b, i] * J[:, a, j]
                    term = sp.diags(c) @ ops[(a, b)]
                    acc = term if acc is None else acc + term
                acc = acc + sp.diags(H[:, a, i, j]) @ ops[(a,)]
            out[(i, j)] = acc.tocsr()
        return out

    def d2(self, i: int, j: int) -> sp.csr_matrix:
        return self.D2[(min(i, j), max(i, j))]

    @cached_property
    def laplacian(self) -> sp.csr_matrix:
        return prune(self.D2[(0, 0)] + self.D2[(1, 1)] + self.D2[(2, 2)])

    # -- helpers -------------------------------------------------------------
    def sample(self, fn) -> np.ndarray:
        """Evaluate ``fn(x)`` on the node positions (x has shape (N, 3))."""
        return np.asarray(fn(self.x))

    def grad(self, f: np.ndarray) -> np.ndarray:
        """Cartesian gradient of node values; trailing axes of f are kept."""
        return np.stack([D @ f for D in self.D1], axis=1)

    def hessian(self, f: np.ndarray) -> np.ndarray:
        """Cartesian second derivatives, shape (N, 3, 3, ...)."""
        out = np.empty((f.shape[0], 3, 3) + f.shape[1:])
        for (i, j), D in self.D2.items():
            v = D @ f
            out[:, i, j] = v
            out[:, j, i] = v
        return out


def refine(chart: Chart) -> Chart:
    """Chart on the same surface with every grid dimension doubled."""
    return Chart(chart.surface, 2 * chart.ns, 2 * chart.ntheta, 2 * chart.nphi, chart.order)
