"""Sparse LU factorisations with a common interface.

MKL PARDISO (through ``pypardiso``) is used when it can be loaded, since it
is much faster than SuperLU on 3D stencils; otherwise ``scipy.sparse.linalg.splu``.
Set ``STATICEXT_SOLVER=superlu`` to force the fallback.
"""
from __future__ import annotations

import glob
import os
import sys

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

_PARDISO = None


def _load_pardiso():
    global _PARDISO
    if _PARDISO is not None:
        return _PARDISO or None
    if os.environ.get("STATICEXT_SOLVER", "").lower() == "superlu":
        _PARDISO = False
        return None
    if "PYPARDISO_MKL_RT" not in os.environ:
        for root in (sys.prefix, "/usr/local", "/usr"):
            hits = sorted(glob.glob(os.path.join(root, "lib", "libmkl_rt.so*")))
            if hits:
                os.environ["PYPARDISO_MKL_RT"] = hits[0]
                break
    try:
        import pypardiso  # noqa: F401
        from pypardiso.pardiso_wrapper import PyPardisoSolver
    except (ImportError, OSError):
        _PARDISO = False
        return None
    _PARDISO = PyPardisoSolver
    return _PARDISO


def backend_name() -> str:
    return "pardiso" if _load_pardiso() else "superlu"


class Factorization:
    """LU factors of a square sparse matrix; ``solve(b, trans=False)``."""

    def __init__(self, A):
        A = sp.csr_matrix(A, dtype=float)
        A.sum_duplicates()
        A.sort_indices()
        self.shape = A.shape
        cls = _load_pardiso()
        if cls is not None:
            self._A = A
            self._ps = cls()
            self._ps.factorize(A)
            self._lu = None
        else:
            self._lu = spla.splu(A.tocsc())

    def solve(self, b, trans: bool = False):
        b = np.asarray(b, dtype=float)
        if self._lu is not None:
            return self._lu.solve(b, trans="T" if trans else "N")
        ps = self._ps
        ps.set_iparm(12, 2 if trans else 0)
        ps.set_phase(33)
        x = ps._call_pardiso(self._A, np.asfortranarray(b))
        ps.set_iparm(12, 0)
        return x

    def __del__(self):
        ps = getattr(self, "_ps", None)
        if ps is not None:
            try:
                ps.free_memory(everything=True)
            except Exception:
                pass


def _shift(A: sp.coo_matrix, period: int, by: int = 1) -> sp.csr_matrix:
    """Conjugate A by a cyclic shift of the fastest index (length ``period``)."""
    def mv(i):
        return (i // period) * period + (i % period + by) % period
    return sp.csr_matrix((A.data, (mv(A.row), mv(A.col))), shape=A.shape)


def is_shift_invariant(A, period: int, rtol: float = 1e-12) -> bool:
    if A.shape[0] != A.shape[1] or A.shape[0] % period:
        return False
    A = sp.csr_matrix(A)
    diff = _shift(A.tocoo(), period) - A
    return diff.nnz == 0 or abs(diff).max() <= rtol * abs(A).max()


class CirculantFactorization:
    """Solves with a matrix that commutes with cyclic shifts of its fastest
    index, e.g. a chart operator on a surface of revolution (shifts in phi).

    A real FFT along that index splits the system into one dense block per
    Fourier mode; each block is LU-factorised.
    """

    def __init__(self, A, period: int):
        A = sp.csr_matrix(A, dtype=float)
        n = A.shape[0]
        self.shape = A.shape
        self.period = K = period
        self.P = P = n // K
        rows0 = np.arange(P) * K
        A0 = A[rows0].tocoo()  # couplings of the nodes at k = 0
        q, d = A0.col // K, A0.col % K
        self._lu = []
        for m in range(K // 2 + 1):
            data = A0.data * np.exp(2j * np.pi * m * d / K)
            Am = np.zeros((P, P), dtype=complex)
            np.add.at(Am, (A0.row, q), data)
            self._lu.append(sla.lu_factor(Am, check_finite=False))

    def solve(self, b, trans: bool = False):
        b = np.asarray(b, dtype=float)
        vec = b.ndim == 1
        B = b.reshape(self.P, self.period, -1)
        Bh = np.fft.rfft(B, axis=1)
        Xh = np.empty_like(Bh)
        for m, lu in enumerate(self._lu):
            Xh[:, m] = sla.lu_solve(lu, Bh[:, m], trans=2 if trans else 0, check_finite=False)
        X = np.fft.irfft(Xh, n=self.period, axis=1).reshape(b.shape[0], -1)
        return X[:, 0] if vec else X


def factorize_scalar(A, period: int | None = None):
    """:class:`CirculantFactorization` when A is shift invariant with the given
    period, otherwise a sparse LU."""
    if period and is_shift_invariant(A, period):
        return CirculantFactorization(A, period)
    return Factorization(A)


class BlockDiagonalFactorization:
    """Factorisation of a matrix made of ``nblocks`` uncoupled equal-size
    diagonal blocks; identical blocks share one factorisation."""

    def __init__(self, A, nblocks: int, period: int | None = None):
        A = sp.csr_matrix(A, dtype=float)
        n = A.shape[0] // nblocks
        self.n, self.nb = n, nblocks
        self._f = []
        first = None
        for k in range(nblocks):
            blk = A[k * n:(k + 1) * n, k * n:(k + 1) * n].tocsr()
            if first is not None:
                d = blk - first[0]
                if d.nnz == 0 or abs(d).max() == 0.0:
                    self._f.append(first[1])
                    continue
            f = factorize_scalar(blk, period)
            self._f.append(f)
            if first is None:
                first = (blk, f)

    @staticmethod
    def applies(A, nblocks: int) -> bool:
        A = sp.csr_matrix(A)
        n = A.shape[0] // nblocks
        C = A.tocoo()
        return bool(np.all(C.row // n == C.col // n) | (C.data == 0).all()) if C.nnz else True

    def solve(self, b, trans: bool = False):
        b = np.asarray(b, dtype=float)
        out = np.empty_like(b)
        for k, f in enumerate(self._f):
            out[k * self.n:(k + 1) * self.n] = f.solve(b[k * self.n:(k + 1) * self.n], trans=trans)
        return out
