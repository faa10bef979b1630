"""
Shared dense and sparse linear-algebra kernels.

Everything else in the package is built on the few primitives defined here:
a CSR container for symmetric positive definite operators, a small dense
Cholesky with explicit rank reporting, and symmetric eigensolvers (tridiagonal
and full) that return sorted, orthonormal decompositions.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse


class ContractViolation(ValueError):
    """An operation was called with inputs that break its preconditions."""


class RankDeficient(RuntimeError):
    """A Cholesky pivot failed; ``column`` is the offending column index."""

    def __init__(self, column, message=None):
        self.column = column
        super().__init__(message or f"non-positive pivot at column {column}")


class NumericalFailure(RuntimeError):
    """An iterative kernel failed to converge or met an impossible state."""


@dataclass(frozen=True)
class SparseSpdMatrix:
    """Symmetric positive definite operator in CSR form (full pattern stored).

    Invariants checked at construction: structural symmetry with equal
    values, strictly positive diagonal present in every row, nondecreasing
    row offsets and sorted column indices.
    """

    n: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray
    _csr: scipy.sparse.csr_matrix = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ro = np.asarray(self.row_offsets, dtype=np.int64)
        ci = np.asarray(self.col_indices, dtype=np.int64)
        va = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "row_offsets", ro)
        object.__setattr__(self, "col_indices", ci)
        object.__setattr__(self, "values", va)
        if len(ro) != self.n + 1 or ro[0] != 0 or ro[-1] != len(ci) or len(ci) != len(va):
            raise ContractViolation("inconsistent CSR arrays")
        if np.any(np.diff(ro) < 0):
            raise ContractViolation("row_offsets must be nondecreasing")
        csr = scipy.sparse.csr_matrix((va, ci, ro), shape=(self.n, self.n))
        # sorted-within-row check: differences are positive except at row starts
        if len(ci) > 0:
            jumps = np.diff(ci)
            starts = np.zeros(len(ci), dtype=bool)
            starts[ro[1:-1]] = True
            if np.any(jumps[~starts[1:]] <= 0):
                raise ContractViolation("col_indices must be sorted within each row")
        rows = np.repeat(np.arange(self.n), np.diff(ro))
        diag_mask = rows == ci
        if np.count_nonzero(diag_mask) != self.n or np.any(va[diag_mask] <= 0.0):
            raise ContractViolation("all diagonal entries must be present and positive")
        if (csr != csr.T).nnz != 0:
            raise ContractViolation("matrix is not symmetric (pattern or values)")
        object.__setattr__(self, "_csr", csr)

    @classmethod
    def from_dense(cls, dense, keep_zeros=False):
        """Build from a dense symmetric array, optionally keeping the full pattern."""
        dense = np.asarray(dense, dtype=np.float64)
        n = dense.shape[0]
        if dense.shape != (n, n):
            raise ContractViolation("dense input must be square")
        sym = 0.5 * (dense + dense.T)
        if keep_zeros:
            ro = np.arange(n + 1) * n
            ci = np.tile(np.arange(n), n)
            return cls(n, ro, ci, sym.ravel())
        csr = scipy.sparse.csr_matrix(sym)
        csr.sum_duplicates()
        csr.sort_indices()
        return cls(n, csr.indptr, csr.indices, csr.data)

    @classmethod
    def from_scipy(cls, mat):
        csr = scipy.sparse.csr_matrix(mat)
        csr.sum_duplicates()
        csr.sort_indices()
        return cls(csr.shape[0], csr.indptr, csr.indices, csr.data)

    def to_dense(self):
        return self._csr.toarray()

    def diagonal(self):
        return self._csr.diagonal()

    @property
    def nnz(self):
        return len(self.values)

    def __matmul__(self, other):
        return self._csr @ np.asarray(other, dtype=np.float64)


def spmv(A: SparseSpdMatrix, x):
    """Sparse matrix-vector product ``A @ x``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (A.n,):
        raise ContractViolation(f"vector length {x.shape} does not match n={A.n}")
    return A @ x


@dataclass(frozen=True)
class TridiagSym:
    """Symmetric tridiagonal matrix stored as diagonal/off-diagonal arrays."""

    diag: np.ndarray
    offdiag: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.diag, dtype=np.float64)
        e = np.asarray(self.offdiag, dtype=np.float64)
        object.__setattr__(self, "diag", d)
        object.__setattr__(self, "offdiag", e)
        if len(d) < 1 or len(e) != len(d) - 1:
            raise ContractViolation("need |offdiag| = |diag| - 1 with |diag| >= 1")

    @property
    def m(self):
        return len(self.diag)

    def truncated(self, m):
        """Leading principal ``m x m`` submatrix."""
        if not 1 <= m <= self.m:
            raise ContractViolation("truncation size out of range")
        return TridiagSym(self.diag[:m].copy(), self.offdiag[:m - 1].copy())

    def to_dense(self):
        T = np.diag(self.diag)
        idx = np.arange(self.m - 1)
        T[idx, idx + 1] = self.offdiag
        T[idx + 1, idx] = self.offdiag
        return T


@dataclass(frozen=True)
class EigDecomposition:
    """Eigenvalues sorted descending with column-matched orthonormal vectors."""

    values: np.ndarray
    vectors: np.ndarray


def _as_descending(values, vectors):
    order = np.argsort(values)[::-1]
    return EigDecomposition(np.ascontiguousarray(values[order]),
                            np.ascontiguousarray(vectors[:, order]))


def tridiag_eig(T: TridiagSym) -> EigDecomposition:
    """Full eigendecomposition of a symmetric tridiagonal matrix."""
    if T.m == 1:
        return EigDecomposition(T.diag.copy(), np.ones((1, 1)))
    try:
        values, vectors = scipy.linalg.eigh_tridiagonal(T.diag, T.offdiag)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:  # pragma: no cover
        raise NumericalFailure(str(exc)) from exc
    return _as_descending(values, vectors)


def dense_sym_eig(G) -> EigDecomposition:
    """Full eigendecomposition of a dense symmetric matrix (brute-force oracle)."""
    G = np.asarray(G, dtype=np.float64)
    if G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise ContractViolation("input must be square")
    scale = np.linalg.norm(G)
    if scale > 0 and np.linalg.norm(G - G.T) > 1e-12 * scale:
        raise ContractViolation("input is not symmetric")
    try:
        values, vectors = np.linalg.eigh(0.5 * (G + G.T))
    except np.linalg.LinAlgError as exc:  # pragma: no cover
        raise NumericalFailure(str(exc)) from exc
    return _as_descending(values, vectors)


def dense_cholesky(G, pivot_rtol=0.0):
    """Lower Cholesky factor of a dense symmetric positive definite matrix.

    Parameters
    ----------
    G : array_like
        Symmetric matrix (checked within ``1e-12 * ||G||``).
    pivot_rtol : float
        Pivots below ``pivot_rtol`` times the largest pivot seen so far are
        treated as rank deficiencies (used as the basis rank guard).

    Raises
    ------
    RankDeficient
        On a non-positive (or guarded) pivot; carries the offending column
        index so the caller can drop dependent columns.
    """
    G = np.asarray(G, dtype=np.float64)
    n = G.shape[0]
    if G.ndim != 2 or G.shape != (n, n):
        raise ContractViolation("input must be square")
    scale = np.linalg.norm(G)
    if scale > 0 and np.linalg.norm(G - G.T) > 1e-12 * scale:
        raise ContractViolation("input is not symmetric")
    if n > 32:
        # LAPACK fast path; fall back to the explicit loop only to locate the
        # offending column when factorization or the pivot guard fails.
        try:
            L = scipy.linalg.cholesky(G, lower=True, check_finite=False)
        except (scipy.linalg.LinAlgError, ValueError):
            L = None
        if L is not None:
            d = np.diag(L) ** 2
            prev_max = np.concatenate(([0.0], np.maximum.accumulate(d)[:-1]))
            bad = ~np.isfinite(d) | (d <= prev_max * pivot_rtol) | (d <= 0.0)
            if not np.any(bad):
                return L
            raise RankDeficient(int(np.argmax(bad)))
    L = np.zeros_like(G)
    largest_pivot = 0.0
    for j in range(n):
        d = G[j, j] - L[j, :j] @ L[j, :j]
        if d <= largest_pivot * pivot_rtol or d <= 0.0 or not np.isfinite(d):
            raise RankDeficient(j)
        largest_pivot = max(largest_pivot, d)
        L[j, j] = np.sqrt(d)
        if j + 1 < n:
            L[j + 1:, j] = (G[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return L
