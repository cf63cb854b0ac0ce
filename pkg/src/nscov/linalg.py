"""Symmetric positive-definite linear algebra for dense and tapered matrices.

Dense matrices are plain numpy arrays factored through LAPACK. Tapered
covariances are handled through a SparsePattern, an index structure that
depends only on the locations and the taper radius delta: the pattern (and the
fill-reducing ordering computed from it) is built once and reused across every
assembly and factorization with new parameter values, which is the point of a
fixed taper radius. Sparse factorization is CHOLMOD (through cvxopt) with the
symbolic analysis cached on the pattern.

Factorization failures raise IndefiniteError carrying the failing pivot index.
An optional jitter rescue adds 1e-8 * mean(diagonal) once and flags the
factor; it exists so that an optimizer can step through a barely-indefinite
evaluation without the final reported fit silently depending on it.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np
import scipy.sparse as sp
from cvxopt import amd, cholmod
from cvxopt import matrix as _cvx_matrix
from cvxopt import spmatrix as _cvx_spmatrix
from scipy.linalg import cho_solve
from scipy.linalg.lapack import dpotrf
from scipy.spatial import cKDTree

from .kernels import TaperSpec, taper_correlation

__all__ = [
    "IndefiniteError",
    "JITTER_SCALE",
    "SparsePattern",
    "SparseSpd",
    "CholeskyFactor",
    "build_pattern",
    "cholesky",
    "solve",
    "logdet",
    "condition_estimate",
]

JITTER_SCALE = 1e-8

# supernodal LL' keeps cholmod.diag(F) = diag(L) well defined for logdet
cholmod.options["supernodal"] = 2


class IndefiniteError(Exception):
    """Matrix failed the positive-definiteness check during factorization.

    pivot is the (0-based) index of the failing pivot, or -1 if the backend
    did not report one.
    """

    def __init__(self, message: str, pivot: int = -1):
        super().__init__(message)
        self.pivot = pivot


class SparsePattern:
    """Index structure of taper-nonzero pairs for a fixed (locations, delta).

    Stores the lower triangle (diagonal always present) with entries sorted by
    (column, row) for deterministic iteration. Entry distances and taper
    weights are parameter-independent, so they are precomputed here; the
    CHOLMOD symbolic analysis (which embeds an AMD-family fill-reducing
    ordering) is computed once on first factorization and reused.
    """

    def __init__(self, locations: np.ndarray, taper: TaperSpec):
        locations = np.asarray(locations, dtype=float)
        if locations.ndim != 2:
            raise ValueError("locations must be an (n, d) array")
        n = locations.shape[0]
        radius = taper.delta if taper.delta is not None else math.inf
        if math.isinf(radius):
            ii, jj = np.triu_indices(n, 1)
            pairs = np.column_stack([ii, jj])
        else:
            tree = cKDTree(locations)
            pairs = tree.query_pairs(radius, output_type="ndarray")
            if pairs.size == 0:
                pairs = pairs.reshape(0, 2)
        dist = np.sqrt(((locations[pairs[:, 0]] - locations[pairs[:, 1]]) ** 2).sum(axis=1))
        keep = dist < radius  # strict: the support boundary itself tapers to 0
        pairs, dist = pairs[keep], dist[keep]
        lo = np.minimum(pairs[:, 0], pairs[:, 1])
        hi = np.maximum(pairs[:, 0], pairs[:, 1])
        rows = np.concatenate([hi, np.arange(n)])
        cols = np.concatenate([lo, np.arange(n)])
        h = np.concatenate([dist, np.zeros(n)])
        order = np.lexsort((rows, cols))
        self.n = int(n)
        self.delta = None if math.isinf(radius) else float(radius)
        self.rows = rows[order].astype(np.int64)
        self.cols = cols[order].astype(np.int64)
        self.h = h[order]
        self.diag_mask = self.rows == self.cols
        self._taper_values: dict[tuple, np.ndarray] = {}
        self._cvx_I = _cvx_matrix(self.rows.astype(int))
        self._cvx_J = _cvx_matrix(self.cols.astype(int))
        self._symbolic = None
        self._permutation: Optional[np.ndarray] = None

    @property
    def nnz(self) -> int:
        """Logical nonzero count of the full symmetric pattern."""
        return 2 * len(self.rows) - self.n

    @property
    def permutation(self) -> np.ndarray:
        """Approximate-minimum-degree ordering of the pattern."""
        if self._permutation is None:
            ones = _cvx_matrix(np.ones(len(self.rows)))
            A = _cvx_spmatrix(ones, self._cvx_I, self._cvx_J, (self.n, self.n))
            self._permutation = np.asarray(amd.order(A), dtype=np.int64).ravel()
        return self._permutation

    def taper_values(self, taper: TaperSpec) -> np.ndarray:
        key = (taper.family, taper.delta)
        if key not in self._taper_values:
            self._taper_values[key] = taper_correlation(self.h, taper)
        return self._taper_values[key]

    def to_cvx(self, values: np.ndarray):
        return _cvx_spmatrix(_cvx_matrix(values), self._cvx_I, self._cvx_J,
                             (self.n, self.n))

    def symbolic(self):
        if self._symbolic is None:
            self._symbolic = cholmod.symbolic(self.to_cvx(np.ones(len(self.rows))))
        return self._symbolic


class SparseSpd:
    """Symmetric matrix stored as lower-triangle values on a SparsePattern."""

    def __init__(self, pattern: SparsePattern, values: np.ndarray):
        if len(values) != len(pattern.rows):
            raise ValueError("value array does not match pattern")
        self.pattern = pattern
        self.values = np.asarray(values, dtype=float)
        self.n = pattern.n

    def diagonal(self) -> np.ndarray:
        d = np.empty(self.n)
        d[self.pattern.rows[self.pattern.diag_mask]] = self.values[self.pattern.diag_mask]
        return d

    def to_csc(self) -> sp.csc_matrix:
        """Full symmetric scipy matrix (for matvecs and dense oracles)."""
        p = self.pattern
        off = ~p.diag_mask
        rows = np.concatenate([p.rows, p.cols[off]])
        cols = np.concatenate([p.cols, p.rows[off]])
        vals = np.concatenate([self.values, self.values[off]])
        return sp.csc_matrix((vals, (rows, cols)), shape=(self.n, self.n))

    def toarray(self) -> np.ndarray:
        return self.to_csc().toarray()

    def matvec(self, v: np.ndarray) -> np.ndarray:
        return self.to_csc() @ v


class CholeskyFactor:
    """Lower-triangular factorization handle with its log-determinant.

    kind is 'dense' (LAPACK) or 'sparse' (CHOLMOD). jitter is 0.0 unless the
    rescue path added a diagonal shift before the factorization succeeded.
    """

    def __init__(self, kind: str, n: int, logdet: float, jitter: float,
                 dense_L=None, sparse_factor=None):
        self.kind = kind
        self.n = n
        self.logdet = float(logdet)
        self.jitter = float(jitter)
        self._L = dense_L
        self._F = sparse_factor

    @property
    def jittered(self) -> bool:
        return self.jitter != 0.0

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve A x = rhs for one vector or a matrix of columns."""
        rhs = np.asarray(rhs, dtype=float)
        if self.kind == "dense":
            return cho_solve((self._L, True), rhs, check_finite=False)
        b = _cvx_matrix(rhs.reshape(self.n, -1, order="F"))
        cholmod.solve(self._F, b)
        out = np.asarray(b).reshape(rhs.shape, order="F")
        return out

    def dense_lower(self) -> np.ndarray:
        """The explicit lower factor; dense factors only."""
        if self.kind != "dense":
            raise ValueError("explicit factor only available for dense matrices")
        return np.tril(self._L)


def build_pattern(locations, taper: TaperSpec) -> SparsePattern:
    """Taper-nonzero index pattern: pair (i, j) present iff |s_i - s_j| < delta."""
    return SparsePattern(locations, taper)


def _dense_cholesky(A: np.ndarray, rescue: bool) -> CholeskyFactor:
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    c, info = dpotrf(A, lower=1, clean=0, overwrite_a=0)
    jitter = 0.0
    if info > 0 and rescue:
        jitter = JITTER_SCALE * float(np.mean(np.diag(A)))
        c, info = dpotrf(A + jitter * np.eye(n), lower=1, clean=0, overwrite_a=0)
    if info > 0:
        raise IndefiniteError(
            f"dense matrix is not positive definite (pivot {info - 1})",
            pivot=int(info) - 1,
        )
    if info < 0:
        raise ValueError(f"illegal value in argument {-info} of dpotrf")
    ld = 2.0 * float(np.sum(np.log(np.diag(c))))
    return CholeskyFactor("dense", n, ld, jitter, dense_L=c)


def _sparse_cholesky(A: SparseSpd, rescue: bool) -> CholeskyFactor:
    pattern = A.pattern
    F = pattern.symbolic()
    jitter = 0.0
    values = A.values
    try:
        cholmod.numeric(pattern.to_cvx(values), F)
    except ArithmeticError as err:
        if not rescue:
            raise IndefiniteError(
                f"sparse matrix is not positive definite (pivot {err})",
                pivot=_pivot_from(err),
            ) from None
        jitter = JITTER_SCALE * float(np.mean(A.diagonal()))
        values = values.copy()
        values[pattern.diag_mask] += jitter
        try:
            cholmod.numeric(pattern.to_cvx(values), F)
        except ArithmeticError as err2:
            raise IndefiniteError(
                f"sparse matrix is not positive definite after jitter "
                f"(pivot {err2})",
                pivot=_pivot_from(err2),
            ) from None
    d = np.asarray(cholmod.diag(F)).ravel()
    ld = 2.0 * float(np.sum(np.log(d)))
    return CholeskyFactor("sparse", pattern.n, ld, jitter, sparse_factor=F)


def _pivot_from(err: ArithmeticError) -> int:
    try:
        return int(err.args[0])
    except (IndexError, TypeError, ValueError):
        return -1


def cholesky(A, rescue: bool = False) -> CholeskyFactor:
    """Factor a dense array or SparseSpd; see IndefiniteError and the rescue
    policy in the module docstring.

    Note: the sparse path reuses the pattern's symbolic analysis, so repeated
    factorizations with new values on the same pattern skip the ordering work.
    """
    if isinstance(A, SparseSpd):
        return _sparse_cholesky(A, rescue)
    return _dense_cholesky(A, rescue)


def solve(factor: CholeskyFactor, rhs) -> np.ndarray:
    return factor.solve(rhs)


def logdet(factor: CholeskyFactor) -> float:
    return factor.logdet


def condition_estimate(A, factor: Optional[CholeskyFactor] = None,
                       tol: float = 1e-4, maxiter: int = 2000) -> float:
    """Ratio of extreme eigenvalues of an SPD matrix.

    Power iteration for the largest eigenvalue and inverse iteration (through
    a Cholesky solve) for the smallest, run to a 1% accuracy target with a
    deterministic start vector.
    """
    if isinstance(A, SparseSpd):
        n = A.n
        M = A.to_csc()
        matvec = M.__matmul__
    else:
        A = np.asarray(A, dtype=float)
        n = A.shape[0]
        matvec = A.__matmul__
    if n == 1:
        return 1.0
    if factor is None:
        factor = cholesky(A)

    def _extreme(apply_op):
        # Rayleigh-quotient power iteration. The quotient converges
        # geometrically, so successive changes estimate the remaining tail
        # (Aitken); stopping on the raw change alone under-converges when the
        # leading eigenvalues are clustered.
        v = np.ones(n) + 1e-3 * np.cos(1.2345 * np.arange(n))
        v /= np.linalg.norm(v)
        lam = 0.0
        lam_prev = None
        c_prev = None
        for _ in range(maxiter):
            w = apply_op(v)
            lam = float(v @ w)
            nw = np.linalg.norm(w)
            if nw == 0.0:
                return 0.0
            v = w / nw
            if lam_prev is not None:
                c = lam - lam_prev
                if c == 0.0:
                    return lam
                if c_prev is not None and c_prev != 0.0:
                    q = c / c_prev
                    if 0.0 < q < 1.0:
                        tail = c * q / (1.0 - q)
                        if abs(tail) <= tol * abs(lam):
                            return lam + tail
                c_prev = c
            lam_prev = lam
        return lam

    lam_max = _extreme(matvec)
    inv_lam_min = _extreme(factor.solve)
    if inv_lam_min <= 0.0:
        return math.inf
    return lam_max * inv_lam_min
