"""Fixed-pattern sparse assembly and SPD factorization.

Element matrices on a fixed mesh always hit the same sparsity pattern, so the
pattern (and the symbolic factorization) is computed once and only values are
refreshed.  CHOLMOD (through cvxopt) is used when available; SuperLU from
scipy is the fallback.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

try:
    import cvxopt
    from cvxopt import cholmod

    HAVE_CHOLMOD = True
except ImportError:  # pragma: no cover
    HAVE_CHOLMOD = False


class NotPositiveDefinite(ArithmeticError):
    pass


class LowerPattern:
    """Lower-triangular CSC pattern of K[free][:, free] for an element mesh."""

    def __init__(self, edof: np.ndarray, ndof: int, free: np.ndarray | None = None):
        edof = np.asarray(edof, dtype=np.int64)
        nd = edof.shape[1]
        if free is None:
            free = np.arange(ndof)
        reduced = -np.ones(ndof, dtype=np.int64)
        reduced[free] = np.arange(free.size)
        self.ndof = ndof
        self.free = np.asarray(free, dtype=np.int64)
        self.n = free.size
        self.nd = nd
        r = reduced[edof]
        rows = np.repeat(r, nd, axis=1).reshape(-1, nd, nd)
        cols = np.tile(r, (1, nd)).reshape(-1, nd, nd)
        keep = (rows >= 0) & (cols >= 0) & (rows >= cols)
        self._keep = keep.ravel()
        key = cols[keep].astype(np.int64) * self.n + rows[keep]
        uniq, self._slot = np.unique(key, return_inverse=True)
        self.rows = uniq % self.n
        self.cols = uniq // self.n
        self.nnz = uniq.size

    def data(self, ke: np.ndarray) -> np.ndarray:
        """Sum element matrices of shape (ne, nd, nd) into pattern order."""
        vals = np.asarray(ke, dtype=np.float64).reshape(-1)[self._keep]
        return np.bincount(self._slot, weights=vals, minlength=self.nnz)

    def full(self, data: np.ndarray) -> sp.csc_matrix:
        L = sp.csc_matrix((data, (self.rows, self.cols)), shape=(self.n, self.n))
        return (L + sp.triu(L.T, k=1)).tocsc()


class SPDSolver:
    """Repeated factorizations of matrices sharing one :class:`LowerPattern`."""

    def __init__(self, pattern: LowerPattern, backend: str | None = None):
        self.pattern = pattern
        if backend is None:
            backend = "cholmod" if HAVE_CHOLMOD else "superlu"
        if backend == "cholmod" and not HAVE_CHOLMOD:
            raise RuntimeError("cholmod backend requested but cvxopt is not installed")
        self.backend = backend
        self._A = None
        self._F = None
        self._lu = None

    def factor(self, data: np.ndarray) -> "SPDSolver":
        data = np.ascontiguousarray(data, dtype=np.float64)
        if self.backend == "cholmod":
            if self._A is None:
                p = self.pattern
                self._A = cvxopt.spmatrix(
                    cvxopt.matrix(data),
                    cvxopt.matrix(p.rows.astype(np.int64)),
                    cvxopt.matrix(p.cols.astype(np.int64)),
                    (p.n, p.n),
                )
                self._F = cholmod.symbolic(self._A, uplo="L")
            else:
                self._A.V = cvxopt.matrix(data)
            try:
                cholmod.numeric(self._A, self._F)
            except ArithmeticError as exc:
                raise NotPositiveDefinite(str(exc)) from None
        else:
            K = self.pattern.full(data)
            try:
                self._lu = spla.splu(
                    K,
                    permc_spec="MMD_AT_PLUS_A",
                    diag_pivot_thresh=0.0,
                    options=dict(SymmetricMode=True),
                )
            except RuntimeError as exc:
                raise NotPositiveDefinite(str(exc)) from None
            if np.any(self._lu.U.diagonal() <= 0):
                raise NotPositiveDefinite("non-positive pivot")
        return self

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=np.float64)
        if self.backend == "cholmod":
            B = cvxopt.matrix(np.array(b.reshape(b.shape[0], -1), order="F"))
            cholmod.solve(self._F, B)
            x = np.array(B)
            return x.reshape(b.shape)
        return self._lu.solve(b)
