"""Scalar-generic sparse/dense linear algebra used by the preconditioners.

Operators are plain ``scipy.sparse`` CSR matrices (real symmetric or complex
Hermitian); no wrapper type is imposed on callers.
"""

import numpy as np
import scipy.io
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import MaxIterations, NonHermitian, NotPositiveDefinite, SingularCore

ORDERING = "MMD_AT_PLUS_A"


def hermitian_part(A):
    """Return ``(A + A^H)/2`` as CSR; assembly calls this to symmetrize exactly."""
    A = sp.csr_matrix(A)
    return ((A + A.conj().T) * 0.5).tocsr()


def check_hermitian(A, rtol=1e-12):
    A = sp.csr_matrix(A)
    scale = abs(A).max() if A.nnz else 0.0
    diff = A - A.conj().T
    err = abs(diff).max() if diff.nnz else 0.0
    if err > rtol * max(scale, np.finfo(float).tiny):
        raise NonHermitian(f"|A - A^H|_max = {err:.3e} exceeds {rtol:g} |A|_max")
    return err


def matvec(A, x):
    return A @ x


class Factorization:
    """Sparse ``P^T L D L^H P`` factorization of a Hermitian matrix.

    Backed by SuperLU with a symmetric minimum-degree ordering on
    ``A + A^T`` and diagonal pivoting, so ``U = D L^H``; the pivots ``D`` are
    inspected to certify positive definiteness for the ``cholesky`` kind.
    """

    def __init__(self, A, kind="cholesky"):
        if kind not in ("cholesky", "ldlh"):
            raise ValueError(f"unknown factorization kind {kind!r}")
        A = sp.csc_matrix(A)
        self.kind = kind
        self.shape = A.shape
        self.dtype = A.dtype
        self.ordering = ORDERING
        if A.shape[0] == 0:
            self._lu = None
            self.diagonal = np.zeros(0)
            self.permutation = np.zeros(0, dtype=np.int64)
            return
        try:
            lu = spla.splu(A, permc_spec=ORDERING, diag_pivot_thresh=0.0,
                           options={"SymmetricMode": True})
        except RuntimeError as exc:
            raise NotPositiveDefinite(f"factorization failed: {exc}") from exc
        if not np.array_equal(lu.perm_r, lu.perm_c):
            raise NotPositiveDefinite("off-diagonal pivoting was required")
        d = lu.U.diagonal()
        if kind == "cholesky":
            scale = np.abs(d).max()
            if np.any(d.real <= 0) or np.any(np.abs(d.imag) > 1e-8 * scale):
                raise NotPositiveDefinite("nonpositive pivot in Cholesky factorization")
        self._lu = lu
        self.diagonal = d.real if kind == "cholesky" else d
        self.permutation = lu.perm_c

    @property
    def lower(self):
        return self._lu.L

    def solve(self, b):
        b = np.asarray(b)
        if self._lu is None:
            return np.zeros_like(b)
        if np.iscomplexobj(b) and not np.iscomplexobj(np.empty(0, dtype=self.dtype)):
            return self._lu.solve(np.ascontiguousarray(b.real)) + 1j * self._lu.solve(
                np.ascontiguousarray(b.imag))
        return self._lu.solve(np.ascontiguousarray(b, dtype=np.result_type(b, self.dtype)))


def factorize(A, kind="cholesky"):
    return Factorization(A, kind=kind)


class DenseEigResult:
    """Ascending eigenvalues and B-orthonormal eigenvectors of a pencil."""

    def __init__(self, eigenvalues, eigenvectors):
        self.eigenvalues = eigenvalues
        self.eigenvectors = eigenvectors

    def __iter__(self):
        return iter((self.eigenvalues, self.eigenvectors))


def dense_generalized_eig(A, B, upper=None):
    """Solve ``A v = lambda B v`` for dense Hermitian ``A`` and HPD ``B``.

    ``upper`` restricts the computation to eigenvalues ``<= upper``.
    """
    A = np.asarray(A)
    B = np.asarray(B)
    if A.shape[0] == 0:
        return DenseEigResult(np.zeros(0), np.zeros((0, 0), dtype=A.dtype))
    try:
        la.cholesky(B, lower=True)
    except la.LinAlgError as exc:
        raise NotPositiveDefinite("right-hand matrix of the pencil is not HPD") from exc
    kw = {}
    if upper is not None:
        kw["subset_by_value"] = (-np.inf, upper)
    try:
        w, v = la.eigh(A, B, **kw)
    except la.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from exc
    return DenseEigResult(w, v)


def _block_jacobi_inverse(A, block):
    """Inverse of the block diagonal of ``A`` as a sparse matrix."""
    n = A.shape[0]
    if block == 1:
        d = A.diagonal()
        return sp.diags(1.0 / d)
    if n % block:
        raise ValueError("dimension is not a multiple of the block size")
    nb = n // block
    A = sp.csr_matrix(A)
    blocks = np.empty((nb, block, block), dtype=A.dtype)
    for r in range(block):
        for c in range(block):
            rows = np.arange(nb) * block + r
            cols = np.arange(nb) * block + c
            blocks[:, r, c] = np.asarray(A[rows, cols]).ravel()
    inv = np.linalg.inv(blocks)
    return sp.block_diag(list(inv), format="csr")


def inner_solve(A, b, tol_A=1e-1, max_it=None, block=1, return_info=False):
    """Block-diagonally preconditioned CG to relative residual ``tol_A``.

    ``b`` may be a matrix, in which case every column is solved
    independently (vectorised) and iterated until it meets the tolerance.
    """
    A = sp.csr_matrix(A)
    b = np.asarray(b)
    single = b.ndim == 1
    B = b[:, None] if single else b
    n, ncol = B.shape
    if max_it is None:
        max_it = 10 * max(n, 1)
    dtype = np.result_type(A.dtype, B.dtype)
    X = np.zeros((n, ncol), dtype=dtype)
    bnorm = np.linalg.norm(B, axis=0)
    active = bnorm > 0
    iters = 0
    if active.any():
        Minv = _block_jacobi_inverse(A, block)
        R = B.astype(dtype, copy=True)
        Z = Minv @ R
        P = Z.copy()
        rz = np.einsum("ij,ij->j", R.conj(), Z).real
        exhausted = np.zeros(ncol, dtype=bool)  # search direction vanished at round-off
        while True:
            relres = np.where(active, np.linalg.norm(R, axis=0) / np.where(active, bnorm, 1), 0)
            active = (relres > tol_A) & ~exhausted
            if not active.any():
                break
            if iters >= max_it:
                raise MaxIterations(f"inner CG stalled at relres {relres.max():.3e}",
                                    iterations=iters, relres=float(relres.max()))
            cols = np.flatnonzero(active)
            AP = A @ P[:, cols]
            pAp = np.einsum("ij,ij->j", P[:, cols].conj(), AP).real
            dead = pAp <= 0
            if dead.any():
                exhausted[cols[dead]] = True
                pAp = np.where(dead, 1.0, pAp)
            alpha = np.where(dead, 0.0, rz[cols] / pAp)
            X[:, cols] += P[:, cols] * alpha
            R[:, cols] -= AP * alpha
            Zc = Minv @ R[:, cols]
            rz_new = np.einsum("ij,ij->j", R[:, cols].conj(), Zc).real
            ratio = np.divide(rz_new, rz[cols], out=np.zeros_like(rz_new), where=rz[cols] > 0)
            P[:, cols] = Zc + P[:, cols] * ratio
            rz[cols] = rz_new
            iters += 1
    X = X[:, 0] if single else X
    return (X, iters) if return_info else X


class LowRankShiftedSolver:
    """Solve ``(A + G G^H) x = b`` from a factorization of ``A`` (Woodbury)."""

    def __init__(self, factor, G):
        G = np.asarray(G)
        self.factor = factor
        self.G = G
        if G.shape[1] == 0:
            self.Y = None
            return
        self.Y = factor.solve(G)
        core = np.eye(G.shape[1]) + G.conj().T @ self.Y
        core = 0.5 * (core + core.conj().T)
        try:
            self._core = la.cho_factor(core, lower=True)
        except la.LinAlgError as exc:
            raise SingularCore("Woodbury core I + G^H A^-1 G is singular") from exc
        rcond = np.linalg.cond(core)
        if not np.isfinite(rcond) or rcond > 1e14:
            raise SingularCore(f"Woodbury core is numerically singular (cond {rcond:.2e})")

    def solve(self, b):
        x = self.factor.solve(b)
        if self.Y is None:
            return x
        t = la.cho_solve(self._core, self.G.conj().T @ x)
        return x - self.Y @ t


def apply_lowrank_woodbury(F, G, b):
    return LowRankShiftedSolver(F, G).solve(b)


def write_matrix_market(path, A, comment=""):
    """Export a Hermitian (complex) or symmetric (real) operator."""
    A = sp.coo_matrix(A)
    symmetry = "hermitian" if np.iscomplexobj(A.data) else "symmetric"
    scipy.io.mmwrite(path, A, comment=comment, symmetry=symmetry)


def read_matrix_market(path):
    return sp.csr_matrix(scipy.io.mmread(path))
