"""Local spectral problems and the constrained-energy-minimizing coarse bases.

For every subdomain the pencil ``s_i phi = lambda a_i phi`` is solved through
the definite auxiliary pencil ``a_i x = mu (a_i + s_i) x`` with
``lambda = (1 - mu) / mu``; modes with ``lambda >= Lambda`` span the local
auxiliary space. Writing ``g_ij = S_i phi_ij`` (zero-extended), the global
bases solve ``A psi = g`` and ``(A + G G^H) psibar = g``; the economical
variants restrict those systems to the dofs of an oversampled region.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .errors import EmptyRegion, NotPositiveDefinite
from .numerics import (LowRankShiftedSolver, dense_generalized_eig, factorize,
                       inner_solve)

log = logging.getLogger(__name__)

INFINITE_MU = 1e-12
CLUSTER_GAP = 1e-8
DIRECT_DOF_LIMIT = 20000
VARIANTS = ("psi_global", "psibar_global", "psi_econ", "psibar_econ")


@dataclass(eq=False)
class LocalEigenBasis:
    """Selected eigenpairs of one subdomain.

    ``lambdas`` holds every eigenvalue in descending order (``np.inf`` for the
    kernel of ``a_i``); ``phis`` holds the ``l`` selected, s-orthonormal
    eigenvectors over the closed-subdomain dofs ``dofs``.
    """

    i: int
    dofs: np.ndarray
    lambdas: np.ndarray
    phis: np.ndarray
    S: object = field(repr=False)
    Lambda: float = np.nan

    @property
    def l(self):
        return self.phis.shape[1]

    def rhs_block(self):
        """Columns ``S_i phi_j`` on the closed-subdomain dofs."""
        return self.S @ self.phis


def _dense(M):
    return M.toarray() if sp.issparse(M) else np.asarray(M)


def _s_orthonormalize(phis, S, mus):
    """Re-orthonormalize in the s-inner product inside eigenvalue clusters."""
    out = phis.copy()
    start = 0
    n = len(mus)
    while start < n:
        stop = start + 1
        while stop < n and (
            (mus[stop] <= INFINITE_MU and mus[start] <= INFINITE_MU)
            or abs(mus[stop] - mus[start]) <= CLUSTER_GAP * max(abs(mus[start]), abs(mus[stop]))
        ):
            stop += 1
        if stop - start > 1:
            block = out[:, start:stop]
            gram = block.conj().T @ (S @ block)
            gram = 0.5 * (gram + gram.conj().T)
            L = la.cholesky(gram, lower=True)
            out[:, start:stop] = la.solve_triangular(L, block.conj().T, lower=True).conj().T
        start = stop
    return out


def solve_local_gep(local_a, local_s, Lambda, i=None, dofs=None):
    """Solve the local eigenproblem and keep every mode with ``lambda >= Lambda``."""
    a = _dense(local_a)
    s = _dense(local_s)
    b = a + s
    b = 0.5 * (b + b.conj().T)
    a = 0.5 * (a + a.conj().T)
    try:
        mus, vecs = dense_generalized_eig(a, b)
    except NotPositiveDefinite as exc:
        raise NotPositiveDefinite(f"a_i + s_i is not HPD on subdomain {i}") from exc
    mus = np.clip(mus, 0.0, 1.0)
    with np.errstate(divide="ignore"):
        lambdas = np.where(mus <= INFINITE_MU, np.inf, (1.0 - mus) / mus)
    keep = lambdas >= Lambda * (1.0 - 1e-10)
    sel = np.flatnonzero(keep)  # ascending mu == descending lambda
    # (a+s)-normalized x has s(x, x) = 1 - mu
    phis = vecs[:, sel] / np.sqrt(1.0 - mus[sel])[None, :]
    S = sp.csr_matrix(local_s)
    phis = _s_orthonormalize(phis, S, mus[sel])
    if dofs is None:
        dofs = np.arange(a.shape[0])
    return LocalEigenBasis(i=i, dofs=np.asarray(dofs), lambdas=lambdas, phis=phis, S=S,
                           Lambda=Lambda)


def project_pi(basis, v):
    """Coefficients ``s_i(v, phi_j)`` of the s-orthogonal projection onto V_aux."""
    return basis.phis.conj().T @ (basis.S @ v)


def build_eigenbases(system, decomp, pou, Lambda):
    bases = []
    for i in range(decomp.N):
        dofs, a = system.local_a(decomp, i)
        _, s = system.local_s(decomp, pou, i)
        bases.append(solve_local_gep(a, s, Lambda, i=i, dofs=dofs))
    return bases


def constraint_matrix(n, eigenbases):
    """Sparse ``n x sum(l_i)`` matrix ``G`` whose columns are ``S_i phi_j``."""
    rows, cols, vals = [], [], []
    col = 0
    for basis in eigenbases:
        block = basis.rhs_block()
        l = block.shape[1]
        if l:
            rows.append(np.repeat(basis.dofs, l))
            cols.append(np.tile(np.arange(col, col + l), len(basis.dofs)))
            vals.append(block.ravel())
        col += l
    if not rows:
        return sp.csc_matrix((n, 0))
    vals = np.concatenate(vals)
    G = sp.csc_matrix((vals, (np.concatenate(rows), np.concatenate(cols))), shape=(n, col))
    G.eliminate_zeros()
    return G


def column_owner(eigenbases):
    return np.concatenate([np.full(b.l, b.i, dtype=np.int64) for b in eigenbases]
                          + [np.zeros(0, dtype=np.int64)])


@dataclass(eq=False)
class CoarseBasis:
    """Coarse columns (dense or sparse ``n x coarse_dim``) and ``A0 = C^H A C``."""

    variant: str
    k: int
    Lambda: float
    l: list
    columns: object
    A0: np.ndarray
    _factor: object = field(default=None, repr=False)

    @property
    def coarse_dim(self):
        return self.A0.shape[0]

    def factor(self):
        if self._factor is None and self.coarse_dim:
            try:
                self._factor = la.cho_factor(self.A0, lower=True)
            except la.LinAlgError as exc:
                raise NotPositiveDefinite("coarse operator A0 is not HPD") from exc
        return self._factor

    def apply(self, r):
        """``C A0^{-1} C^H r``."""
        if not self.coarse_dim:
            return np.zeros_like(r)
        t = adjoint_apply(self.columns, r)
        return self.columns @ la.cho_solve(self.factor(), t)

    def manifest(self):
        return {"variant": self.variant, "k": self.k, "Lambda": self.Lambda,
                "l_i": [int(x) for x in self.l], "coarse_dim": int(self.coarse_dim)}

    def export(self, prefix):
        """Write ``prefix.mtx`` (dense array) and ``prefix.json``."""
        import json
        import scipy.io
        C = self.columns.toarray() if sp.issparse(self.columns) else np.asarray(self.columns)
        scipy.io.mmwrite(prefix + ".mtx", C)
        with open(prefix + ".json", "w", encoding="utf-8") as fh:
            json.dump(self.manifest(), fh, indent=2)


def adjoint_apply(C, r):
    """``C^H r`` without materializing the conjugate transpose of ``C``."""
    out = C.T @ np.conj(r)
    out = out.toarray() if sp.issparse(out) else np.asarray(out)
    return np.conj(out)


def _coarse_operator(A, C, chunk=256):
    d = C.shape[1]
    A0 = np.zeros((d, d), dtype=np.result_type(A.dtype, C.dtype))
    for start in range(0, d, chunk):
        AC = A @ C[:, start:start + chunk]
        A0[:, start:start + chunk] = adjoint_apply(C, AC)
    return _hermitian_part(A0)


def _hermitian_part(M, chunk=512):
    """Overwrite ``M`` with ``(M + M^H) / 2`` block by block, avoiding full copies."""
    d = M.shape[0]
    for i in range(0, d, chunk):
        for j in range(i, d, chunk):
            upper = (slice(i, i + chunk), slice(j, j + chunk))
            lower = (slice(j, j + chunk), slice(i, i + chunk))
            avg = 0.5 * (M[upper] + M[lower].conj().T)
            M[upper] = avg
            M[lower] = avg.conj().T
    return M


def _finish(variant, k, eigenbases, A, C):
    l = [b.l for b in eigenbases]
    if sum(l) == 0:
        log.warning("empty coarse space: the preconditioner reduces to one level")
    Lambda = eigenbases[0].Lambda if eigenbases else np.nan
    return CoarseBasis(variant=variant, k=k, Lambda=Lambda, l=l, columns=C,
                       A0=_coarse_operator(A, C))


def build_psi_global(A, eigenbases, tol_A=1e-1, block=1, chunk=256, exact=False):
    """Columns solving ``A psi = S_i phi_j`` on the whole domain.

    With ``exact`` the systems are solved by sparse factorization instead of
    the inner iteration.
    """
    n = A.shape[0]
    G = constraint_matrix(n, eigenbases)
    dtype = np.result_type(A.dtype, G.dtype)
    C = np.zeros((n, G.shape[1]), dtype=dtype)
    F = factorize(A) if exact else None
    for start in range(0, G.shape[1], chunk):
        rhs = G[:, start:start + chunk].toarray()
        C[:, start:start + chunk] = F.solve(rhs) if exact else inner_solve(
            A, rhs, tol_A=tol_A, block=block)
    return _finish("psi_global", 0, eigenbases, A, C)


def build_psibar_global(A, eigenbases):
    """Columns solving the b-system ``(A + G G^H) psibar = S_i phi_j``."""
    n = A.shape[0]
    G = constraint_matrix(n, eigenbases).toarray()
    if G.shape[1] == 0:
        return _finish("psibar_global", 0, eigenbases, A, np.zeros((n, 0), dtype=A.dtype))
    solver = LowRankShiftedSolver(factorize(A), G)
    C = solver.solve(G)
    return _finish("psibar_global", 0, eigenbases, A, C)


def economical_region_dofs(system, decomp, i, k):
    mask = np.zeros(decomp.mesh.n_elements, dtype=bool)
    mask[decomp.oversampled(i, k)] = True
    dofs = system.interior_dofs(mask)
    if len(dofs) == 0:
        raise EmptyRegion(f"oversampled region of subdomain {i} with k={k} has no dofs")
    return np.sort(dofs)


def build_economical(system, decomp, eigenbases, k, variant="psi", tol_A=1e-1):
    """Economical columns solved on ``Omega_{k,H}^{(i)}`` and zero-extended."""
    if k < 1:
        raise ValueError("economical bases need k >= 1")
    if variant not in ("psi", "psibar"):
        raise ValueError(f"unknown economical variant {variant!r}")
    A = system.A
    n = A.shape[0]
    G = constraint_matrix(n, eigenbases)
    dtype = np.result_type(A.dtype, G.dtype)
    active = [b for b in eigenbases if b.l]
    regions = [economical_region_dofs(system, decomp, b.i, k) for b in active]
    # preallocate the CSC arrays; columns are grouped by subdomain
    lengths = np.concatenate([np.full(b.l, len(R)) for b, R in zip(active, regions)]
                             + [np.zeros(0, dtype=np.int64)])
    indptr = np.concatenate([[0], np.cumsum(lengths)])
    # one index dtype for both arrays so scipy does not upcast (and copy) them
    itype = np.int32 if max(indptr[-1], n) < 2 ** 31 else np.int64
    indptr = indptr.astype(itype)
    indices = np.empty(indptr[-1], dtype=itype)
    data = np.empty(indptr[-1], dtype=dtype)
    col = 0
    for basis, R in zip(active, regions):
        own = np.arange(col, col + basis.l)
        A_RR = A[R][:, R]
        G_R = G[R]
        rhs = G_R[:, own].toarray()
        if variant == "psi":
            if len(R) <= DIRECT_DOF_LIMIT:
                X = factorize(A_RR).solve(rhs)
            else:
                X = inner_solve(A_RR, rhs, tol_A=tol_A, block=system.block_size)
        else:
            touched = np.flatnonzero(np.diff(G_R.indptr) > 0)
            solver = LowRankShiftedSolver(factorize(A_RR), G_R[:, touched].toarray())
            X = solver.solve(rhs)
        X = np.asarray(X).reshape(len(R), basis.l)
        lo, hi = indptr[col], indptr[col + basis.l]
        indices[lo:hi] = np.tile(R, basis.l)
        data[lo:hi] = X.T.ravel()
        col += basis.l
    C = sp.csc_matrix((data, indices, indptr), shape=(n, G.shape[1]))
    return _finish(f"{variant}_econ", k, eigenbases, A, C)


def energy_distances(system, decomp, eigenbases, ks, variant="psibar"):
    """``|zeta - zeta_k|_a`` for every coarse column and every ``k`` in ``ks``.

    The global reference columns are computed by direct solves. Returns
    ``(reference_energy, distances)`` with ``distances[k]`` an array over
    columns.
    """
    A = system.A
    if variant == "psi":
        ref = build_psi_global(A, eigenbases, exact=True).columns
    else:
        ref = build_psibar_global(A, eigenbases).columns
    norms = np.sqrt(np.abs(np.einsum("ij,ij->j", ref.conj(), A @ ref)))
    out = {}
    for k in ks:
        Ck = build_economical(system, decomp, eigenbases, k, variant=variant).columns
        D = ref - Ck.toarray()
        out[k] = np.sqrt(np.abs(np.einsum("ij,ij->j", D.conj(), A @ D)))
    return norms, out


def fitted_decay_ratio(ks, distances, norms, floor=1e-14):
    """Least-squares ratio ``r`` with ``e_{k+2} ~ r e_k`` per column.

    Distances below ``floor * |zeta|_a`` (region saturation) are clamped.
    """
    ks = np.asarray(ks, dtype=float)
    E = np.array([np.maximum(distances[k], floor * norms) for k in ks.astype(int)])
    logs = np.log(np.maximum(E, np.finfo(float).tiny))
    t = ks / 2.0
    tc = t - t.mean()
    slope = (tc[:, None] * (logs - logs.mean(axis=0))).sum(axis=0) / (tc ** 2).sum()
    return np.exp(slope)
