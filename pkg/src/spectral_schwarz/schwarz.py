"""Additive one- and two-level overlapping Schwarz preconditioners."""

from dataclasses import dataclass, field

import numpy as np

from .errors import NotPositiveDefinite
from .numerics import factorize


@dataclass(eq=False)
class SchwarzPreconditioner:
    """``B^{-1} r = sum_j E_j A_j^{-1} E_j^T r + C A0^{-1} C^H r``.

    ``local_dofs[j]`` lists the dofs spanning ``V_h(Omega'_j)``; the local
    blocks are principal submatrices of ``A``.
    """

    local_dofs: list
    factors: list = field(repr=False)
    coarse: object = None
    n: int = 0

    @property
    def level(self):
        return "two" if self.coarse is not None and self.coarse.coarse_dim else "one"

    @classmethod
    def build(cls, A, local_dofs, coarse=None):
        factors = []
        for j, dofs in enumerate(local_dofs):
            try:
                factors.append(factorize(A[dofs][:, dofs]))
            except NotPositiveDefinite as exc:
                raise NotPositiveDefinite(f"local matrix of subdomain {j} is not HPD") from exc
        if coarse is not None:
            coarse.factor()
        return cls(local_dofs=[np.asarray(d) for d in local_dofs], factors=factors,
                   coarse=coarse, n=A.shape[0])

    def apply(self, r):
        r = np.asarray(r)
        dtype = np.result_type(r.dtype, *(f.dtype for f in self.factors))
        z = np.zeros(r.shape, dtype=dtype)
        for dofs, F in zip(self.local_dofs, self.factors):
            z[dofs] += F.solve(r[dofs])
        if self.coarse is not None:
            z += self.coarse.apply(r)
        return z

    __call__ = apply

    def matrix(self):
        """Dense ``B^{-1}`` (small problems only)."""
        return self.apply(np.eye(self.n))


def local_dofs(system, decomp):
    """Dofs of ``V_h(Omega'_j)`` for every overlapping subdomain."""
    return [np.sort(system.interior_dofs(decomp.overlap_mask(j))) for j in range(decomp.N)]


def build_schwarz(system, decomp, coarse=None):
    return SchwarzPreconditioner.build(system.A, local_dofs(system, decomp), coarse)
