"""Preconditioned conjugate gradients with Lanczos condition estimates."""

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from .errors import BreakdownNonpositiveCurvature, InsufficientData, MaxIterations


@dataclass
class PcgReport:
    iterations: int = 0
    converged: bool = False
    relres_history: list = field(default_factory=list)
    alphas: list = field(default_factory=list)
    betas: list = field(default_factory=list)
    solve_seconds: float = 0.0
    lambda_min_est: float = np.nan
    lambda_max_est: float = np.nan
    cond_est: float = np.nan

    @property
    def relres(self):
        return self.relres_history[-1] if self.relres_history else 0.0


def _apply(P, r):
    if P is None:
        return r.copy()
    if hasattr(P, "apply"):
        return P.apply(r)
    return P(r)


def pcg_solve(A, P, f, tol=1e-6, max_it=1000, raise_on_max=False):
    """Solve ``A u = f`` from a zero initial guess.

    Stops once ``|r_k| / |f| <= tol`` in the Euclidean norm. ``P`` is the
    preconditioner (object with ``apply``, a callable, or ``None``). When
    ``max_it`` is hit the last iterate is returned with ``converged=False``
    unless ``raise_on_max`` is set.
    """
    f = np.asarray(f)
    report = PcgReport()
    start = time.perf_counter()
    x = np.zeros_like(f, dtype=np.result_type(f.dtype, A.dtype))
    fnorm = np.linalg.norm(f)
    if fnorm == 0:
        report.converged = True
        report.solve_seconds = time.perf_counter() - start
        return x, report
    r = f.astype(x.dtype, copy=True)
    z = _apply(P, r)
    rz = np.vdot(r, z).real
    if rz <= 0:
        raise BreakdownNonpositiveCurvature("preconditioner is not positive definite")
    p = z.copy()
    for _ in range(max_it):
        Ap = A @ p
        pAp = np.vdot(p, Ap).real
        if pAp <= 0:
            raise BreakdownNonpositiveCurvature(f"p^H A p = {pAp:.3e} at iteration "
                                                f"{report.iterations + 1}")
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        report.iterations += 1
        report.alphas.append(alpha)
        relres = np.linalg.norm(r) / fnorm
        report.relres_history.append(relres)
        if relres <= tol:
            report.converged = True
            break
        z = _apply(P, r)
        rz_new = np.vdot(r, z).real
        if rz_new <= 0:
            raise BreakdownNonpositiveCurvature("preconditioner is not positive definite")
        beta = rz_new / rz
        report.betas.append(beta)
        p = z + beta * p
        rz = rz_new
    report.solve_seconds = time.perf_counter() - start
    if report.iterations:
        report.lambda_min_est, report.lambda_max_est, report.cond_est = estimate_condition(report)
    if not report.converged and raise_on_max:
        raise MaxIterations(f"PCG did not reach {tol:g} in {max_it} iterations",
                            iterations=report.iterations, relres=report.relres)
    return x, report


def lanczos_matrix(alphas, betas):
    """Tridiagonal Lanczos matrix of the preconditioned operator from CG coefficients."""
    a = np.asarray(alphas, dtype=float)
    b = np.asarray(betas, dtype=float)[: len(a) - 1]
    diag = 1.0 / a
    diag[1:] += b / a[:-1]
    off = np.sqrt(b) / a[:-1]
    return diag, off


def estimate_condition(report):
    """Extreme Ritz values of the Lanczos matrix and their ratio."""
    if report.iterations < 1 or not report.alphas:
        raise InsufficientData("no CG iterations recorded")
    diag, off = lanczos_matrix(report.alphas, report.betas)
    ev = la.eigvalsh_tridiagonal(diag, off) if len(diag) > 1 else diag
    lmin, lmax = float(ev.min()), float(ev.max())
    return lmin, lmax, lmax / lmin
