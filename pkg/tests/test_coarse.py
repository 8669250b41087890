import json
import logging

import numpy as np
import pytest
import scipy.io
import scipy.linalg as la
from hypothesis import given, settings
from hypothesis import strategies as st

from spectral_schwarz.coarse import (
    build_economical,
    build_eigenbases,
    build_psi_global,
    build_psibar_global,
    constraint_matrix,
    economical_region_dofs,
    fitted_decay_ratio,
    project_pi,
    solve_local_gep,
)
from spectral_schwarz.errors import NotPositiveDefinite

from conftest import elliptic_problem


def cholesky_pencil_oracle(a, s):
    """Eigenvalues mu of a x = mu (a+s) x via an explicit inverse Cholesky factor."""
    L = np.linalg.cholesky(a + s)
    Li = np.linalg.inv(L)
    return np.sort(np.linalg.eigvalsh(Li @ a @ Li.conj().T))


def lam_from_mu(mu):
    with np.errstate(divide="ignore"):
        return np.where(mu <= 1e-12, np.inf, (1 - mu) / mu)


@pytest.fixture(scope="module")
def psi_setup():
    # 121 dofs, six coarse columns
    p = elliptic_problem(2, 3, 4, model="model2", mu=4.0)
    bases = build_eigenbases(p.system, p.decomp, p.pou, p.Lambda)
    psi = build_psi_global(p.system.A, bases, exact=True)
    return p, bases, psi


def a_projection(A, basis, u):
    C = basis.columns
    C = C.toarray() if hasattr(C, "toarray") else C
    return C @ la.solve(basis.A0, C.conj().T @ (A @ u))


def test_eigenvalues_match_cholesky_oracle(toy2d):
    sysm, dec, pou = toy2d.system, toy2d.decomp, toy2d.pou
    for i in (0, 5):
        dofs, a = sysm.local_a(dec, i)
        _, s = sysm.local_s(dec, pou, i)
        basis = solve_local_gep(a, s, toy2d.Lambda, i=i, dofs=dofs)
        ref = lam_from_mu(np.clip(cholesky_pencil_oracle(a.toarray(), s.toarray()), 0, 1))
        fin = np.isfinite(ref)
        assert np.array_equal(fin, np.isfinite(basis.lambdas))
        assert np.allclose(basis.lambdas[fin], ref[fin], rtol=1e-8)
        assert np.all(np.diff(basis.lambdas[fin]) <= 0)


def test_selection_and_orthogonality(toy2d):
    sysm, dec, pou = toy2d.system, toy2d.decomp, toy2d.pou
    for i in range(dec.N):
        dofs, a = sysm.local_a(dec, i)
        _, s = sysm.local_s(dec, pou, i)
        b = solve_local_gep(a, s, toy2d.Lambda, i=i, dofs=dofs)
        l = b.l
        assert np.all(b.lambdas[:l] >= toy2d.Lambda)
        assert np.all(b.lambdas[l:] < toy2d.Lambda)
        P = b.phis
        Sg = P.conj().T @ (s @ P)
        Ag = P.conj().T @ (a @ P)
        assert np.abs(Sg - np.eye(l)).max(initial=0) <= 1e-8
        off = Ag - np.diag(np.diag(Ag))
        assert np.abs(off).max(initial=0) <= 1e-8
        expect = np.where(np.isfinite(b.lambdas[:l]), 1 / b.lambdas[:l], 0)
        assert np.allclose(np.diag(Ag).real, expect, atol=1e-8)


def test_interior_constant_has_infinite_eigenvalue(toy2d):
    sysm, dec, pou = toy2d.system, toy2d.decomp, toy2d.pou
    i = 5
    dofs, a = sysm.local_a(dec, i)
    _, s = sysm.local_s(dec, pou, i)
    b = solve_local_gep(a, s, toy2d.Lambda, i=i, dofs=dofs)
    assert np.isinf(b.lambdas[0])
    one = np.ones(len(dofs))
    coeff = project_pi(b, one)
    # the constant lies in the selected space
    recon = b.phis @ coeff
    assert np.allclose(recon, one, atol=1e-8)


def test_huge_threshold_keeps_only_infinite_modes(toy2d):
    sysm, dec, pou = toy2d.system, toy2d.decomp, toy2d.pou
    for i in (0, 5):
        dofs, a = sysm.local_a(dec, i)
        _, s = sysm.local_s(dec, pou, i)
        b = solve_local_gep(a, s, 1e15, i=i, dofs=dofs)
        assert b.l == np.isinf(b.lambdas).sum()
    assert solve_local_gep(*sysm.local_a(dec, 5)[1:], sysm.local_s(dec, pou, 5)[1], 1e15).l == 1


def test_indefinite_sum_rejected():
    a = np.diag([1.0, 0.0])
    s = np.diag([0.0, -1.0])
    with pytest.raises(NotPositiveDefinite):
        solve_local_gep(a, s, 2.0, i=3)


def test_degenerate_cluster_is_s_orthonormal():
    # a = 0 on a 3-dim block: every mode has lambda = inf
    a = np.zeros((3, 3))
    s = np.array([[2.0, 1.0, 0.0], [1.0, 2.0, 1.0], [0.0, 1.0, 2.0]])
    b = solve_local_gep(a, s, 5.0)
    assert b.l == 3
    assert np.allclose(b.phis.T @ s @ b.phis, np.eye(3), atol=1e-12)


def test_projection_examples(toy2d):
    sysm, dec, pou = toy2d.system, toy2d.decomp, toy2d.pou
    dofs, a = sysm.local_a(dec, 5)
    _, s = sysm.local_s(dec, pou, 5)
    b = solve_local_gep(a, s, 0.5, dofs=dofs)
    assert b.l >= 2
    assert np.allclose(project_pi(b, b.phis[:, 1]), np.eye(b.l)[1], atol=1e-10)
    v = np.random.default_rng(1).standard_normal(len(dofs))
    w = v - b.phis @ project_pi(b, v)
    assert np.abs(project_pi(b, w)).max() < 1e-10


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_projection_is_contraction_in_s(seed):
    b = _contraction_basis()
    v = np.random.default_rng(seed).standard_normal(len(b.dofs))
    c = project_pi(b, v)
    assert np.linalg.norm(c) ** 2 <= np.real(v @ (b.S @ v)) * (1 + 1e-12) + 1e-14


_cached = {}


def _contraction_basis():
    if "b" not in _cached:
        p = elliptic_problem(2, 4, 4, model="model2", mu=4.0)
        dofs, a = p.system.local_a(p.decomp, 5)
        _, s = p.system.local_s(p.decomp, p.pou, 5)
        _cached["b"] = solve_local_gep(a, s, 1.2, dofs=dofs)
    return _cached["b"]


def test_psi_global_matches_dense_solve(psi_setup):
    p, bases, _ = psi_setup
    A = p.system.A
    G = constraint_matrix(A.shape[0], bases).toarray()
    ref = np.linalg.solve(A.toarray(), G)
    for tol in (1e-1, 1e-8):
        C = build_psi_global(A, bases, tol_A=tol).columns
        res = np.linalg.norm(A @ C - G, axis=0) / np.linalg.norm(G, axis=0)
        assert res.max() <= tol
    C = build_psi_global(A, bases, tol_A=1e-12).columns
    assert np.allclose(C, ref, rtol=1e-8, atol=1e-10)


def test_psibar_matches_dense_b_matrix(psi_setup):
    p, bases, _ = psi_setup
    A = p.system.A.toarray()
    assert A.shape[0] <= 200
    G = constraint_matrix(A.shape[0], bases).toarray()
    Bmat = A + G @ G.conj().T
    ref = np.linalg.solve(Bmat, G)
    C = build_psibar_global(p.system.A, bases).columns
    assert np.allclose(C, ref, atol=1e-10 * np.abs(ref).max())
    u = np.random.default_rng(2).standard_normal((A.shape[0], 10))
    assert np.all(np.einsum("ij,ij->j", u, Bmat @ u) >= np.einsum("ij,ij->j", u, A @ u))


def test_psi_and_psibar_span_the_same_space(psi_setup, rng):
    p, bases, psi = psi_setup
    A = p.system.A
    bar = build_psibar_global(A, bases)
    for _ in range(5):
        u = rng.standard_normal(A.shape[0])
        x, y = a_projection(A, psi, u), a_projection(A, bar, u)
        assert np.linalg.norm(x - y) <= 1e-6 * np.linalg.norm(x)


def test_coarse_correction_is_s_orthogonal(psi_setup, rng):
    p, bases, psi = psi_setup
    A = p.system.A
    for _ in range(20):
        u = rng.standard_normal(A.shape[0])
        w = u - a_projection(A, psi, u)
        for b in bases:
            assert np.abs(project_pi(b, w[b.dofs])).max(initial=0) <= 1e-6 * np.linalg.norm(u)


def test_local_energy_bound_after_coarse_correction(psi_setup, rng):
    p, bases, psi = psi_setup
    sysm, dec, pou = p.system, p.decomp, p.pou
    A = sysm.A
    forms = [(sysm.local_a(dec, i)[1], sysm.local_s(dec, pou, i)[1]) for i in range(dec.N)]
    for _ in range(100):
        u = rng.standard_normal(A.shape[0])
        w = u - a_projection(A, psi, u)
        for b, (a, s) in zip(bases, forms):
            v = w[b.dofs]
            assert v @ (s @ v) <= p.Lambda * (v @ (a @ v)) * (1 + 1e-6)


def test_coarse_operator_hermitian(psi_setup):
    _, _, psi = psi_setup
    A0 = psi.A0
    assert np.abs(A0 - A0.conj().T).max() <= 1e-10 * np.abs(A0).max()
    assert np.linalg.eigvalsh(A0).min() > 0
    assert psi.coarse_dim == sum(psi.l)


@pytest.mark.parametrize("variant", ["psi", "psibar"])
def test_economical_saturates_to_global(toy2d, variant):
    sysm, dec, pou = toy2d.system, toy2d.decomp, toy2d.pou
    bases = build_eigenbases(sysm, dec, pou, toy2d.Lambda)
    k = 4
    for i in range(dec.N):
        assert len(dec.oversampled(i, k)) == toy2d.mesh.n_elements
    econ = build_economical(sysm, dec, bases, k, variant=variant).columns.toarray()
    if variant == "psi":
        ref = build_psi_global(sysm.A, bases, exact=True).columns
    else:
        ref = build_psibar_global(sysm.A, bases).columns
    assert np.allclose(econ, ref, atol=1e-9 * np.abs(ref).max())


@pytest.mark.parametrize("variant", ["psi", "psibar"])
def test_economical_support(toy2d, variant):
    sysm, dec, pou = toy2d.system, toy2d.decomp, toy2d.pou
    bases = build_eigenbases(sysm, dec, pou, toy2d.Lambda)
    basis = build_economical(sysm, dec, bases, 1, variant=variant)
    C = basis.columns.tocsc()
    col = 0
    for b in bases:
        region = set(economical_region_dofs(sysm, dec, b.i, 1).tolist())
        for j in range(col, col + b.l):
            rows = C.indices[C.indptr[j]:C.indptr[j + 1]]
            assert set(rows.tolist()) <= region
        col += b.l
    A0 = basis.A0
    assert np.abs(A0 - A0.conj().T).max() <= 1e-10 * np.abs(A0).max()
    with pytest.raises(ValueError):
        build_economical(sysm, dec, bases, 0)


def test_empty_coarse_space(toy2d_small, caplog):
    p = toy2d_small
    # every subdomain of a 2x2 split touches the Dirichlet boundary, so no infinite modes
    bases = build_eigenbases(p.system, p.decomp, p.pou, 1e15)
    assert sum(b.l for b in bases) == 0
    with caplog.at_level(logging.WARNING):
        psi = build_psi_global(p.system.A, bases)
    assert psi.A0.shape == (0, 0)
    assert "one level" in caplog.text
    assert build_psibar_global(p.system.A, bases).coarse_dim == 0
    r = np.ones(p.system.n_dofs)
    assert np.all(psi.apply(r) == 0)


def test_export_round_trip(psi_setup, tmp_path):
    _, _, psi = psi_setup
    prefix = str(tmp_path / "coarse")
    psi.export(prefix)
    C = scipy.io.mmread(prefix + ".mtx")
    assert np.allclose(C, psi.columns)
    manifest = json.loads((tmp_path / "coarse.json").read_text())
    assert manifest["variant"] == "psi_global"
    assert manifest["coarse_dim"] == psi.coarse_dim
    assert manifest["l_i"] == list(psi.l)
    assert set(manifest) == {"variant", "k", "Lambda", "l_i", "coarse_dim"}


def test_fitted_decay_ratio_on_geometric_data():
    ks = [2, 4, 6]
    norms = np.ones(3)
    dist = {k: np.array([0.5, 0.1, 0.9]) ** (k / 2) for k in ks}
    assert np.allclose(fitted_decay_ratio(ks, dist, norms), [0.5, 0.1, 0.9])
    # saturated columns are clamped rather than producing log(0)
    dist[6] = np.zeros(3)
    r = fitted_decay_ratio(ks, dist, norms)
    assert np.all(np.isfinite(r)) and np.all(r < 1)
