import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spectral_schwarz.mesh import build_structured_mesh
from spectral_schwarz.partition import build_decomposition, build_dual_pou, build_nodal_pou


def test_elliptic_mesh_counts():
    mesh = build_structured_mesh(2, 1, 2)
    assert mesh.n_vertices == 9
    assert mesh.n_elements == 8
    mesh3 = build_structured_mesh(3, 2, 2)
    assert mesh3.n_elements == 6 * 4 ** 3
    assert np.allclose(mesh3.element_measures().sum(), 1.0)
    assert np.allclose(mesh3.h, 0.25)


def test_pwls_mesh_has_interfaces_through_elements():
    mesh = build_structured_mesh(2, 3, 4, "pwls")
    assert mesh.cells_per_axis == (13, 13)
    assert mesh.n_elements == 169
    # no subdomain interface coincides with an element edge
    H, h = mesh.H[0], mesh.h[0]
    for a in range(1, 3):
        assert abs(a * H / h - round(a * H / h)) > 0.1


def test_pwls_rectangle_is_isotropic():
    mesh = build_structured_mesh(2, 4, 8, "pwls", lengths=(2.0, 1.0))
    assert mesh.subdomains_per_axis == (8, 4)
    assert np.allclose(mesh.h[0], mesh.h[1])


@pytest.mark.parametrize("args", [(1, 2, 2), (4, 2, 2), (2, 0, 2), (2, 2, -1)])
def test_invalid_mesh_arguments(args):
    with pytest.raises(ValueError):
        build_structured_mesh(*args)


def test_pwls_requires_two_dimensions():
    with pytest.raises(ValueError):
        build_structured_mesh(3, 2, 2, "pwls")


def test_facets_are_conforming():
    mesh = build_structured_mesh(3, 2, 2)
    interior, boundary = mesh.facets()
    # each tetrahedron has four faces
    assert 2 * len(interior) + len(boundary) == 4 * mesh.n_elements
    # boundary faces tile the surface of the unit cube: 6 sides x 2 triangles x 16 cells
    assert len(boundary) == 6 * 2 * 16


def test_decomposition_partitions_elements():
    mesh = build_structured_mesh(2, 4, 3)
    dec = build_decomposition(mesh, l=1)
    allel = np.concatenate(dec.omega)
    assert len(allel) == mesh.n_elements
    assert len(np.unique(allel)) == mesh.n_elements
    assert dec.N == 16
    assert dec.M == 9
    for i in range(dec.N):
        assert set(dec.omega[i]) <= set(dec.overlap[i])


def test_overlap_width_grows_with_layers():
    mesh = build_structured_mesh(2, 2, 4)
    one = build_decomposition(mesh, l=1)
    two = build_decomposition(mesh, l=2)
    # a quarter subdomain of 4x4 cells grows to 5x5 and 6x6 cells
    assert len(one.overlap[0]) == 2 * 25
    assert len(two.overlap[0]) == 2 * 36


def test_oversampled_regions():
    mesh = build_structured_mesh(2, 4, 2)
    dec = build_decomposition(mesh, l=1)
    assert len(dec.oversampled_subdomains(0, 1)) == 4
    assert len(dec.oversampled_subdomains(5, 1)) == 9
    assert len(dec.oversampled(5, 3)) == mesh.n_elements
    with pytest.raises(ValueError):
        dec.oversampled(0, -1)


def test_pwls_closed_subdomain_includes_cut_elements():
    mesh = build_structured_mesh(2, 3, 4, "pwls")
    dec = build_decomposition(mesh, l=1)
    strict = 0
    for i in range(dec.N):
        assert set(dec.omega[i]) <= set(dec.omega_closed[i])
        strict += len(dec.omega_closed[i]) > len(dec.omega[i])
    # only the central subdomain has no cut elements on a 3x3 split of 13x13
    assert strict == dec.N - 1


@pytest.mark.parametrize("dim,n,l", [(2, 2, 1), (2, 4, 2), (3, 2, 2), (3, 4, 1)])
def test_nodal_pou_sums_to_one(dim, n, l):
    mesh = build_structured_mesh(dim, n, 2)
    dec = build_decomposition(mesh, l)
    pou = build_nodal_pou(mesh, dec)
    total = np.asarray(pou.theta.sum(axis=0)).ravel()
    assert np.abs(total - 1).max() <= 1e-12
    assert pou.theta.min() >= 0


def test_nodal_pou_support_inside_overlap():
    mesh = build_structured_mesh(2, 4, 3)
    dec = build_decomposition(mesh, 1)
    pou = build_nodal_pou(mesh, dec)
    for i in range(dec.N):
        support = np.flatnonzero(pou.values(i) > 0)
        allowed = np.unique(mesh.elements[dec.overlap[i]])
        assert set(support) <= set(allowed)
        # theta_i vanishes on the interior boundary of the overlap
        inside = np.zeros(mesh.n_elements, dtype=bool)
        inside[dec.overlap[i]] = True
        touched = np.asarray(mesh.incidence.T @ inside.astype(int)).ravel()
        degree = np.asarray(mesh.incidence.sum(axis=0)).ravel()
        interface = (touched > 0) & (touched < degree)
        on_bnd = np.zeros(mesh.n_vertices, dtype=bool)
        on_bnd[mesh.boundary_vertices] = True
        assert np.all(pou.values(i)[interface & ~on_bnd] == 0)


def test_nodal_pou_flat_on_subdomain_core():
    mesh = build_structured_mesh(2, 3, 6)
    dec = build_decomposition(mesh, 1)
    pou = build_nodal_pou(mesh, dec)
    centre = 4
    # the middle subdomain's centre vertex is covered only by itself
    x = np.array([0.5, 0.5])
    v = np.flatnonzero(np.all(np.isclose(mesh.vertices, x), axis=1))[0]
    assert pou.values(centre)[v] == 1.0


@settings(max_examples=15, deadline=None)
@given(n=st.integers(2, 4), m=st.integers(2, 4), l=st.integers(1, 2))
def test_dual_pou_sums_to_one_pointwise(n, m, l):
    mesh = build_structured_mesh(2, n, m, "pwls")
    dec = build_decomposition(mesh, l)
    pou = build_dual_pou(mesh, dec)
    pts = np.random.default_rng(n * 100 + m * 10 + l).uniform(0, 1, size=(200, 2))
    total = sum(pou.evaluate(i, pts) for i in range(dec.N))
    assert np.abs(total - 1).max() <= 1e-12
    grad = sum(pou.gradient(i, pts) for i in range(dec.N))
    assert np.abs(grad).max() <= 1e-9


def test_dual_pou_gradient_matches_finite_differences():
    mesh = build_structured_mesh(2, 3, 4, "pwls")
    dec = build_decomposition(mesh, 1)
    pou = build_dual_pou(mesh, dec)
    pts = np.random.default_rng(1).uniform(0.05, 0.95, size=(50, 2))
    eps = 1e-7
    for i in (0, 4):
        g = pou.gradient(i, pts)
        fx = (pou.evaluate(i, pts + [eps, 0]) - pou.evaluate(i, pts - [eps, 0])) / (2 * eps)
        fy = (pou.evaluate(i, pts + [0, eps]) - pou.evaluate(i, pts - [0, eps])) / (2 * eps)
        # the median tolerates points that straddle a dual-cell edge
        assert np.median(np.abs(g[:, 0] - fx)) < 1e-5
        assert np.median(np.abs(g[:, 1] - fy)) < 1e-5


def test_dual_pou_vanishes_outside_overlap_centres():
    mesh = build_structured_mesh(2, 3, 4, "pwls")
    dec = build_decomposition(mesh, 1)
    pou = build_dual_pou(mesh, dec)
    for i in range(dec.N):
        outside = np.setdiff1d(np.arange(mesh.n_elements), dec.overlap[i])
        assert np.abs(pou.evaluate(i, mesh.dual_nodes[outside])).max() <= 1e-12


def test_kind_mismatch_rejected():
    mesh = build_structured_mesh(2, 2, 2)
    dec = build_decomposition(mesh, 1)
    with pytest.raises(ValueError):
        build_dual_pou(mesh, dec)
    pwls = build_structured_mesh(2, 2, 2, "pwls")
    with pytest.raises(ValueError):
        build_nodal_pou(pwls, build_decomposition(pwls, 1))
