"""P1 finite elements for -div(rho grad u) = f with homogeneous Dirichlet data."""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .numerics import hermitian_part

MODELS = ("model1", "model2", "model3", "model4")

# degree-2 simplex rules: barycentric points, weights summing to 1
_QUAD2 = {
    2: (np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]]),
        np.full(3, 1 / 3)),
    3: (np.array([[0.5854101966249685, 0.1381966011250105, 0.1381966011250105, 0.1381966011250105],
                  [0.1381966011250105, 0.5854101966249685, 0.1381966011250105, 0.1381966011250105],
                  [0.1381966011250105, 0.1381966011250105, 0.5854101966249685, 0.1381966011250105],
                  [0.1381966011250105, 0.1381966011250105, 0.1381966011250105, 0.5854101966249685]]),
        np.full(4, 1 / 4)),
}


@dataclass
class CoefficientField:
    """Piecewise-constant coefficient, one value per element (centroid sampled)."""

    kind: str
    mu1: float
    mu2: float
    seed: int
    values: np.ndarray

    def __call__(self, elements=None):
        return self.values if elements is None else self.values[elements]


def _in_box(x, lo, hi):
    return np.all((x > np.asarray(lo)) & (x < np.asarray(hi)), axis=1)


def jump_regions(x):
    """Indicator of the two high-contrast regions of Models 2 and 3.

    The first region is a bar touching the boundary that contains the
    inclusion; the second is the floating inclusion ``(1/4, 1/2)^d``. In 2D
    the last coordinate is dropped.
    """
    d = x.shape[1]
    q, half = 0.25, 0.5
    cube = _in_box(x, (q,) * d, (half,) * d)
    if d == 3:
        bar = _in_box(x, (q, 0.0, 0.0), (half, half, q)) | cube
    else:
        bar = _in_box(x, (q, 0.0), (half, half)) | cube
    return bar, cube


def coefficient_field(mesh, kind="model1", mu=0.0, mu1=None, mu2=None, seed=0,
                      evaluator=None):
    """Sample one of Models 1-4 (or an arbitrary ``evaluator``) at centroids.

    Models 2 and 3 use ``rho = 10**(mu1*[x in bar] + mu2*[x in inclusion])``
    with ``(mu1, mu2) = (mu, 0)`` and ``(0, mu)`` respectively. Model 4
    draws ``log10 rho`` uniformly from ``(-mu/2, mu/2)`` per element.
    """
    centroids = mesh.dual_nodes
    if evaluator is not None:
        vals = np.asarray(evaluator(centroids), dtype=float)
        return CoefficientField("custom", np.nan, np.nan, seed, vals)
    if kind not in MODELS:
        raise ValueError(f"unknown coefficient model {kind!r}")
    if kind == "model1":
        mu1, mu2 = 0.0, 0.0
    elif kind == "model2":
        mu1, mu2 = (mu if mu1 is None else mu1), 0.0
    elif kind == "model3":
        mu1, mu2 = 0.0, (mu if mu2 is None else mu2)
    if kind == "model4":
        rng = np.random.default_rng(seed)
        expo = rng.uniform(-mu / 2, mu / 2, size=mesh.n_elements)
        return CoefficientField(kind, mu, mu, seed, 10.0 ** expo)
    bar, cube = jump_regions(centroids)
    vals = 10.0 ** (mu1 * bar + mu2 * cube)
    return CoefficientField(kind, float(mu1), float(mu2), seed, vals)


def source_term(x):
    """``d pi^2 prod_k sin(pi x_k)``; the 3D case is the standard load."""
    d = x.shape[1]
    return d * np.pi ** 2 * np.prod(np.sin(np.pi * x), axis=1)


@dataclass(eq=False)
class EllipticSystem:
    mesh: object
    rho: CoefficientField
    A: sp.csr_matrix
    rhs: np.ndarray
    free: np.ndarray
    dof_of_vertex: np.ndarray
    stiffness: np.ndarray = field(repr=False)
    mass: np.ndarray = field(repr=False)
    block_size: int = 1

    @property
    def n_dofs(self):
        return len(self.free)

    def element_dofs(self, elements):
        return self.dof_of_vertex[self.mesh.elements[elements]]

    def closed_dofs(self, decomp, i):
        """Free dofs of V_h restricted to the closed subdomain."""
        d = self.element_dofs(decomp.omega[i]).ravel()
        return np.unique(d[d >= 0])

    def interior_dofs(self, element_mask):
        """Free dofs whose every incident element lies in the region.

        These span functions supported in the region (zero on its inner
        boundary).
        """
        inc = self.mesh.incidence
        inside = np.asarray(inc.T @ element_mask.astype(np.int8)).ravel()
        degree = np.asarray(inc.sum(axis=0)).ravel()
        verts = np.flatnonzero((inside == degree) & (self.dof_of_vertex >= 0))
        return self.dof_of_vertex[verts]

    def _local(self, blocks, elements, dofs):
        loc = -np.ones(self.n_dofs, dtype=np.int64)
        loc[dofs] = np.arange(len(dofs))
        ed = self.element_dofs(elements)
        ld = np.where(ed >= 0, loc[np.maximum(ed, 0)], -1)
        nk = ed.shape[1]
        rows = np.repeat(ld, nk, axis=1).ravel()
        cols = np.tile(ld, (1, nk)).ravel()
        vals = blocks.reshape(len(elements), -1).ravel()
        keep = (rows >= 0) & (cols >= 0)
        M = sp.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=(len(dofs), len(dofs)))
        return hermitian_part(M)

    def local_a(self, decomp, i):
        """``a_i`` on the closed-subdomain dofs (natural condition on the interface)."""
        dofs = self.closed_dofs(decomp, i)
        el = decomp.omega[i]
        return dofs, self._local(self.stiffness[el] * self.rho(el)[:, None, None], el, dofs)

    def s_weights(self, decomp, pou, i):
        """Per-element weight ``rho * sum_{l in S_i} |grad theta_l|^2`` on Omega_i."""
        el = decomp.omega[i]
        w = np.zeros(len(el))
        for l in decomp.S[i]:
            g = pou.element_gradients(l, el)
            w += np.einsum("ed,ed->e", g, g)
        return self.rho(el) * w

    def local_s(self, decomp, pou, i):
        dofs = self.closed_dofs(decomp, i)
        el = decomp.omega[i]
        w = self.s_weights(decomp, pou, i)
        return dofs, self._local(self.mass[el] * w[:, None, None], el, dofs)

    def extend(self, u):
        """Free-dof vector to vertex values (zero on the Dirichlet boundary)."""
        full = np.zeros(self.mesh.n_vertices, dtype=np.asarray(u).dtype)
        full[self.free] = u
        return full

    def product_energy(self, decomp, pou, i, j, u):
        """Exact ``a_i(theta_j u, theta_j u)`` for a free-dof vector ``u``."""
        mesh = self.mesh
        el = decomp.omega[i]
        uv = self.extend(u)[mesh.elements[el]]
        tv = pou.values(j)[mesh.elements[el]]
        grads = mesh.barycentric_gradients[el]
        gu = np.einsum("ek,ekd->ed", uv, grads)
        gt = np.einsum("ek,ekd->ed", tv, grads)
        pts, wts = _QUAD2[mesh.dim]
        vol = mesh.element_measures()[el]
        total = 0.0
        for bary, w in zip(pts, wts):
            th = tv @ bary
            uu = uv @ bary
            g = th[:, None] * gu + uu[:, None] * gt
            total += w * np.sum(vol * self.rho(el) * np.einsum("ed,ed->e", g, g))
        return total


def element_matrices(mesh):
    """P1 stiffness (unit coefficient) and exact mass matrices per element."""
    grads = mesh.barycentric_gradients
    vol = mesh.element_measures()
    K = np.einsum("ekd,eld->ekl", grads, grads) * vol[:, None, None]
    nk = mesh.dim + 1
    ref = (np.ones((nk, nk)) + np.eye(nk)) / ((nk) * (nk + 1))
    Mm = vol[:, None, None] * ref[None]
    return K, Mm


def assemble_global(mesh, rho, f=source_term):
    """Assemble ``A`` and the load vector with Dirichlet dofs eliminated."""
    if mesh.convention != "elliptic":
        raise ValueError("P1 assembly needs an elliptic mesh")
    K, Mm = element_matrices(mesh)
    on_bnd = np.zeros(mesh.n_vertices, dtype=bool)
    on_bnd[mesh.boundary_vertices] = True
    free = np.flatnonzero(~on_bnd)
    dof_of_vertex = -np.ones(mesh.n_vertices, dtype=np.int64)
    dof_of_vertex[free] = np.arange(len(free))

    ed = dof_of_vertex[mesh.elements]
    nk = ed.shape[1]
    rows = np.repeat(ed, nk, axis=1).ravel()
    cols = np.tile(ed, (1, nk)).ravel()
    vals = (K * rho()[:, None, None]).ravel()
    keep = (rows >= 0) & (cols >= 0)
    A = sp.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=(len(free), len(free)))
    A = hermitian_part(A)

    pts, wts = _QUAD2[mesh.dim]
    x = mesh.vertices[mesh.elements]
    vol = mesh.element_measures()
    load = np.zeros((mesh.n_elements, nk))
    for bary, w in zip(pts, wts):
        xq = np.einsum("k,ekd->ed", bary, x)
        load += w * (vol * f(xq))[:, None] * bary[None, :]
    rhs = np.zeros(len(free))
    mask = ed >= 0
    np.add.at(rhs, ed[mask], load[mask])

    return EllipticSystem(mesh=mesh, rho=rho, A=A, rhs=rhs, free=free,
                          dof_of_vertex=dof_of_vertex, stiffness=K, mass=Mm)


def assemble_local_a(system, decomp, i):
    return system.local_a(decomp, i)


def assemble_local_s(system, decomp, pou, i):
    return system.local_s(decomp, pou, i)
