"""Domain decompositions and partitions of unity on structured meshes."""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


def _element_subdomain_multi(mesh):
    """Per-axis subdomain index of every element."""
    if mesh.convention == "elliptic":
        return mesh.cells // mesh.m
    out = np.empty_like(mesh.cells)
    for d, (ns, ne) in enumerate(zip(mesh.subdomains_per_axis, mesh.cells_per_axis)):
        # centroid/H = (2e+1) ns / (2 ne); an exact tie goes to the lower index
        q = (2 * mesh.cells[:, d] + 1) * ns
        den = 2 * ne
        idx = q // den
        idx = np.where(q % den == 0, idx - 1, idx)
        out[:, d] = np.clip(idx, 0, ns - 1)
    return out


def _linear_index(multi, shape):
    idx, stride = 0, 1
    for d, s in enumerate(shape):
        idx = idx + multi[..., d] * stride
        stride *= s
    return idx


def _grow(mesh, mask, layers):
    """Add ``layers`` rings of elements sharing a vertex with the region."""
    ev = mesh.incidence
    for _ in range(layers):
        touched = (ev.T @ mask.astype(np.int8)) > 0
        mask = (ev @ touched.astype(np.int8)) > 0
    return mask


@dataclass(eq=False)
class Decomposition:
    """Nonoverlapping, overlapping and oversampled subdomain element sets.

    Element sets are sorted ``int64`` index arrays. ``omega`` is a disjoint
    cover; ``omega_closed`` holds every element meeting the closed subdomain
    (it equals ``omega`` on simplex meshes and adds the cut elements on PWLS
    meshes); ``overlap`` is ``omega`` grown by ``l`` element layers.
    """

    mesh: object
    l: int
    K: int
    grid_shape: tuple
    subdomain_multi: np.ndarray
    element_subdomain: np.ndarray
    omega: list
    omega_closed: list
    overlap: list
    S: list
    degenerate: bool = False
    _oversampled: dict = field(default_factory=dict, repr=False)

    @property
    def N(self):
        return len(self.omega)

    @property
    def M(self):
        return max(len(s) for s in self.S)

    def oversampled(self, i, k):
        """Elements of Omega_i grown by ``k`` layers of neighbouring subdomains."""
        if k < 0:
            raise ValueError("k must be nonnegative")
        key = (i, k)
        if key not in self._oversampled:
            dist = np.abs(self.subdomain_multi - self.subdomain_multi[i]).max(axis=1)
            members = np.flatnonzero(dist <= k)
            self._oversampled[key] = np.sort(np.concatenate([self.omega[j] for j in members]))
        return self._oversampled[key]

    def oversampled_subdomains(self, i, k):
        dist = np.abs(self.subdomain_multi - self.subdomain_multi[i]).max(axis=1)
        return np.flatnonzero(dist <= k)

    def overlap_mask(self, i):
        mask = np.zeros(self.mesh.n_elements, dtype=bool)
        mask[self.overlap[i]] = True
        return mask


def build_decomposition(mesh, l=1, K=0):
    """Decompose ``mesh`` into its ``n(m)`` subdomains with ``l`` overlap layers."""
    if l < 1:
        raise ValueError("overlap needs at least one layer")
    if K < 0:
        raise ValueError("K must be nonnegative")
    shape = tuple(mesh.subdomains_per_axis)
    multi = _element_subdomain_multi(mesh)
    owner = _linear_index(multi, shape)
    N = int(np.prod(shape))
    order = np.argsort(owner, kind="stable")
    bounds = np.searchsorted(owner[order], np.arange(N + 1))
    omega = [np.sort(order[bounds[i]:bounds[i + 1]]) for i in range(N)]

    sub_multi = np.column_stack([g.transpose().ravel() for g in
                                 np.meshgrid(*[np.arange(s) for s in shape], indexing="ij")])

    if mesh.convention == "pwls":
        omega_closed = []
        for i in range(N):
            keep = np.ones(mesh.n_elements, dtype=bool)
            for d, (ns, ne) in enumerate(zip(mesh.subdomains_per_axis, mesh.cells_per_axis)):
                e = mesh.cells[:, d]
                a = sub_multi[i, d]
                # element [e h, (e+1) h] meets [a H, (a+1) H]
                keep &= (e * ns < (a + 1) * ne) & ((e + 1) * ns > a * ne)
            omega_closed.append(np.flatnonzero(keep))
    else:
        omega_closed = omega

    overlap = []
    degenerate = False
    for i in range(N):
        mask = np.zeros(mesh.n_elements, dtype=bool)
        mask[omega[i]] = True
        mask = _grow(mesh, mask, l)
        overlap.append(np.flatnonzero(mask))
        if N > 1 and mask.all():
            degenerate = True

    rows = np.concatenate([np.full(len(o), i) for i, o in enumerate(overlap)])
    cols = np.concatenate(overlap)
    P = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(N, mesh.n_elements))
    G = (P @ P.T).tocsr()
    S = [np.sort(G.indices[G.indptr[i]:G.indptr[i + 1]]) for i in range(N)]

    return Decomposition(mesh=mesh, l=l, K=K, grid_shape=shape, subdomain_multi=sub_multi,
                         element_subdomain=owner, omega=omega, omega_closed=omega_closed,
                         overlap=overlap, S=S, degenerate=degenerate)


@dataclass(eq=False)
class PartitionOfUnity:
    """Partition of unity ``theta_i`` stored as a sparse ``N x nodes`` matrix.

    For the ``nodal`` kind the nodes are mesh vertices and each ``theta_i``
    is the P1 interpolant; for the ``dual`` kind the nodes are element
    midpoints and ``theta_i`` is bilinear on the dual grid, extended as a
    constant in the normal direction between the outermost midpoints and the
    boundary.
    """

    kind: str
    mesh: object
    theta: sp.csr_matrix

    def values(self, i):
        return np.asarray(self.theta[i].todense()).ravel()

    def element_gradients(self, l, elements):
        """Constant gradient of the nodal ``theta_l`` on each given element."""
        if self.kind != "nodal":
            raise ValueError("element gradients are defined for the nodal kind")
        th = self.values(l)
        grads = self.mesh.barycentric_gradients[elements]
        return np.einsum("ek,ekd->ed", th[self.mesh.elements[elements]], grads)

    def _dual_cell(self, points):
        mesh = self.mesh
        h = np.asarray(mesh.h)
        ncell = np.asarray(mesh.cells_per_axis)
        # dual-grid coordinate: 0 at the first midpoint, one unit per element
        t = points / h - 0.5
        clamped = (t < 0) | (t > ncell - 1)
        t = np.clip(t, 0, ncell - 1)
        cell = np.minimum(np.floor(t).astype(np.int64), np.maximum(ncell - 2, 0))
        frac = t - cell
        return cell, frac, clamped

    def _dual_corners(self, l, points):
        th = self.values(l).reshape(self.mesh.cells_per_axis[::-1])  # [iy, ix]
        cell, frac, clamped = self._dual_cell(points)
        ex, ey = self.mesh.cells_per_axis
        ix0, iy0 = cell[:, 0], cell[:, 1]
        ix1, iy1 = np.minimum(ix0 + 1, ex - 1), np.minimum(iy0 + 1, ey - 1)
        c = (th[iy0, ix0], th[iy0, ix1], th[iy1, ix0], th[iy1, ix1])
        return c, frac, clamped

    def evaluate(self, l, points):
        """Value of the dual ``theta_l`` at arbitrary points."""
        if self.kind != "dual":
            raise ValueError("pointwise evaluation is implemented for the dual kind")
        (c00, c10, c01, c11), (fx, fy), _ = self._unpack(*self._dual_corners(l, points))
        return (c00 * (1 - fx) * (1 - fy) + c10 * fx * (1 - fy)
                + c01 * (1 - fx) * fy + c11 * fx * fy)

    def gradient(self, l, points):
        """Gradient of the dual ``theta_l`` at arbitrary points, shape (n, 2)."""
        if self.kind != "dual":
            raise ValueError("pointwise gradients are implemented for the dual kind")
        (c00, c10, c01, c11), (fx, fy), clamped = self._unpack(*self._dual_corners(l, points))
        hx, hy = self.mesh.h
        gx = ((c10 - c00) * (1 - fy) + (c11 - c01) * fy) / hx
        gy = ((c01 - c00) * (1 - fx) + (c11 - c10) * fx) / hy
        gx = np.where(clamped[:, 0], 0.0, gx)
        gy = np.where(clamped[:, 1], 0.0, gy)
        return np.column_stack([gx, gy])

    @staticmethod
    def _unpack(corners, frac, clamped):
        return corners, (frac[:, 0], frac[:, 1]), clamped


def _normalise(member):
    member = member.tocsr().astype(float)
    count = np.asarray(member.sum(axis=0)).ravel()
    if np.any(count == 0):
        raise AssertionError("a node is covered by no overlapping subdomain")
    return (member @ sp.diags(1.0 / count)).tocsr()


def build_nodal_pou(mesh, decomp):
    """P1 partition of unity with nodal values ``1/|N_x|``."""
    if mesh.convention != "elliptic":
        raise ValueError("the nodal partition of unity needs an elliptic mesh")
    N = decomp.N
    rows = np.concatenate([np.full(len(o), i) for i, o in enumerate(decomp.overlap)])
    cols = np.concatenate(decomp.overlap)
    P = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(N, mesh.n_elements))
    counts = (P @ mesh.incidence.astype(float)).tocsr()  # incident elements inside
    degree = np.asarray(mesh.incidence.sum(axis=0)).ravel()
    on_bnd = np.zeros(mesh.n_vertices, dtype=bool)
    on_bnd[mesh.boundary_vertices] = True
    coo = counts.tocoo()
    # interior vertex: every incident element in Omega'_i (x in the open set);
    # boundary vertex: any incident element in Omega'_i (x on dOmega'_i cap dOmega)
    keep = np.where(on_bnd[coo.col], coo.data > 0, np.isclose(coo.data, degree[coo.col]))
    member = sp.csr_matrix((np.ones(keep.sum()), (coo.row[keep], coo.col[keep])),
                           shape=(N, mesh.n_vertices))
    return PartitionOfUnity(kind="nodal", mesh=mesh, theta=_normalise(member))


def build_dual_pou(mesh, decomp):
    """Bilinear dual-grid partition of unity with midpoint values ``1/|N_x|``."""
    if mesh.convention != "pwls":
        raise ValueError("the dual partition of unity needs a pwls mesh")
    N = decomp.N
    rows = np.concatenate([np.full(len(o), i) for i, o in enumerate(decomp.overlap)])
    cols = np.concatenate(decomp.overlap)
    member = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(N, mesh.n_elements))
    return PartitionOfUnity(kind="dual", mesh=mesh, theta=_normalise(member))
