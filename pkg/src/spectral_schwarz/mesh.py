"""Structured meshes for the elliptic (simplex) and PWLS (quad) front-ends.

Elliptic meshes follow the ``n(m)`` convention on the unit box: ``n``
subdomains per axis, ``m`` elements per subdomain per axis, ``h = 1/(nm)``.
Every cube cell is split into simplices by the Kuhn triangulation (2
triangles in 2D, 6 tetrahedra in 3D), which is conforming across cells.

PWLS meshes are uniform quadrilateral grids with ``n*m + 1`` elements along
the shortest box side, so that subdomain interfaces at multiples of ``H``
pass through element interiors.
"""

from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from itertools import permutations

import numpy as np
import scipy.sparse as sp

CONVENTIONS = ("elliptic", "pwls")


@dataclass(frozen=True, eq=False)
class StructuredMesh:
    dim: int
    n: int
    m: int
    convention: str
    lengths: tuple
    cells_per_axis: tuple
    subdomains_per_axis: tuple
    vertices: np.ndarray
    elements: np.ndarray
    # grid multi-index (one per axis) of the cube/quad cell holding each element
    cells: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_elements(self):
        return len(self.elements)

    @property
    def h(self):
        return tuple(L / c for L, c in zip(self.lengths, self.cells_per_axis))

    @property
    def H(self):
        return tuple(L / s for L, s in zip(self.lengths, self.subdomains_per_axis))

    @cached_property
    def dual_nodes(self):
        """Element midpoints (the nodes of the dual partition)."""
        return self.vertices[self.elements].mean(axis=1)

    @cached_property
    def incidence(self):
        """Sparse element-by-vertex incidence matrix (bool-valued CSR)."""
        ne, nk = self.elements.shape
        rows = np.repeat(np.arange(ne), nk)
        data = np.ones(ne * nk, dtype=np.int8)
        return sp.csr_matrix((data, (rows, self.elements.ravel())),
                             shape=(ne, self.n_vertices))

    @cached_property
    def boundary_vertices(self):
        x = self.vertices
        lo = np.isclose(x, 0.0, atol=1e-12 * max(self.lengths))
        hi = np.isclose(x, np.asarray(self.lengths), atol=1e-12 * max(self.lengths))
        return np.flatnonzero((lo | hi).any(axis=1))

    def facets(self):
        """Return ``(interior, boundary)`` facet incidence.

        ``interior`` is an ``(nf, 2)`` array of element pairs sharing a facet,
        ``boundary`` lists the element owning each boundary facet (an element
        appears once per boundary facet it owns).
        """
        if "facets" in self._cache:
            return self._cache["facets"]
        if self.convention == "elliptic":
            keys, owners = [], []
            nk = self.elements.shape[1]
            for drop in range(nk):
                cols = [c for c in range(nk) if c != drop]
                keys.append(np.sort(self.elements[:, cols], axis=1))
                owners.append(np.arange(self.n_elements))
            keys = np.concatenate(keys)
            owners = np.concatenate(owners)
            _, inv, counts = np.unique(keys, axis=0, return_inverse=True,
                                       return_counts=True)
            inv = inv.ravel()
            order = np.argsort(inv, kind="stable")
            sorted_inv = inv[order]
            starts = np.flatnonzero(np.r_[True, sorted_inv[1:] != sorted_inv[:-1]])
            c = counts[sorted_inv[starts]]
            if np.any(c > 2):
                raise AssertionError("non-conforming facet with more than two owners")
            two = starts[c == 2]
            pairs = np.column_stack([owners[order[two]], owners[order[two + 1]]])
            bnd = owners[order[starts[c == 1]]]
            result = (np.array(pairs, dtype=np.int64).reshape(-1, 2),
                      np.array(bnd, dtype=np.int64))
        else:
            faces = self.grid_faces()
            result = (faces["interior"][:, :2], faces["boundary"][:, 0])
        self._cache["facets"] = result
        return result

    def grid_faces(self):
        """Face lists of a PWLS quad grid.

        ``interior`` rows are ``(k, j, axis)`` with ``j`` the ``+axis``
        neighbour of ``k``; ``boundary`` rows are ``(k, axis, side)`` with
        ``side`` 0 for the low face and 1 for the high face.
        """
        if self.convention != "pwls":
            raise ValueError("grid_faces is defined for pwls meshes only")
        if "grid_faces" in self._cache:
            return self._cache["grid_faces"]
        ex, ey = self.cells_per_axis
        idx = np.arange(ex * ey).reshape(ey, ex)  # idx[iy, ix]
        interior = [
            np.column_stack([idx[:, :-1].ravel(), idx[:, 1:].ravel(),
                             np.zeros(ey * (ex - 1), dtype=np.int64)]),
            np.column_stack([idx[:-1, :].ravel(), idx[1:, :].ravel(),
                             np.ones((ey - 1) * ex, dtype=np.int64)]),
        ]
        boundary = [
            np.column_stack([idx[:, 0], np.zeros(ey, int), np.zeros(ey, int)]),
            np.column_stack([idx[:, -1], np.zeros(ey, int), np.ones(ey, int)]),
            np.column_stack([idx[0, :], np.ones(ex, int), np.zeros(ex, int)]),
            np.column_stack([idx[-1, :], np.ones(ex, int), np.ones(ex, int)]),
        ]
        out = {"interior": np.concatenate(interior).astype(np.int64),
               "boundary": np.concatenate(boundary).astype(np.int64)}
        self._cache["grid_faces"] = out
        return out

    @cached_property
    def barycentric_gradients(self):
        """Gradients of the P1 hat functions, shape ``(ne, dim+1, dim)``."""
        if self.convention != "elliptic":
            raise ValueError("barycentric gradients need a simplex mesh")
        x = self.vertices[self.elements]
        jac = np.swapaxes(x[:, 1:, :] - x[:, :1, :], 1, 2)  # columns x_k - x_0
        inv = np.linalg.inv(jac)  # rows are grad(lambda_k), k >= 1
        g0 = -inv.sum(axis=1, keepdims=True)
        return np.concatenate([g0, inv], axis=1)

    def element_measures(self):
        if self.convention == "pwls":
            return np.full(self.n_elements, float(np.prod(self.h)))
        x = self.vertices[self.elements]
        jac = x[:, 1:, :] - x[:, :1, :]
        fact = 2.0 if self.dim == 2 else 6.0
        return np.abs(np.linalg.det(jac)) / fact

    def export_txt(self, path):
        """Write the plain-text ``.mesh.txt`` listing (0-based indices)."""
        with open(path, "w") as fh:
            fh.write(f"{self.dim} {self.n_vertices} {self.n_elements}\n")
            for v in self.vertices:
                fh.write(" ".join(repr(float(c)) for c in v) + "\n")
            for e in self.elements:
                fh.write(" ".join(str(int(c)) for c in e) + "\n")


def _grid_vertices(cells_per_axis, lengths):
    axes = [np.linspace(0.0, L, c + 1) for c, L in zip(cells_per_axis, lengths)]
    grids = np.meshgrid(*axes, indexing="ij")
    # vertex index = ix + (nx+1)*iy + ...: x runs fastest
    return np.column_stack([g.transpose().ravel() for g in grids])


def _vertex_index(multi, cells_per_axis):
    stride, idx = 1, 0
    for d, c in enumerate(cells_per_axis):
        idx = idx + multi[..., d] * stride
        stride *= c + 1
    return idx


def _cell_multi_indices(cells_per_axis):
    ranges = [np.arange(c) for c in cells_per_axis]
    grids = np.meshgrid(*ranges, indexing="ij")
    return np.column_stack([g.transpose().ravel() for g in grids])


def _kuhn_simplices(dim):
    """Corner offsets of the Kuhn simplices of the unit cube."""
    out = []
    for perm in permutations(range(dim)):
        corner = np.zeros(dim, dtype=np.int64)
        path = [corner.copy()]
        for axis in perm:
            corner[axis] += 1
            path.append(corner.copy())
        out.append(np.array(path))
    return out


def build_structured_mesh(dim, n, m, convention="elliptic", lengths=None):
    """Build the structured mesh ``n(m)`` in ``dim`` dimensions.

    ``lengths`` (PWLS only) gives the box extents; every side must be an
    integer multiple of the shortest one, which receives ``n`` subdomains.
    """
    if dim not in (2, 3):
        raise ValueError(f"dim must be 2 or 3, got {dim}")
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown convention {convention!r}")
    if n < 1 or m < 1:
        raise ValueError("n and m must be positive")
    if convention == "pwls" and dim != 2:
        raise ValueError("PWLS meshes are two-dimensional only")

    if convention == "elliptic":
        if lengths is not None and tuple(lengths) != (1.0,) * dim:
            raise ValueError("elliptic meshes live on the unit box")
        lengths = (1.0,) * dim
        subs = (n,) * dim
        cells_per_axis = (n * m,) * dim
        vertices = _grid_vertices(cells_per_axis, lengths)
        cells = _cell_multi_indices(cells_per_axis)
        elements, owners = [], []
        for simplex in _kuhn_simplices(dim):
            corners = cells[:, None, :] + simplex[None, :, :]
            elements.append(_vertex_index(corners, cells_per_axis))
            owners.append(cells)
        # interleave so that the simplices of one cell are contiguous
        elements = np.stack(elements, axis=1).reshape(-1, dim + 1)
        cells = np.stack(owners, axis=1).reshape(-1, dim)
    else:
        lengths = tuple(float(L) for L in (lengths or (1.0, 1.0)))
        if len(lengths) != 2:
            raise ValueError("PWLS box needs two extents")
        short = min(lengths)
        ratios = []
        for L in lengths:
            r = Fraction(L / short).limit_denominator(1000)
            if r.denominator != 1:
                raise ValueError("box sides must be integer multiples of the shortest")
            ratios.append(int(r))
        subs = tuple(n * r for r in ratios)
        cells_per_axis = tuple(r * (n * m + 1) for r in ratios)
        vertices = _grid_vertices(cells_per_axis, lengths)
        cells = _cell_multi_indices(cells_per_axis)
        quad = np.array([[0, 0], [1, 0], [1, 1], [0, 1]])
        corners = cells[:, None, :] + quad[None, :, :]
        elements = _vertex_index(corners, cells_per_axis)

    return StructuredMesh(
        dim=dim, n=n, m=m, convention=convention, lengths=lengths,
        cells_per_axis=cells_per_axis, subdomains_per_axis=subs,
        vertices=vertices, elements=np.ascontiguousarray(elements, dtype=np.int64),
        cells=np.ascontiguousarray(cells, dtype=np.int64),
    )
