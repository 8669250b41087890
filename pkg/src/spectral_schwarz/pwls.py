"""Plane-wave least-squares discretization of the 2D Helmholtz equation.

The homogeneous problem ``-Lap u - kappa^2 u = 0`` with impedance data
``(d_n + i kappa) u = g`` is discretized on a uniform quad grid with ``p``
plane waves per element. The least-squares functional collects, per
interior face, the jump ``alpha |u_k - u_j|^2`` and the normal-flux residual
``beta |d_nk u_k + d_nj u_j|^2``, and per boundary face the impedance
residual ``nu |(d_n + i kappa) u_k - g|^2``. Dof ``e * p + l`` is wave ``l``
on element ``e``.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .numerics import check_hermitian, hermitian_part

WAVESPEEDS = ("model41", "model42", "model43")
LAYER_SPEEDS = (1800.0, 3600.0, 5400.0)
LAYER_TOPS = (1200.0, 2400.0)
RANDOM_SPEED_RANGE = (1500.0, 5500.0)


@dataclass(frozen=True, eq=False)
class PlaneWaveSpace:
    p: int
    directions: np.ndarray
    centers: np.ndarray
    kappa: np.ndarray

    def values(self, elements, x):
        """Basis values ``y_{m,l}(x)`` for points ``x`` of shape (..., 2) per element.

        ``elements`` broadcasts against the leading axes of ``x``; the result
        has a trailing axis of length ``p``.
        """
        rel = x - self.centers[elements]
        phase = np.einsum("...d,ld->...l", rel, self.directions)
        return np.exp(1j * self.kappa[elements][..., None] * phase)

    def normal_derivatives(self, elements, x, normal, vals=None):
        """``d_n y_{m,l}`` with ``normal`` a (..., 2) array of unit normals."""
        if vals is None:
            vals = self.values(elements, x)
        dn = np.einsum("...d,ld->...l", normal, self.directions)
        return 1j * self.kappa[elements][..., None] * dn * vals


def plane_wave_space(mesh, kappa, p):
    if p < 3:
        raise ValueError("at least three plane waves per element are required")
    ang = 2 * np.pi * np.arange(p) / p
    dirs = np.column_stack([np.cos(ang), np.sin(ang)])
    kappa = np.broadcast_to(np.asarray(kappa, dtype=float), (mesh.n_elements,)).copy()
    return PlaneWaveSpace(p=p, directions=dirs, centers=mesh.dual_nodes, kappa=kappa)


@dataclass(frozen=True)
class WaveSpeedField:
    kind: str
    values: np.ndarray = field(repr=False)
    seed: int = 0


def wavespeed_field(mesh, kind="model41", seed=0):
    """Per-element wave speed sampled at element centers."""
    if kind not in WAVESPEEDS:
        raise ValueError(f"unknown wave-speed model {kind!r}")
    y = mesh.dual_nodes[:, 1]
    if kind == "model41":
        c = np.ones(mesh.n_elements)
    elif kind == "model42":
        c = np.select([y < LAYER_TOPS[0], y < LAYER_TOPS[1]], LAYER_SPEEDS[:2], LAYER_SPEEDS[2])
    else:
        rng = np.random.default_rng(seed)
        c = rng.uniform(*RANDOM_SPEED_RANGE, size=mesh.n_elements)
    return WaveSpeedField(kind=kind, values=np.asarray(c, dtype=float), seed=seed)


def model_domain(kind):
    """Box extents of the test models."""
    return (2.0, 1.0) if kind == "model41" else (7200.0, 3600.0)


class Model41Solution:
    """Closed-form solution ``cos(12 pi y)(A1 e^{-i wx x} + A2 e^{i wx x})``."""

    def __init__(self, omega):
        wy = 12 * np.pi
        if omega <= wy:
            raise ValueError("the model needs omega > 12 pi")
        wx = math.sqrt(omega ** 2 - wy ** 2)
        M = np.array([[wx, -wx],
                      [(omega - wx) * np.exp(-2j * wx), (omega + wx) * np.exp(2j * wx)]])
        self.A1, self.A2 = np.linalg.solve(M, np.array([-1j, 0.0]))
        self.omega, self.wx, self.wy = omega, wx, wy

    def __call__(self, x):
        ex = self.A1 * np.exp(-1j * self.wx * x[..., 0]) + self.A2 * np.exp(1j * self.wx * x[..., 0])
        return np.cos(self.wy * x[..., 1]) * ex

    def gradient(self, x):
        X, Y = x[..., 0], x[..., 1]
        ex = self.A1 * np.exp(-1j * self.wx * X) + self.A2 * np.exp(1j * self.wx * X)
        dex = 1j * self.wx * (-self.A1 * np.exp(-1j * self.wx * X) + self.A2 * np.exp(1j * self.wx * X))
        return np.stack([np.cos(self.wy * Y) * dex, -self.wy * np.sin(self.wy * Y) * ex], axis=-1)

    def impedance_trace(self, x, normal, kappa):
        return np.einsum("...d,...d->...", self.gradient(x), normal) + 1j * kappa * self(x)


def _gauss(q):
    """Gauss-Legendre rule on a face split at its midpoint, mapped to (0, 1)."""
    s, w = np.polynomial.legendre.leggauss(q)
    s = (s + 1) / 4
    return np.concatenate([s, s + 0.5]), np.concatenate([w, w]) / 4


@dataclass(eq=False)
class FaceData:
    """Quadrature data of one face family.

    ``elements`` is (nf, 2) for interior faces (second column ``-1`` on the
    boundary); ``points`` (nf, Q, 2); ``weights`` (nf, Q) include the face
    length; ``normal`` is the outward normal of the first element.
    """

    elements: np.ndarray
    points: np.ndarray
    weights: np.ndarray
    normal: np.ndarray
    vals: tuple = ()
    dns: tuple = ()


def _face_geometry(mesh, owner, axis, offset, s, w):
    h = np.asarray(mesh.h)
    other = 1 - axis
    cells = mesh.cells[owner]
    pts = np.empty((len(owner), len(s), 2))
    pts[:, :, axis] = ((cells[:, axis] + offset) * h[axis])[:, None]
    pts[:, :, other] = (cells[:, other][:, None] + s[None, :]) * h[other]
    wts = np.broadcast_to(w[None, :] * h[other], (len(owner), len(s))).copy()
    return pts, wts


def build_faces(mesh, space, q):
    s, w = _gauss(q)
    gf = mesh.grid_faces()
    interior, boundary = [], []
    for axis in (0, 1):
        rows = gf["interior"][gf["interior"][:, 2] == axis]
        pts, wts = _face_geometry(mesh, rows[:, 0], axis, 1, s, w)
        normal = np.zeros(2)
        normal[axis] = 1.0
        interior.append((rows[:, :2], pts, wts, np.broadcast_to(normal, pts.shape)))
        for side in (0, 1):
            sel = gf["boundary"][(gf["boundary"][:, 1] == axis) & (gf["boundary"][:, 2] == side)]
            pts, wts = _face_geometry(mesh, sel[:, 0], axis, side, s, w)
            normal = np.zeros(2)
            normal[axis] = 1.0 if side else -1.0
            owners = np.column_stack([sel[:, 0], -np.ones(len(sel), dtype=np.int64)])
            boundary.append((owners, pts, wts, np.broadcast_to(normal, pts.shape)))

    def merge(parts):
        el = np.concatenate([p[0] for p in parts]).astype(np.int64)
        pts = np.concatenate([p[1] for p in parts])
        wts = np.concatenate([p[2] for p in parts])
        nrm = np.ascontiguousarray(np.concatenate([p[3] for p in parts]))
        return FaceData(el, pts, wts, nrm)

    fi, fb = merge(interior), merge(boundary)
    k = fi.elements[:, 0][:, None]
    j = fi.elements[:, 1][:, None]
    vk = space.values(k, fi.points)
    vj = space.values(j, fi.points)
    fi.vals = (vk, vj)
    fi.dns = (space.normal_derivatives(k, fi.points, fi.normal, vk),
              space.normal_derivatives(j, fi.points, -fi.normal, vj))
    kb = fb.elements[:, 0][:, None]
    vb = space.values(kb, fb.points)
    fb.vals = (vb,)
    fb.dns = (space.normal_derivatives(kb, fb.points, fb.normal, vb),)
    return fi, fb


@dataclass(frozen=True)
class Multipliers:
    """Face weights; ``None`` selects the wave-number scaled defaults."""

    alpha: float = None
    beta: float = None
    nu: float = None
    scale: float = 1.0

    def face_values(self, kbar_interior, kappa_boundary):
        alpha = np.ones_like(kbar_interior) if self.alpha is None else np.full_like(
            kbar_interior, self.alpha)
        beta = kbar_interior ** -2.0 if self.beta is None else np.full_like(
            kbar_interior, self.beta)
        nu = kappa_boundary ** -2.0 if self.nu is None else np.full_like(kappa_boundary, self.nu)
        return self.scale * alpha, self.scale * beta, self.scale * nu


def _scatter(blocks, dofs, n):
    """Sum dense blocks ``(nf, b, b)`` with row/col dof maps ``(nf, b)`` into CSR."""
    b = dofs.shape[1]
    if len(dofs) == 0:
        return sp.csr_matrix((n, n), dtype=blocks.dtype)
    rows = np.repeat(dofs, b, axis=1).ravel()
    cols = np.tile(dofs, (1, b)).ravel()
    vals = blocks.reshape(len(dofs), -1).ravel()
    keep = (rows >= 0) & (cols >= 0)
    return sp.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=(n, n))


def _local_map(dofs, n):
    loc = -np.ones(n, dtype=np.int64)
    loc[dofs] = np.arange(len(dofs))
    return loc


@dataclass(eq=False)
class PwlsSystem:
    mesh: object
    space: PlaneWaveSpace
    omega: float
    wavespeed: WaveSpeedField
    multipliers: Multipliers
    interior: FaceData = field(repr=False)
    boundary: FaceData = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    beta: np.ndarray = field(repr=False)
    nu: np.ndarray = field(repr=False)
    interior_blocks: np.ndarray = field(repr=False)
    boundary_blocks: np.ndarray = field(repr=False)
    A: sp.csr_matrix = None
    rhs: np.ndarray = None
    exact: object = None

    @property
    def p(self):
        return self.space.p

    @property
    def block_size(self):
        return self.space.p

    @property
    def n_dofs(self):
        return self.mesh.n_elements * self.p

    def element_dofs(self, elements):
        elements = np.asarray(elements)
        return elements[..., None] * self.p + np.arange(self.p)

    def _face_dofs(self, elements):
        d = self.element_dofs(np.maximum(elements, 0))
        d[elements < 0] = -1
        return d.reshape(len(elements), -1)

    def closed_dofs(self, decomp, i):
        return self.element_dofs(decomp.omega_closed[i]).ravel()

    def interior_dofs(self, element_mask):
        """All dofs of elements in the region (no essential conditions)."""
        return self.element_dofs(np.flatnonzero(element_mask)).ravel()

    def _local_faces(self, decomp, i):
        inside = np.zeros(self.mesh.n_elements, dtype=bool)
        inside[decomp.omega_closed[i]] = True
        fi = np.flatnonzero(inside[self.interior.elements].all(axis=1))
        fb = np.flatnonzero(inside[self.boundary.elements[:, 0]])
        return fi, fb

    def _assemble_local(self, decomp, i, iblocks, bblocks):
        dofs = self.closed_dofs(decomp, i)
        loc = _local_map(dofs, self.n_dofs)
        fi, fb = self._local_faces(decomp, i)
        di = loc[self._face_dofs(self.interior.elements[fi])]
        db = loc[self.element_dofs(self.boundary.elements[fb, 0])]
        M = _scatter(iblocks(fi), di, len(dofs)) + _scatter(bblocks(fb), db, len(dofs))
        return dofs, hermitian_part(M)

    def local_a(self, decomp, i):
        """Functional restricted to the faces of the closed subdomain."""
        return self._assemble_local(decomp, i, lambda f: self.interior_blocks[f],
                                    lambda f: self.boundary_blocks[f])

    def gradient_weight(self, decomp, pou, i, points):
        """``sum_{l in S_i} |grad theta_l|^2`` at points of shape (..., 2)."""
        flat = points.reshape(-1, 2)
        w = np.zeros(len(flat))
        for l in decomp.S[i]:
            g = pou.gradient(l, flat)
            w += np.einsum("nd,nd->n", g, g)
        return w.reshape(points.shape[:-1])

    def local_s(self, decomp, pou, i):
        fi, fb = self._local_faces(decomp, i)
        Wi = self.gradient_weight(decomp, pou, i, self.interior.points[fi])
        Wb = self.gradient_weight(decomp, pou, i, self.boundary.points[fb])

        def iblocks(f):
            vk, vj = self.interior.vals[0][f], self.interior.vals[1][f]
            wq = (self.interior.weights[f] * Wi) * self.beta[f][:, None]
            p = self.p
            out = np.zeros((len(f), 2 * p, 2 * p), dtype=complex)
            out[:, :p, :p] = np.einsum("fq,fqa,fqb->fab", wq, vk.conj(), vk)
            out[:, p:, p:] = np.einsum("fq,fqa,fqb->fab", wq, vj.conj(), vj)
            return out

        def bblocks(f):
            v = self.boundary.vals[0][f]
            wq = (self.boundary.weights[f] * Wb) * self.nu[f][:, None]
            return np.einsum("fq,fqa,fqb->fab", wq, v.conj(), v)

        return self._assemble_local(decomp, i, iblocks, bblocks)

    def product_energy(self, decomp, pou, i, j, u):
        """``a_i(theta_j u, theta_j u)`` with ``theta_j`` evaluated at quadrature points."""
        fi, fb = self._local_faces(decomp, i)
        U = np.asarray(u).reshape(self.mesh.n_elements, self.p)
        F = self.interior
        pts = F.points[fi]
        th = pou.evaluate(j, pts.reshape(-1, 2)).reshape(pts.shape[:2])
        gth = pou.gradient(j, pts.reshape(-1, 2)).reshape(pts.shape)
        k, jj = F.elements[fi, 0], F.elements[fi, 1]
        uk = np.einsum("fqa,fa->fq", F.vals[0][fi], U[k])
        uj = np.einsum("fqa,fa->fq", F.vals[1][fi], U[jj])
        dk = np.einsum("fqa,fa->fq", F.dns[0][fi], U[k])
        dj = np.einsum("fqa,fa->fq", F.dns[1][fi], U[jj])
        dnth = np.einsum("fqd,fqd->fq", gth, F.normal[fi])
        jump = th * (uk - uj)
        flux = th * (dk + dj) + (uk - uj) * dnth
        total = np.sum(F.weights[fi] * (self.alpha[fi][:, None] * np.abs(jump) ** 2
                                        + self.beta[fi][:, None] * np.abs(flux) ** 2))
        B = self.boundary
        pts = B.points[fb]
        th = pou.evaluate(j, pts.reshape(-1, 2)).reshape(pts.shape[:2])
        gth = pou.gradient(j, pts.reshape(-1, 2)).reshape(pts.shape)
        kb = B.elements[fb, 0]
        ub = np.einsum("fqa,fa->fq", B.vals[0][fb], U[kb])
        db = np.einsum("fqa,fa->fq", B.dns[0][fb], U[kb])
        imp = th * (db + 1j * self.space.kappa[kb][:, None] * ub) + ub * np.einsum(
            "fqd,fqd->fq", gth, B.normal[fb])
        total += np.sum(B.weights[fb] * self.nu[fb][:, None] * np.abs(imp) ** 2)
        return float(total)

    def evaluate(self, u, points, elements):
        """``u_h`` at points lying in the given elements."""
        U = np.asarray(u).reshape(self.mesh.n_elements, self.p)
        vals = self.space.values(elements, points)
        return np.einsum("...a,...a->...", vals, U[elements])

    def functional(self, u):
        """Least-squares residual ``a(u,u) - 2 Re L(u) + |g|^2_nu``."""
        u = np.asarray(u)
        return float(np.real(np.vdot(u, self.A @ u) - 2 * np.vdot(self.rhs, u).real
                             + self._g_norm))


def quadrature_points(kbar, h):
    return max(8, int(math.ceil(kbar * h)) + 4)


def assemble_pwls(mesh, wavespeed, omega, p, multipliers=None, g=None, exact=None):
    """Assemble the PWLS operator and right-hand side.

    ``g(x, normal, kappa)`` is the impedance datum; by default the model
    datum is used (exact trace for ``model41``, ``x^2 + y^2`` otherwise).
    """
    if mesh.convention != "pwls" or mesh.dim != 2:
        raise ValueError("PWLS assembly needs a 2D pwls mesh")
    if omega <= 0:
        raise ValueError("omega must be positive")
    if not isinstance(wavespeed, WaveSpeedField):
        wavespeed = wavespeed_field(mesh, wavespeed)
    multipliers = multipliers or Multipliers()
    kappa = omega / wavespeed.values
    space = plane_wave_space(mesh, kappa, p)
    gf = mesh.grid_faces()
    kbar_all = 0.5 * (kappa[gf["interior"][:, 0]] + kappa[gf["interior"][:, 1]])
    q = quadrature_points(kbar_all.max() if len(kbar_all) else kappa.max(), max(mesh.h))
    fi, fb = build_faces(mesh, space, q)
    kbar = 0.5 * (kappa[fi.elements[:, 0]] + kappa[fi.elements[:, 1]])
    kb = kappa[fb.elements[:, 0]]
    alpha, beta, nu = multipliers.face_values(kbar, kb)

    vk, vj = fi.vals
    dk, dj = fi.dns
    jump = np.concatenate([vk, -vj], axis=2)
    flux = np.concatenate([dk, dj], axis=2)
    wa = fi.weights * alpha[:, None]
    wb = fi.weights * beta[:, None]
    iblocks = (np.einsum("fq,fqa,fqb->fab", wa, jump.conj(), jump)
               + np.einsum("fq,fqa,fqb->fab", wb, flux.conj(), flux))
    imp = fb.dns[0] + 1j * kb[:, None, None] * fb.vals[0]
    wn = fb.weights * nu[:, None]
    bblocks = np.einsum("fq,fqa,fqb->fab", wn, imp.conj(), imp)

    n = mesh.n_elements * p
    sysm = PwlsSystem(mesh=mesh, space=space, omega=omega, wavespeed=wavespeed,
                      multipliers=multipliers, interior=fi, boundary=fb, alpha=alpha,
                      beta=beta, nu=nu, interior_blocks=iblocks, boundary_blocks=bblocks,
                      exact=exact)
    bdofs = sysm.element_dofs(fb.elements[:, 0])
    A = _scatter(iblocks, sysm._face_dofs(fi.elements), n) + _scatter(bblocks, bdofs, n)
    check_hermitian(A)
    sysm.A = hermitian_part(A)

    if g is None:
        if wavespeed.kind == "model41":
            if exact is None:
                exact = Model41Solution(omega)
                sysm.exact = exact
            g = exact.impedance_trace
        else:
            def g(x, normal, kap):
                return (x[..., 0] ** 2 + x[..., 1] ** 2).astype(complex)
    gv = g(fb.points, fb.normal, kb[:, None])
    rhs = np.zeros(n, dtype=complex)
    local = np.einsum("fq,fqa,fq->fa", wn, imp.conj(), gv)
    np.add.at(rhs, bdofs.ravel(), local.ravel())
    sysm.rhs = rhs
    sysm._g_norm = float(np.sum(wn * np.abs(gv) ** 2))
    return sysm


def assemble_local_s_pwls(system, decomp, dual_pou, i):
    return system.local_s(decomp, dual_pou, i)


def element_quadrature(mesh, q):
    """Tensor Gauss points (ne, q*q, 2) and weights (q*q,) times element area."""
    s, w = np.polynomial.legendre.leggauss(q)
    s = (s + 1) / 2
    w = w / 2
    hx, hy = mesh.h
    sx, sy = np.meshgrid(s, s, indexing="ij")
    ww = np.outer(w, w).ravel() * hx * hy
    lo = mesh.cells * np.array([hx, hy])
    pts = lo[:, None, :] + np.stack([sx.ravel() * hx, sy.ravel() * hy], axis=1)[None]
    return pts, ww


def evaluate_error(system, u, exact=None, q=None):
    """Relative L2 error of the PWLS solution against ``exact``."""
    exact = exact or system.exact
    if exact is None:
        raise ValueError("no exact solution available for this model")
    mesh = system.mesh
    if q is None:
        q = quadrature_points(system.space.kappa.max(), max(mesh.h))
    pts, ww = element_quadrature(mesh, q)
    el = np.arange(mesh.n_elements)[:, None]
    uh = system.evaluate(u, pts, el)
    ue = exact(pts)
    num = np.sum(ww * np.abs(uh - ue) ** 2)
    den = np.sum(ww * np.abs(ue) ** 2)
    return float(np.sqrt(num / den))
