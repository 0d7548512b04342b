"""P1 finite-element machinery shared by the solvers.

Assembly, mass/stiffness matrices with piecewise coefficients resolved by
region tag, point location and interpolation, quadrature norms, and nodal
gradient recovery.  The per-element loops live in ``subwave._kernels``.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .geometry import Mesh


def assemble_stiffness(mesh: Mesh, coeff=None) -> sp.csr_matrix:
    """Stiffness matrix with a scalar coefficient per triangle (default 1)."""
    if coeff is None:
        coeff = np.ones(mesh.n_triangles)
    coeff = np.broadcast_to(np.asarray(coeff, dtype=float), (mesh.n_triangles,))
    r, c, v = _kernels.stiffness_triplets(
        mesh.vertices, mesh.triangles, np.ascontiguousarray(coeff)
    )
    n = mesh.n_vertices
    return sp.coo_matrix((v, (r, c)), shape=(n, n)).tocsr()


def assemble_tensor_stiffness(mesh: Mesh, a11, a12, a22) -> sp.csr_matrix:
    """Stiffness with a symmetric 2x2 tensor coefficient per triangle."""
    m = mesh.n_triangles
    arrs = [
        np.ascontiguousarray(np.broadcast_to(np.asarray(a, dtype=float), (m,)))
        for a in (a11, a12, a22)
    ]
    r, c, v = _kernels.tensor_stiffness_triplets(mesh.vertices, mesh.triangles, *arrs)
    n = mesh.n_vertices
    return sp.coo_matrix((v, (r, c)), shape=(n, n)).tocsr()


def assemble_mass(mesh: Mesh, coeff=None) -> sp.csr_matrix:
    if coeff is None:
        coeff = np.ones(mesh.n_triangles)
    coeff = np.broadcast_to(np.asarray(coeff, dtype=float), (mesh.n_triangles,))
    r, c, v = _kernels.mass_triplets(
        mesh.vertices, mesh.triangles, np.ascontiguousarray(coeff)
    )
    n = mesh.n_vertices
    return sp.coo_matrix((v, (r, c)), shape=(n, n)).tocsr()


def load_vector(mesh: Mesh, tri_mask=None) -> np.ndarray:
    """Integrals of the nodal basis functions over the (masked) mesh."""
    areas = mesh.areas()
    if tri_mask is not None:
        areas = np.where(tri_mask, areas, 0.0)
    out = np.zeros(mesh.n_vertices)
    np.add.at(out, mesh.triangles[:, 0], areas / 3.0)
    np.add.at(out, mesh.triangles[:, 1], areas / 3.0)
    np.add.at(out, mesh.triangles[:, 2], areas / 3.0)
    return out


def integrate(mesh: Mesh, nodal, tri_mask=None):
    """Integral of a P1 field (exact for the interpolant)."""
    return np.vdot(load_vector(mesh, tri_mask), nodal).conjugate()


def l2_norm_sq(mesh: Mesh, nodal, tri_mask=None):
    """Exact squared L2 norm of the P1 interpolant over masked triangles."""
    areas = mesh.areas()
    if tri_mask is not None:
        areas = np.where(tri_mask, areas, 0.0)
    v = nodal[mesh.triangles]
    s2 = (np.abs(v) ** 2).sum(axis=1)
    tot = np.abs(v.sum(axis=1)) ** 2
    return float((areas / 12.0 * (s2 + tot)).sum().real)


def h1_semi_sq(mesh: Mesh, nodal, tri_mask=None):
    """Squared H1 seminorm (piecewise-constant gradients)."""
    gx, gy = element_gradients(mesh, nodal)
    areas = mesh.areas()
    if tri_mask is not None:
        areas = np.where(tri_mask, areas, 0.0)
    return float((areas * (np.abs(gx) ** 2 + np.abs(gy) ** 2)).sum())


def element_gradients(mesh: Mesh, nodal):
    p = mesh.vertices[mesh.triangles]
    x, y = p[:, :, 0], p[:, :, 1]
    b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    area2 = 2.0 * mesh.areas()
    v = nodal[mesh.triangles]
    gx = (v * b).sum(axis=1) / area2
    gy = (v * c).sum(axis=1) / area2
    return gx, gy


def recovered_gradient(mesh: Mesh, nodal) -> np.ndarray:
    """Area-weighted nodal average of element gradients (patch recovery)."""
    vals = np.ascontiguousarray(nodal, dtype=np.complex128)
    return _kernels.nodal_gradients(mesh.vertices, mesh.triangles, vals)


class Locator:
    """Uniform-bin point locator over a triangulation."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        verts, tris = mesh.vertices, mesh.triangles
        m = len(tris)
        nb = max(1, int(np.sqrt(m / 2)))
        lo = verts.min(axis=0) - 1e-12
        hi = verts.max(axis=0) + 1e-12
        self.x0, self.y0 = lo
        span = np.maximum(hi - lo, 1e-12)
        self.nx = self.ny = nb
        self.dx, self.dy = span[0] / nb, span[1] / nb
        p = verts[tris]
        bb_lo = p.min(axis=1)
        bb_hi = p.max(axis=1)
        ix0 = np.clip(((bb_lo[:, 0] - self.x0) / self.dx).astype(np.int64), 0, nb - 1)
        ix1 = np.clip(((bb_hi[:, 0] - self.x0) / self.dx).astype(np.int64), 0, nb - 1)
        iy0 = np.clip(((bb_lo[:, 1] - self.y0) / self.dy).astype(np.int64), 0, nb - 1)
        iy1 = np.clip(((bb_hi[:, 1] - self.y0) / self.dy).astype(np.int64), 0, nb - 1)
        wx = ix1 - ix0
        wy = iy1 - iy0
        all_bins, all_owner = [], []
        tri_ids = np.arange(m, dtype=np.int64)
        for a in range(int(wx.max(initial=0)) + 1):
            for bql in range(int(wy.max(initial=0)) + 1):
                msk = (wx >= a) & (wy >= bql)
                if not np.any(msk):
                    continue
                all_bins.append((ix0[msk] + a) * nb + iy0[msk] + bql)
                all_owner.append(tri_ids[msk])
        bins = np.concatenate(all_bins)
        owner = np.concatenate(all_owner)
        order = np.argsort(bins, kind="stable")
        bins, owner = bins[order], owner[order]
        ptr = np.zeros(nb * nb + 1, dtype=np.int64)
        np.add.at(ptr, bins + 1, 1)
        np.cumsum(ptr, out=ptr)
        self.bin_ptr = ptr
        self.bin_tris = owner

    def locate(self, pts, tol=1e-9):
        pts = np.ascontiguousarray(np.atleast_2d(pts), dtype=float)
        return _kernels.locate_points(
            pts,
            self.mesh.vertices,
            self.mesh.triangles,
            self.bin_ptr,
            self.bin_tris,
            self.nx,
            self.ny,
            self.x0,
            self.y0,
            self.dx,
            self.dy,
            tol,
        )

    def interpolate(self, nodal, pts, fill=0.0, tol=1e-9):
        """P1 interpolation; points just outside the mesh polygon (within a
        small barycentric slack) are linearly extrapolated from the nearest
        rim triangle, remaining misses get `fill`."""
        pts = np.atleast_2d(pts)
        idx, bar = self.locate(pts, tol)
        missed = idx < 0
        if np.any(missed):
            idx2, bar2 = self.locate(pts[missed], tol=0.08)
            idx[missed], bar[missed] = idx2, bar2
        out = np.full(len(bar), fill, dtype=np.asarray(nodal).dtype)
        ok = idx >= 0
        t = self.mesh.triangles[idx[ok]]
        out[ok] = (nodal[t] * bar[ok]).sum(axis=1)
        return out


def locator(mesh: Mesh) -> Locator:
    if mesh._locator is None:
        mesh._locator = Locator(mesh)
    return mesh._locator
