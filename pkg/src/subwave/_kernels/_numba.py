"""Numba-jitted implementations of the hot kernels."""

import numpy as np
from numba import njit


@njit(cache=True)
def stiffness_triplets(verts, tris, coeff):
    m = tris.shape[0]
    rows = np.empty(9 * m, dtype=np.int64)
    cols = np.empty(9 * m, dtype=np.int64)
    vals = np.empty(9 * m)
    b = np.empty(3)
    c = np.empty(3)
    for t in range(m):
        i0, i1, i2 = tris[t, 0], tris[t, 1], tris[t, 2]
        x0, y0 = verts[i0, 0], verts[i0, 1]
        x1, y1 = verts[i1, 0], verts[i1, 1]
        x2, y2 = verts[i2, 0], verts[i2, 1]
        b[0] = y1 - y2
        b[1] = y2 - y0
        b[2] = y0 - y1
        c[0] = x2 - x1
        c[1] = x0 - x2
        c[2] = x1 - x0
        area2 = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        s = coeff[t] / (2.0 * area2)
        k = 9 * t
        for i in range(3):
            for j in range(3):
                rows[k] = tris[t, i]
                cols[k] = tris[t, j]
                vals[k] = s * (b[i] * b[j] + c[i] * c[j])
                k += 1
    return rows, cols, vals


@njit(cache=True)
def tensor_stiffness_triplets(verts, tris, a11, a12, a22):
    m = tris.shape[0]
    rows = np.empty(9 * m, dtype=np.int64)
    cols = np.empty(9 * m, dtype=np.int64)
    vals = np.empty(9 * m)
    b = np.empty(3)
    c = np.empty(3)
    for t in range(m):
        i0, i1, i2 = tris[t, 0], tris[t, 1], tris[t, 2]
        x0, y0 = verts[i0, 0], verts[i0, 1]
        x1, y1 = verts[i1, 0], verts[i1, 1]
        x2, y2 = verts[i2, 0], verts[i2, 1]
        b[0] = y1 - y2
        b[1] = y2 - y0
        b[2] = y0 - y1
        c[0] = x2 - x1
        c[1] = x0 - x2
        c[2] = x1 - x0
        area2 = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        s = 1.0 / (2.0 * area2)
        k = 9 * t
        for i in range(3):
            for j in range(3):
                rows[k] = tris[t, i]
                cols[k] = tris[t, j]
                vals[k] = s * (
                    a11[t] * b[i] * b[j]
                    + a12[t] * (b[i] * c[j] + c[i] * b[j])
                    + a22[t] * c[i] * c[j]
                )
                k += 1
    return rows, cols, vals


@njit(cache=True)
def mass_triplets(verts, tris, coeff):
    m = tris.shape[0]
    rows = np.empty(9 * m, dtype=np.int64)
    cols = np.empty(9 * m, dtype=np.int64)
    vals = np.empty(9 * m)
    for t in range(m):
        i0, i1, i2 = tris[t, 0], tris[t, 1], tris[t, 2]
        x0, y0 = verts[i0, 0], verts[i0, 1]
        x1, y1 = verts[i1, 0], verts[i1, 1]
        x2, y2 = verts[i2, 0], verts[i2, 1]
        area2 = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        s = coeff[t] * area2 / 24.0
        k = 9 * t
        for i in range(3):
            for j in range(3):
                rows[k] = tris[t, i]
                cols[k] = tris[t, j]
                vals[k] = 2.0 * s if i == j else s
                k += 1
    return rows, cols, vals


@njit(cache=True, inline="always")
def _locate_one(px, py, verts, tris, bin_ptr, bin_tris, nx, ny, x0, y0, dx, dy, tol):
    ix = int((px - x0) / dx)
    iy = int((py - y0) / dy)
    if ix < 0:
        ix = 0
    if ix > nx - 1:
        ix = nx - 1
    if iy < 0:
        iy = 0
    if iy > ny - 1:
        iy = ny - 1
    for ring in range(2):
        lo_x = max(ix - ring, 0)
        hi_x = min(ix + ring, nx - 1)
        lo_y = max(iy - ring, 0)
        hi_y = min(iy + ring, ny - 1)
        for jx in range(lo_x, hi_x + 1):
            for jy in range(lo_y, hi_y + 1):
                if ring == 1 and jx == ix and jy == iy:
                    continue
                bin_id = jx * ny + jy
                for p in range(bin_ptr[bin_id], bin_ptr[bin_id + 1]):
                    t = bin_tris[p]
                    i0, i1, i2 = tris[t, 0], tris[t, 1], tris[t, 2]
                    ax, ay = verts[i0, 0], verts[i0, 1]
                    bx, by = verts[i1, 0], verts[i1, 1]
                    cx, cy = verts[i2, 0], verts[i2, 1]
                    d = (bx - ax) * (cy - ay) - (cx - ax) * (by - ay)
                    if d == 0.0:
                        continue
                    w0 = ((bx - px) * (cy - py) - (cx - px) * (by - py)) / d
                    w1 = ((cx - px) * (ay - py) - (ax - px) * (cy - py)) / d
                    w2 = 1.0 - w0 - w1
                    if w0 >= -tol and w1 >= -tol and w2 >= -tol:
                        return t, w0, w1, w2
    return -1, 0.0, 0.0, 0.0


@njit(cache=True)
def locate_points(pts, verts, tris, bin_ptr, bin_tris, nx, ny, x0, y0, dx, dy, tol):
    n = pts.shape[0]
    out_tri = np.full(n, -1, dtype=np.int64)
    out_bar = np.zeros((n, 3))
    for i in range(n):
        t, w0, w1, w2 = _locate_one(
            pts[i, 0], pts[i, 1], verts, tris, bin_ptr, bin_tris,
            nx, ny, x0, y0, dx, dy, tol,
        )
        out_tri[i] = t
        out_bar[i, 0] = w0
        out_bar[i, 1] = w1
        out_bar[i, 2] = w2
    return out_tri, out_bar


@njit(cache=True)
def nodal_gradients(verts, tris, values):
    n = verts.shape[0]
    m = tris.shape[0]
    out = np.zeros((n, 2), dtype=values.dtype)
    wsum = np.zeros(n)
    for t in range(m):
        i0, i1, i2 = tris[t, 0], tris[t, 1], tris[t, 2]
        x0, y0 = verts[i0, 0], verts[i0, 1]
        x1, y1 = verts[i1, 0], verts[i1, 1]
        x2, y2 = verts[i2, 0], verts[i2, 1]
        area2 = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        gx = (
            values[i0] * (y1 - y2) + values[i1] * (y2 - y0) + values[i2] * (y0 - y1)
        ) / area2
        gy = (
            values[i0] * (x2 - x1) + values[i1] * (x0 - x2) + values[i2] * (x1 - x0)
        ) / area2
        w = 0.5 * abs(area2)
        for i in range(3):
            out[tris[t, i], 0] += w * gx
            out[tris[t, i], 1] += w * gy
            wsum[tris[t, i]] += w
    for i in range(n):
        if wsum[i] != 0.0:
            out[i, 0] /= wsum[i]
            out[i, 1] /= wsum[i]
    return out


@njit(cache=True)
def mollify_vector_field(
    pts, eps, qpts, qw, verts, tris, bin_ptr, bin_tris, nx, ny, x0, y0, dx, dy,
    fieldx, fieldy,
):
    n = pts.shape[0]
    nq = qpts.shape[0]
    out = np.zeros((n, 2), dtype=np.complex128)
    for i in range(n):
        accx = 0.0 + 0.0j
        accy = 0.0 + 0.0j
        for q in range(nq):
            px = pts[i, 0] - eps * qpts[q, 0]
            py = pts[i, 1] - eps * qpts[q, 1]
            t, w0, w1, w2 = _locate_one(
                px, py, verts, tris, bin_ptr, bin_tris,
                nx, ny, x0, y0, dx, dy, 1e-9,
            )
            if t < 0:
                continue
            i0, i1, i2 = tris[t, 0], tris[t, 1], tris[t, 2]
            accx += qw[q] * (w0 * fieldx[i0] + w1 * fieldx[i1] + w2 * fieldx[i2])
            accy += qw[q] * (w0 * fieldy[i0] + w1 * fieldy[i1] + w2 * fieldy[i2])
        out[i, 0] = accx
        out[i, 1] = accy
    return out
