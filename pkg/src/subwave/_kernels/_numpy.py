"""Vectorized numpy implementations of the hot kernels."""

import numpy as np


def _tri_coeffs(verts, tris):
    # b, c: P1 gradient coefficients, grad(lambda_i) = (b_i, c_i) / (2 A)
    p = verts[tris]
    x, y = p[:, :, 0], p[:, :, 1]
    b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    area2 = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (
        y[:, 1] - y[:, 0]
    )
    return b, c, area2


def stiffness_triplets(verts, tris, coeff):
    b, c, area2 = _tri_coeffs(verts, tris)
    scale = coeff / (2.0 * area2)
    ke = (b[:, :, None] * b[:, None, :] + c[:, :, None] * c[:, None, :]) * scale[
        :, None, None
    ]
    rows = np.repeat(tris, 3, axis=1).ravel()
    cols = np.tile(tris, (1, 3)).ravel()
    return rows, cols, ke.ravel()


def tensor_stiffness_triplets(verts, tris, a11, a12, a22):
    b, c, area2 = _tri_coeffs(verts, tris)
    bb = b[:, :, None] * b[:, None, :]
    cc = c[:, :, None] * c[:, None, :]
    bc = b[:, :, None] * c[:, None, :] + c[:, :, None] * b[:, None, :]
    ke = (
        a11[:, None, None] * bb + a12[:, None, None] * bc + a22[:, None, None] * cc
    ) / (2.0 * area2)[:, None, None]
    rows = np.repeat(tris, 3, axis=1).ravel()
    cols = np.tile(tris, (1, 3)).ravel()
    return rows, cols, ke.ravel()


def mass_triplets(verts, tris, coeff):
    _, _, area2 = _tri_coeffs(verts, tris)
    base = np.full((3, 3), 1.0)
    base[np.diag_indices(3)] = 2.0
    ke = (coeff * area2 / 24.0)[:, None, None] * base[None, :, :]
    rows = np.repeat(tris, 3, axis=1).ravel()
    cols = np.tile(tris, (1, 3)).ravel()
    return rows, cols, ke.ravel()


def locate_points(pts, verts, tris, bin_ptr, bin_tris, nx, ny, x0, y0, dx, dy, tol):
    """Bin-grid point location: returns (tri_index, barycentric (n,3));
    tri_index -1 where not found."""
    n = pts.shape[0]
    out_tri = np.full(n, -1, dtype=np.int64)
    out_bar = np.zeros((n, 3))
    ix = np.clip(((pts[:, 0] - x0) / dx).astype(np.int64), 0, nx - 1)
    iy = np.clip(((pts[:, 1] - y0) / dy).astype(np.int64), 0, ny - 1)
    # widen search to the 3x3 bin neighborhood in a second pass for stragglers
    for ring in (0, 1):
        todo = np.nonzero(out_tri < 0)[0]
        if todo.size == 0:
            break
        if ring == 0:
            cand_bins = (ix[todo] * ny + iy[todo])[:, None]
        else:
            offs = np.array(
                [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]
            )
            jx = np.clip(ix[todo, None] + offs[None, :, 0], 0, nx - 1)
            jy = np.clip(iy[todo, None] + offs[None, :, 1], 0, ny - 1)
            cand_bins = jx * ny + jy
        counts = bin_ptr[cand_bins + 1] - bin_ptr[cand_bins]
        maxc = int(counts.max(initial=0))
        if maxc == 0:
            continue
        total = counts.sum(axis=1)
        order = np.argsort(total, kind="stable")
        for chunk in np.array_split(todo[order], max(1, todo.size // 200_000 + 1)):
            if chunk.size == 0:
                continue
            sel = np.searchsorted(todo, chunk)
            cb = cand_bins[sel].reshape(chunk.size, -1)
            cnt = bin_ptr[cb + 1] - bin_ptr[cb]
            mc = int(cnt.max(initial=0))
            if mc == 0:
                continue
            idx = bin_ptr[cb][:, :, None] + np.arange(mc)[None, None, :]
            valid = idx < (bin_ptr[cb] + cnt)[:, :, None]
            idx = np.where(valid, idx, 0)
            cand = np.where(valid, bin_tris[idx], -1).reshape(chunk.size, -1)
            p = pts[chunk]
            t0 = verts[tris[cand, 0]]
            t1 = verts[tris[cand, 1]]
            t2 = verts[tris[cand, 2]]
            d = (t1[:, :, 0] - t0[:, :, 0]) * (t2[:, :, 1] - t0[:, :, 1]) - (
                t2[:, :, 0] - t0[:, :, 0]
            ) * (t1[:, :, 1] - t0[:, :, 1])
            d = np.where(d == 0.0, 1.0, d)
            w0 = (
                (t1[:, :, 0] - p[:, None, 0]) * (t2[:, :, 1] - p[:, None, 1])
                - (t2[:, :, 0] - p[:, None, 0]) * (t1[:, :, 1] - p[:, None, 1])
            ) / d
            w1 = (
                (t2[:, :, 0] - p[:, None, 0]) * (t0[:, :, 1] - p[:, None, 1])
                - (t0[:, :, 0] - p[:, None, 0]) * (t2[:, :, 1] - p[:, None, 1])
            ) / d
            w2 = 1.0 - w0 - w1
            inside = (
                (cand >= 0) & (w0 >= -tol) & (w1 >= -tol) & (w2 >= -tol)
            )
            hit = inside.argmax(axis=1)
            found = inside[np.arange(chunk.size), hit]
            rows = chunk[found]
            h = hit[found]
            out_tri[rows] = cand[found, h]
            out_bar[rows, 0] = w0[found, h]
            out_bar[rows, 1] = w1[found, h]
            out_bar[rows, 2] = w2[found, h]
    return out_tri, out_bar


def nodal_gradients(verts, tris, values):
    b, c, area2 = _tri_coeffs(verts, tris)
    v = values[tris]
    gx = (v * b).sum(axis=1) / area2
    gy = (v * c).sum(axis=1) / area2
    w = 0.5 * np.abs(area2)
    out = np.zeros((verts.shape[0], 2), dtype=values.dtype)
    wsum = np.zeros(verts.shape[0])
    for i in range(3):
        np.add.at(out[:, 0], tris[:, i], w * gx)
        np.add.at(out[:, 1], tris[:, i], w * gy)
        np.add.at(wsum, tris[:, i], w)
    wsum[wsum == 0.0] = 1.0
    return out / wsum[:, None]


def mollify_vector_field(
    pts, eps, qpts, qw, verts, tris, bin_ptr, bin_tris, nx, ny, x0, y0, dx, dy,
    fieldx, fieldy,
):
    """Mollifier convolution of a P1 vector field, sampled at pts."""
    out = np.zeros((pts.shape[0], 2), dtype=np.complex128)
    for q in range(qpts.shape[0]):
        shifted = pts - eps * qpts[q][None, :]
        idx, bar = locate_points(
            shifted, verts, tris, bin_ptr, bin_tris, nx, ny, x0, y0, dx, dy, 1e-9
        )
        ok = idx >= 0
        t = tris[idx[ok]]
        vx = (fieldx[t] * bar[ok]).sum(axis=1)
        vy = (fieldy[t] * bar[ok]).sum(axis=1)
        out[ok, 0] += qw[q] * vx
        out[ok, 1] += qw[q] * vy
    return out
