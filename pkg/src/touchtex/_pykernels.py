"""Pure numpy implementations of the hot kernels.

These are the reference versions; ``_ckernels`` (Cython) mirrors every
function here with the same signature and semantics.
"""
import numpy as np

HASH_PRIMES = (1, 2654435761, 805459861)


def _level_corners(points01, res, size, dense):
    """Corner indices (P, 8) and trilinear weights (P, 8) for one level."""
    pos = points01 * res
    basef = np.minimum(np.floor(pos), res - 1)
    base = basef.astype(np.int64)
    frac = pos - basef
    idx = np.empty((points01.shape[0], 8), dtype=np.int64)
    w = np.empty((points01.shape[0], 8), dtype=points01.dtype)
    stride = res + 1
    for c in range(8):
        dx, dy, dz = c & 1, (c >> 1) & 1, (c >> 2) & 1
        x = base[:, 0] + dx
        y = base[:, 1] + dy
        z = base[:, 2] + dz
        if dense:
            idx[:, c] = x + y * stride + z * stride * stride
        else:
            h = (x.astype(np.uint64) * np.uint64(HASH_PRIMES[0])) \
                ^ (y.astype(np.uint64) * np.uint64(HASH_PRIMES[1])) \
                ^ (z.astype(np.uint64) * np.uint64(HASH_PRIMES[2]))
            idx[:, c] = (h & np.uint64(size - 1)).astype(np.int64)
        wx = frac[:, 0] if dx else 1 - frac[:, 0]
        wy = frac[:, 1] if dy else 1 - frac[:, 1]
        wz = frac[:, 2] if dz else 1 - frac[:, 2]
        w[:, c] = wx * wy * wz
    return idx, w


def hash_encode(points01, table, offsets, sizes, resolutions, dense):
    """Multi-level trilinear lookup.

    points01: (P, 3) in [0, 1]; table: (total, F) concatenated level tables.
    Returns (P, L * F) features in the table dtype.
    """
    n_levels = len(offsets)
    n_feat = table.shape[1]
    pts = np.ascontiguousarray(points01, dtype=table.dtype)
    out = np.zeros((pts.shape[0], n_levels * n_feat), dtype=table.dtype)
    for lvl in range(n_levels):
        idx, w = _level_corners(pts, int(resolutions[lvl]), int(sizes[lvl]), bool(dense[lvl]))
        sub = table[offsets[lvl]:offsets[lvl] + sizes[lvl]]
        acc = np.zeros((pts.shape[0], n_feat), dtype=table.dtype)
        for c in range(8):
            acc += w[:, c:c + 1] * sub[idx[:, c]]
        out[:, lvl * n_feat:(lvl + 1) * n_feat] = acc
    return out


def hash_encode_backward(points01, grad_feats, table_rows, offsets, sizes, resolutions, dense):
    """Scatter-add feature gradients back into the concatenated tables."""
    n_levels = len(offsets)
    n_feat = grad_feats.shape[1] // n_levels
    dtype = grad_feats.dtype
    pts = np.ascontiguousarray(points01, dtype=dtype)
    grad = np.zeros((table_rows, n_feat), dtype=dtype)
    for lvl in range(n_levels):
        idx, w = _level_corners(pts, int(resolutions[lvl]), int(sizes[lvl]), bool(dense[lvl]))
        g = grad_feats[:, lvl * n_feat:(lvl + 1) * n_feat].astype(np.float64)
        flat_idx = idx.ravel()
        for f in range(n_feat):
            contrib = (w * g[:, f:f + 1]).ravel()
            acc = np.bincount(flat_idx, weights=contrib, minlength=int(sizes[lvl]))
            grad[offsets[lvl]:offsets[lvl] + sizes[lvl], f] += acc.astype(dtype)
    return grad


def _owns_tie(dx, dy):
    # top-left rule: of two opposite edge directions exactly one owns ties
    return dy < 0 or (dy == 0 and dx > 0)


def _edge(p, q, px, py):
    # cross(q - p, pt - p), evaluated from the lexicographically smaller endpoint so
    # a shared edge yields exactly opposite values in its two triangles
    if (p[0], p[1]) < (q[0], q[1]):
        return (q[0] - p[0]) * (py - p[1]) - (q[1] - p[1]) * (px - p[0])
    return -((p[0] - q[0]) * (py - q[1]) - (p[1] - q[1]) * (px - q[0]))


def rasterize_triangles(xy, key, height, width, key_min):
    """Rasterize 2D triangles with a z-buffer.

    xy: (F, 3, 2) pixel-space vertex positions (x right, y down).
    key: (F, 3) depth key, affine in screen space, smaller is closer.
    Pixels whose interpolated key < key_min are rejected.
    Returns tri_id (H, W) int32 (-1 = empty), bary (H, W, 3), zbuf (H, W).
    """
    xy = np.asarray(xy, dtype=np.float64)
    key = np.asarray(key, dtype=np.float64)
    tri_id = np.full((height, width), -1, dtype=np.int32)
    bary = np.zeros((height, width, 3), dtype=np.float64)
    zbuf = np.full((height, width), np.inf, dtype=np.float64)
    for f in range(xy.shape[0]):
        a, b, c = xy[f]
        order = (0, 1, 2)
        area = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        if area < 0:
            b, c = c, b
            order = (0, 2, 1)
            area = -area
        if not area > 1e-12:
            continue
        x0 = max(int(np.floor(min(a[0], b[0], c[0]) - 0.5)), 0)
        x1 = min(int(np.ceil(max(a[0], b[0], c[0]) - 0.5)), width - 1)
        y0 = max(int(np.floor(min(a[1], b[1], c[1]) - 0.5)), 0)
        y1 = min(int(np.ceil(max(a[1], b[1], c[1]) - 0.5)), height - 1)
        if x0 > x1 or y0 > y1:
            continue
        px, py = np.meshgrid(np.arange(x0, x1 + 1) + 0.5, np.arange(y0, y1 + 1) + 0.5)
        verts = (a, b, c)
        ws = []
        inside = np.ones(px.shape, dtype=bool)
        # edge opposite vertex i runs from verts[i+1] to verts[i+2]
        for i in range(3):
            p, q = verts[(i + 1) % 3], verts[(i + 2) % 3]
            ex, ey = q[0] - p[0], q[1] - p[1]
            wv = _edge(p, q, px, py)
            ws.append(wv)
            if _owns_tie(ex, ey):
                inside &= wv >= 0
            else:
                inside &= wv > 0
        if not inside.any():
            continue
        bs = [wv / area for wv in ws]
        k = key[f]
        kk = bs[0] * k[order[0]] + bs[1] * k[order[1]] + bs[2] * k[order[2]]
        rows = py.astype(np.int64)
        cols = px.astype(np.int64)
        cur = zbuf[rows, cols]
        win = inside & (kk < cur) & (kk >= key_min)
        if not win.any():
            continue
        r, cc = rows[win], cols[win]
        zbuf[r, cc] = kk[win]
        tri_id[r, cc] = f
        for i in range(3):
            bary[r, cc, order[i]] = bs[i][win]
    return tri_id, bary, zbuf


def min_cut_seam(cost):
    """Minimum-cost 8-connected top-to-bottom path; ties go to smaller columns."""
    cost = np.asarray(cost, dtype=np.float64)
    n_rows, n_cols = cost.shape
    acc = np.empty_like(cost)
    acc[0] = cost[0]
    for r in range(1, n_rows):
        prev = acc[r - 1]
        best = prev.copy()
        if n_cols > 1:
            best[1:] = np.minimum(best[1:], prev[:-1])
            best[:-1] = np.minimum(best[:-1], prev[1:])
        acc[r] = cost[r] + best
    path = np.empty(n_rows, dtype=np.int64)
    path[-1] = int(np.argmin(acc[-1]))
    for r in range(n_rows - 2, -1, -1):
        c = path[r + 1]
        lo, hi = max(c - 1, 0), min(c + 1, n_cols - 1)
        path[r] = lo + int(np.argmin(acc[r, lo:hi + 1]))
    return path


def adam_update(param, grad, m, v, lr, beta1, beta2, eps, step):
    """In-place bias-corrected Adam update; ``step`` is the 1-based step count."""
    bc1 = 1.0 - beta1 ** step
    bc2 = 1.0 - beta2 ** step
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * (grad * grad)
    param -= (lr / bc1) * m / (np.sqrt(v / bc2) + eps)
