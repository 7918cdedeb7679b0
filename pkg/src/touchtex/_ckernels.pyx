# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot kernels; see ``_pykernels`` for semantics."""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor, ceil, sqrt, INFINITY
from libc.stdint cimport uint32_t, int64_t

cnp.import_array()

ctypedef fused real:
    float
    double

cdef uint32_t P1 = 2654435761u
cdef uint32_t P2 = 805459861u


cdef inline int64_t _corner_index(int64_t x, int64_t y, int64_t z, int64_t res,
                                  int64_t size, bint dense) nogil:
    cdef int64_t stride
    cdef uint32_t h
    if dense:
        stride = res + 1
        return x + y * stride + z * stride * stride
    h = (<uint32_t>x) ^ ((<uint32_t>y) * P1) ^ ((<uint32_t>z) * P2)
    return <int64_t>(h & <uint32_t>(size - 1))


def hash_encode(points01, table, offsets, sizes, resolutions, dense):
    tab = np.ascontiguousarray(table)
    pts = np.ascontiguousarray(points01, dtype=tab.dtype)
    out = np.zeros((pts.shape[0], len(offsets) * tab.shape[1]), dtype=tab.dtype)
    cdef int64_t[::1] off = np.asarray(offsets, dtype=np.int64)
    cdef int64_t[::1] siz = np.asarray(sizes, dtype=np.int64)
    cdef int64_t[::1] res = np.asarray(resolutions, dtype=np.int64)
    cdef cnp.uint8_t[::1] den = np.asarray(dense, dtype=np.uint8)
    if tab.dtype == np.float32:
        _encode[float](pts, tab, out, off, siz, res, den)
    else:
        _encode[double](pts, tab, out, off, siz, res, den)
    return out


cdef void _encode(real[:, ::1] pts, real[:, ::1] tab, real[:, ::1] out,
                  int64_t[::1] off, int64_t[::1] siz, int64_t[::1] res,
                  cnp.uint8_t[::1] den) noexcept nogil:
    cdef Py_ssize_t n = pts.shape[0], nf = tab.shape[1], nl = off.shape[0]
    cdef Py_ssize_t i, lvl, c, f
    cdef int64_t bx, by, bz, r, row
    cdef real px, py, pz, fx, fy, fz, w, wx, wy, wz
    # level-major so one level's table stays in cache
    for lvl in range(nl):
        r = res[lvl]
        for i in range(n):
            px = pts[i, 0] * r
            py = pts[i, 1] * r
            pz = pts[i, 2] * r
            bx = <int64_t>floor(px)
            by = <int64_t>floor(py)
            bz = <int64_t>floor(pz)
            if bx > r - 1:
                bx = r - 1
            if by > r - 1:
                by = r - 1
            if bz > r - 1:
                bz = r - 1
            fx = px - bx
            fy = py - by
            fz = pz - bz
            for c in range(8):
                wx = fx if (c & 1) else 1 - fx
                wy = fy if (c & 2) else 1 - fy
                wz = fz if (c & 4) else 1 - fz
                w = wx * wy * wz
                row = off[lvl] + _corner_index(bx + (c & 1), by + ((c >> 1) & 1),
                                               bz + ((c >> 2) & 1), r, siz[lvl], den[lvl])
                for f in range(nf):
                    out[i, lvl * nf + f] += w * tab[row, f]


def hash_encode_backward(points01, grad_feats, table_rows, offsets, sizes, resolutions, dense):
    g = np.ascontiguousarray(grad_feats)
    pts = np.ascontiguousarray(points01, dtype=g.dtype)
    nl = len(offsets)
    nf = g.shape[1] // nl
    out = np.zeros((table_rows, nf), dtype=g.dtype)
    off = np.asarray(offsets, dtype=np.int64)
    siz = np.asarray(sizes, dtype=np.int64)
    res = np.asarray(resolutions, dtype=np.int64)
    den = np.asarray(dense, dtype=bool)
    # accumulate one level at a time in double precision
    acc = np.empty((int(siz.max()), nf), dtype=np.float64)
    for lvl in range(nl):
        buf = acc[:siz[lvl]]
        buf.fill(0.0)
        if g.dtype == np.float32:
            _encode_back[float](pts, g, buf, lvl, nf, res[lvl], siz[lvl], den[lvl])
        else:
            _encode_back[double](pts, g, buf, lvl, nf, res[lvl], siz[lvl], den[lvl])
        out[off[lvl]:off[lvl] + siz[lvl]] = buf
    return out


cdef void _encode_back(real[:, ::1] pts, real[:, ::1] g, double[:, ::1] acc, Py_ssize_t lvl,
                       Py_ssize_t nf, int64_t r, int64_t size, bint dense) noexcept nogil:
    cdef Py_ssize_t n = pts.shape[0]
    cdef Py_ssize_t i, c, f
    cdef int64_t bx, by, bz, row
    cdef real px, py, pz, fx, fy, fz, w, wx, wy, wz
    for i in range(n):
        px = pts[i, 0] * r
        py = pts[i, 1] * r
        pz = pts[i, 2] * r
        bx = <int64_t>floor(px)
        by = <int64_t>floor(py)
        bz = <int64_t>floor(pz)
        if bx > r - 1:
            bx = r - 1
        if by > r - 1:
            by = r - 1
        if bz > r - 1:
            bz = r - 1
        fx = px - bx
        fy = py - by
        fz = pz - bz
        for c in range(8):
            wx = fx if (c & 1) else 1 - fx
            wy = fy if (c & 2) else 1 - fy
            wz = fz if (c & 4) else 1 - fz
            w = wx * wy * wz
            row = _corner_index(bx + (c & 1), by + ((c >> 1) & 1),
                                bz + ((c >> 2) & 1), r, size, dense)
            for f in range(nf):
                acc[row, f] += <double>(w * g[i, lvl * nf + f])



cdef inline bint _owns_tie(double dx, double dy) nogil:
    return dy < 0 or (dy == 0 and dx > 0)


cdef inline double _edge(double ax, double ay, double bx, double by,
                        double px, double py) noexcept nogil:
    # cross((b - a), (p - a)), always evaluated from the lexicographically smaller
    # endpoint so that a shared edge gives exactly opposite values in both triangles
    if ax < bx or (ax == bx and ay < by):
        return (bx - ax) * (py - ay) - (by - ay) * (px - ax)
    return -((ax - bx) * (py - by) - (ay - by) * (px - bx))


def rasterize_triangles(xy, key, int height, int width, double key_min):
    cdef double[:, :, ::1] v = np.ascontiguousarray(xy, dtype=np.float64)
    cdef double[:, ::1] k = np.ascontiguousarray(key, dtype=np.float64)
    tri_np = np.full((height, width), -1, dtype=np.int32)
    bary_np = np.zeros((height, width, 3), dtype=np.float64)
    z_np = np.full((height, width), np.inf, dtype=np.float64)
    cdef int[:, ::1] tri = tri_np
    cdef double[:, :, ::1] bary = bary_np
    cdef double[:, ::1] zb = z_np
    cdef Py_ssize_t f, nfaces = v.shape[0]
    cdef int x, y, x0, x1, y0, y1, i
    cdef int o1, o2
    cdef double ax, ay, bx, by, cx, cy, area, tmpx, tmpy
    cdef double e0x, e0y, e1x, e1y, e2x, e2y, w0, w1, w2, px, py, kk
    cdef bint t0, t1, t2, ok
    with nogil:
        for f in range(nfaces):
            ax = v[f, 0, 0]; ay = v[f, 0, 1]
            bx = v[f, 1, 0]; by = v[f, 1, 1]
            cx = v[f, 2, 0]; cy = v[f, 2, 1]
            o1 = 1; o2 = 2
            area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
            if area < 0:
                tmpx = bx; tmpy = by
                bx = cx; by = cy
                cx = tmpx; cy = tmpy
                o1 = 2; o2 = 1
                area = -area
            if not area > 1e-12:
                continue
            x0 = <int>floor(min(ax, min(bx, cx)) - 0.5)
            x1 = <int>ceil(max(ax, max(bx, cx)) - 0.5)
            y0 = <int>floor(min(ay, min(by, cy)) - 0.5)
            y1 = <int>ceil(max(ay, max(by, cy)) - 0.5)
            if x0 < 0:
                x0 = 0
            if y0 < 0:
                y0 = 0
            if x1 > width - 1:
                x1 = width - 1
            if y1 > height - 1:
                y1 = height - 1
            # edge i is opposite vertex i
            e0x = cx - bx; e0y = cy - by
            e1x = ax - cx; e1y = ay - cy
            e2x = bx - ax; e2y = by - ay
            t0 = _owns_tie(e0x, e0y)
            t1 = _owns_tie(e1x, e1y)
            t2 = _owns_tie(e2x, e2y)
            for y in range(y0, y1 + 1):
                py = y + 0.5
                for x in range(x0, x1 + 1):
                    px = x + 0.5
                    w0 = _edge(bx, by, cx, cy, px, py)
                    w1 = _edge(cx, cy, ax, ay, px, py)
                    w2 = _edge(ax, ay, bx, by, px, py)
                    ok = (w0 >= 0 if t0 else w0 > 0) and (w1 >= 0 if t1 else w1 > 0) \
                        and (w2 >= 0 if t2 else w2 > 0)
                    if not ok:
                        continue
                    w0 = w0 / area
                    w1 = w1 / area
                    w2 = w2 / area
                    kk = w0 * k[f, 0] + w1 * k[f, o1] + w2 * k[f, o2]
                    if kk < zb[y, x] and kk >= key_min:
                        zb[y, x] = kk
                        tri[y, x] = <int>f
                        bary[y, x, 0] = w0
                        bary[y, x, o1] = w1
                        bary[y, x, o2] = w2
    return tri_np, bary_np, z_np


def min_cut_seam(cost):
    cdef double[:, ::1] e = np.ascontiguousarray(cost, dtype=np.float64)
    cdef Py_ssize_t nr = e.shape[0], nc = e.shape[1], r, c, lo, hi, j
    acc_np = np.empty((nr, nc), dtype=np.float64)
    cdef double[:, ::1] acc = acc_np
    path_np = np.empty(nr, dtype=np.int64)
    cdef int64_t[::1] path = path_np
    cdef double best
    cdef Py_ssize_t arg
    with nogil:
        for c in range(nc):
            acc[0, c] = e[0, c]
        for r in range(1, nr):
            for c in range(nc):
                best = acc[r - 1, c]
                if c > 0 and acc[r - 1, c - 1] < best:
                    best = acc[r - 1, c - 1]
                if c < nc - 1 and acc[r - 1, c + 1] < best:
                    best = acc[r - 1, c + 1]
                acc[r, c] = e[r, c] + best
        arg = 0
        for c in range(1, nc):
            if acc[nr - 1, c] < acc[nr - 1, arg]:
                arg = c
        path[nr - 1] = arg
        for r in range(nr - 2, -1, -1):
            c = path[r + 1]
            lo = c - 1 if c > 0 else 0
            hi = c + 1 if c < nc - 1 else nc - 1
            arg = lo
            for j in range(lo + 1, hi + 1):
                if acc[r, j] < acc[r, arg]:
                    arg = j
            path[r] = arg
    return path_np


def adam_update(param, grad, m, v, double lr, double beta1, double beta2, double eps, int step):
    if param.dtype == np.float32:
        _adam[float](param.reshape(-1), grad.reshape(-1), m.reshape(-1), v.reshape(-1),
                     lr, beta1, beta2, eps, step)
    else:
        _adam[double](param.reshape(-1), grad.reshape(-1), m.reshape(-1), v.reshape(-1),
                      lr, beta1, beta2, eps, step)


cdef void _adam(real[::1] p, real[::1] g, real[::1] m, real[::1] v, double lr,
                double beta1, double beta2, double eps, int step) noexcept nogil:
    cdef Py_ssize_t i, n = p.shape[0]
    cdef real b1 = <real>beta1, b2 = <real>beta2
    cdef real one_b1 = <real>(1.0 - beta1), one_b2 = <real>(1.0 - beta2)
    cdef real step_size = <real>(lr / (1.0 - beta1 ** step))
    cdef real inv_bc2 = <real>(1.0 / (1.0 - beta2 ** step))
    cdef real e = <real>eps, gi
    for i in range(n):
        gi = g[i]
        m[i] = b1 * m[i] + one_b1 * gi
        v[i] = b2 * v[i] + one_b2 * (gi * gi)
        p[i] -= step_size * m[i] / (sqrt(v[i] * inv_bc2) + e)
