# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot kernels (see ``_pykernels`` for the reference twin)."""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor, INFINITY

cnp.import_array()


def conv2d(const double[:, :, ::1] x, const double[:, :, :, ::1] weight,
           const double[::1] bias, int stride, int padding):
    cdef Py_ssize_t c_out = weight.shape[0], c_in = weight.shape[1]
    cdef Py_ssize_t kh = weight.shape[2], kw = weight.shape[3]
    cdef Py_ssize_t h = x.shape[1], w = x.shape[2]
    cdef Py_ssize_t ho = (h + 2 * padding - kh) // stride + 1
    cdef Py_ssize_t wo = (w + 2 * padding - kw) // stride + 1
    out_arr = np.empty((c_out, ho, wo), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t o, c, i, j, y, xx, sy, sx
    cdef double acc, wv
    with nogil:
        for o in range(c_out):
            for y in range(ho):
                for xx in range(wo):
                    out[o, y, xx] = bias[o]
            for c in range(c_in):
                for i in range(kh):
                    for j in range(kw):
                        wv = weight[o, c, i, j]
                        if wv == 0.0:
                            continue
                        for y in range(ho):
                            sy = y * stride + i - padding
                            if sy < 0 or sy >= h:
                                continue
                            for xx in range(wo):
                                sx = xx * stride + j - padding
                                if sx < 0 or sx >= w:
                                    continue
                                out[o, y, xx] += wv * x[c, sy, sx]
    return out_arr


def nms(const double[:, ::1] scores, int radius):
    cdef Py_ssize_t h = scores.shape[0], w = scores.shape[1]
    out_arr = np.zeros((h, w), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t y, x, dy, dx, qy, qx
    cdef double v, nb
    cdef bint keep
    with nogil:
        for y in range(h):
            for x in range(w):
                v = scores[y, x]
                keep = True
                for dy in range(-radius, radius + 1):
                    qy = y + dy
                    if qy < 0 or qy >= h:
                        continue
                    for dx in range(-radius, radius + 1):
                        qx = x + dx
                        if qx < 0 or qx >= w or (dy == 0 and dx == 0):
                            continue
                        nb = scores[qy, qx]
                        if nb > v or (nb == v and (dy < 0 or (dy == 0 and dx < 0))):
                            keep = False
                            break
                    if not keep:
                        break
                if keep:
                    out[y, x] = v
    return out_arr


def nearest_neighbors(const double[:, ::1] a, const double[:, ::1] b):
    cdef Py_ssize_t na = a.shape[0], nb = b.shape[0], c = a.shape[1]
    idx_arr = np.empty(na, dtype=np.int64)
    dist_arr = np.empty(na, dtype=np.float64)
    cdef long long[::1] idx = idx_arr
    cdef double[::1] dist = dist_arr
    cdef Py_ssize_t i, j, k, best
    cdef double d, diff, best_d
    with nogil:
        for i in range(na):
            best = 0
            best_d = INFINITY
            for j in range(nb):
                d = 0.0
                for k in range(c):
                    diff = a[i, k] - b[j, k]
                    d += diff * diff
                if d < best_d:
                    best_d = d
                    best = j
            idx[i] = best
            dist[i] = best_d
    return idx_arr, dist_arr


def bilinear_sample(const double[:, :, ::1] fmap, const double[:, ::1] xy):
    cdef Py_ssize_t c = fmap.shape[0], h = fmap.shape[1], w = fmap.shape[2]
    cdef Py_ssize_t n = xy.shape[0]
    out_arr = np.empty((n, c), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t p, ch, x0, y0, x1, y1
    cdef double x, y, wx, wy, top, bot
    with nogil:
        for p in range(n):
            x = xy[p, 0]
            y = xy[p, 1]
            x0 = <Py_ssize_t>floor(x)
            y0 = <Py_ssize_t>floor(y)
            if x0 < 0:
                x0 = 0
            if x0 > w - 1:
                x0 = w - 1
            if y0 < 0:
                y0 = 0
            if y0 > h - 1:
                y0 = h - 1
            x1 = x0 + 1 if x0 + 1 < w else w - 1
            y1 = y0 + 1 if y0 + 1 < h else h - 1
            wx = x - x0
            wy = y - y0
            for ch in range(c):
                top = fmap[ch, y0, x0] * (1 - wx) + fmap[ch, y0, x1] * wx
                bot = fmap[ch, y1, x0] * (1 - wx) + fmap[ch, y1, x1] * wx
                out[p, ch] = top * (1 - wy) + bot * wy
    return out_arr
