# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled splatting kernels: the hot per-pixel compositing loops.

Mirrors the contract of ``_kernels_np``: identical packed inputs in
compositing order, per-pixel ordered compositing, tiles as pure work
scheduling (renders are bitwise tile-size invariant).
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()


def forward(
    double[:, ::1] pos,
    double[::1] cos_t,
    double[::1] sin_t,
    double[::1] invl0,
    double[::1] invl1,
    double[::1] alpha,
    double[:, ::1] ucolor,
    int[:, ::1] bbox,
    double[::1] background,
    int height,
    int width,
    int tile,
    double cutoff_q,
    double t_stop,
):
    out = np.empty((height, width, 3))
    cdef double[:, :, ::1] o = out
    cdef int n = pos.shape[0]
    sel_arr = np.empty(max(n, 1), dtype=np.int32)
    cdef int[::1] sel = sel_arr
    cdef int ty0, tx0, ty1, tx1, iy, ix, k, j, m
    cdef int x0, x1, y0, y1
    cdef double cx, cy, dx, dy, e0, e1, q, a, t, r, g, b
    cdef double bg0 = background[0], bg1 = background[1], bg2 = background[2]

    for ty0 in range(0, height, tile):
        ty1 = min(ty0 + tile, height)
        for tx0 in range(0, width, tile):
            tx1 = min(tx0 + tile, width)
            m = 0
            for k in range(n):
                if (bbox[k, 0] < tx1 and bbox[k, 1] > tx0
                        and bbox[k, 2] < ty1 and bbox[k, 3] > ty0):
                    sel[m] = k
                    m += 1
            for iy in range(ty0, ty1):
                cy = iy + 0.5
                for ix in range(tx0, tx1):
                    cx = ix + 0.5
                    t = 1.0
                    r = 0.0
                    g = 0.0
                    b = 0.0
                    for j in range(m):
                        if t < t_stop:
                            break
                        k = sel[j]
                        if ix < bbox[k, 0] or ix >= bbox[k, 1] \
                                or iy < bbox[k, 2] or iy >= bbox[k, 3]:
                            continue
                        dx = cx - pos[k, 0]
                        dy = cy - pos[k, 1]
                        e0 = cos_t[k] * dx + sin_t[k] * dy
                        e1 = -sin_t[k] * dx + cos_t[k] * dy
                        q = e0 * e0 * invl0[k] + e1 * e1 * invl1[k]
                        if q > cutoff_q:
                            continue
                        a = alpha[k] * exp(-0.5 * q)
                        r += ucolor[k, 0] * (a * t)
                        g += ucolor[k, 1] * (a * t)
                        b += ucolor[k, 2] * (a * t)
                        t *= 1.0 - a
                    o[iy, ix, 0] = r + bg0 * t
                    o[iy, ix, 1] = g + bg1 * t
                    o[iy, ix, 2] = b + bg2 * t
    return out


def backward(
    double[:, ::1] pos,
    double[::1] cos_t,
    double[::1] sin_t,
    double[::1] invl0,
    double[::1] invl1,
    double[::1] alpha,
    double[:, ::1] ucolor,
    int[:, ::1] bbox,
    double[::1] background,
    double[:, :, ::1] grad,
    int height,
    int width,
    int tile,
    double cutoff_q,
    double t_stop,
):
    cdef int n = pos.shape[0]
    d_pos_arr = np.zeros((n, 2))
    d_ls_arr = np.zeros((n, 2))
    d_rot_arr = np.zeros(n)
    d_logit_arr = np.zeros(n)
    d_uc_arr = np.zeros((n, 3))
    cdef double[:, ::1] d_pos = d_pos_arr
    cdef double[:, ::1] d_ls = d_ls_arr
    cdef double[::1] d_rot = d_rot_arr
    cdef double[::1] d_logit = d_logit_arr
    cdef double[:, ::1] d_uc = d_uc_arr

    cdef int cap = max(n, 1)
    sel_arr = np.empty(cap, dtype=np.int32)
    av_arr = np.empty(cap)
    tv_arr = np.empty(cap)
    cdef int[::1] sel = sel_arr
    cdef double[::1] av = av_arr
    cdef double[::1] tv = tv_arr

    cdef int ty0, tx0, ty1, tx1, iy, ix, k, j, m, used
    cdef double cx, cy, dx, dy, e0, e1, q, a, t, w
    cdef double g0, g1, g2, s0, s1, s2, da, dla, dqc, v0, v1
    cdef double bg0 = background[0], bg1 = background[1], bg2 = background[2]

    for ty0 in range(0, height, tile):
        ty1 = min(ty0 + tile, height)
        for tx0 in range(0, width, tile):
            tx1 = min(tx0 + tile, width)
            m = 0
            for k in range(n):
                if (bbox[k, 0] < tx1 and bbox[k, 1] > tx0
                        and bbox[k, 2] < ty1 and bbox[k, 3] > ty0):
                    sel[m] = k
                    m += 1
            if m == 0:
                continue
            for iy in range(ty0, ty1):
                cy = iy + 0.5
                for ix in range(tx0, tx1):
                    g0 = grad[iy, ix, 0]
                    g1 = grad[iy, ix, 1]
                    g2 = grad[iy, ix, 2]
                    if g0 == 0.0 and g1 == 0.0 and g2 == 0.0:
                        continue
                    cx = ix + 0.5
                    # replay the forward sweep, recording response and
                    # incoming transmittance per consulted splat
                    t = 1.0
                    used = 0
                    for j in range(m):
                        if t < t_stop:
                            break
                        used = j + 1
                        av[j] = 0.0
                        tv[j] = t
                        k = sel[j]
                        if ix < bbox[k, 0] or ix >= bbox[k, 1] \
                                or iy < bbox[k, 2] or iy >= bbox[k, 3]:
                            continue
                        dx = cx - pos[k, 0]
                        dy = cy - pos[k, 1]
                        e0 = cos_t[k] * dx + sin_t[k] * dy
                        e1 = -sin_t[k] * dx + cos_t[k] * dy
                        q = e0 * e0 * invl0[k] + e1 * e1 * invl1[k]
                        if q > cutoff_q:
                            continue
                        a = alpha[k] * exp(-0.5 * q)
                        av[j] = a
                        t *= 1.0 - a
                    # color behind the current splat, including background
                    s0 = bg0 * t
                    s1 = bg1 * t
                    s2 = bg2 * t
                    for j in range(used - 1, -1, -1):
                        a = av[j]
                        if a == 0.0:
                            continue
                        k = sel[j]
                        t = tv[j]
                        w = a * t
                        d_uc[k, 0] += g0 * w
                        d_uc[k, 1] += g1 * w
                        d_uc[k, 2] += g2 * w
                        da = (
                            (g0 * ucolor[k, 0] + g1 * ucolor[k, 1] + g2 * ucolor[k, 2]) * t
                            - (g0 * s0 + g1 * s1 + g2 * s2) / (1.0 - a)
                        )
                        dla = da * a
                        d_logit[k] += dla * (1.0 - alpha[k])
                        dqc = -0.5 * dla
                        dx = cx - pos[k, 0]
                        dy = cy - pos[k, 1]
                        e0 = cos_t[k] * dx + sin_t[k] * dy
                        e1 = -sin_t[k] * dx + cos_t[k] * dy
                        d_ls[k, 0] += dqc * (-2.0 * invl0[k] * e0 * e0)
                        d_ls[k, 1] += dqc * (-2.0 * invl1[k] * e1 * e1)
                        d_rot[k] += dqc * (2.0 * (invl0[k] - invl1[k]) * e0 * e1)
                        v0 = invl0[k] * e0
                        v1 = invl1[k] * e1
                        d_pos[k, 0] += dqc * (-2.0 * (cos_t[k] * v0 - sin_t[k] * v1))
                        d_pos[k, 1] += dqc * (-2.0 * (sin_t[k] * v0 + cos_t[k] * v1))
                        s0 += ucolor[k, 0] * w
                        s1 += ucolor[k, 1] * w
                        s2 += ucolor[k, 2] * w
    return d_pos_arr, d_ls_arr, d_rot_arr, d_logit_arr, d_uc_arr
