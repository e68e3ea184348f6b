# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled compositing kernels; semantics identical to splat_np."""

import numpy as np

cimport numpy as cnp
from libc.math cimport ceil, exp, floor

cnp.import_array()

cdef double ALPHA_CLAMP = 0.99


def composite_forward(long[::1] order,
                      double[:, ::1] mean2d, double[::1] sigma, double[::1] depth,
                      double[:, ::1] color, double[::1] opacity,
                      double[::1] background, int width, int height):
    rgb_arr = np.zeros((height, width, 3))
    trans_arr = np.ones((height, width))
    depth_num_arr = np.zeros((height, width))
    cdef double[:, :, ::1] rgb = rgb_arr
    cdef double[:, ::1] trans = trans_arr
    cdef double[:, ::1] depth_num = depth_num_arr

    cdef Py_ssize_t oi, gi
    cdef int x0, x1, y0, y1, x, y
    cdef double mx, my, sg, s3, px, py, r2, g, a, w, t, z, c0, c1, c2

    for oi in range(order.shape[0]):
        gi = order[oi]
        mx = mean2d[gi, 0]
        my = mean2d[gi, 1]
        sg = sigma[gi]
        s3 = 3.0 * sg
        x0 = <int>floor(mx - s3)
        x1 = <int>ceil(mx + s3)
        y0 = <int>floor(my - s3)
        y1 = <int>ceil(my + s3)
        if x0 < 0:
            x0 = 0
        if x1 > width - 1:
            x1 = width - 1
        if y0 < 0:
            y0 = 0
        if y1 > height - 1:
            y1 = height - 1
        if x1 < x0 or y1 < y0:
            continue
        z = depth[gi]
        c0 = color[gi, 0]
        c1 = color[gi, 1]
        c2 = color[gi, 2]
        for y in range(y0, y1 + 1):
            py = y + 0.5
            for x in range(x0, x1 + 1):
                px = x + 0.5
                r2 = (px - mx) ** 2 + (py - my) ** 2
                if r2 > 9.0 * sg * sg:
                    continue
                g = exp(-r2 / (2.0 * sg * sg))
                a = opacity[gi] * g
                if a > ALPHA_CLAMP:
                    a = ALPHA_CLAMP
                t = trans[y, x]
                w = a * t
                rgb[y, x, 0] += w * c0
                rgb[y, x, 1] += w * c1
                rgb[y, x, 2] += w * c2
                depth_num[y, x] += w * z
                trans[y, x] = t * (1.0 - a)

    alpha_arr = 1.0 - trans_arr
    rgb_arr = rgb_arr + trans_arr[:, :, None] * np.asarray(background)
    with np.errstate(invalid="ignore", divide="ignore"):
        depth_img = np.where(alpha_arr > 0.0,
                             depth_num_arr / np.maximum(alpha_arr, 1e-300), np.inf)
    return rgb_arr, alpha_arr, trans_arr, depth_img


def composite_backward(long[::1] order,
                       double[:, ::1] mean2d, double[::1] sigma, double[::1] depth,
                       double[:, ::1] color, double[::1] opacity,
                       double[::1] background, double[:, ::1] tfinal,
                       double[:, :, ::1] u_rgb, double[:, ::1] u_alpha,
                       int width, int height):
    cdef Py_ssize_t n = mean2d.shape[0]
    d_mean2d_arr = np.zeros((n, 2))
    d_sigma_arr = np.zeros(n)
    d_color_arr = np.zeros((n, 3))
    d_opacity_arr = np.zeros(n)
    cdef double[:, ::1] d_mean2d = d_mean2d_arr
    cdef double[::1] d_sigma = d_sigma_arr
    cdef double[:, ::1] d_color = d_color_arr
    cdef double[::1] d_opacity = d_opacity_arr

    t_cur_arr = np.asarray(tfinal).copy()
    suffix_arr = np.zeros((height, width, 3))
    cdef double[:, ::1] t_cur = t_cur_arr
    cdef double[:, :, ::1] suffix = suffix_arr

    cdef Py_ssize_t oi, gi
    cdef int x0, x1, y0, y1, x, y
    cdef double mx, my, sg, s3, px, py, r2, g, raw, a, one_m, t_i, w
    cdef double grad_a, dg, inv_s2, op, c0, c1, c2, b0, b1, b2, tf

    b0 = background[0]
    b1 = background[1]
    b2 = background[2]

    for oi in range(order.shape[0] - 1, -1, -1):
        gi = order[oi]
        mx = mean2d[gi, 0]
        my = mean2d[gi, 1]
        sg = sigma[gi]
        op = opacity[gi]
        s3 = 3.0 * sg
        x0 = <int>floor(mx - s3)
        x1 = <int>ceil(mx + s3)
        y0 = <int>floor(my - s3)
        y1 = <int>ceil(my + s3)
        if x0 < 0:
            x0 = 0
        if x1 > width - 1:
            x1 = width - 1
        if y0 < 0:
            y0 = 0
        if y1 > height - 1:
            y1 = height - 1
        if x1 < x0 or y1 < y0:
            continue
        c0 = color[gi, 0]
        c1 = color[gi, 1]
        c2 = color[gi, 2]
        inv_s2 = 1.0 / (sg * sg)
        for y in range(y0, y1 + 1):
            py = y + 0.5
            for x in range(x0, x1 + 1):
                px = x + 0.5
                r2 = (px - mx) ** 2 + (py - my) ** 2
                if r2 > 9.0 * sg * sg:
                    continue
                g = exp(-r2 / (2.0 * sg * sg))
                raw = op * g
                a = raw
                if a > ALPHA_CLAMP:
                    a = ALPHA_CLAMP
                one_m = 1.0 - a
                t_i = t_cur[y, x] / one_m
                tf = tfinal[y, x]
                w = a * t_i

                d_color[gi, 0] += u_rgb[y, x, 0] * w
                d_color[gi, 1] += u_rgb[y, x, 1] * w
                d_color[gi, 2] += u_rgb[y, x, 2] * w

                if raw < ALPHA_CLAMP:
                    grad_a = (u_rgb[y, x, 0] * (t_i * c0 - (suffix[y, x, 0] + tf * b0) / one_m)
                              + u_rgb[y, x, 1] * (t_i * c1 - (suffix[y, x, 1] + tf * b1) / one_m)
                              + u_rgb[y, x, 2] * (t_i * c2 - (suffix[y, x, 2] + tf * b2) / one_m))
                    grad_a += u_alpha[y, x] * tf / one_m
                    d_opacity[gi] += grad_a * g
                    dg = grad_a * op
                    d_mean2d[gi, 0] += dg * g * (px - mx) * inv_s2
                    d_mean2d[gi, 1] += dg * g * (py - my) * inv_s2
                    d_sigma[gi] += dg * g * r2 / (sg * sg * sg)

                suffix[y, x, 0] += w * c0
                suffix[y, x, 1] += w * c1
                suffix[y, x, 2] += w * c2
                t_cur[y, x] = t_i

    return d_mean2d_arr, d_sigma_arr, d_color_arr, d_opacity_arr
