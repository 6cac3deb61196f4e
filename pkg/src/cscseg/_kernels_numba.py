"""Numba-compiled hot kernels.

All kernels are structured so every output element is produced by exactly
one prange iteration using fixed-order inner loops, which makes results
bitwise deterministic regardless of thread count. Inner loops run over
the contiguous last axis with no reductions into scalars (a scalar
accumulator would serialize the FP dependency chain); the kernel-gradient
kernel therefore accumulates into a row vector and collapses it once at
the end.
"""

import numpy as np
from numba import njit, prange


@njit(cache=True, parallel=True)
def conv2d_kernel(xp, w, stride, out):
    # xp: (n, c_in, h + 2p, w + 2p), out: (n, c_out, oh, ow) zero-filled.
    n, c_in = xp.shape[0], xp.shape[1]
    c_out, _, k_h, k_w = w.shape
    oh, ow = out.shape[2], out.shape[3]
    for nc in prange(n * c_out):
        ni = nc // c_out
        co = nc % c_out
        o = out[ni, co]
        for ci in range(c_in):
            xc = xp[ni, ci]
            for a in range(k_h):
                for b in range(k_w):
                    wv = w[co, ci, a, b]
                    for i in range(oh):
                        row = xc[i * stride + a]
                        orow = o[i]
                        if stride == 1:
                            for j in range(ow):
                                orow[j] += wv * row[j + b]
                        else:
                            for j in range(ow):
                                orow[j] += wv * row[j * stride + b]
    return out


@njit(cache=True, parallel=True)
def conv2d_k3s1_kernel(xp, w, out):
    # 3x3, stride-1 stencil: one pass over the image per channel pair,
    # nine FMAs per pixel from three resident rows. The first input
    # channel writes, the rest accumulate, so `out` may be uninitialized.
    n, c_in = xp.shape[0], xp.shape[1]
    c_out = w.shape[0]
    oh, ow = out.shape[2], out.shape[3]
    for nc in prange(n * c_out):
        ni = nc // c_out
        co = nc % c_out
        o = out[ni, co]
        for ci in range(c_in):
            xc = xp[ni, ci]
            w00 = w[co, ci, 0, 0]
            w01 = w[co, ci, 0, 1]
            w02 = w[co, ci, 0, 2]
            w10 = w[co, ci, 1, 0]
            w11 = w[co, ci, 1, 1]
            w12 = w[co, ci, 1, 2]
            w20 = w[co, ci, 2, 0]
            w21 = w[co, ci, 2, 1]
            w22 = w[co, ci, 2, 2]
            if ci == 0:
                for i in range(oh):
                    r0 = xc[i]
                    r1 = xc[i + 1]
                    r2 = xc[i + 2]
                    orow = o[i]
                    for j in range(ow):
                        orow[j] = (
                            w00 * r0[j] + w01 * r0[j + 1] + w02 * r0[j + 2]
                            + w10 * r1[j] + w11 * r1[j + 1] + w12 * r1[j + 2]
                            + w20 * r2[j] + w21 * r2[j + 1] + w22 * r2[j + 2]
                        )
            else:
                for i in range(oh):
                    r0 = xc[i]
                    r1 = xc[i + 1]
                    r2 = xc[i + 2]
                    orow = o[i]
                    for j in range(ow):
                        orow[j] += (
                            w00 * r0[j] + w01 * r0[j + 1] + w02 * r0[j + 2]
                            + w10 * r1[j] + w11 * r1[j + 1] + w12 * r1[j + 2]
                            + w20 * r2[j] + w21 * r2[j + 1] + w22 * r2[j + 2]
                        )
    return out


@njit(cache=True, parallel=True)
def conv2d_input_grad_kernel(gy, w, stride, gxp):
    # gxp: (n, c_in, in_h + 2p, in_w + 2p) zero-filled; caller strips padding.
    n, c_out = gy.shape[0], gy.shape[1]
    _, c_in, k_h, k_w = w.shape
    oh, ow = gy.shape[2], gy.shape[3]
    for nc in prange(n * c_in):
        ni = nc // c_in
        ci = nc % c_in
        g = gxp[ni, ci]
        for co in range(c_out):
            gc = gy[ni, co]
            for a in range(k_h):
                for b in range(k_w):
                    wv = w[co, ci, a, b]
                    for i in range(oh):
                        grow = g[i * stride + a]
                        yrow = gc[i]
                        if stride == 1:
                            for j in range(ow):
                                grow[j + b] += wv * yrow[j]
                        else:
                            for j in range(ow):
                                grow[j * stride + b] += wv * yrow[j]
    return gxp


@njit(cache=True, parallel=True)
def conv2d_kernel_grad_kernel(xp, gy, stride, gw):
    # gw: (c_out, c_in, k_h, k_w) zero-filled.
    n = xp.shape[0]
    c_out, c_in, k_h, k_w = gw.shape
    oh, ow = gy.shape[2], gy.shape[3]
    for cc in prange(c_out * c_in):
        co = cc // c_in
        ci = cc % c_in
        acc = np.zeros(ow, dtype=gw.dtype)
        for a in range(k_h):
            for b in range(k_w):
                for j in range(ow):
                    acc[j] = 0.0
                for ni in range(n):
                    xc = xp[ni, ci]
                    gc = gy[ni, co]
                    for i in range(oh):
                        row = xc[i * stride + a]
                        yrow = gc[i]
                        if stride == 1:
                            for j in range(ow):
                                acc[j] += yrow[j] * row[j + b]
                        else:
                            for j in range(ow):
                                acc[j] += yrow[j] * row[j * stride + b]
                total = acc[0] * 0.0
                for j in range(ow):
                    total += acc[j]
                gw[co, ci, a, b] = total
    return gw


@njit(cache=True, parallel=True)
def conv2d_kernel_grad_k3s1_kernel(xp, gy, gw):
    # 3x3, stride-1: one image pass per kernel row, three accumulators.
    n = xp.shape[0]
    c_out, c_in = gw.shape[0], gw.shape[1]
    oh, ow = gy.shape[2], gy.shape[3]
    for cc in prange(c_out * c_in):
        co = cc // c_in
        ci = cc % c_in
        a0 = np.zeros(ow, dtype=gw.dtype)
        a1 = np.zeros(ow, dtype=gw.dtype)
        a2 = np.zeros(ow, dtype=gw.dtype)
        for a in range(3):
            for j in range(ow):
                a0[j] = 0.0
                a1[j] = 0.0
                a2[j] = 0.0
            for ni in range(n):
                xc = xp[ni, ci]
                gc = gy[ni, co]
                for i in range(oh):
                    row = xc[i + a]
                    yrow = gc[i]
                    for j in range(ow):
                        gv = yrow[j]
                        a0[j] += gv * row[j]
                        a1[j] += gv * row[j + 1]
                        a2[j] += gv * row[j + 2]
            t0 = a0[0] * 0.0
            t1 = t0
            t2 = t0
            for j in range(ow):
                t0 += a0[j]
                t1 += a1[j]
                t2 += a2[j]
            gw[co, ci, a, 0] = t0
            gw[co, ci, a, 1] = t1
            gw[co, ci, a, 2] = t2
    return gw


@njit(cache=True, parallel=True)
def upsample2x_kernel(x, i0, i1, w0, w1, j0, j1, v0, v1, out):
    # Separable bilinear gather; expression order matches the numpy path
    # (h axis first, then w) so both backends agree bitwise.
    n, c = x.shape[0], x.shape[1]
    h2, w2 = out.shape[2], out.shape[3]
    for nc in prange(n * c):
        ni = nc // c
        ci = nc % c
        xc = x[ni, ci]
        oc = out[ni, ci]
        for i in range(h2):
            r0 = xc[i0[i]]
            r1 = xc[i1[i]]
            wa = w0[i]
            wb = w1[i]
            orow = oc[i]
            for j in range(w2):
                ja = j0[j]
                jb = j1[j]
                orow[j] = (r0[ja] * wa + r1[ja] * wb) * v0[j] + (
                    r0[jb] * wa + r1[jb] * wb
                ) * v1[j]
    return out


@njit(cache=True, parallel=True)
def upsample2x_adjoint_kernel(g, i0, i1, w0, w1, j0, j1, v0, v1, out):
    # Scatter adjoint of the separable bilinear 2x gather; out zero-filled.
    n, c = g.shape[0], g.shape[1]
    h2, w2 = g.shape[2], g.shape[3]
    for nc in prange(n * c):
        ni = nc // c
        ci = nc % c
        gc = g[ni, ci]
        oc = out[ni, ci]
        for i in range(h2):
            r0 = oc[i0[i]]
            r1 = oc[i1[i]]
            grow = gc[i]
            for j in range(w2):
                gv = grow[j]
                r0[j0[j]] += w0[i] * v0[j] * gv
                r0[j1[j]] += w0[i] * v1[j] * gv
                r1[j0[j]] += w1[i] * v0[j] * gv
                r1[j1[j]] += w1[i] * v1[j] * gv
    return out
