"""Pure-numpy convolution kernels (im2col + BLAS).

Fallback path for environments without numba; selected with
CSCSEG_BACKEND=numpy. Same call contracts as the numba kernels: padded
input in, zero-filled output buffer in.
"""

import numpy as np


def _im2col(xp, k_h, k_w, stride, oh, ow):
    # (n, c, hp, wp) -> (n, c*k_h*k_w, oh*ow) with a single copy.
    n, c = xp.shape[0], xp.shape[1]
    s = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, c, k_h, k_w, oh, ow),
        strides=(s[0], s[1], s[2], s[3], s[2] * stride, s[3] * stride),
    )
    return np.ascontiguousarray(view).reshape(n, c * k_h * k_w, oh * ow)


def conv2d_kernel(xp, w, stride, out):
    n = xp.shape[0]
    c_out, c_in, k_h, k_w = w.shape
    oh, ow = out.shape[2], out.shape[3]
    col = _im2col(xp, k_h, k_w, stride, oh, ow)
    res = np.matmul(w.reshape(c_out, -1), col)
    out += res.reshape(n, c_out, oh, ow)
    return out


def conv2d_input_grad_kernel(gy, w, stride, gxp):
    n, c_out = gy.shape[0], gy.shape[1]
    _, c_in, k_h, k_w = w.shape
    oh, ow = gy.shape[2], gy.shape[3]
    hp, wp = gxp.shape[2], gxp.shape[3]
    # cols[i] = W^T @ gy[i], then scatter-add back to image positions.
    cols = np.matmul(w.reshape(c_out, -1).T, gy.reshape(n, c_out, oh * ow))
    ci_idx, a_idx, b_idx = np.meshgrid(
        np.arange(c_in), np.arange(k_h), np.arange(k_w), indexing="ij"
    )
    i_idx, j_idx = np.meshgrid(np.arange(oh), np.arange(ow), indexing="ij")
    rows = a_idx.reshape(-1, 1) + stride * i_idx.reshape(1, -1)
    colsj = b_idx.reshape(-1, 1) + stride * j_idx.reshape(1, -1)
    flat = (ci_idx.reshape(-1, 1) * hp + rows) * wp + colsj
    flat = flat.reshape(-1)
    gflat = gxp.reshape(n, -1)
    for i in range(n):
        np.add.at(gflat[i], flat, cols[i].reshape(-1))
    return gxp


def conv2d_kernel_grad_kernel(xp, gy, stride, gw):
    n = xp.shape[0]
    c_out, c_in, k_h, k_w = gw.shape
    oh, ow = gy.shape[2], gy.shape[3]
    col = _im2col(xp, k_h, k_w, stride, oh, ow)
    res = np.matmul(gy.reshape(n, c_out, oh * ow), col.transpose(0, 2, 1))
    gw += res.sum(axis=0).reshape(c_out, c_in, k_h, k_w)
    return gw


def upsample2x_kernel(x, i0, i1, w0, w1, j0, j1, v0, v1, out):
    xh = x[:, :, i0, :] * w0[None, None, :, None] + x[:, :, i1, :] * w1[None, None, :, None]
    out[...] = (
        xh[:, :, :, j0] * v0[None, None, None, :]
        + xh[:, :, :, j1] * v1[None, None, None, :]
    )
    return out


def upsample2x_adjoint_kernel(g, i0, i1, w0, w1, j0, j1, v0, v1, out):
    gw_ = np.zeros(g.shape[:3] + (out.shape[3],), dtype=g.dtype)
    gt = np.moveaxis(g, 3, 0)
    gwt = np.moveaxis(gw_, 3, 0)
    np.add.at(gwt, j0, gt * v0[:, None, None, None])
    np.add.at(gwt, j1, gt * v1[:, None, None, None])
    gwt2 = np.moveaxis(gw_, 2, 0)
    ght = np.moveaxis(out, 2, 0)
    np.add.at(ght, i0, gwt2 * w0[:, None, None, None])
    np.add.at(ght, i1, gwt2 * w1[:, None, None, None])
    return out
