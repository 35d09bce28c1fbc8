"""Pure-numpy kernel implementations.

Convolution is lowered to a patch matrix (im2col) and a single BLAS
matmul; pooling uses strided window views.  These are the fallback used
when numba is unavailable or disabled via BRAINCNN_NO_NUMBA=1, and the
reference the numba path is tested against.

All functions receive inputs that the caller has already padded; layout
is N,H,W,C row-major throughout.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided


def _patches(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """Read-only view of shape (N, Ho, Wo, kh, kw, C) over sliding windows."""
    n, h, w, c = xp.shape
    ho = (h - kh) // stride + 1
    wo = (w - kw) // stride + 1
    sn, sh, sw, sc = xp.strides
    return as_strided(
        xp,
        shape=(n, ho, wo, kh, kw, c),
        strides=(sn, sh * stride, sw * stride, sh, sw, sc),
        writeable=False,
    )


def conv2d(xp: np.ndarray, kernels: np.ndarray, stride: int) -> np.ndarray:
    kh, kw, ci, co = kernels.shape
    pat = _patches(xp, kh, kw, stride)
    n, ho, wo = pat.shape[:3]
    cols = pat.reshape(n * ho * wo, kh * kw * ci)
    out = cols @ kernels.reshape(kh * kw * ci, co)
    return out.reshape(n, ho, wo, co)


def conv2d_input_grad(grad_out: np.ndarray, kernels: np.ndarray,
                      padded_shape: tuple, stride: int) -> np.ndarray:
    kh, kw, ci, co = kernels.shape
    n, ho, wo, _ = grad_out.shape
    cols = grad_out.reshape(n * ho * wo, co) @ kernels.reshape(kh * kw * ci, co).T
    gpat = cols.reshape(n, ho, wo, kh, kw, ci)
    gxp = np.zeros(padded_shape, dtype=grad_out.dtype)
    for i in range(kh):
        for j in range(kw):
            gxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += gpat[:, :, :, i, j, :]
    return gxp


def conv2d_kernel_grad(grad_out: np.ndarray, xp: np.ndarray,
                       kh: int, kw: int, stride: int) -> np.ndarray:
    ci = xp.shape[3]
    pat = _patches(xp, kh, kw, stride)
    n, ho, wo = pat.shape[:3]
    cols = pat.reshape(n * ho * wo, kh * kw * ci)
    co = grad_out.shape[3]
    gk = cols.T @ grad_out.reshape(n * ho * wo, co)
    return gk.reshape(kh, kw, ci, co)


def maxpool2d(x: np.ndarray, ph: int, pw: int, stride: int):
    n, h, w, c = x.shape
    win = _patches(x, ph, pw, stride)
    ho, wo = win.shape[1], win.shape[2]
    # copy into (..., C, ph*pw) so argmax scans each window in raster order,
    # giving first-occurrence tie-breaking
    flat_win = win.transpose(0, 1, 2, 5, 3, 4).reshape(n, ho, wo, c, ph * pw)
    local = flat_win.argmax(axis=-1)
    out = np.take_along_axis(flat_win, local[..., None], axis=-1)[..., 0]
    di, dj = local // pw, local % pw
    rows = (np.arange(ho) * stride)[None, :, None, None] + di
    cols = (np.arange(wo) * stride)[None, None, :, None] + dj
    nn = np.arange(n)[:, None, None, None]
    cc = np.arange(c)[None, None, None, :]
    argmax = ((nn * h + rows) * w + cols) * c + cc
    return out, argmax.astype(np.int64)


def maxpool2d_backward(grad_out: np.ndarray, argmax: np.ndarray,
                       input_shape: tuple) -> np.ndarray:
    gx = np.zeros(int(np.prod(input_shape)), dtype=grad_out.dtype)
    np.add.at(gx, argmax.ravel(), grad_out.ravel())
    return gx.reshape(input_shape)
