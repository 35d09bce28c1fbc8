"""Numba-compiled kernel implementations.

Same contracts as _numpy_impl; direct loops with @njit and batch/channel
prange.  fastmath stays off so results are deterministic and bit-stable
on a given platform.  Parallel loops only ever write disjoint slices, so
thread count cannot change the output.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange


@njit(parallel=True, cache=True)
def conv2d(xp, kernels, stride):
    n, h, w, ci = xp.shape
    kh, kw, _, co = kernels.shape
    ho = (h - kh) // stride + 1
    wo = (w - kw) // stride + 1
    out = np.zeros((n, ho, wo, co), dtype=xp.dtype)
    for b in prange(n):
        for i in range(ho):
            for j in range(wo):
                for ki in range(kh):
                    for kj in range(kw):
                        for c in range(ci):
                            v = xp[b, i * stride + ki, j * stride + kj, c]
                            for o in range(co):
                                out[b, i, j, o] += v * kernels[ki, kj, c, o]
    return out


@njit(parallel=True, cache=True)
def conv2d_input_grad(grad_out, kernels, padded_shape, stride):
    n, ho, wo, co = grad_out.shape
    kh, kw, ci, _ = kernels.shape
    gxp = np.zeros(padded_shape, dtype=grad_out.dtype)
    # transpose so the innermost axpy runs over contiguous memory
    kt = np.ascontiguousarray(kernels.transpose(0, 1, 3, 2))
    for b in prange(n):
        for i in range(ho):
            for j in range(wo):
                for ki in range(kh):
                    for kj in range(kw):
                        row = gxp[b, i * stride + ki, j * stride + kj]
                        for o in range(co):
                            gval = grad_out[b, i, j, o]
                            kr = kt[ki, kj, o]
                            for c in range(ci):
                                row[c] += gval * kr[c]
    return gxp


@njit(parallel=True, cache=True)
def conv2d_kernel_grad(grad_out, xp, kh, kw, stride):
    n, ho, wo, co = grad_out.shape
    ci = xp.shape[3]
    # per-sample partials so prange over the batch stays race-free
    gk = np.zeros((n, kh, kw, ci, co), dtype=grad_out.dtype)
    for b in prange(n):
        for i in range(ho):
            for j in range(wo):
                gv = grad_out[b, i, j]
                for ki in range(kh):
                    for kj in range(kw):
                        xv = xp[b, i * stride + ki, j * stride + kj]
                        for c in range(ci):
                            v = xv[c]
                            for o in range(co):
                                gk[b, ki, kj, c, o] += v * gv[o]
    return gk.sum(axis=0)


@njit(parallel=True, cache=True)
def maxpool2d(x, ph, pw, stride):
    n, h, w, c = x.shape
    ho = (h - ph) // stride + 1
    wo = (w - pw) // stride + 1
    out = np.empty((n, ho, wo, c), dtype=x.dtype)
    argmax = np.empty((n, ho, wo, c), dtype=np.int64)
    for b in prange(n):
        for i in range(ho):
            for j in range(wo):
                for ch in range(c):
                    best = x[b, i * stride, j * stride, ch]
                    bi = i * stride
                    bj = j * stride
                    for pi in range(ph):
                        for pj in range(pw):
                            v = x[b, i * stride + pi, j * stride + pj, ch]
                            if v > best:  # strict: first occurrence wins ties
                                best = v
                                bi = i * stride + pi
                                bj = j * stride + pj
                    out[b, i, j, ch] = best
                    argmax[b, i, j, ch] = ((b * h + bi) * w + bj) * c + ch
    return out, argmax


@njit(cache=True)
def maxpool2d_backward(grad_out, argmax, input_shape):
    total = 1
    for s in input_shape:
        total *= s
    gx = np.zeros(total, dtype=grad_out.dtype)
    g = grad_out.ravel()
    a = argmax.ravel()
    for k in range(a.size):
        gx[a[k]] += g[k]
    return gx.reshape(input_shape)
