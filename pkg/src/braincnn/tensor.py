"""Dense tensor operations: matmul, 2-D convolution and max-pooling with
paired backward passes.

Tensors are numpy ndarrays in fixed N,H,W,C row-major layout, float32 for
training and float64 for gradient-check work.  Every op validates shapes
up front and checks its output for NaN/Inf, so numerical trouble surfaces
at the kernel that produced it instead of propagating.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import NumericalError, ShapeError


def check_finite(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"{op} produced non-finite values")
    return arr


@dataclass(frozen=True)
class ConvGeometry:
    kernel_h: int = 3
    kernel_w: int = 3
    stride: int = 1
    padding: str = "same"  # "same" | "valid"

    def __post_init__(self):
        if self.kernel_h < 1 or self.kernel_w < 1 or self.stride < 1:
            raise ShapeError(f"geometry extents must be positive: {self}")
        if self.padding not in ("same", "valid"):
            raise ShapeError(f"padding must be 'same' or 'valid', got {self.padding!r}")

    def pad_amounts(self, h: int, w: int) -> tuple[int, int, int, int]:
        """(top, bottom, left, right) zero-padding; extra pixel bottom/right."""
        if self.padding == "valid":
            return 0, 0, 0, 0
        out_h = -(-h // self.stride)
        out_w = -(-w // self.stride)
        pad_h = max((out_h - 1) * self.stride + self.kernel_h - h, 0)
        pad_w = max((out_w - 1) * self.stride + self.kernel_w - w, 0)
        return pad_h // 2, pad_h - pad_h // 2, pad_w // 2, pad_w - pad_w // 2

    def output_extents(self, h: int, w: int) -> tuple[int, int]:
        if self.padding == "same":
            return -(-h // self.stride), -(-w // self.stride)
        oh = (h - self.kernel_h) // self.stride + 1
        ow = (w - self.kernel_w) // self.stride + 1
        if oh < 1 or ow < 1:
            raise ShapeError(
                f"valid convolution degenerate: input {h}x{w}, "
                f"kernel {self.kernel_h}x{self.kernel_w} stride {self.stride}")
        return oh, ow


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes incompatible: {a.shape} x {b.shape}")
    return check_finite(a @ b, "matmul")


def _pad_input(x: np.ndarray, geom: ConvGeometry) -> np.ndarray:
    pt, pb, pl, pr = geom.pad_amounts(x.shape[1], x.shape[2])
    if pt or pb or pl or pr:
        return np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    return x


def conv2d_forward(x: np.ndarray, kern: np.ndarray, bias: np.ndarray,
                   geom: ConvGeometry) -> np.ndarray:
    """Cross-correlation of x[N,H,W,Cin] with kern[kh,kw,Cin,Cout] plus bias."""
    if x.ndim != 4 or kern.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input/kernels, got {x.shape}, {kern.shape}")
    if kern.shape[:2] != (geom.kernel_h, geom.kernel_w):
        raise ShapeError(f"kernel tensor {kern.shape} disagrees with geometry {geom}")
    if x.shape[3] != kern.shape[2]:
        raise ShapeError(f"channel mismatch: input {x.shape} vs kernels {kern.shape}")
    if bias.shape != (kern.shape[3],):
        raise ShapeError(f"bias shape {bias.shape} != ({kern.shape[3]},)")
    geom.output_extents(x.shape[1], x.shape[2])
    xp = _pad_input(x, geom)
    out = kernels.conv2d(np.ascontiguousarray(xp), np.ascontiguousarray(kern),
                         geom.stride)
    out += bias
    return check_finite(out, "conv2d_forward")


def conv2d_backward(grad_out: np.ndarray, x: np.ndarray, kern: np.ndarray,
                    geom: ConvGeometry):
    """Adjoints of conv2d_forward w.r.t. input, kernels, and bias."""
    oh, ow = geom.output_extents(x.shape[1], x.shape[2])
    expect = (x.shape[0], oh, ow, kern.shape[3])
    if grad_out.shape != expect:
        raise ShapeError(f"grad_out shape {grad_out.shape} != forward output {expect}")
    xp = np.ascontiguousarray(_pad_input(x, geom))
    g = np.ascontiguousarray(grad_out)
    k = np.ascontiguousarray(kern)
    gxp = kernels.conv2d_input_grad(g, k, xp.shape, geom.stride)
    pt, _, pl, _ = geom.pad_amounts(x.shape[1], x.shape[2])
    gx = gxp[:, pt:pt + x.shape[1], pl:pl + x.shape[2], :]
    gk = kernels.conv2d_kernel_grad(g, xp, geom.kernel_h, geom.kernel_w, geom.stride)
    gb = grad_out.sum(axis=(0, 1, 2))
    check_finite(gx, "conv2d_backward")
    return np.ascontiguousarray(gx), gk, gb


def maxpool2d_forward(x: np.ndarray, window: tuple[int, int], stride: int):
    """Windowed max over x[N,H,W,C]; returns (output, argmax flat-index map)."""
    ph, pw = window
    if x.ndim != 4:
        raise ShapeError(f"maxpool expects 4-D input, got {x.shape}")
    if x.shape[1] < ph or x.shape[2] < pw:
        raise ShapeError(f"pool window {window} larger than input {x.shape[1:3]}")
    out, argmax = kernels.maxpool2d(np.ascontiguousarray(x), ph, pw, stride)
    return check_finite(out, "maxpool2d_forward"), argmax


def maxpool2d_backward(grad_out: np.ndarray, argmax: np.ndarray,
                       input_shape: tuple) -> np.ndarray:
    if grad_out.shape != argmax.shape:
        raise ShapeError(f"grad_out {grad_out.shape} does not match argmax map {argmax.shape}")
    total = int(np.prod(input_shape))
    if argmax.size and (argmax.max() >= total or argmax.min() < 0):
        raise ShapeError("argmax map indexes outside input_shape; stale index map?")
    g = kernels.maxpool2d_backward(np.ascontiguousarray(grad_out), argmax,
                                   tuple(int(s) for s in input_shape))
    return check_finite(g, "maxpool2d_backward")
