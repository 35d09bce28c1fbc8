"""Layer forward/backward math and the model builder.

A model is a flat list of LayerSpec entries; parameters live in a
ParameterSet keyed "{layer_index}.{name}".  Backward passes are explicit
per layer (no autograd graph): forward_pass records a cache per layer and
backward_pass replays it in reverse.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .tensor import (ConvGeometry, conv2d_backward, conv2d_forward,
                     maxpool2d_backward, maxpool2d_forward)

LAYER_KINDS = ("conv_block", "maxpool", "flatten", "dense", "dropout", "softmax")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    filters: int = 0
    geometry: ConvGeometry | None = None
    units: int = 0
    rate: float = 0.0
    slope: float = 0.01
    epsilon: float = 1e-5
    momentum: float = 0.99

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ShapeError(f"unknown layer kind {self.kind!r}")
        if not 0.0 <= self.rate < 1.0:
            raise ShapeError(f"dropout rate must be in [0,1), got {self.rate}")
        if self.slope < 0:
            raise ShapeError(f"leaky slope must be >= 0, got {self.slope}")
        if self.kind == "conv_block" and self.filters < 1:
            raise ShapeError("conv_block needs filters >= 1")
        if self.kind == "dense" and self.units < 1:
            raise ShapeError("dense needs units >= 1")


@dataclass(frozen=True)
class ModelSpec:
    layers: tuple[LayerSpec, ...]
    input_shape: tuple[int, int, int]  # H, W, C
    class_count: int

    def layer_shapes(self) -> list[tuple]:
        """Output shape (sans batch dim) after each layer; validates chaining."""
        shape: tuple = self.input_shape
        shapes = []
        for i, layer in enumerate(self.layers):
            try:
                shape = _infer_shape(layer, shape)
            except ShapeError as e:
                raise ShapeError(f"layer {i} ({layer.kind}): {e}") from None
            shapes.append(shape)
        return shapes

    def validate(self):
        shapes = self.layer_shapes()
        if not self.layers or self.layers[-1].kind != "softmax":
            raise ShapeError("model must end with a softmax layer")
        if shapes[-1] != (self.class_count,):
            raise ShapeError(
                f"final width {shapes[-1]} does not match class_count {self.class_count}")


def _infer_shape(layer: LayerSpec, shape: tuple) -> tuple:
    if layer.kind == "conv_block":
        if len(shape) != 3:
            raise ShapeError(f"expects H,W,C input, got {shape}")
        geom = layer.geometry or ConvGeometry()
        oh, ow = geom.output_extents(shape[0], shape[1])
        return (oh, ow, layer.filters)
    if layer.kind == "maxpool":
        if len(shape) != 3:
            raise ShapeError(f"expects H,W,C input, got {shape}")
        if shape[0] < 2 or shape[1] < 2:
            raise ShapeError(f"spatial extent {shape[:2]} too small for 2x2 pool")
        return (shape[0] // 2, shape[1] // 2, shape[2])
    if layer.kind == "flatten":
        return (int(np.prod(shape)),)
    if layer.kind == "dense":
        if len(shape) != 1:
            raise ShapeError(f"expects flat input, got {shape}")
        return (layer.units,)
    if layer.kind in ("dropout", "softmax"):
        return shape
    raise ShapeError(f"unknown kind {layer.kind}")


def build_custom_cnn(input_shape=(224, 224, 3), class_count=4,
                     filters=(32, 64, 128, 256), geometry: ConvGeometry | None = None,
                     dense_units=256, dropout_rate=0.5, leaky_slope=0.01,
                     head="standard") -> ModelSpec:
    """Four conv blocks with growing filter counts, each followed by 2x2/2
    max-pooling, then a dense classification head with dropout and softmax.

    head="deep" swaps in the two-stage head (two dense layers with dropout
    0.5 and 0.25).
    """
    geom = geometry or ConvGeometry()
    layers: list[LayerSpec] = []
    for f in filters:
        layers.append(LayerSpec("conv_block", filters=f, geometry=geom, slope=leaky_slope))
        layers.append(LayerSpec("maxpool"))
    layers.append(LayerSpec("flatten"))
    if head == "standard":
        layers.append(LayerSpec("dense", units=dense_units))
        layers.append(LayerSpec("dropout", rate=dropout_rate))
    elif head == "deep":
        layers.append(LayerSpec("dense", units=dense_units))
        layers.append(LayerSpec("dropout", rate=0.5))
        layers.append(LayerSpec("dense", units=max(dense_units // 2, class_count)))
        layers.append(LayerSpec("dropout", rate=0.25))
    else:
        raise ShapeError(f"unknown head preset {head!r}")
    layers.append(LayerSpec("dense", units=class_count))
    layers.append(LayerSpec("softmax"))
    model = ModelSpec(tuple(layers), tuple(input_shape), class_count)
    model.validate()
    return model


@dataclass
class ParameterSet:
    params: dict[str, np.ndarray] = field(default_factory=dict)    # trainable
    buffers: dict[str, np.ndarray] = field(default_factory=dict)   # bn running stats

    def copy(self) -> "ParameterSet":
        return ParameterSet({k: v.copy() for k, v in self.params.items()},
                            {k: v.copy() for k, v in self.buffers.items()})

    def astype(self, dtype) -> "ParameterSet":
        return ParameterSet({k: v.astype(dtype) for k, v in self.params.items()},
                            {k: v.astype(dtype) for k, v in self.buffers.items()})


def init_parameters(model: ModelSpec, rng: np.random.Generator,
                    dtype=np.float32) -> ParameterSet:
    """Fan-in-scaled uniform weights (limit sqrt(6/fan_in)), zero biases,
    unit gamma / zero beta, fresh running stats."""
    pset = ParameterSet()
    shape: tuple = model.input_shape
    for i, layer in enumerate(model.layers):
        if layer.kind == "conv_block":
            geom = layer.geometry or ConvGeometry()
            fan_in = geom.kernel_h * geom.kernel_w * shape[2]
            limit = np.sqrt(6.0 / fan_in)
            kshape = (geom.kernel_h, geom.kernel_w, shape[2], layer.filters)
            pset.params[f"{i}.kernel"] = rng.uniform(-limit, limit, kshape).astype(dtype)
            pset.params[f"{i}.bias"] = np.zeros(layer.filters, dtype=dtype)
            pset.params[f"{i}.gamma"] = np.ones(layer.filters, dtype=dtype)
            pset.params[f"{i}.beta"] = np.zeros(layer.filters, dtype=dtype)
            pset.buffers[f"{i}.running_mean"] = np.zeros(layer.filters, dtype=dtype)
            pset.buffers[f"{i}.running_var"] = np.ones(layer.filters, dtype=dtype)
        elif layer.kind == "dense":
            fan_in = shape[0]
            limit = np.sqrt(6.0 / fan_in)
            pset.params[f"{i}.weight"] = rng.uniform(
                -limit, limit, (fan_in, layer.units)).astype(dtype)
            pset.params[f"{i}.bias"] = np.zeros(layer.units, dtype=dtype)
        shape = _infer_shape(layer, shape)
    return pset


# ---------------------------------------------------------------- layer math

def leaky_relu_forward(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x >= 0, x, slope * x)


def leaky_relu_backward(grad: np.ndarray, x: np.ndarray, slope: float) -> np.ndarray:
    # subgradient 1 at exactly zero
    return np.where(x >= 0, grad, slope * grad)


def batchnorm_forward(x, gamma, beta, running_mean, running_var,
                      mode="train", epsilon=1e-5, momentum=0.99):
    """Per-channel normalization over (N,H,W).

    Train mode normalizes with batch statistics and updates the running
    buffers in place; infer mode is a frozen affine map.  Returns (y, cache).
    """
    if mode == "infer":
        inv = 1.0 / np.sqrt(running_var + epsilon)
        xhat = (x - running_mean) * inv
        return gamma * xhat + beta, None
    m = x.shape[0] * x.shape[1] * x.shape[2] if x.ndim == 4 else x.shape[0]
    if m < 2:
        raise ShapeError("batchnorm train mode needs >= 2 elements per channel")
    axes = (0, 1, 2) if x.ndim == 4 else (0,)
    mean = x.mean(axis=axes)
    var = x.var(axis=axes)
    inv = 1.0 / np.sqrt(var + epsilon)
    xhat = (x - mean) * inv
    running_mean *= momentum
    running_mean += (1.0 - momentum) * mean.astype(running_mean.dtype)
    running_var *= momentum
    running_var += (1.0 - momentum) * var.astype(running_var.dtype)
    return gamma * xhat + beta, (xhat, inv, gamma, axes, m)


def batchnorm_backward(grad, cache):
    xhat, inv, gamma, axes, m = cache
    dgamma = (grad * xhat).sum(axis=axes)
    dbeta = grad.sum(axis=axes)
    dxhat = grad * gamma
    dx = (inv / m) * (m * dxhat - dxhat.sum(axis=axes)
                      - xhat * (dxhat * xhat).sum(axis=axes))
    return dx, dgamma, dbeta


def dropout_apply(x, rate, mode, rng: np.random.Generator | None = None):
    """Inverted dropout; returns (y, mask). Infer mode is the identity."""
    if mode == "infer" or rate == 0.0:
        return x, None
    keep = rng.random(x.shape) >= rate
    scale = 1.0 / (1.0 - rate)
    return x * keep * scale, (keep, scale)


def dense_forward(x, weight, bias):
    if x.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeError(f"dense shapes incompatible: {x.shape} x {weight.shape}")
    return x @ weight + bias


def dense_backward(grad, x, weight):
    return grad @ weight.T, x.T @ grad, grad.sum(axis=0)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_backward(grad, probs):
    dot = (grad * probs).sum(axis=1, keepdims=True)
    return probs * (grad - dot)


# ------------------------------------------------------------- full network

def forward_pass(model: ModelSpec, pset: ParameterSet, batch: np.ndarray,
                 mode="train", rng: np.random.Generator | None = None):
    """Run the whole stack; returns (probabilities, caches for backward)."""
    if tuple(batch.shape[1:]) != tuple(model.input_shape):
        raise ShapeError(
            f"batch shape {batch.shape[1:]} != model input {model.input_shape}")
    x = batch
    caches = []
    for i, layer in enumerate(model.layers):
        try:
            x, cache = _layer_forward(i, layer, pset, x, mode, rng)
        except ShapeError as e:
            raise ShapeError(f"layer {i} ({layer.kind}): {e}") from None
        caches.append(cache)
    return x, caches


def _layer_forward(i, layer, pset, x, mode, rng):
    if layer.kind == "conv_block":
        geom = layer.geometry or ConvGeometry()
        z = conv2d_forward(x, pset.params[f"{i}.kernel"], pset.params[f"{i}.bias"], geom)
        h, bn_cache = batchnorm_forward(
            z, pset.params[f"{i}.gamma"], pset.params[f"{i}.beta"],
            pset.buffers[f"{i}.running_mean"], pset.buffers[f"{i}.running_var"],
            mode, layer.epsilon, layer.momentum)
        y = leaky_relu_forward(h, layer.slope)
        return y, (x, h, bn_cache)
    if layer.kind == "maxpool":
        y, argmax = maxpool2d_forward(x, (2, 2), 2)
        return y, (x.shape, argmax)
    if layer.kind == "flatten":
        return x.reshape(x.shape[0], -1), x.shape
    if layer.kind == "dense":
        y = dense_forward(x, pset.params[f"{i}.weight"], pset.params[f"{i}.bias"])
        return y, x
    if layer.kind == "dropout":
        y, mask = dropout_apply(x, layer.rate, mode, rng)
        return y, mask
    if layer.kind == "softmax":
        p = softmax(x)
        return p, p
    raise ShapeError(f"unknown kind {layer.kind}")


def backward_pass(model: ModelSpec, pset: ParameterSet, caches, grad: np.ndarray,
                  from_logits=False) -> dict[str, np.ndarray]:
    """Chain-rule sweep; returns gradients keyed like ParameterSet.params.

    `grad` is d(loss)/d(probabilities) by default.  With from_logits=True
    it is d(loss)/d(logits) and the softmax layer is skipped, which is how
    the fused cross-entropy gradient enters during training.
    """
    grads: dict[str, np.ndarray] = {}
    g = grad
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        cache = caches[i]
        if layer.kind == "softmax":
            if not from_logits:
                g = softmax_backward(g, cache)
        elif layer.kind == "dense":
            g, gw, gb = dense_backward(g, cache, pset.params[f"{i}.weight"])
            grads[f"{i}.weight"] = gw
            grads[f"{i}.bias"] = gb
        elif layer.kind == "dropout":
            if cache is not None:
                keep, scale = cache
                g = g * keep * scale
        elif layer.kind == "flatten":
            g = g.reshape(cache)
        elif layer.kind == "maxpool":
            in_shape, argmax = cache
            g = maxpool2d_backward(g, argmax, in_shape)
        elif layer.kind == "conv_block":
            x, h, bn_cache = cache
            g = leaky_relu_backward(g, h, layer.slope)
            g, dgamma, dbeta = batchnorm_backward(g, bn_cache)
            geom = layer.geometry or ConvGeometry()
            g, gk, gb = conv2d_backward(g, x, pset.params[f"{i}.kernel"], geom)
            grads[f"{i}.kernel"] = gk
            grads[f"{i}.bias"] = gb
            grads[f"{i}.gamma"] = dgamma
            grads[f"{i}.beta"] = dbeta
    for name, p in pset.params.items():
        if grads[name].shape != p.shape:
            raise ShapeError(f"gradient shape mismatch for {name}")
    return grads
