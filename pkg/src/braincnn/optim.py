"""Loss, Adamax optimizer, and the finite-difference gradient oracle."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ShapeError
from .layers import softmax

LOG_FLOOR = 1e-12


def _validate_onehot(probs, onehot):
    if probs.shape != onehot.shape:
        raise ShapeError(f"probabilities {probs.shape} vs labels {onehot.shape}")
    ones = np.isclose(onehot, 1.0)
    if not (np.all((ones.sum(axis=1) == 1)) and np.all((onehot == 0) | ones)):
        raise ShapeError("labels are not one-hot rows")


def categorical_cross_entropy(probs: np.ndarray, onehot: np.ndarray,
                              reduction="mean") -> float:
    """Mean (default) or summed negative log-likelihood of the true class.

    Probabilities are clamped to [1e-12, 1] before the log so a hard-
    saturated softmax cannot produce inf.
    """
    _validate_onehot(probs, onehot)
    if not np.allclose(probs.sum(axis=1), 1.0, atol=1e-4):
        raise ShapeError("probability rows do not sum to 1")
    p_true = np.clip((probs * onehot).sum(axis=1), LOG_FLOOR, 1.0)
    nll = -np.log(p_true)
    return float(nll.sum() if reduction == "sum" else nll.mean())


def softmax_cross_entropy_gradient(logits: np.ndarray, onehot: np.ndarray,
                                   reduction="mean") -> np.ndarray:
    """Fused gradient of cross-entropy(softmax(logits)) w.r.t. the logits."""
    _validate_onehot(logits, onehot)
    g = softmax(logits) - onehot
    if reduction == "mean":
        g = g / logits.shape[0]
    return g


@dataclass
class AdamaxHyper:
    alpha: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7
    variant: str = "standard"  # "standard" | "paper" (no bias correction / max recursion)

    def __post_init__(self):
        if self.alpha <= 0 or not (0 <= self.beta1 < 1) or not (0 <= self.beta2 < 1) \
                or self.epsilon <= 0:
            raise ShapeError(f"invalid optimizer hyperparameters: {self}")
        if self.variant not in ("standard", "paper"):
            raise ShapeError(f"unknown optimizer variant {self.variant!r}")


@dataclass
class AdamaxState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    u: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray]) -> "AdamaxState":
        return cls(m={k: np.zeros_like(v) for k, v in params.items()},
                   u={k: np.zeros_like(v) for k, v in params.items()})


def adamax_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
                state: AdamaxState, hyper: AdamaxHyper):
    """One in-place update of every parameter tensor.

    Standard variant: m <- b1*m + (1-b1)*g; u <- max(b2*u, |g|);
    theta <- theta - alpha * (m / (1 - b1^t)) / (u + eps).
    Paper variant drops the bias correction and the infinity-norm
    recursion (u is just |g|).
    """
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter {p.shape} for {name}")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for {name} at step {state.t + 1}")
    state.t += 1
    t = state.t
    for name, p in params.items():
        g = grads[name].astype(p.dtype, copy=False)
        m = state.m[name]
        u = state.u[name]
        m *= hyper.beta1
        m += (1.0 - hyper.beta1) * g
        if hyper.variant == "standard":
            np.maximum(hyper.beta2 * u, np.abs(g), out=u)
            m_hat = m / (1.0 - hyper.beta1 ** t)
        else:
            u[...] = np.abs(g)
            m_hat = m
        p -= hyper.alpha * m_hat / (u + hyper.epsilon)
    return params, state


def finite_difference_gradient(loss_fn, params: dict[str, np.ndarray],
                               epsilon=1e-5) -> dict[str, np.ndarray]:
    """Central-difference gradient of a scalar loss over a parameter dict.

    Testing oracle only; perturbs every coordinate twice, so keep the
    parameter count small.
    """
    grads = {}
    for name, p in params.items():
        g = np.zeros_like(p, dtype=np.float64)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + epsilon
            hi = loss_fn(params)
            flat[idx] = orig - epsilon
            lo = loss_fn(params)
            flat[idx] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise NumericalError(f"non-finite loss while perturbing {name}[{idx}]")
            gflat[idx] = (hi - lo) / (2.0 * epsilon)
        grads[name] = g
    return grads
