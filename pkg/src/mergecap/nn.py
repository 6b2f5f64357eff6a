"""Dense numeric primitives with matching forward and backward passes.

Every op accepts a single example or a batch: shapes are written with an
implicit leading batch part (``...``), so ``conv1d_forward`` handles both
(L, D) and (B, L, D). Arrays keep whatever dtype the parameters carry;
training runs float32, gradient checking float64.

All functions are pure: forward passes return a cache object that the
paired backward consumes, and nothing is shared between calls.
"""

from __future__ import annotations

import math
from typing import Callable, NamedTuple

import numpy as np

from .errors import (
    EmptyBatch,
    EmptyInput,
    NumericError,
    SequenceTooShort,
    ShapeError,
)

CE_EPS = 1e-12  # floor inside -ln(p[target])


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


# --- embedding ---

def embedding_forward(ids: np.ndarray, emb: np.ndarray) -> np.ndarray:
    """Look up rows of emb for each id; ids (..., L) -> (..., L, D).

    Raises:
        IndexError: any id outside 0..V-1.
    """
    ids = np.asarray(ids)
    vocab_size = emb.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab_size):
        raise IndexError(f"token id outside embedding table of size {vocab_size}")
    return emb[ids]


def embedding_backward(ids: np.ndarray, grad_out: np.ndarray, vocab_size: int) -> np.ndarray:
    """Scatter-add (..., L, D) output gradients back onto the (V, D) table."""
    ids = np.asarray(ids).reshape(-1)
    grad_flat = grad_out.reshape(len(ids), grad_out.shape[-1])
    d_emb = np.zeros((vocab_size, grad_out.shape[-1]), dtype=grad_out.dtype)
    np.add.at(d_emb, ids, grad_flat)
    return d_emb


# --- 1D convolution (valid, stride 1) + ReLU ---

class Conv1dCache(NamedTuple):
    x: np.ndarray
    w: np.ndarray
    pre: np.ndarray
    applied_relu: bool


def _conv_windows(x: np.ndarray, kernel: int) -> np.ndarray:
    # (..., L, D) -> (..., T, K, D) with T = L - K + 1
    length = x.shape[-2]
    steps = length - kernel + 1
    return np.stack([x[..., k : k + steps, :] for k in range(kernel)], axis=-2)


def conv1d_forward(
    x: np.ndarray, w: np.ndarray, b: np.ndarray, apply_relu: bool = True
) -> tuple[np.ndarray, Conv1dCache]:
    """Valid 1D convolution over the time axis, ReLU by default.

    x (..., L, D), w (F, K, D), b (F) -> (..., L-K+1, F). Pass
    apply_relu=False to get the raw pre-activation (used by the linearity
    tests).

    Raises:
        SequenceTooShort: L < K.
        ShapeError: channel dimension of x does not match w.
    """
    x = np.asarray(x)
    filters, kernel, depth = w.shape
    if x.shape[-1] != depth:
        raise ShapeError(f"conv input depth {x.shape[-1]} != filter depth {depth}")
    if x.shape[-2] < kernel:
        raise SequenceTooShort(f"sequence length {x.shape[-2]} < kernel {kernel}")
    if b.shape != (filters,):
        raise ShapeError(f"conv bias shape {b.shape} != ({filters},)")
    windows = _conv_windows(x, kernel)
    # tensordot lowers to a BLAS matmul; einsum would not
    pre = np.tensordot(windows, w, axes=([-2, -1], [1, 2])) + b
    out = relu(pre) if apply_relu else pre
    return out, Conv1dCache(x=x, w=w, pre=pre, applied_relu=apply_relu)


def conv1d_backward(
    cache: Conv1dCache, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients (dx, dw, db) for conv1d_forward.

    The ReLU subgradient at exactly zero pre-activation is taken as 0.
    """
    x, w, pre, applied_relu = cache
    grad_pre = grad_out * (pre > 0) if applied_relu else grad_out
    filters, kernel, depth = w.shape
    windows = _conv_windows(x, kernel)
    steps_total = grad_pre.size // filters
    dw = np.tensordot(
        grad_pre.reshape(steps_total, filters),
        windows.reshape(steps_total, kernel, depth),
        axes=([0], [0]),
    )
    db = grad_pre.reshape(-1, grad_pre.shape[-1]).sum(axis=0)
    d_windows = np.tensordot(grad_pre, w, axes=([-1], [0]))  # (..., T, K, D)
    dx = np.zeros_like(x)
    steps = grad_pre.shape[-2]
    for k in range(kernel):
        dx[..., k : k + steps, :] += d_windows[..., :, k, :]
    return dx, dw, db


# --- global max pooling over time ---

def global_max_pool(h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-filter max over the time axis: (..., T, F) -> ((..., F), argmax).

    Ties resolve to the smallest time index; the argmax array routes the
    backward pass.

    Raises:
        EmptyInput: T = 0.
    """
    h = np.asarray(h)
    if h.shape[-2] == 0:
        raise EmptyInput("cannot max-pool an empty time axis")
    argmax = h.argmax(axis=-2)
    pooled = np.take_along_axis(h, argmax[..., None, :], axis=-2).squeeze(-2)
    return pooled, argmax


def global_max_pool_backward(
    argmax: np.ndarray, input_shape: tuple[int, ...], grad_out: np.ndarray
) -> np.ndarray:
    """Route (..., F) gradients to the recorded argmax rows of (..., T, F)."""
    dh = np.zeros(input_shape, dtype=grad_out.dtype)
    np.put_along_axis(dh, argmax[..., None, :], grad_out[..., None, :], axis=-2)
    return dh


# --- fully connected ---

class DenseCache(NamedTuple):
    x: np.ndarray
    w: np.ndarray
    pre: np.ndarray
    activation: str


def dense_forward(
    x: np.ndarray, w: np.ndarray, b: np.ndarray, activation: str = "none"
) -> tuple[np.ndarray, DenseCache]:
    """act(W x + b) with activation "relu" or "none"; x (..., N) -> (..., M).

    Raises:
        ShapeError: x/W/b shapes disagree.
        ValueError: unknown activation name.
    """
    if activation not in ("relu", "none"):
        raise ValueError(f"unknown activation {activation!r}")
    x = np.asarray(x)
    rows, cols = w.shape
    if x.shape[-1] != cols:
        raise ShapeError(f"dense input width {x.shape[-1]} != weight cols {cols}")
    if b.shape != (rows,):
        raise ShapeError(f"dense bias shape {b.shape} != ({rows},)")
    pre = x @ w.T + b
    out = relu(pre) if activation == "relu" else pre
    return out, DenseCache(x=x, w=w, pre=pre, activation=activation)


def dense_backward(
    cache: DenseCache, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients (dx, dw, db) for dense_forward."""
    x, w, pre, activation = cache
    grad_pre = grad_out * (pre > 0) if activation == "relu" else grad_out
    g2 = grad_pre.reshape(-1, w.shape[0])
    x2 = x.reshape(-1, w.shape[1])
    dw = g2.T @ x2
    db = g2.sum(axis=0)
    dx = (grad_pre @ w).reshape(x.shape)
    return dx, dw, db


# --- softmax / cross-entropy ---

def softmax(z: np.ndarray) -> np.ndarray:
    """Max-shifted softmax along the last axis.

    Raises:
        NumericError: non-finite input.
    """
    z = np.asarray(z)
    if not np.all(np.isfinite(z)):
        raise NumericError("softmax input must be finite")
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(p: np.ndarray, grad_p: np.ndarray) -> np.ndarray:
    """Jacobian-vector product dz = p * (dp - <dp, p>) along the last axis."""
    inner = (grad_p * p).sum(axis=-1, keepdims=True)
    return p * (grad_p - inner)


def log_softmax(z: np.ndarray) -> np.ndarray:
    """Numerically stable ln softmax; -inf entries stay -inf (masked logits)."""
    shifted = z - np.max(z, axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy(p: np.ndarray, target: int) -> float:
    """-ln(max(p[target], eps)) for a single probability vector.

    Raises:
        IndexError: target outside the vector.
    """
    p = np.asarray(p)
    if not 0 <= target < p.shape[-1]:
        raise IndexError(f"target {target} outside distribution of size {p.shape[-1]}")
    return float(-math.log(max(float(p[..., target]), CE_EPS)))


def cross_entropy_backward(p: np.ndarray, target: int) -> np.ndarray:
    """dL/dp: -1/p[target] at the target slot, 0 elsewhere.

    Where the eps floor is active (p[target] < eps) the loss is locally
    constant and the gradient is zero.
    """
    dp = np.zeros_like(p)
    pt = float(p[..., target])
    if pt >= CE_EPS:
        dp[..., target] = -1.0 / pt
    return dp


# --- finite-difference gradient checker ---

def grad_check(
    fn: Callable[[dict[str, np.ndarray]], tuple[float, dict[str, np.ndarray]]],
    params: dict[str, np.ndarray],
    eps: float = 1e-5,
) -> dict[str, float]:
    """Compare fn's analytic gradients against central differences.

    fn maps a parameter dict to (scalar loss, gradient dict with matching
    shapes). Every entry of every parameter is probed with a +/-eps central
    difference; the relative error is |a - n| / max(|a|, |n|, 1e-8).

    Returns:
        Max relative error per parameter group. Probe at float64 and away
        from ReLU/max-pool kinks for the stated tolerances to be meaningful.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    _, analytic = fn(params)
    errors: dict[str, float] = {}
    for name, values in params.items():
        grads = analytic[name]
        if grads.shape != values.shape:
            raise ShapeError(f"gradient shape {grads.shape} != parameter shape {values.shape} for {name!r}")
        worst = 0.0
        grads_flat = grads.reshape(-1)
        for i in range(values.size):
            original = values.flat[i]
            values.flat[i] = original + eps
            loss_plus, _ = fn(params)
            values.flat[i] = original - eps
            loss_minus, _ = fn(params)
            values.flat[i] = original
            numeric = (loss_plus - loss_minus) / (2.0 * eps)
            a = float(grads_flat[i])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, rel)
        errors[name] = worst
    return errors


def batch_guard(batch) -> None:
    """Shared empty-batch check for loss paths."""
    if len(batch) == 0:
        raise EmptyBatch("batch must contain at least one item")
