"""Mini-batch training with validation-based early stopping.

One epoch = deterministically shuffled mini-batches over the train split.
After every epoch the validation loss decides whether to snapshot the
parameters; training halts once the no-improvement streak exceeds the
patience budget or max_epochs is reached, and the best-epoch parameters
are returned (byte-identical to the checkpoint written at that epoch).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import EmptySplit, ShapeError
from .model import ModelConfig, ModelParams, example_losses, init_params, loss_and_grads

Dataset = Sequence[tuple]  # (image feature, EncodedCaption) pairs


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 64
    max_epochs: int = 50
    patience: int = 5
    shuffle_seed: int = 0
    clip_norm: float = 5.0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    seconds: float


@dataclass
class TrainHistory:
    epochs: list[EpochStats] = field(default_factory=list)
    best_epoch: int = 0  # 1-based epoch number of the lowest validation loss

    def log_lines(self) -> list[str]:
        return [
            f"{e.epoch}\t{e.train_loss:.6f}\t{e.val_loss:.6f}\t{e.seconds:.3f}"
            for e in self.epochs
        ]


@dataclass
class OptimizerState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def clip_gradients(grads: dict[str, np.ndarray], clip_norm: float) -> dict[str, np.ndarray]:
    """Scale all gradients by clip_norm / ||g|| when the global L2 norm exceeds it."""
    if clip_norm <= 0:
        return grads
    total = math.fsum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values())
    norm = math.sqrt(total)
    if norm <= clip_norm:
        return grads
    scale = clip_norm / norm
    return {k: g * np.asarray(scale, dtype=g.dtype) for k, g in grads.items()}


def _check_shapes(params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
    for name, p in params.items():
        g = grads.get(name)
        if g is None or g.shape != p.shape:
            raise ShapeError(f"gradient for {name!r} missing or shaped {None if g is None else g.shape}")


def sgd_step(
    params: ModelParams, grads: dict[str, np.ndarray], state: OptimizerState, config: TrainConfig
) -> tuple[ModelParams, OptimizerState]:
    """Plain gradient descent: p -= lr * g (after clipping)."""
    tensors = params.as_dict()
    _check_shapes(tensors, grads)
    grads = clip_gradients(grads, config.clip_norm)
    state.step += 1
    updated = {k: p - np.asarray(config.lr, dtype=p.dtype) * grads[k] for k, p in tensors.items()}
    return ModelParams.from_dict(updated), state


def adam_step(
    params: ModelParams, grads: dict[str, np.ndarray], state: OptimizerState, config: TrainConfig
) -> tuple[ModelParams, OptimizerState]:
    """Adam with bias correction; gradients are L2-clipped before the update."""
    tensors = params.as_dict()
    _check_shapes(tensors, grads)
    grads = clip_gradients(grads, config.clip_norm)
    if not state.m:
        state.m = {k: np.zeros_like(p) for k, p in tensors.items()}
        state.v = {k: np.zeros_like(p) for k, p in tensors.items()}
    state.step += 1
    t = state.step
    b1, b2 = config.beta1, config.beta2
    updated = {}
    for k, p in tensors.items():
        g = grads[k]
        state.m[k] = b1 * state.m[k] + (1 - b1) * g
        state.v[k] = b2 * state.v[k] + (1 - b2) * (g * g)
        m_hat = state.m[k] / (1 - b1**t)
        v_hat = state.v[k] / (1 - b2**t)
        updated[k] = p - np.asarray(config.lr, dtype=p.dtype) * m_hat / (np.sqrt(v_hat) + config.eps)
    return ModelParams.from_dict(updated), state


def evaluate_loss(params: ModelParams, split: Dataset) -> float:
    """Mean teacher-forced cross-entropy over a split; order-invariant.

    Raises:
        EmptySplit: the split has no items.
    """
    if len(split) == 0:
        raise EmptySplit("cannot evaluate an empty split")
    losses: list[float] = []
    for start in range(0, len(split), 256):
        losses.extend(example_losses(params, split[start : start + 256]))
    return math.fsum(losses) / len(losses)


def train(
    train_set: Dataset,
    val_set: Dataset,
    model_config: ModelConfig,
    config: TrainConfig,
    initial_params: ModelParams | None = None,
    on_improve: Callable[[ModelParams, int], None] | None = None,
    on_epoch: Callable[[EpochStats], None] | None = None,
) -> tuple[ModelParams, TrainHistory]:
    """Fit the model and return the best-validation-epoch parameter copy.

    Parameters come from init_params(model_config) unless initial_params
    resumes an earlier run. on_improve fires with (params, epoch) whenever
    validation improves (the CLI hooks checkpoint writing here); on_epoch
    fires after every epoch with its stats.

    Raises:
        EmptySplit: either split is empty.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise EmptySplit("train and validation splits must both be non-empty")
    step_fn = adam_step if config.optimizer == "adam" else sgd_step
    params = initial_params.copy() if initial_params is not None else init_params(model_config)
    state = OptimizerState()
    rng = np.random.default_rng(config.shuffle_seed)
    history = TrainHistory()
    best_params = params.copy()
    best_val = math.inf
    bad_epochs = 0

    for epoch in range(1, config.max_epochs + 1):
        started = time.perf_counter()
        order = rng.permutation(len(train_set))
        loss_sum, example_count = 0.0, 0
        for lo in range(0, len(order), config.batch_size):
            batch = [train_set[i] for i in order[lo : lo + config.batch_size]]
            loss, grads = loss_and_grads(params, batch)
            params, state = step_fn(params, grads, state, config)
            n = sum(c.true_length - 1 for _, c in batch)
            loss_sum += loss * n
            example_count += n
        train_loss = loss_sum / example_count
        val_loss = evaluate_loss(params, val_set)
        stats = EpochStats(
            epoch=epoch,
            train_loss=train_loss,
            val_loss=val_loss,
            seconds=time.perf_counter() - started,
        )
        history.epochs.append(stats)
        if on_epoch is not None:
            on_epoch(stats)

        if val_loss < best_val:
            best_val = val_loss
            best_params = params.copy()
            history.best_epoch = epoch
            bad_epochs = 0
            if on_improve is not None:
                on_improve(best_params, epoch)
        else:
            bad_epochs += 1
            if bad_epochs > config.patience:
                break

    return best_params, history
