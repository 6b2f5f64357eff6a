"""The merge captioning model.

Language branch: embedding -> 1D conv (ReLU) -> global max pool.
Image branch: the precomputed feature vector, passed through an optional
projection layer. Both are concatenated (language first) and fed to a
ReLU dense layer, then a linear layer over the vocabulary with softmax.

Training expands each caption into teacher-forced (prefix -> next token)
examples; gradients are exact analytic derivatives of the mean
cross-entropy over the expanded batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import nn
from .errors import ShapeError
from .text import PAD, EncodedCaption

PARAM_ORDER = ("emb", "conv_w", "conv_b", "proj_w", "proj_b", "merge_w", "merge_b", "out_w", "out_b")


@dataclass(frozen=True)
class ModelConfig:
    """Dimensions and switches that fix every parameter shape."""

    vocab_size: int
    max_len: int
    embedding_dim: int = 256
    conv_filters: int = 512
    kernel_size: int = 3
    feature_dim: int = 2048
    hidden_dim: int = 512
    image_projection: bool = False
    seed: int = 0

    def __post_init__(self):
        dims = (
            self.vocab_size,
            self.max_len,
            self.embedding_dim,
            self.conv_filters,
            self.kernel_size,
            self.feature_dim,
            self.hidden_dim,
        )
        if any(d < 1 for d in dims):
            raise ValueError("all model dimensions must be >= 1")
        if self.kernel_size > self.max_len:
            raise ValueError(
                f"kernel_size {self.kernel_size} exceeds max_len {self.max_len}"
            )

    @property
    def merge_width(self) -> int:
        """Concatenation width: filters + raw feature dim, or + hidden if projected."""
        image_part = self.hidden_dim if self.image_projection else self.feature_dim
        return self.conv_filters + image_part

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "max_len": self.max_len,
            "embedding_dim": self.embedding_dim,
            "conv_filters": self.conv_filters,
            "kernel_size": self.kernel_size,
            "feature_dim": self.feature_dim,
            "hidden_dim": self.hidden_dim,
            "image_projection": self.image_projection,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class ModelParams:
    """All trainable tensors. proj_* are None unless image_projection is on."""

    emb: np.ndarray
    conv_w: np.ndarray
    conv_b: np.ndarray
    merge_w: np.ndarray
    merge_b: np.ndarray
    out_w: np.ndarray
    out_b: np.ndarray
    proj_w: np.ndarray | None = None
    proj_b: np.ndarray | None = None

    def as_dict(self) -> dict[str, np.ndarray]:
        """Tensors keyed by name in the canonical (checkpoint/optimizer) order."""
        out = {}
        for name in PARAM_ORDER:
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        return out

    @classmethod
    def from_dict(cls, d: dict[str, np.ndarray]) -> "ModelParams":
        return cls(**d)

    def copy(self) -> "ModelParams":
        return ModelParams.from_dict({k: v.copy() for k, v in self.as_dict().items()})

    @property
    def dtype(self) -> np.dtype:
        return self.emb.dtype

    @property
    def feature_dim(self) -> int:
        if self.proj_w is not None:
            return self.proj_w.shape[1]
        return self.merge_w.shape[1] - self.conv_b.shape[0]


def expected_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Parameter shapes implied by a config, in canonical order."""
    v, d = config.vocab_size, config.embedding_dim
    f, k = config.conv_filters, config.kernel_size
    i, h = config.feature_dim, config.hidden_dim
    shapes: dict[str, tuple[int, ...]] = {
        "emb": (v, d),
        "conv_w": (f, k, d),
        "conv_b": (f,),
    }
    if config.image_projection:
        shapes["proj_w"] = (h, i)
        shapes["proj_b"] = (h,)
    shapes.update(
        {
            "merge_w": (h, config.merge_width),
            "merge_b": (h,),
            "out_w": (v, h),
            "out_b": (v,),
        }
    )
    return shapes


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))


def _fans(name: str, shape: tuple[int, ...]) -> tuple[int, int]:
    if name == "emb":
        return shape[0], shape[1]
    if name == "conv_w":
        return shape[1] * shape[2], shape[0]
    # dense weights are (out, in)
    return shape[1], shape[0]


def init_params(config: ModelConfig, dtype=np.float32) -> ModelParams:
    """Glorot-uniform weights, zero biases, deterministic from config.seed."""
    rng = np.random.default_rng(config.seed)
    tensors: dict[str, np.ndarray] = {}
    for name, shape in expected_shapes(config).items():
        if name.endswith("_b"):
            tensors[name] = np.zeros(shape, dtype=dtype)
        else:
            fan_in, fan_out = _fans(name, shape)
            bound = glorot_bound(fan_in, fan_out)
            tensors[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return ModelParams.from_dict(tensors)


class _ForwardCaches:
    __slots__ = ("ids", "conv", "argmax", "conv_shape", "proj", "pooled_width", "merge", "out", "probs")


def _forward(params: ModelParams, feats: np.ndarray, prefixes: np.ndarray) -> _ForwardCaches:
    """Batched forward pass; feats (B, I), prefixes (B, L) of ids."""
    caches = _ForwardCaches()
    caches.ids = prefixes
    x = nn.embedding_forward(prefixes, params.emb)
    h, caches.conv = nn.conv1d_forward(x, params.conv_w, params.conv_b, apply_relu=True)
    caches.conv_shape = h.shape
    pooled, caches.argmax = nn.global_max_pool(h)
    caches.pooled_width = pooled.shape[-1]
    if params.proj_w is not None:
        image_part, caches.proj = nn.dense_forward(feats, params.proj_w, params.proj_b, "relu")
    else:
        image_part, caches.proj = feats, None
    merged = np.concatenate([pooled, image_part], axis=-1)
    hidden, caches.merge = nn.dense_forward(merged, params.merge_w, params.merge_b, "relu")
    _, caches.out = nn.dense_forward(hidden, params.out_w, params.out_b, "none")
    caches.probs = nn.softmax(caches.out.pre)
    return caches


def _check_inputs(params: ModelParams, image_feat, prefix_ids) -> tuple[np.ndarray, np.ndarray]:
    feat = np.asarray(image_feat, dtype=params.dtype)
    prefix = np.asarray(prefix_ids)
    if feat.shape != (params.feature_dim,):
        raise ShapeError(f"image feature shape {feat.shape} != ({params.feature_dim},)")
    return feat, prefix


def forward(params: ModelParams, image_feat, prefix_ids) -> np.ndarray:
    """Next-word distribution over the vocabulary for one padded prefix."""
    feat, prefix = _check_inputs(params, image_feat, prefix_ids)
    return _forward(params, feat[None, :], prefix[None, :]).probs[0]


def forward_logits(params: ModelParams, image_feat, prefix_ids) -> np.ndarray:
    """Pre-softmax scores for one padded prefix (decoders mask these)."""
    feat, prefix = _check_inputs(params, image_feat, prefix_ids)
    return _forward(params, feat[None, :], prefix[None, :]).out.pre[0]


def expand_batch(
    batch: Iterable[tuple[np.ndarray, EncodedCaption]], dtype
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Teacher-forcing expansion: one (prefix, target) pair per next token.

    A caption of true_length n yields n-1 examples; prefixes keep the
    caption's padded length, with positions past the cut set to pad.
    """
    feats, prefixes, targets = [], [], []
    for image_feat, caption in batch:
        ids = caption.ids
        length = len(ids)
        for t in range(caption.true_length - 1):
            prefixes.append(list(ids[: t + 1]) + [PAD] * (length - t - 1))
            targets.append(ids[t + 1])
            feats.append(image_feat)
    return (
        np.asarray(feats, dtype=dtype),
        np.asarray(prefixes, dtype=np.int64),
        np.asarray(targets, dtype=np.int64),
    )


def example_losses(
    params: ModelParams, batch: Sequence[tuple[np.ndarray, EncodedCaption]]
) -> list[float]:
    """Per-expanded-example cross-entropy losses, in expansion order."""
    nn.batch_guard(batch)
    feats, prefixes, targets = expand_batch(batch, params.dtype)
    probs = _forward(params, feats, prefixes).probs
    picked = probs[np.arange(len(targets)), targets]
    return [float(v) for v in -np.log(np.maximum(picked, nn.CE_EPS))]


def loss_and_grads(
    params: ModelParams, batch: Sequence[tuple[np.ndarray, EncodedCaption]]
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean teacher-forced cross-entropy and its exact gradients.

    Returns:
        (loss, grads) where grads is keyed like ModelParams.as_dict().

    Raises:
        EmptyBatch: batch has no items.
    """
    nn.batch_guard(batch)
    feats, prefixes, targets = expand_batch(batch, params.dtype)
    caches = _forward(params, feats, prefixes)
    probs = caches.probs
    count = len(targets)

    picked = probs[np.arange(count), targets]
    losses = -np.log(np.maximum(picked, nn.CE_EPS))
    loss = math.fsum(float(v) for v in losses) / count

    # d(mean loss)/dlogits: chained softmax + cross-entropy rows, zeroed
    # where the eps floor made the loss locally flat.
    dlogits = probs.copy()
    dlogits[np.arange(count), targets] -= 1.0
    dlogits[picked < nn.CE_EPS] = 0.0
    dlogits /= count
    dlogits = dlogits.astype(params.dtype, copy=False)

    grads: dict[str, np.ndarray] = {}
    dhidden, grads["out_w"], grads["out_b"] = nn.dense_backward(caches.out, dlogits)
    dmerged, grads["merge_w"], grads["merge_b"] = nn.dense_backward(caches.merge, dhidden)
    width = caches.pooled_width
    dpooled, dimage = dmerged[..., :width], dmerged[..., width:]
    if caches.proj is not None:
        _, grads["proj_w"], grads["proj_b"] = nn.dense_backward(caches.proj, dimage)
    dconv = nn.global_max_pool_backward(caches.argmax, caches.conv_shape, dpooled)
    dx, grads["conv_w"], grads["conv_b"] = nn.conv1d_backward(caches.conv, dconv)
    grads["emb"] = nn.embedding_backward(caches.ids, dx, params.emb.shape[0])
    return loss, grads
