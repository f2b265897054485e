"""Gated convolutional aspect classifier over the autodiff core.

Architecture: embed tokens, then for each kernel width run two parallel
convolutions; the tanh branch extracts context features and the relu
branch, shifted by a projection of the mean aspect embedding, gates
them.  Gated features are max-pooled over time (padding masked to -inf),
pooled widths are concatenated, dropped out in train mode, and mapped to
class probabilities by an affine head plus softmax.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .corpus import AspectInstance, Vocabulary, PAD_ID
from .optim import ParamSet


class ModelError(ValueError):
    """Raised for invalid configs, batches, or non-finite training state."""


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 50
    kernel_widths: tuple[int, ...] = (3, 4, 5)
    filters: int = 32
    num_classes: int = 3
    dropout: float = 0.2
    trainable_embedding: bool = True

    def __post_init__(self) -> None:
        if self.embed_dim < 1:
            raise ModelError(f"embed_dim must be >= 1, got {self.embed_dim}")
        if not self.kernel_widths or any(w < 1 for w in self.kernel_widths):
            raise ModelError(f"kernel widths must all be >= 1, got {self.kernel_widths}")
        if self.filters < 1:
            raise ModelError(f"filters must be >= 1, got {self.filters}")
        if self.num_classes < 2:
            raise ModelError(f"num_classes must be >= 2, got {self.num_classes}")
        if not (0.0 <= self.dropout < 1.0):
            raise ModelError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def feature_dim(self) -> int:
        return self.filters * len(self.kernel_widths)


def param_shapes(config: ModelConfig, vocab_size: int) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {"embedding": (vocab_size, config.embed_dim)}
    for w in config.kernel_widths:
        for branch in ("conv_s", "conv_a"):
            shapes[f"{branch}.{w}.w"] = (w * config.embed_dim, config.filters)
            shapes[f"{branch}.{w}.b"] = (config.filters,)
    shapes["aspect_proj.w"] = (config.embed_dim, config.filters)
    shapes["aspect_proj.b"] = (config.filters,)
    shapes["head.w"] = (config.num_classes, config.feature_dim)
    shapes["head.b"] = (config.num_classes,)
    return shapes


def init_params(
    config: ModelConfig,
    vocab_size: int,
    rng: np.random.Generator,
    pretrained_embedding: np.ndarray | None = None,
) -> ParamSet:
    """Fresh parameters; the embedding may be seeded from pretrained vectors."""
    d = config.embed_dim
    params: ParamSet = {}
    if pretrained_embedding is not None:
        if pretrained_embedding.shape != (vocab_size, d):
            raise ModelError(
                f"pretrained embedding shape {pretrained_embedding.shape} != ({vocab_size}, {d})"
            )
        params["embedding"] = np.asarray(pretrained_embedding, dtype=np.float64).copy()
    else:
        params["embedding"] = rng.uniform(-0.1, 0.1, size=(vocab_size, d))
    params["embedding"][PAD_ID] = 0.0

    for w in config.kernel_widths:
        bound = 1.0 / np.sqrt(w * d)
        for branch in ("conv_s", "conv_a"):
            params[f"{branch}.{w}.w"] = rng.uniform(-bound, bound, size=(w * d, config.filters))
            params[f"{branch}.{w}.b"] = np.zeros(config.filters)
    bound = 1.0 / np.sqrt(d)
    params["aspect_proj.w"] = rng.uniform(-bound, bound, size=(d, config.filters))
    params["aspect_proj.b"] = np.zeros(config.filters)
    bound = 1.0 / np.sqrt(config.feature_dim)
    params["head.w"] = rng.uniform(-bound, bound, size=(config.num_classes, config.feature_dim))
    params["head.b"] = np.zeros(config.num_classes)
    return params


def reinit_head(params: ParamSet, num_classes: int, rng: np.random.Generator) -> ParamSet:
    """Copy all parameters except the affine head, which is re-drawn.

    Used when moving between label spaces (binary pretraining to 3-way
    target data); everything below the head transfers unchanged.
    """
    feature_dim = params["head.w"].shape[1]
    out = {name: value.copy() for name, value in params.items()}
    bound = 1.0 / np.sqrt(feature_dim)
    out["head.w"] = rng.uniform(-bound, bound, size=(num_classes, feature_dim))
    out["head.b"] = np.zeros(num_classes)
    return out


@dataclass
class Batch:
    """Encoded instances padded to a common length."""

    token_ids: np.ndarray      # (B, L) int64
    lengths: np.ndarray        # (B,) int64
    aspect_weights: np.ndarray  # (B, L); 1/span_len over the aspect span
    labels: np.ndarray         # (B,) int64

    @property
    def size(self) -> int:
        return self.token_ids.shape[0]


def encode_batch(instances: Sequence[AspectInstance], vocab: Vocabulary,
                 min_length: int = 1) -> Batch:
    """Encode and pad a batch; sequences are padded to at least min_length."""
    if not instances:
        raise ModelError("cannot encode an empty batch")
    max_len = max(min_length, max(len(inst.tokens) for inst in instances))
    batch = len(instances)
    token_ids = np.full((batch, max_len), PAD_ID, dtype=np.int64)
    lengths = np.zeros(batch, dtype=np.int64)
    weights = np.zeros((batch, max_len))
    labels = np.zeros(batch, dtype=np.int64)
    for i, inst in enumerate(instances):
        ids = vocab.encode(inst.tokens)
        token_ids[i, : len(ids)] = ids
        lengths[i] = len(ids)
        span = inst.aspect_end - inst.aspect_start
        weights[i, inst.aspect_start : inst.aspect_end] = 1.0 / span
        labels[i] = inst.label
    return Batch(token_ids=token_ids, lengths=lengths, aspect_weights=weights, labels=labels)


def _pool_mask(lengths: np.ndarray, max_len: int, width: int) -> np.ndarray:
    """Valid window positions for one kernel width.

    A window is valid when it lies fully inside the unpadded tokens; for
    sequences shorter than the width the first window stays valid so the
    pool is never empty.
    """
    positions = max_len - width + 1
    valid_counts = np.maximum(lengths - width + 1, 1)
    return np.arange(positions)[None, :] < valid_counts[:, None]


def forward_graph(
    params: ParamSet,
    batch: Batch,
    config: ModelConfig,
    train: bool,
    rng: np.random.Generator | None = None,
):
    """Build the computation graph; returns (log_probs, probs, pooled, nodes)."""
    if train and config.dropout > 0.0 and rng is None:
        raise ModelError("train-mode forward with dropout requires an rng")
    max_len = batch.token_ids.shape[1]
    if max_len < max(config.kernel_widths):
        raise ModelError(
            f"batch padded length {max_len} is shorter than the widest kernel "
            f"{max(config.kernel_widths)}; encode with min_length=max(kernel_widths)"
        )

    nodes = {
        name: T.Tensor(value, requires_grad=(name != "embedding" or config.trainable_embedding))
        for name, value in params.items()
    }

    x = T.gather_rows(nodes["embedding"], batch.token_ids)          # (B, L, d)
    aspect = T.span_mean(x, batch.aspect_weights)                   # (B, d)
    proj = T.matmul(aspect, nodes["aspect_proj.w"]) + nodes["aspect_proj.b"]
    proj = T.reshape(proj, (batch.size, 1, config.filters))

    pooled_parts = []
    for w in config.kernel_widths:
        positions = max_len - w + 1
        windows = T.concat([T.slice_time(x, i, i + positions) for i in range(w)], axis=2)
        s = (T.matmul(windows, nodes[f"conv_s.{w}.w"]) + nodes[f"conv_s.{w}.b"]).tanh()
        a = (T.matmul(windows, nodes[f"conv_a.{w}.w"]) + nodes[f"conv_a.{w}.b"] + proj).relu()
        gated = s * a
        pooled_parts.append(T.masked_max_time(gated, _pool_mask(batch.lengths, max_len, w)))

    pooled = T.concat(pooled_parts, axis=1)                         # (B, feature_dim)
    if train:
        pooled = T.dropout(pooled, config.dropout, rng)
    logits = T.linear(pooled, nodes["head.w"], nodes["head.b"])
    log_probs = T.log_softmax(logits)
    probs = log_probs.exp()
    return log_probs, probs, pooled, nodes


def forward(
    params: ParamSet,
    batch: Batch,
    config: ModelConfig,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Per-example class probability matrix (batch x num_classes)."""
    if mode not in ("train", "eval"):
        raise ModelError(f"mode must be 'train' or 'eval', got {mode!r}")
    _, probs, _, _ = forward_graph(params, batch, config, train=(mode == "train"), rng=rng)
    return probs.data


def forward_features(
    params: ParamSet,
    batch: Batch,
    config: ModelConfig,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Pooled feature vectors (post-dropout in train mode)."""
    _, _, pooled, _ = forward_graph(params, batch, config, train=(mode == "train"), rng=rng)
    return pooled.data


def _one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ModelError(f"labels out of range for {num_classes} classes")
    eye = np.eye(num_classes)
    return eye[labels]


def cross_entropy_graph(log_probs: T.Tensor, labels: np.ndarray) -> T.Tensor:
    """Batch-mean cross entropy from a log-probability node."""
    batch, num_classes = log_probs.shape
    y = T.Tensor(_one_hot(labels, num_classes))
    return (y * log_probs).sum() * T.Tensor(-1.0 / batch)


def collect_grads(nodes: dict[str, T.Tensor]) -> ParamSet:
    return {name: node.grad for name, node in nodes.items() if node.grad is not None}


def check_finite(loss: float, grads: ParamSet, params: ParamSet) -> None:
    """Raise naming the offending parameter when training state goes non-finite."""
    if not np.isfinite(loss):
        for name in sorted(params):
            if not np.isfinite(params[name]).all():
                raise ModelError(f"non-finite loss {loss}; parameter {name!r} contains non-finite values")
        raise ModelError(f"non-finite loss {loss}")
    for name in sorted(grads):
        if not np.isfinite(grads[name]).all():
            raise ModelError(f"non-finite gradient for parameter {name!r}")


def backward(
    params: ParamSet,
    batch: Batch,
    config: ModelConfig,
    train: bool = True,
    rng: np.random.Generator | None = None,
) -> tuple[ParamSet, float]:
    """Cross-entropy loss and gradients for every trainable parameter."""
    log_probs, _, _, nodes = forward_graph(params, batch, config, train=train, rng=rng)
    loss = cross_entropy_graph(log_probs, batch.labels)
    loss.backward()
    grads = collect_grads(nodes)
    loss_value = float(loss.data)
    check_finite(loss_value, grads, params)
    return grads, loss_value
