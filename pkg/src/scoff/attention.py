"""Scaled dot-product key-value attention in the three flavors the layer uses:
soft competition among slots for input positions, hard Gumbel selection over
the schema bank, and soft pairwise communication between slots.
"""

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .numerics import Tensor
from .rng import Rng


@dataclass
class AttentionWeights:
    """Normalization results; rows are queriers, columns candidates."""

    matrix: Tensor
    axis: str  # "queriers" or "candidates"


class AttentionProjections:
    """Per-head query/key/value maps. Head outputs are concatenated, with no
    output mixing matrix; the concatenated value width is ``value_width``.
    """

    def __init__(self, query: list, key: list, value: list, dropout: float = 0.0):
        if not query or len(query) != len(key) or len(key) != len(value):
            raise ValueError("query/key/value need one matrix per head")
        d_e = query[0].shape[1]
        for q, k in zip(query, key):
            if q.shape[1] != d_e or k.shape[1] != d_e:
                raise ValueError("query and key outputs must share width per head")
        if not 0.0 <= dropout < 1.0:
            raise ValueError(f"dropout must lie in [0,1), got {dropout}")
        self.query = query
        self.key = key
        self.value = value
        self.dropout = dropout

    @classmethod
    def build(cls, rng: Rng, query_in: int, key_in: int, value_in: int,
              heads: int, key_width: int, value_width: int, dropout: float = 0.0):
        if heads < 1:
            raise ValueError(f"head count must be >= 1, got {heads}")
        if value_width % heads:
            raise ValueError(f"value width {value_width} not divisible by {heads} heads")
        per_head = value_width // heads
        query = [nm.glorot(rng, query_in, key_width) for _ in range(heads)]
        key = [nm.glorot(rng, key_in, key_width) for _ in range(heads)]
        value = [nm.glorot(rng, value_in, per_head) for _ in range(heads)]
        return cls(query, key, value, dropout)

    @property
    def heads(self) -> int:
        return len(self.query)

    @property
    def key_width(self) -> int:
        return self.query[0].shape[1]

    @property
    def value_width(self) -> int:
        return sum(v.shape[1] for v in self.value)

    def params(self) -> list:
        out = []
        for mats in (self.query, self.key, self.value):
            out.extend(mats)
        return out


def attend(queries: Tensor, keys: Tensor, values: Tensor, normalize_axis: str,
           scale: float, dropout: float = 0.0, rng: "Rng | None" = None,
           training: bool = False):
    """One head of scaled dot-product attention.

    scores = queries·keysᵀ·scale, normalized along ``normalize_axis``
    ("queriers" shares each candidate's mass across queriers, "candidates"
    makes each output row a convex combination of value rows). Returns the
    pre-dropout weights and the aggregated outputs; dropout, when active,
    zeroes weights at rate ``dropout`` and rescales survivors.
    """
    if normalize_axis not in ("queriers", "candidates"):
        raise ValueError(f"unknown normalize_axis {normalize_axis!r}")
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    if queries.shape[1] != keys.shape[1]:
        raise ValueError(f"query width {queries.shape} does not match key width {keys.shape}")
    if keys.shape[0] != values.shape[0]:
        raise ValueError(f"key rows {keys.shape} do not match value rows {values.shape}")
    scores = nm.matmul(queries, nm.transpose(keys)) * scale
    weights = nm.softmax(scores, axis=0 if normalize_axis == "queriers" else 1)
    used = weights
    if training and dropout > 0.0:
        if rng is None:
            raise ValueError("dropout in training mode needs an rng")
        keep = np.asarray(rng.uniform(weights.shape)) >= dropout
        used = weights * Tensor._lift(keep / (1.0 - dropout))
    outputs = nm.matmul(used, values)
    return AttentionWeights(weights, normalize_axis), outputs


def gumbel_st_select(logits: Tensor, noise: Tensor, tau: float = 1.0):
    """Hard Gumbel selection with a straight-through gradient.

    index = argmax(logits + noise), ties to the lowest index. The returned
    selection tensor is exactly one-hot in value but carries the gradient of
    soft = softmax((logits + noise) / tau).
    """
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    logits = nm._as_tensor(logits)
    noise = nm._as_tensor(noise)
    if logits.data.ndim != 1 or logits.shape != noise.shape:
        raise ValueError(f"logits and noise must be matching vectors, got {logits.shape} and {noise.shape}")
    scores = logits + noise
    index = int(np.argmax(scores.data))
    soft = nm.softmax(scores * (1.0 / tau), axis=0)
    hard = np.zeros(logits.shape)
    hard[index] = 1.0
    return nm.straight_through(soft, hard), soft, index


def topk_mask(scores, k: int) -> np.ndarray:
    """Boolean mask marking the k largest entries, ties to the lowest index."""
    arr = scores.data if isinstance(scores, Tensor) else np.asarray(scores, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"topk_mask expects a vector, got shape {arr.shape}")
    n = arr.size
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    order = np.argsort(-arr, kind="stable")
    mask = np.zeros(n, dtype=bool)
    mask[order[:k]] = True
    return mask


def head_mean(weights: list) -> np.ndarray:
    """Detached average of per-head weight matrices, for tracing."""
    acc = np.zeros(weights[0].matrix.shape)
    for w in weights:
        acc += w.matrix.data
    return acc / len(weights)
