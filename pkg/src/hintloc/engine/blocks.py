"""Attention building blocks.

Inputs are 2D (sequence_length, d_model) tensors; there is no batch axis at
this level. Blocks use residual connections without normalization layers:

    attended = x + MHA(q=x, k=x, v=x)
    out      = attended + FFN(attended)

Cross-attention reuses the same block with the query stream carrying the
residuals and a separate key/value source.
"""

from __future__ import annotations

import math

from ..errors import ShapeError
from . import ops
from .params import Linear, Mlp, NamedTensors, uniform_init
from .tensor import Tensor


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """softmax(q k^T / sqrt(d_k)) v for 2D q (n, d_k), k (m, d_k), v (m, d_v)."""
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise ShapeError(f"attention expects 2D q/k/v, got {q.shape}, {k.shape}, {v.shape}")
    if q.shape[1] != k.shape[1]:
        raise ShapeError(f"q/k width mismatch: {q.shape} vs {k.shape}")
    if k.shape[0] != v.shape[0]:
        raise ShapeError(f"k/v length mismatch: {k.shape} vs {v.shape}")
    scores = ops.scale(ops.matmul(q, ops.transpose(k)), 1.0 / math.sqrt(q.shape[1]))
    return ops.matmul(ops.softmax_rows(scores), v)


class MultiHeadAttention:
    """h heads with per-head projections (d_model, d_head) and a joint output map.

    d_model must divide evenly into heads. Projections carry no bias.
    """

    def __init__(self, rng, d_model: int, heads: int):
        if heads < 1 or d_model % heads != 0:
            raise ShapeError(f"cannot split d_model={d_model} into {heads} heads")
        self.d_model = d_model
        self.heads = heads
        d_head = d_model // heads
        self.w_q = [uniform_init(rng, d_model, (d_model, d_head)) for _ in range(heads)]
        self.w_k = [uniform_init(rng, d_model, (d_model, d_head)) for _ in range(heads)]
        self.w_v = [uniform_init(rng, d_model, (d_model, d_head)) for _ in range(heads)]
        self.w_out = uniform_init(rng, d_model, (d_model, d_model))

    def __call__(self, q: Tensor, k: Tensor, v: Tensor) -> Tensor:
        if q.shape[-1] != self.d_model or k.shape[-1] != self.d_model or v.shape[-1] != self.d_model:
            raise ShapeError(
                f"expected width {self.d_model}, got {q.shape}, {k.shape}, {v.shape}")
        heads = [scaled_dot_attention(ops.matmul(q, self.w_q[i]),
                                      ops.matmul(k, self.w_k[i]),
                                      ops.matmul(v, self.w_v[i]))
                 for i in range(self.heads)]
        return ops.matmul(ops.concat_last(heads), self.w_out)

    def named_tensors(self, prefix: str = "") -> NamedTensors:
        for i in range(self.heads):
            yield f"{prefix}head{i}.w_q", self.w_q[i]
            yield f"{prefix}head{i}.w_k", self.w_k[i]
            yield f"{prefix}head{i}.w_v", self.w_v[i]
        yield prefix + "w_out", self.w_out


class AttentionBlock:
    """Residual multi-head attention followed by a residual two-layer FFN."""

    def __init__(self, rng, d_model: int, heads: int, d_hidden: int | None = None):
        self.attention = MultiHeadAttention(rng, d_model, heads)
        self.ffn = Mlp(rng, [d_model, d_hidden or d_model, d_model])

    def __call__(self, x: Tensor, kv: Tensor | None = None) -> Tensor:
        source = x if kv is None else kv
        attended = ops.add(x, self.attention(x, source, source))
        return ops.add(attended, self.ffn(attended))

    def named_tensors(self, prefix: str = "") -> NamedTensors:
        yield from self.attention.named_tensors(prefix + "attention.")
        yield from self.ffn.named_tensors(prefix + "ffn.")


def maxpool_rows(x: Tensor) -> Tensor:
    """Columnwise max over the sequence axis: (n, d) -> (d,)."""
    return ops.max_axis(x, axis=0)
