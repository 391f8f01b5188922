"""Text branch: token embedding, per-hint transformer over tokens, cross-hint
transformer over hint vectors, max-pooling after each, linear projection,
L2 normalization.

Tokens get a learned positional table (word order matters inside a sentence);
hint vectors get none, so the final descriptor is invariant to hint order.
The use_htm flag drops both transformer blocks, leaving embedding + max-pool
+ projection, for the ablation that removes exactly those parameters.
"""

from __future__ import annotations

import numpy as np

from ..engine import blocks, ops
from ..engine.blocks import AttentionBlock
from ..engine.params import Linear, NamedTensors, uniform_init
from ..engine.tensor import Tensor
from ..errors import InvalidValueError, ShapeError


class TextBranch:
    def __init__(self, rng, vocab_size: int, embed_dim: int = 256,
                 d_tok: int = 64, heads: int = 4, max_len: int = 16,
                 use_htm: bool = True):
        self.vocab_size = vocab_size
        self.embed_dim = embed_dim
        self.max_len = max_len
        self.use_htm = use_htm
        self.token_table = uniform_init(rng, d_tok, (vocab_size, d_tok))
        self.pos_table = uniform_init(rng, d_tok, (max_len, d_tok))
        if use_htm:
            self.intra = AttentionBlock(rng, d_tok, heads)
            self.inter = AttentionBlock(rng, d_tok, heads)
        self.projection = Linear(rng, d_tok, embed_dim)

    def embed_hint(self, token_ids) -> Tensor:
        ids = np.asarray(token_ids, dtype=np.int64)
        if ids.ndim != 1 or ids.size == 0:
            raise ShapeError(f"a hint must be a non-empty id sequence, got shape {ids.shape}")
        if ids.size > self.max_len:
            raise InvalidValueError(
                f"hint of {ids.size} tokens exceeds the maximum length {self.max_len}")
        if ids.max() >= self.vocab_size:
            raise InvalidValueError(
                f"token id {ids.max()} outside vocabulary of {self.vocab_size}")
        tok = ops.gather_rows(self.token_table, ids)
        pos = ops.gather_rows(self.pos_table, np.arange(ids.size))
        return ops.add(tok, pos)

    def encode_hint(self, token_ids) -> Tensor:
        emb = self.embed_hint(token_ids)
        if self.use_htm:
            emb = self.intra(emb)
        return blocks.maxpool_rows(emb)

    def encode(self, hints: list) -> Tensor:
        """Unit-norm descriptor for one query (a list of token-id sequences)."""
        if len(hints) == 0:
            raise ShapeError("a query needs at least one hint")
        vecs = ops.stack_rows([self.encode_hint(h) for h in hints])
        if self.use_htm:
            vecs = self.inter(vecs)
        pooled = blocks.maxpool_rows(vecs)
        return ops.l2_normalize(self.projection(pooled))

    def encode_batch(self, queries: list) -> Tensor:
        """Descriptors for a list of queries, stacked into (N, embed_dim)."""
        return ops.stack_rows([self.encode(q.hints) for q in queries])

    def named_tensors(self, prefix: str = "") -> NamedTensors:
        yield prefix + "token_table", self.token_table
        yield prefix + "pos_table", self.pos_table
        if self.use_htm:
            yield from self.intra.named_tensors(prefix + "intra.")
            yield from self.inter.named_tensors(prefix + "inter.")
        yield from self.projection.named_tensors(prefix + "projection.")
