"""Fine position regressor: cascaded cross-attention over hint and instance
features, then an attention + max-pool head and a small MLP emitting a planar
offset from the candidate submap center.

Cascade unit k runs CAT1 (instance features query the current text features)
and CAT2 (text features query those enhanced instance features); every unit
reads the original instance features. ccat_count 0 degenerates to one plain
cross-attention with the text as query. The regressed offset is scaled by
half the cell size so the MLP works in roughly unit range.
"""

from __future__ import annotations

import numpy as np

from ..data.submaps import CELL
from ..engine import blocks, ops
from ..engine.blocks import AttentionBlock
from ..engine.params import Linear, Mlp, NamedTensors, uniform_init
from ..engine.tensor import Tensor
from ..errors import ConfigError, InvalidValueError, ShapeError
from .submap_branch import InstanceEncoder

OFFSET_SCALE = CELL / 2.0


class FineModel:
    def __init__(self, rng, vocab_size: int, embed_dim: int = 128,
                 d_tok: int = 64, heads: int = 4, max_len: int = 16,
                 ccat_count: int = 2, use_number_encoder: bool = True):
        if ccat_count not in (0, 1, 2, 3):
            raise ConfigError(f"ccat_count must be 0..3, got {ccat_count}")
        self.vocab_size = vocab_size
        self.embed_dim = embed_dim
        self.max_len = max_len
        self.ccat_count = ccat_count
        self.token_table = uniform_init(rng, d_tok, (vocab_size, d_tok))
        self.pos_table = uniform_init(rng, d_tok, (max_len, d_tok))
        self.intra = AttentionBlock(rng, d_tok, heads)
        self.hint_projection = Linear(rng, d_tok, embed_dim)
        self.instances = InstanceEncoder(rng, embed_dim, use_number_encoder)
        if ccat_count == 0:
            self.cat_single = AttentionBlock(rng, embed_dim, heads)
        else:
            self.cat1 = [AttentionBlock(rng, embed_dim, heads) for _ in range(ccat_count)]
            self.cat2 = [AttentionBlock(rng, embed_dim, heads) for _ in range(ccat_count)]
        self.head = AttentionBlock(rng, embed_dim, heads)
        self.regressor = Mlp(rng, [embed_dim, 64, 2])

    def _encode_hint(self, token_ids) -> Tensor:
        ids = np.asarray(token_ids, dtype=np.int64)
        if ids.ndim != 1 or ids.size == 0:
            raise ShapeError(f"a hint must be a non-empty id sequence, got shape {ids.shape}")
        if ids.size > self.max_len:
            raise InvalidValueError(
                f"hint of {ids.size} tokens exceeds the maximum length {self.max_len}")
        if ids.max() >= self.vocab_size:
            raise InvalidValueError(
                f"token id {ids.max()} outside vocabulary of {self.vocab_size}")
        emb = ops.add(ops.gather_rows(self.token_table, ids),
                      ops.gather_rows(self.pos_table, np.arange(ids.size)))
        return blocks.maxpool_rows(self.intra(emb))

    def text_features(self, hints: list) -> Tensor:
        """One row per hint, (n_h, embed_dim)."""
        if len(hints) == 0:
            raise ShapeError("a query needs at least one hint")
        vecs = ops.stack_rows([self._encode_hint(h) for h in hints])
        return self.hint_projection(vecs)

    def fuse(self, text: Tensor, points: Tensor) -> Tensor:
        """Cascaded cross-attention; output is aligned to the text rows."""
        if self.ccat_count == 0:
            return self.cat_single(text, kv=points)
        for k in range(self.ccat_count):
            enhanced = self.cat1[k](points, kv=text)
            text = self.cat2[k](text, kv=enhanced)
        return text

    def offset_from_features(self, text: Tensor, points: Tensor) -> Tensor:
        fused = self.fuse(text, points)
        pooled = blocks.maxpool_rows(self.head(fused))
        return ops.scale(self.regressor(pooled), OFFSET_SCALE)

    def forward_batch(self, queries: list, scene, submaps: list) -> Tensor:
        """Regressed (B, 2) world positions for query i inside submaps[i]."""
        if len(queries) != len(submaps):
            raise ShapeError(f"{len(queries)} queries vs {len(submaps)} submaps")
        emb, seg = self.instances.pair_embeddings(scene, submaps)
        preds = []
        for i, (q, sm) in enumerate(zip(queries, submaps)):
            points = ops.gather_rows(emb, np.arange(seg[i], seg[i + 1]))
            offset = self.offset_from_features(self.text_features(q.hints), points)
            preds.append(ops.add(offset, Tensor(sm.center[:2])))
        return ops.stack_rows(preds)

    def predict(self, query, scene, submap) -> np.ndarray:
        """World (x, y) prediction for one query-candidate pair."""
        return self.forward_batch([query], scene, [submap]).data[0]

    def named_tensors(self, prefix: str = "") -> NamedTensors:
        yield prefix + "token_table", self.token_table
        yield prefix + "pos_table", self.pos_table
        yield from self.intra.named_tensors(prefix + "intra.")
        yield from self.hint_projection.named_tensors(prefix + "hint_projection.")
        yield from self.instances.named_tensors(prefix + "instance.")
        if self.ccat_count == 0:
            yield from self.cat_single.named_tensors(prefix + "cat.")
        else:
            for k in range(self.ccat_count):
                yield from self.cat1[k].named_tensors(prefix + f"cat1.{k}.")
                yield from self.cat2[k].named_tensors(prefix + f"cat2.{k}.")
        yield from self.head.named_tensors(prefix + "head.")
        yield from self.regressor.named_tensors(prefix + "regressor.")
