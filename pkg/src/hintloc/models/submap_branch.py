"""Submap branch: per-instance encoder plus attention aggregation.

Each instance contributes four 128-wide channels: a PointNet-style point-set
encoding (shared per-point MLP, columnwise max), a color MLP over the mean
RGB, a positional MLP over the instance center in the submap frame, and a
count MLP over log10 of the point count. The concatenated 512 vector is
projected to the embedding dim. A submap descriptor then comes from one
residual single-head attention layer over its instance embeddings, a
columnwise max, and L2 normalization.

Batched encoding runs the expensive point MLP once per unique instance and
reuses rows across the overlapping submaps that share it. The fine stage
reuses the bare InstanceEncoder without the aggregation head.
"""

from __future__ import annotations

import math

import numpy as np

from ..engine import ops
from ..engine.blocks import MultiHeadAttention
from ..engine.params import Mlp, NamedTensors
from ..engine.tensor import Tensor
from ..errors import InvalidValueError, ShapeError

POINT_DIM = 128


class InstanceEncoder:
    def __init__(self, rng, embed_dim: int, use_number_encoder: bool = True):
        self.embed_dim = embed_dim
        self.use_number_encoder = use_number_encoder
        self.point_mlp = Mlp(rng, [6, 64, POINT_DIM], relu_last=True)
        self.color_mlp = Mlp(rng, [3, 64, POINT_DIM, POINT_DIM])
        self.pos_mlp = Mlp(rng, [3, 64, POINT_DIM, POINT_DIM])
        self.num_mlp = Mlp(rng, [1, 64, POINT_DIM, POINT_DIM]) if use_number_encoder else None
        self.projection = Mlp(rng, [4 * POINT_DIM, 256, 256, embed_dim])

    def encode_points(self, points_local: np.ndarray) -> Tensor:
        """Point-set channel over instance-local (n, 6) points."""
        pts = np.asarray(points_local, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 6 or pts.shape[0] < 1:
            raise ShapeError(f"expected (n, 6) points with n >= 1, got {pts.shape}")
        return ops.max_axis(self.point_mlp(Tensor(pts)), axis=0)

    def encode_count(self, n: int) -> Tensor:
        if n < 1:
            raise InvalidValueError(f"point count must be positive, got {n}")
        if self.num_mlp is None:
            return Tensor(np.zeros(POINT_DIM))
        return self.num_mlp(Tensor([math.log10(float(n))]))

    def encode_instance(self, instance, submap_center: np.ndarray) -> Tensor:
        pts = instance.points
        local = np.hstack([pts[:, :3] - instance.center, pts[:, 3:]])
        channels = [
            self.encode_points(local),
            self.color_mlp(Tensor(pts[:, 3:].mean(axis=0))),
            self.pos_mlp(Tensor(instance.center - np.asarray(submap_center))),
            self.encode_count(pts.shape[0]),
        ]
        return self.projection(ops.concat_last(channels))

    def pair_embeddings(self, scene, submaps: list) -> tuple[Tensor, list]:
        """Embeddings for every (submap, instance) pair, stacked as (P, C).

        Returns (embeddings, seg) where rows seg[s]..seg[s+1] belong to
        submaps[s]. The point MLP runs once per unique instance.
        """
        if any(sm.valid_count < 1 for sm in submaps):
            raise InvalidValueError("cannot encode a submap with no instances")
        unique = sorted({i for sm in submaps for i in sm.instance_ids})
        row_of = {inst: u for u, inst in enumerate(unique)}

        blocks_local = []
        starts = [0]
        for i in unique:
            pts = scene[i].points
            blocks_local.append(np.hstack([pts[:, :3] - scene[i].center, pts[:, 3:]]))
            starts.append(starts[-1] + pts.shape[0])
        big = Tensor(np.vstack(blocks_local))
        point_feats = ops.segment_max(self.point_mlp(big), np.asarray(starts))

        pair_rows = []
        pos_in = []
        seg = [0]
        for sm in submaps:
            for i in sm.instance_ids:
                pair_rows.append(row_of[i])
                pos_in.append(scene[i].center - sm.center)
            seg.append(seg[-1] + sm.valid_count)
        pair_rows = np.asarray(pair_rows, dtype=np.int64)

        colors_u = np.array([scene[i].points[:, 3:].mean(axis=0) for i in unique])
        counts_u = np.array([[math.log10(float(scene[i].points.shape[0]))]
                             for i in unique])
        chans = [
            ops.gather_rows(point_feats, pair_rows),
            self.color_mlp(Tensor(colors_u[pair_rows])),
            self.pos_mlp(Tensor(np.asarray(pos_in))),
            self.num_mlp(Tensor(counts_u[pair_rows])) if self.num_mlp is not None
            else Tensor(np.zeros((len(pair_rows), POINT_DIM))),
        ]
        return self.projection(ops.concat_last(chans)), seg

    def named_tensors(self, prefix: str = "") -> NamedTensors:
        yield from self.point_mlp.named_tensors(prefix + "point_mlp.")
        yield from self.color_mlp.named_tensors(prefix + "color_mlp.")
        yield from self.pos_mlp.named_tensors(prefix + "pos_mlp.")
        if self.num_mlp is not None:
            yield from self.num_mlp.named_tensors(prefix + "num_mlp.")
        yield from self.projection.named_tensors(prefix + "projection.")


class SubmapBranch:
    def __init__(self, rng, embed_dim: int = 256, use_number_encoder: bool = True):
        self.embed_dim = embed_dim
        self.instance_encoder = InstanceEncoder(rng, embed_dim, use_number_encoder)
        self.agg = MultiHeadAttention(rng, embed_dim, 1)

    def aggregate(self, embeddings: Tensor, valid_count: int) -> Tensor:
        """Descriptor from (possibly padded) instance embeddings; rows at and
        beyond valid_count are excluded from attention and pooling."""
        if valid_count < 1:
            raise InvalidValueError("cannot aggregate a submap with no valid instances")
        if valid_count > embeddings.shape[0]:
            raise ShapeError(
                f"valid count {valid_count} exceeds {embeddings.shape[0]} rows")
        rows = embeddings if valid_count == embeddings.shape[0] \
            else ops.gather_rows(embeddings, np.arange(valid_count))
        attended = ops.add(rows, self.agg(rows, rows, rows))
        return ops.l2_normalize(ops.max_axis(attended, axis=0))

    def instance_embeddings(self, scene, submap) -> Tensor:
        if submap.valid_count < 1:
            raise InvalidValueError(f"submap {submap.id} has no instances")
        rows = [self.instance_encoder.encode_instance(scene[i], submap.center)
                for i in submap.instance_ids]
        return ops.stack_rows(rows)

    def encode_one(self, scene, submap) -> Tensor:
        emb = self.instance_embeddings(scene, submap)
        return self.aggregate(emb, emb.shape[0])

    def encode_batch(self, scene, submaps: list) -> Tensor:
        """Descriptors for several submaps as (B, embed_dim)."""
        emb, seg = self.instance_encoder.pair_embeddings(scene, submaps)
        descs = []
        for s in range(len(submaps)):
            rows = ops.gather_rows(emb, np.arange(seg[s], seg[s + 1]))
            attended = ops.add(rows, self.agg(rows, rows, rows))
            descs.append(ops.l2_normalize(ops.max_axis(attended, axis=0)))
        return ops.stack_rows(descs)

    def named_tensors(self, prefix: str = "") -> NamedTensors:
        yield from self.instance_encoder.named_tensors(prefix + "instance.")
        yield from self.agg.named_tensors(prefix + "agg.")
