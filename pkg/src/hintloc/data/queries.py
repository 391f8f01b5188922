"""Query descriptions: a target position plus hint sentences about nearby
object instances.

Targets are sampled round-robin over the submap grid, inside each submap's
ownership square (the region the closest-center rule assigns to it), so every
database submap receives queries. Hints follow the template
"the pose is <direction> of a <color> <class>" with 8-way compass directions
whose bin boundaries sit at 22.5 degree offsets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import GenerationError
from ..seeding import STREAM_PERTURB, STREAM_QUERY, rng_for
from .submaps import STRIDE, Submap, assign_gt_submap
from .vocab import DIRECTION_WORDS, Vocabulary

HINT_TEMPLATE = "the pose is {direction} of a {color} {class_name}"


def compass_word(dx: float, dy: float) -> str:
    """8-way compass bin of the planar offset; +x is east, +y is north."""
    if dx == 0.0 and dy == 0.0:
        raise GenerationError("direction of a zero offset is undefined")
    angle = math.atan2(dy, dx)  # east = 0, counterclockwise
    sector = int(math.floor((angle + math.pi / 8) / (math.pi / 4))) % 8
    return DIRECTION_WORDS[sector]


def hint_text(instance, target_xy) -> str:
    dx = float(target_xy[0]) - float(instance.center[0])
    dy = float(target_xy[1]) - float(instance.center[1])
    return HINT_TEMPLATE.format(direction=compass_word(dx, dy),
                                color=instance.color_word,
                                class_name=instance.class_name)


@dataclass
class QueryDescription:
    hints: list[list[int]]  # token ids per hint sentence
    hint_texts: list[str]
    hint_instance_ids: list[int]  # scene indices the hints talk about
    target: np.ndarray  # world (x, y) in meters
    gt_submap_id: int


def _sample_one(scene, centers, submaps, own_submap: Submap, vocab, rng,
                n_hints: int, hint_radius: float, max_tries: int = 200):
    half_own = STRIDE / 2.0 - 0.1  # stay inside the ownership square
    for _ in range(max_tries):
        target = own_submap.center[:2] + rng.uniform(-half_own, half_own, size=2)
        d = np.abs(centers - target).max(axis=1)
        near = np.flatnonzero((d < hint_radius) & (d > 1e-9))
        if len(near) < n_hints:
            continue
        picked = rng.choice(near, size=n_hints, replace=False)
        gt = assign_gt_submap(submaps, target)
        texts = [hint_text(scene[i], target) for i in picked]
        return QueryDescription(
            hints=[vocab.encode(t) for t in texts],
            hint_texts=texts,
            hint_instance_ids=[int(i) for i in picked],
            target=target,
            gt_submap_id=gt,
        )
    raise GenerationError(
        f"could not place a target with {n_hints} instances within {hint_radius} m")


def generate_queries(scene, submaps: list[Submap], vocab: Vocabulary, seed: int,
                     count: int, split: int, n_hints: int = 6,
                     hint_radius: float = 20.0) -> list[QueryDescription]:
    """Deterministic query set; split is a stream tag separating train/eval."""
    if n_hints < 1:
        raise GenerationError(f"need at least one hint, got {n_hints}")
    centers = np.array([inst.center[:2] for inst in scene])
    queries = []
    for i in range(count):
        own = submaps[i % len(submaps)]
        rng = rng_for(seed, STREAM_QUERY, split, i)
        queries.append(_sample_one(scene, centers, submaps, own, vocab, rng,
                                   n_hints, hint_radius))
    return queries


def perturb_queries(queries, scene, vocab: Vocabulary, seed: int,
                    replace_count: int = 1) -> list[QueryDescription]:
    """Replace `replace_count` hints per query with hints about other, randomly
    chosen scene instances; 0 returns the queries unchanged."""
    if replace_count == 0:
        return list(queries)
    out = []
    for qi, q in enumerate(queries):
        rng = rng_for(seed, STREAM_PERTURB, qi)
        hints = list(q.hints)
        texts = list(q.hint_texts)
        inst_ids = list(q.hint_instance_ids)
        slots = rng.choice(len(hints), size=min(replace_count, len(hints)),
                           replace=False)
        for slot in slots:
            for _ in range(100):
                j = int(rng.integers(len(scene)))
                if j in inst_ids:
                    continue
                text = hint_text(scene[j], q.target)
                if text != texts[slot]:
                    break
            else:
                raise GenerationError("could not draw a differing replacement hint")
            texts[slot] = text
            hints[slot] = vocab.encode(text)
            inst_ids[slot] = j
        out.append(QueryDescription(hints, texts, inst_ids,
                                    q.target.copy(), q.gt_submap_id))
    return out
