"""Synthetic city scenes: colored object instances scattered on a plane.

Instances are placed on a jittered grid of tiles no wider than 15 m with at
least one instance per tile, which guarantees every 30 m map cell contains at
least one full tile and therefore at least one instance.

Per-class point-count ranges are pairwise disjoint (roads above 1000 points,
poles far below 500), so the raw count alone identifies the class.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import GenerationError
from ..seeding import STREAM_SCENE, rng_for

CLASS_NAMES = ("pole", "traffic-sign", "fence", "sidewalk",
               "parking", "vegetation", "building", "road")

# disjoint [low, high) point-count range per class, aligned with CLASS_NAMES
POINT_RANGES = ((16, 48), (56, 96), (112, 176), (208, 288),
                (320, 416), (448, 576), (640, 832), (1056, 1248))

# half-extents (hx, hy, hz) of the sampling box per class
HALF_EXTENTS = ((0.15, 0.15, 2.5), (0.4, 0.1, 1.2), (4.0, 0.15, 0.8),
                (6.0, 1.5, 0.08), (5.0, 3.0, 0.06), (2.5, 2.5, 2.0),
                (6.0, 5.0, 5.0), (10.0, 4.0, 0.1))

PALETTE = {
    "gray": (0.5, 0.5, 0.5),
    "red": (0.8, 0.1, 0.1),
    "green": (0.1, 0.6, 0.1),
    "blue": (0.1, 0.2, 0.7),
    "yellow": (0.85, 0.8, 0.1),
    "white": (0.95, 0.95, 0.95),
    "black": (0.05, 0.05, 0.05),
    "brown": (0.55, 0.35, 0.15),
}
PALETTE_WORDS = tuple(PALETTE)
PALETTE_RGB = np.array([PALETTE[w] for w in PALETTE_WORDS])


@dataclass
class ObjectInstance:
    class_id: int
    points: np.ndarray  # (n, 6): x, y, z, r, g, b
    center: np.ndarray = field(init=False)  # (3,) coordinate mean

    def __post_init__(self):
        self.center = self.points[:, :3].mean(axis=0)

    @property
    def class_name(self) -> str:
        return CLASS_NAMES[self.class_id]

    @property
    def color_word(self) -> str:
        mean_rgb = self.points[:, 3:].mean(axis=0)
        dist = np.abs(PALETTE_RGB - mean_rgb).sum(axis=1)
        return PALETTE_WORDS[int(dist.argmin())]


def _make_instance(rng, class_id: int, position: np.ndarray) -> ObjectInstance:
    lo, hi = POINT_RANGES[class_id]
    n = int(rng.integers(lo, hi))
    half = np.array(HALF_EXTENTS[class_id])
    coords = rng.uniform(-half, half, size=(n, 3))
    # shift so the coordinate mean lands exactly on the placed position
    coords += position - coords.mean(axis=0)
    base = PALETTE_RGB[rng.integers(len(PALETTE_WORDS))]
    rgb = np.clip(base + rng.uniform(-0.04, 0.04, size=(n, 3)), 0.0, 1.0)
    return ObjectInstance(class_id, np.hstack([coords, rgb]))


def generate_scene(extent: float, density: float, seed: int,
                   class_mix=None) -> list[ObjectInstance]:
    """Scatter instances over [0, extent]^2; density is instances per 30 m cell.

    Deterministic in (extent, density, seed, class_mix).
    """
    if extent < 60.0:
        raise GenerationError(f"scene extent must be at least 60 m, got {extent}")
    per_tile = int(round(density / 4.0))  # a 30 m cell spans about 4 tiles
    if per_tile < 1:
        raise GenerationError(
            f"density {density} yields under one instance per map cell")
    mix = np.full(len(CLASS_NAMES), 1.0 / len(CLASS_NAMES)) if class_mix is None \
        else np.asarray(class_mix, dtype=np.float64)
    if mix.shape != (len(CLASS_NAMES),) or np.any(mix < 0) or mix.sum() <= 0:
        raise GenerationError(f"bad class mix {class_mix}")
    mix = mix / mix.sum()

    rng = rng_for(seed, STREAM_SCENE)
    n_tiles = int(np.ceil(extent / 15.0))
    tile = extent / n_tiles
    margin = min(0.5, tile / 4)
    instances = []
    for tx in range(n_tiles):
        for ty in range(n_tiles):
            for _ in range(per_tile):
                pos = np.array([
                    rng.uniform(tx * tile + margin, (tx + 1) * tile - margin),
                    rng.uniform(ty * tile + margin, (ty + 1) * tile - margin),
                    0.0,
                ])
                class_id = int(rng.choice(len(CLASS_NAMES), p=mix))
                pos[2] = HALF_EXTENTS[class_id][2]  # rest the object on the ground
                instances.append(_make_instance(rng, class_id, pos))
    return instances
