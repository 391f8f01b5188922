"""Slicing a scene into overlapping cubic map cells.

Cells are 30 m cubes laid out on a planar grid with 10 m stride; an instance
belongs to every cell whose closed cube contains its center. Cells keep at
most 28 instances, nearest to the cube center first.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import GenerationError

CELL = 30.0
STRIDE = 10.0
MAX_INSTANCES = 28


@dataclass
class Submap:
    id: int
    center: np.ndarray  # (3,) world frame, z = 0 on the planar grid
    instance_ids: list[int]  # indices into the scene list, capped at 28

    @property
    def valid_count(self) -> int:
        return len(self.instance_ids)


def grid_positions(extent: float, cell: float = CELL, stride: float = STRIDE) -> np.ndarray:
    if extent < cell:
        raise GenerationError(f"extent {extent} is smaller than one {cell} m cell")
    n = int(np.floor((extent - cell) / stride)) + 1
    return np.arange(n) * stride


def slice_submaps(scene, extent: float, cell: float = CELL, stride: float = STRIDE,
                  max_instances: int = MAX_INSTANCES) -> list[Submap]:
    positions = grid_positions(extent, cell, stride)
    centers = np.array([inst.center for inst in scene])
    half = cell / 2.0
    submaps = []
    sid = 0
    for x0 in positions:
        for y0 in positions:
            cube_center = np.array([x0 + half, y0 + half, 0.0])
            lo = cube_center - half
            hi = cube_center + half
            inside = np.all((centers >= lo) & (centers <= hi), axis=1)
            ids = np.flatnonzero(inside)
            if len(ids) > max_instances:
                dist = np.linalg.norm(centers[ids] - cube_center, axis=1)
                order = np.lexsort((ids, dist))  # nearest first, id breaks ties
                ids = ids[order[:max_instances]]
                ids = np.sort(ids)
            submaps.append(Submap(sid, cube_center, [int(i) for i in ids]))
            sid += 1
    return submaps


def assign_gt_submap(submaps: list[Submap], target_xy: np.ndarray,
                     cell: float = CELL) -> int:
    """The containing submap whose center is planar-closest to the target;
    distance ties go to the lowest submap id."""
    half = cell / 2.0
    best = None
    for sm in submaps:
        dx = abs(float(target_xy[0]) - sm.center[0])
        dy = abs(float(target_xy[1]) - sm.center[1])
        if dx > half or dy > half:
            continue
        d = np.hypot(dx, dy)
        if best is None or d < best[0]:
            best = (d, sm.id)
    if best is None:
        raise GenerationError(f"target {target_xy} is outside every submap")
    return best[1]
