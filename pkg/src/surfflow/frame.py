"""Affine handoff between the normalized flow frame and voxel coordinates.

``voxel = center + scale * x`` with ``center = (D - 1) / 2`` per axis and an
isotropic ``scale = (min(D) - 1) / 4``: the shortest grid axis spans
``[-2, 2]`` normalized units, so unit-radius shapes sit well inside the grid.
Networks and flows work in normalized units; volumes are sampled in voxels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

HALF_EXTENT = 2.0


@dataclass(frozen=True)
class Frame:
    center: tuple[float, float, float]
    scale: float

    @classmethod
    def for_dims(cls, dims) -> "Frame":
        dims = np.asarray(dims, dtype=np.float64)
        return cls(tuple((dims - 1.0) / 2.0), float((dims.min() - 1.0) / (2.0 * HALF_EXTENT)))

    def to_voxel(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self.center) + self.scale * np.asarray(x, dtype=np.float64)

    def to_normalized(self, v: np.ndarray) -> np.ndarray:
        return (np.asarray(v, dtype=np.float64) - np.asarray(self.center)) / self.scale
