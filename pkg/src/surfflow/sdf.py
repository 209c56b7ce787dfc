"""Chamfer signed distance transform of binary segmentations.

Sign convention is interior-positive.  Distances come from a two-pass
chamfer transform with 3-4-5 weights over the 26-neighborhood, divided by 3
so a face step is one voxel.  Along a direction (a, b, c) with
a >= b >= c >= 0 the 3-4-5 path length is (3a + b + c) / 3, so the transform
overestimates Euclidean distance by at most sqrt(11)/3 - 1 = 10.6%
(direction (3, 1, 1)) and underestimates it by at most 1 - 4/(3 sqrt 2) = 5.7%
(direction (1, 1, 0)).

Level semantics: the trilinear extension of the grid is a continuous field
whose level sets form a family of nested surfaces; level 0 is the mask
boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .volume import LabelMask, Volume, gaussian_smooth

INTERIOR_POSITIVE = "interior-positive"


@dataclass(frozen=True)
class SignedDistanceVolume:
    vol: Volume
    sign_convention: str = INTERIOR_POSITIVE

    def __post_init__(self):
        if self.sign_convention != INTERIOR_POSITIVE:
            raise ValueError(f"unsupported sign convention {self.sign_convention!r}")

    @property
    def data(self) -> np.ndarray:
        return self.vol.data

    @property
    def dims(self):
        return self.vol.dims

    @classmethod
    def from_array(cls, data, spacing=1.0) -> "SignedDistanceVolume":
        return cls(Volume(data, spacing))


_BIG = 1 << 40


@numba.njit(cache=True)
def _chamfer345(source):
    """Chamfer (3,4,5) distance to the nearest source voxel, in weight units."""
    nx, ny, nz = source.shape
    d = np.empty(source.shape, dtype=np.int64)
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                d[x, y, z] = 0 if source[x, y, z] else _BIG
    # forward sweep: neighbors earlier in x-fastest raster order
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                best = d[x, y, z]
                if best == 0:
                    continue
                for dz in range(-1, 1):
                    for dy in range(-1, 2):
                        for dx in range(-1, 2):
                            if dz == 0 and (dy > 0 or (dy == 0 and dx >= 0)):
                                continue
                            xx, yy, zz = x + dx, y + dy, z + dz
                            if xx < 0 or yy < 0 or zz < 0 or xx >= nx or yy >= ny:
                                continue
                            n = abs(dx) + abs(dy) + abs(dz)
                            w = 3 if n == 1 else (4 if n == 2 else 5)
                            c = d[xx, yy, zz] + w
                            if c < best:
                                best = c
                d[x, y, z] = best
    # backward sweep
    for z in range(nz - 1, -1, -1):
        for y in range(ny - 1, -1, -1):
            for x in range(nx - 1, -1, -1):
                best = d[x, y, z]
                if best == 0:
                    continue
                for dz in range(0, 2):
                    for dy in range(-1, 2):
                        for dx in range(-1, 2):
                            if dz == 0 and (dy < 0 or (dy == 0 and dx <= 0)):
                                continue
                            xx, yy, zz = x + dx, y + dy, z + dz
                            if xx < 0 or xx >= nx or yy >= ny or yy < 0 or zz >= nz:
                                continue
                            n = abs(dx) + abs(dy) + abs(dz)
                            w = 3 if n == 1 else (4 if n == 2 else 5)
                            c = d[xx, yy, zz] + w
                            if c < best:
                                best = c
                d[x, y, z] = best
    return d


def chamfer_distance(source: np.ndarray) -> np.ndarray:
    """Unsigned chamfer distance (voxel units) to the nearest ``True`` voxel."""
    source = np.ascontiguousarray(source, dtype=np.bool_)
    if not source.any():
        raise ValueError("chamfer transform needs at least one source voxel")
    return _chamfer345(source) / 3.0


def signed_distance_transform(mask: LabelMask | np.ndarray, spacing: float = 1.0) -> SignedDistanceVolume:
    """Interior distance to the exterior minus exterior distance to the interior."""
    inside = (mask.labels if isinstance(mask, LabelMask) else np.asarray(mask)) > 0
    if not inside.any():
        raise ValueError("mask is empty")
    if inside.all():
        raise ValueError("mask fills the whole grid; exterior is empty")
    d_in = chamfer_distance(~inside)
    d_out = chamfer_distance(inside)
    out = np.where(inside, d_in, -d_out)
    return SignedDistanceVolume(Volume(out, spacing))


def sdf_postprocess(sdf: SignedDistanceVolume, scale: float = 1.0 / 16.0, sigma: float = 0.5) -> SignedDistanceVolume:
    """Scale values then Gaussian-smooth.

    Both steps are linear, so their order does not matter.
    """
    scaled = Volume(sdf.data * scale, sdf.vol.spacing)
    return SignedDistanceVolume(gaussian_smooth(scaled, sigma))
