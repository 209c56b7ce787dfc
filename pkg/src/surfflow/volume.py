"""Dense 3D scalar grids.

Arrays are stored with shape ``(D1, D2, D3)`` and indexed ``[x, y, z]``.  The
flat (serialized) order is x fastest: ``linear = x + D1 * (y + D2 * z)``,
which is ``ndarray.ravel(order="F")``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np
from scipy import ndimage


@dataclass(frozen=True)
class Volume:
    """Scalar grid with isotropic voxel spacing (mm)."""

    data: np.ndarray
    spacing: float = 1.0

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"volume data must be a non-empty 3D array, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("volume contains non-finite values")
        if not (self.spacing > 0 and math.isfinite(self.spacing)):
            raise ValueError(f"spacing must be positive, got {self.spacing}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(d) for d in self.data.shape)

    @property
    def flat(self) -> np.ndarray:
        """Values in x-fastest linear order."""
        return self.data.ravel(order="F")

    @classmethod
    def from_flat(cls, flat, dims, spacing=1.0) -> "Volume":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != int(np.prod(dims)):
            raise ValueError(f"data length {flat.size} does not match dims {tuple(dims)}")
        return cls(flat.reshape(tuple(dims), order="F"), spacing)

    def value_range(self) -> float:
        return float(self.data.max() - self.data.min())


@dataclass(frozen=True)
class LabelMask:
    """Small-integer labels on a grid (default alphabet background/left/right)."""

    labels: np.ndarray
    alphabet: tuple[int, ...] = (0, 1, 2)

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.dtype == bool:
            labels = labels.astype(np.uint8)
        if labels.ndim != 3 or min(labels.shape) < 1:
            raise ValueError(f"mask must be a non-empty 3D array, got shape {labels.shape}")
        labels = labels.astype(np.uint8)
        bad = np.setdiff1d(np.unique(labels), np.asarray(self.alphabet))
        if bad.size:
            raise ValueError(f"labels {bad.tolist()} outside alphabet {self.alphabet}")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(d) for d in self.labels.shape)

    @property
    def flat(self) -> np.ndarray:
        return self.labels.ravel(order="F")


# --------------------------------------------------------------------------
# trilinear interpolation

@numba.njit(cache=True, inline="always")
def _cell(p, n):
    """Lower corner index and fraction along one axis, with clamping.

    Returns (i0, i1, t, inside).  ``inside`` is 0.0 when p was clamped, so the
    derivative along that axis vanishes.
    """
    inside = 1.0
    if p <= 0.0:
        if p < 0.0:
            inside = 0.0
        p = 0.0
    elif p >= n - 1:
        if p > n - 1:
            inside = 0.0
        p = n - 1.0
    if n == 1:
        return 0, 0, 0.0, 0.0
    i0 = int(math.floor(p))
    if i0 > n - 2:
        i0 = n - 2
    return i0, i0 + 1, p - i0, inside


@numba.njit(cache=True, inline="always")
def _trilerp(data, px, py, pz, grad, row, want_grad):
    nx, ny, nz = data.shape
    x0, x1, tx, gx = _cell(px, nx)
    y0, y1, ty, gy = _cell(py, ny)
    z0, z1, tz, gz = _cell(pz, nz)
    c000 = data[x0, y0, z0]
    c100 = data[x1, y0, z0]
    c010 = data[x0, y1, z0]
    c110 = data[x1, y1, z0]
    c001 = data[x0, y0, z1]
    c101 = data[x1, y0, z1]
    c011 = data[x0, y1, z1]
    c111 = data[x1, y1, z1]
    c00 = c000 + tx * (c100 - c000)
    c10 = c010 + tx * (c110 - c010)
    c01 = c001 + tx * (c101 - c001)
    c11 = c011 + tx * (c111 - c011)
    c0 = c00 + ty * (c10 - c00)
    c1 = c01 + ty * (c11 - c01)
    if want_grad:
        d00 = c100 - c000
        d10 = c110 - c010
        d01 = c101 - c001
        d11 = c111 - c011
        d0 = d00 + ty * (d10 - d00)
        d1 = d01 + ty * (d11 - d01)
        grad[row, 0] = gx * (d0 + tz * (d1 - d0))
        e0 = c10 - c00
        e1 = c11 - c01
        grad[row, 1] = gy * (e0 + tz * (e1 - e0))
        grad[row, 2] = gz * (c1 - c0)
    return c0 + tz * (c1 - c0)


@numba.njit(cache=True, parallel=True)
def _trilinear_batch(data, pts, out, grad, want_grad):
    for k in numba.prange(pts.shape[0]):
        out[k] = _trilerp(data, pts[k, 0], pts[k, 1], pts[k, 2], grad, k, want_grad)


@numba.njit(cache=True, parallel=True)
def _cube_batch(data, vox, f, offs, out, grad, col0, want_grad):
    """Cube samples around ``vox / f`` written to ``out[:, col0:col0+len(offs)]``."""
    n_off = offs.shape[0]
    for k in numba.prange(vox.shape[0]):
        bx = vox[k, 0] / f
        by = vox[k, 1] / f
        bz = vox[k, 2] / f
        g = np.zeros((1, 3))
        for o in range(n_off):
            v = _trilerp(data, bx + offs[o, 0], by + offs[o, 1], bz + offs[o, 2], g, 0, want_grad)
            out[k, col0 + o] = v
            if want_grad:
                grad[k, col0 + o, 0] = g[0, 0] / f
                grad[k, col0 + o, 1] = g[0, 1] / f
                grad[k, col0 + o, 2] = g[0, 2] / f


def trilinear_batch(data: np.ndarray, points: np.ndarray, with_grad: bool = False):
    """Sample a 3D array at many voxel-coordinate points.

    Points outside ``[0, D-1]`` are clamped onto the box.  With ``with_grad``
    also returns the spatial derivative; inside a cell it is exact, on a cell
    face the cell starting at that face is used (the last cell on the upper
    boundary), and clamped axes contribute zero.
    """
    pts = np.ascontiguousarray(np.asarray(points, dtype=np.float64).reshape(-1, 3))
    if not np.all(np.isfinite(pts)):
        raise ValueError("non-finite sample coordinate")
    data = np.ascontiguousarray(data, dtype=np.float64)
    out = np.empty(pts.shape[0])
    grad = np.zeros((pts.shape[0] if with_grad else 1, 3))
    _trilinear_batch(data, pts, out, grad, with_grad)
    if with_grad:
        return out, grad
    return out


def trilinear_sample(vol: Volume, p) -> float:
    """Trilinear blend of the 8 surrounding voxels at voxel coordinate ``p``."""
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (3,):
        raise ValueError(f"expected a 3D point, got shape {p.shape}")
    return float(trilinear_batch(vol.data, p[None])[0])


# --------------------------------------------------------------------------
# resampling and filtering

def downsample_pow2(vol: Volume, q: int) -> Volume:
    """Block-average by ``2**(q-1)`` per axis; output dims are floored."""
    if q < 1:
        raise ValueError(f"scale index must be >= 1, got {q}")
    f = 2 ** (q - 1)
    if f == 1:
        return Volume(vol.data.copy(), vol.spacing)
    out_dims = tuple(d // f for d in vol.dims)
    if min(out_dims) < 1:
        raise ValueError(f"scale {q} reduces dims {vol.dims} to {out_dims}")
    a, b, c = out_dims
    block = vol.data[: a * f, : b * f, : c * f].reshape(a, f, b, f, c, f)
    return Volume(block.mean(axis=(1, 3, 5)), vol.spacing * f)


def pyramid(vol: Volume, n_scales: int) -> list[Volume]:
    """Volumes ``[V_1, ..., V_Q]`` at dyadic scales (V_1 is the input)."""
    return [downsample_pow2(vol, q) for q in range(1, n_scales + 1)]


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Sampled Gaussian truncated at ceil(4 sigma), normalized to unit sum."""
    radius = int(math.ceil(4.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_smooth(vol: Volume, sigma: float) -> Volume:
    """Separable Gaussian blur with half-sample symmetric boundaries.

    The symmetric extension keeps the per-axis operator a symmetric
    stochastic matrix, so constants are fixed and the total sum is preserved.
    """
    if sigma < 0 or not math.isfinite(sigma):
        raise ValueError(f"sigma must be a finite non-negative number, got {sigma}")
    if sigma == 0:
        return Volume(vol.data.copy(), vol.spacing)
    k = gaussian_kernel(sigma)
    out = vol.data
    for axis in range(3):
        out = ndimage.correlate1d(out, k, axis=axis, mode="reflect")
    return Volume(out, vol.spacing)


# --------------------------------------------------------------------------
# connected components

_STRUCT26 = np.ones((3, 3, 3), dtype=bool)


def largest_connected_component(mask: LabelMask, label: int) -> LabelMask:
    """Binary mask of the largest 26-connected component carrying ``label``.

    Ties go to the component whose lowest x-fastest linear index is smallest.
    """
    fg = mask.labels == label
    if not fg.any():
        raise ValueError(f"no voxel carries label {label}")
    comp, n = ndimage.label(fg, structure=_STRUCT26)
    flat = comp.ravel(order="F")
    sizes = np.bincount(flat, minlength=n + 1)[1:]
    first = np.full(n, flat.size, dtype=np.int64)
    idx = np.flatnonzero(flat)
    np.minimum.at(first, flat[idx] - 1, idx)
    # largest size first, then lowest seed index
    best = np.lexsort((first, -sizes))[0] + 1
    return LabelMask((comp == best).astype(np.uint8), alphabet=(0, 1))
