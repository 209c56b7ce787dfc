"""Genus-zero correction of SDF level sets by topology-preserving fast marching.

The march grows the background inward from a seed front in increasing order
of SDF value.  A voxel joins the background only when it is a simple point for
the (26, 6) object/background connectivity pair, so the object keeps the
topology of its initial state (a ball) at every step.  Corrected values are
made monotone in commitment order, which turns every superlevel set of the
output into one of the intermediate march states.

Two initializations are provided: the restricted one starts from the boundary
of the region above ``alpha_hat`` and only touches voxels inside it; the
full-domain one starts from the outer shell of the grid and touches everything
else.  The grid shell always counts as background.  The restricted variant
inherits the topology of the region above ``alpha_hat``, so that region must
already be a ball (true whenever alpha_hat sits far enough outside
the surface to close handles and holes).
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numba
import numpy as np

from .sdf import SignedDistanceVolume
from .volume import Volume

FREEZE_EPS = 1e-6


# --------------------------------------------------------------------------
# neighborhood tables.  Position i = (dx+1) + 3 (dy+1) + 9 (dz+1); 13 is the center.

def _offsets():
    return [(i % 3 - 1, (i // 3) % 3 - 1, i // 9 - 1) for i in range(27)]


def _adjacency_table(kind: int, restrict18: bool) -> np.ndarray:
    offs = _offsets()
    table = -np.ones((27, 26), dtype=np.int64)
    for i, a in enumerate(offs):
        k = 0
        for j, b in enumerate(offs):
            if i == j or j == 13:
                continue
            d = [abs(a[t] - b[t]) for t in range(3)]
            if max(d) > 1:
                continue
            if kind == 6 and sum(d) != 1:
                continue
            if restrict18 and sum(abs(c) for c in b) == 3:
                continue
            table[i, k] = j
            k += 1
    return table


ADJ26 = _adjacency_table(26, restrict18=False)
ADJ6_N18 = _adjacency_table(6, restrict18=True)
FACE_POS = np.array([4, 10, 12, 14, 16, 22], dtype=np.int64)
IS_CORNER = np.array([sum(abs(c) for c in o) == 3 for o in _offsets()])


@numba.njit(cache=True)
def _simple_from_cube(cube, adj26, adj6, face_pos, is_corner, stack, seen):
    """(26,6) simplicity of the center of a flattened 3x3x3 object cube.

    ``stack`` (int64) and ``seen`` (bool) are 27-long scratch buffers.
    """
    seen[:] = False
    # T26: 26-components of object in the punctured 26-neighborhood
    ncomp = 0
    for s in range(27):
        if s == 13 or not cube[s] or seen[s]:
            continue
        ncomp += 1
        if ncomp > 1:
            return False
        top = 0
        stack[top] = s
        seen[s] = True
        top += 1
        while top > 0:
            top -= 1
            u = stack[top]
            for k in range(26):
                v = adj26[u, k]
                if v < 0:
                    break
                if cube[v] and not seen[v]:
                    seen[v] = True
                    stack[top] = v
                    top += 1
    if ncomp != 1:
        return False
    # T6: 6-components of background in the punctured 18-neighborhood that
    # are 6-adjacent to the center
    seen[:] = False
    ncomp = 0
    for f in range(6):
        s = face_pos[f]
        if cube[s] or seen[s]:
            continue
        ncomp += 1
        if ncomp > 1:
            return False
        top = 0
        stack[top] = s
        seen[s] = True
        top += 1
        while top > 0:
            top -= 1
            u = stack[top]
            for k in range(26):
                v = adj6[u, k]
                if v < 0:
                    break
                if not cube[v] and not seen[v] and not is_corner[v]:
                    seen[v] = True
                    stack[top] = v
                    top += 1
    return ncomp == 1


def is_simple_point(neigh) -> bool:
    """Whether flipping the center of a 3x3x3 object configuration keeps topology.

    ``neigh`` is a boolean ``(3, 3, 3)`` array indexed ``[x, y, z]`` (True =
    object).  The center state itself is ignored.  Simple means exactly one
    26-component of object in the punctured 26-neighborhood and exactly one
    6-component of background in the punctured 18-neighborhood that is
    6-adjacent to the center.
    """
    cube = np.asarray(neigh, dtype=np.bool_)
    if cube.shape != (3, 3, 3):
        raise ValueError(f"expected a 3x3x3 configuration, got {cube.shape}")
    flat = np.ascontiguousarray(cube.ravel(order="F"))
    stack = np.empty(27, dtype=np.int64)
    seen = np.zeros(27, dtype=np.bool_)
    return bool(_simple_from_cube(flat, ADJ26, ADJ6_N18, FACE_POS, IS_CORNER, stack, seen))


# --------------------------------------------------------------------------
# binary heap keyed by (value, linear index)

@numba.njit(cache=True, inline="always")
def _less(ka, ia, kb, ib):
    return ka < kb or (ka == kb and ia < ib)


@numba.njit(cache=True)
def _heap_push(keys, ids, size, key, idx):
    if size >= keys.shape[0]:
        nk = np.empty(keys.shape[0] * 2, dtype=keys.dtype)
        ni = np.empty(ids.shape[0] * 2, dtype=ids.dtype)
        nk[: keys.shape[0]] = keys
        ni[: ids.shape[0]] = ids
        keys = nk
        ids = ni
    i = size
    keys[i] = key
    ids[i] = idx
    while i > 0:
        p = (i - 1) >> 1
        if _less(keys[i], ids[i], keys[p], ids[p]):
            keys[i], keys[p] = keys[p], keys[i]
            ids[i], ids[p] = ids[p], ids[i]
            i = p
        else:
            break
    return keys, ids, size + 1


@numba.njit(cache=True)
def _heap_pop(keys, ids, size):
    key = keys[0]
    idx = ids[0]
    size -= 1
    keys[0] = keys[size]
    ids[0] = ids[size]
    i = 0
    while True:
        l = 2 * i + 1
        if l >= size:
            break
        c = l
        r = l + 1
        if r < size and _less(keys[r], ids[r], keys[l], ids[l]):
            c = r
        if _less(keys[c], ids[c], keys[i], ids[i]):
            keys[i], keys[c] = keys[c], keys[i]
            ids[i], ids[c] = ids[c], ids[i]
            i = c
        else:
            break
    return key, idx, size


# --------------------------------------------------------------------------
# the march

@numba.njit(cache=True)
def _march3d(values, obj, start_level, adj26, adj6, face_pos, is_corner):
    nx, ny, nz = values.shape
    out = values.copy()
    processed = np.zeros(values.shape, dtype=np.bool_)
    queued = np.zeros(values.shape, dtype=np.bool_)
    cap = 1024
    for x in range(nx):
        for y in range(ny):
            for z in range(nz):
                if obj[x, y, z]:
                    cap += 1
    keys = np.empty(cap, dtype=np.float64)
    ids = np.empty(cap, dtype=np.int64)
    size = 0
    sx = 1
    sy = nx
    sz = nx * ny

    # initial front: object voxels 26-adjacent to background
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                if not obj[x, y, z]:
                    continue
                front = False
                for dz in range(-1, 2):
                    for dy in range(-1, 2):
                        for dx in range(-1, 2):
                            xx, yy, zz = x + dx, y + dy, z + dz
                            if xx < 0 or yy < 0 or zz < 0 or xx >= nx or yy >= ny or zz >= nz:
                                front = True
                            elif not obj[xx, yy, zz]:
                                front = True
                if front:
                    k = values[x, y, z]
                    if k < start_level:
                        k = start_level
                    keys, ids, size = _heap_push(keys, ids, size, k, x * sx + y * sy + z * sz)
                    queued[x, y, z] = True

    level = start_level
    cube = np.zeros(27, dtype=np.bool_)
    stack = np.empty(27, dtype=np.int64)
    seen = np.zeros(27, dtype=np.bool_)
    n_commit = 0
    while size > 0:
        key, idx, size = _heap_pop(keys, ids, size)
        z = idx // sz
        y = (idx - z * sz) // sy
        x = idx - z * sz - y * sy
        queued[x, y, z] = False
        if not obj[x, y, z]:
            continue
        processed[x, y, z] = True
        for dz in range(-1, 2):
            for dy in range(-1, 2):
                for dx in range(-1, 2):
                    xx, yy, zz = x + dx, y + dy, z + dz
                    p = (dx + 1) + 3 * (dy + 1) + 9 * (dz + 1)
                    if xx < 0 or yy < 0 or zz < 0 or xx >= nx or yy >= ny or zz >= nz:
                        cube[p] = False
                    else:
                        cube[p] = obj[xx, yy, zz]
        if not _simple_from_cube(cube, adj26, adj6, face_pos, is_corner, stack, seen):
            # waits for a neighbor to change before being looked at again
            continue
        obj[x, y, z] = False
        v = values[x, y, z]
        if v < level:
            v = level
        out[x, y, z] = v
        level = v
        n_commit += 1
        for dz in range(-1, 2):
            for dy in range(-1, 2):
                for dx in range(-1, 2):
                    xx, yy, zz = x + dx, y + dy, z + dz
                    if xx < 0 or yy < 0 or zz < 0 or xx >= nx or yy >= ny or zz >= nz:
                        continue
                    if obj[xx, yy, zz] and not queued[xx, yy, zz]:
                        k = values[xx, yy, zz]
                        if k < level:
                            k = level
                        keys, ids, size = _heap_push(keys, ids, size, k, xx * sx + yy * sy + zz * sz)
                        queued[xx, yy, zz] = True

    # whatever is left is stuck: keep it above every committed value.  A lone
    # voxel keeps its own value when that is already above the front; a
    # larger stuck set is flattened to one value so it forms a single
    # superlevel set.
    n_frozen = 0
    lo = np.inf
    for x in range(nx):
        for y in range(ny):
            for z in range(nz):
                if obj[x, y, z]:
                    n_frozen += 1
                    if values[x, y, z] < lo:
                        lo = values[x, y, z]
    top = level + FREEZE_EPS
    if n_frozen == 1 and lo >= level:
        top = lo
    elif lo > top:
        top = lo
    for x in range(nx):
        for y in range(ny):
            for z in range(nz):
                if obj[x, y, z]:
                    out[x, y, z] = top
                    processed[x, y, z] = True
    return out, processed, n_frozen, n_commit


@dataclass
class TopoFixReport:
    processed_voxel_fraction: float
    changed_voxel_count: int
    seed_count: int
    runtime_ms: float
    frozen_voxel_count: int = 0
    committed_voxel_count: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def _shell(shape) -> np.ndarray:
    shell = np.zeros(shape, dtype=bool)
    shell[[0, -1], :, :] = True
    shell[:, [0, -1], :] = True
    shell[:, :, [0, -1]] = True
    return shell


def _seed_count(obj: np.ndarray) -> int:
    from scipy import ndimage

    grown = ndimage.binary_dilation(obj, structure=np.ones((3, 3, 3), bool))
    return int(np.count_nonzero(grown & ~obj))


def _run(sdf: SignedDistanceVolume, obj: np.ndarray, start_level: float):
    t0 = time.perf_counter()
    values = np.ascontiguousarray(sdf.data, dtype=np.float64)
    seeds = _seed_count(obj)
    work = obj.copy()
    out, processed, n_frozen, n_commit = _march3d(values, work, float(start_level), ADJ26, ADJ6_N18, FACE_POS, IS_CORNER)
    return out, processed, seeds, n_frozen, n_commit, t0


def correct_topology(sdf: SignedDistanceVolume, alpha_hat: float = -1.0):
    """Restricted-initialization correction; returns (corrected SDF, report).

    Only voxels above ``alpha_hat`` (and off the grid shell) are processed;
    every other voxel is set to exactly ``alpha_hat``.
    """
    if not alpha_hat < 0:
        raise ValueError(f"alpha_hat must be negative, got {alpha_hat}")
    values = sdf.data
    eligible = (values > alpha_hat) & ~_shell(values.shape)
    if not eligible.any():
        raise ValueError(f"no voxel above alpha_hat={alpha_hat}")
    if eligible.all():
        raise ValueError("every voxel is above alpha_hat; no background to seed from")
    out, processed, seeds, n_frozen, n_commit, t0 = _run(sdf, eligible, alpha_hat)
    out[~eligible] = alpha_hat
    changed = int(np.count_nonzero(eligible & (out != values)))
    runtime = (time.perf_counter() - t0) * 1e3
    report = TopoFixReport(
        processed_voxel_fraction=float(processed.sum() / processed.size),
        changed_voxel_count=changed,
        seed_count=seeds,
        runtime_ms=runtime,
        frozen_voxel_count=n_frozen,
        committed_voxel_count=n_commit,
    )
    return SignedDistanceVolume(Volume(out, sdf.vol.spacing)), report


def correct_topology_full_domain(sdf: SignedDistanceVolume):
    """Baseline correction seeded from the outer shell of the grid.

    The shell is the seed background, so it is lowered to the field minimum.
    """
    values = sdf.data
    if min(values.shape) < 3:
        raise ValueError(f"grid {values.shape} has no interior")
    eligible = ~_shell(values.shape)
    out, processed, seeds, n_frozen, n_commit, t0 = _run(sdf, eligible, -np.inf)
    out[~eligible] = values.min()
    changed = int(np.count_nonzero(eligible & (out != values)))
    runtime = (time.perf_counter() - t0) * 1e3
    report = TopoFixReport(
        processed_voxel_fraction=float(processed.sum() / processed.size),
        changed_voxel_count=changed,
        seed_count=seeds,
        runtime_ms=runtime,
        frozen_voxel_count=n_frozen,
        committed_voxel_count=n_commit,
    )
    return SignedDistanceVolume(Volume(out, sdf.vol.spacing)), report
