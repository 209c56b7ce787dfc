"""Losses and surface-distance metrics.

Nearest-neighbour queries go through ``scipy.spatial.cKDTree`` (exact mode).
Point-to-surface distances use an exact closest-point-on-triangle kernel over
a uniform face grid searched outward in rings, so the result equals a scan
over every face.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from numba import njit, prange
from scipy.spatial import cKDTree

from .mesh import TriangleMesh

REPORT_SCHEMA = "surfflow.metrics/1"


def _points(a, name):
    a = np.asarray(a.vertices if isinstance(a, TriangleMesh) else a, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != 3:
        raise ValueError(f"{name} must be (n, 3), got {a.shape}")
    if len(a) == 0:
        raise ValueError(f"{name} is empty")
    return a


def chamfer_loss(A, B, with_grad: bool = False):
    """Bidirectional sum of squared nearest-neighbour distances.

    With ``with_grad`` returns ``(loss, dL/dA, dL/dB)``.
    """
    A = _points(A, "A")
    B = _points(B, "B")
    dab, iab = cKDTree(B).query(A)
    dba, iba = cKDTree(A).query(B)
    loss = float(np.sum(dab ** 2) + np.sum(dba ** 2))
    if not with_grad:
        return loss
    rab = A - B[iab]
    rba = B - A[iba]
    gA = 2.0 * rab
    np.add.at(gA, iba, -2.0 * rba)
    gB = 2.0 * rba
    np.add.at(gB, iab, -2.0 * rab)
    return loss, gA, gB


def mse_loss(pred, gt, with_grad: bool = False):
    """Mean squared displacement between corresponding vertices."""
    P = _points(pred, "pred")
    G = _points(gt, "gt")
    if P.shape != G.shape:
        raise ValueError(f"vertex counts differ: {len(P)} vs {len(G)}")
    d = P - G
    loss = float(np.sum(d * d) / len(P))
    if with_grad:
        return loss, 2.0 * d / len(P)
    return loss


# --------------------------------------------------------------------------
# point-to-triangle

def closest_point_on_triangles(p, a, b, c):
    """Closest points on triangles ``(a, b, c)`` to points ``p``; all (n, 3).

    Voronoi-region walk over vertices, edges and the face interior.
    """
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    out = np.empty_like(p)
    done = np.zeros(len(p), dtype=bool)

    def take(mask, value):
        nonlocal done
        m = mask & ~done
        if np.any(m):
            out[m] = value[m] if np.ndim(value) == 2 else value
        done |= m

    with np.errstate(divide="ignore", invalid="ignore"):
        take((d1 <= 0) & (d2 <= 0), a)
        take((d3 >= 0) & (d4 <= d3), b)
        take((d6 >= 0) & (d5 <= d6), c)
        t = d1 / (d1 - d3)
        take((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + t[:, None] * ab)
        t = d2 / (d2 - d6)
        take((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + t[:, None] * ac)
        t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        take((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0), b + t[:, None] * (c - b))
        denom = va + vb + vc
        v = vb / denom
        w = vc / denom
        take(np.ones(len(p), dtype=bool), a + v[:, None] * ab + w[:, None] * ac)
    return out


def point_triangle_distance(p, a, b, c) -> np.ndarray:
    return np.linalg.norm(p - closest_point_on_triangles(p, a, b, c), axis=1)


@njit(cache=True)
def _closest_sq(px, py, pz, a, b, c):
    abx, aby, abz = b[0] - a[0], b[1] - a[1], b[2] - a[2]
    acx, acy, acz = c[0] - a[0], c[1] - a[1], c[2] - a[2]
    apx, apy, apz = px - a[0], py - a[1], pz - a[2]
    d1 = abx * apx + aby * apy + abz * apz
    d2 = acx * apx + acy * apy + acz * apz
    if d1 <= 0.0 and d2 <= 0.0:
        return apx * apx + apy * apy + apz * apz
    bpx, bpy, bpz = px - b[0], py - b[1], pz - b[2]
    d3 = abx * bpx + aby * bpy + abz * bpz
    d4 = acx * bpx + acy * bpy + acz * bpz
    if d3 >= 0.0 and d4 <= d3:
        return bpx * bpx + bpy * bpy + bpz * bpz
    cpx, cpy, cpz = px - c[0], py - c[1], pz - c[2]
    d5 = abx * cpx + aby * cpy + abz * cpz
    d6 = acx * cpx + acy * cpy + acz * cpz
    if d6 >= 0.0 and d5 <= d6:
        return cpx * cpx + cpy * cpy + cpz * cpz
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        t = d1 / (d1 - d3)
        qx, qy, qz = a[0] + t * abx, a[1] + t * aby, a[2] + t * abz
    else:
        vb = d5 * d2 - d1 * d6
        if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
            t = d2 / (d2 - d6)
            qx, qy, qz = a[0] + t * acx, a[1] + t * acy, a[2] + t * acz
        else:
            va = d3 * d6 - d5 * d4
            if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
                t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
                qx, qy, qz = b[0] + t * (c[0] - b[0]), b[1] + t * (c[1] - b[1]), b[2] + t * (c[2] - b[2])
            else:
                den = 1.0 / (va + vb + vc)
                v = vb * den
                w = vc * den
                qx = a[0] + abx * v + acx * w
                qy = a[1] + aby * v + acy * w
                qz = a[2] + abz * v + acz * w
    dx, dy, dz = px - qx, py - qy, pz - qz
    return dx * dx + dy * dy + dz * dz


@njit(cache=True)
def _bin_faces(tri, lo, cell, dims):
    nf = tri.shape[0]
    counts = np.zeros(dims[0] * dims[1] * dims[2] + 1, dtype=np.int64)
    for pass_ in range(2):
        if pass_ == 1:
            for i in range(1, counts.size):
                counts[i] += counts[i - 1]
            items = np.empty(counts[-1], dtype=np.int64)
            fill = counts.copy()
        for f in range(nf):
            i0 = np.empty(3, dtype=np.int64)
            i1 = np.empty(3, dtype=np.int64)
            for d in range(3):
                mn = min(tri[f, 0, d], min(tri[f, 1, d], tri[f, 2, d]))
                mx = max(tri[f, 0, d], max(tri[f, 1, d], tri[f, 2, d]))
                i0[d] = min(dims[d] - 1, max(0, int((mn - lo[d]) / cell)))
                i1[d] = min(dims[d] - 1, max(0, int((mx - lo[d]) / cell)))
            for x in range(i0[0], i1[0] + 1):
                for y in range(i0[1], i1[1] + 1):
                    for z in range(i0[2], i1[2] + 1):
                        k = x + dims[0] * (y + dims[1] * z)
                        if pass_ == 0:
                            counts[k + 1] += 1
                        else:
                            items[fill[k]] = f
                            fill[k] += 1
    return counts, items


@njit(cache=True)
def _box_sq(px, py, pz, lo, cell, x, y, z):
    s = 0.0
    p = (px, py, pz)
    idx = (x, y, z)
    for d in range(3):
        a = lo[d] + idx[d] * cell
        if p[d] < a:
            s += (a - p[d]) ** 2
        elif p[d] > a + cell:
            s += (p[d] - a - cell) ** 2
    return s


@njit(parallel=True, cache=True)
def _grid_query(pts, tri, lo, cell, dims, start, items):
    n = pts.shape[0]
    out = np.empty(n)
    rmax = max(dims[0], max(dims[1], dims[2]))
    for i in prange(n):
        px, py, pz = pts[i, 0], pts[i, 1], pts[i, 2]
        c0 = min(dims[0] - 1, max(0, int(np.floor((px - lo[0]) / cell))))
        c1 = min(dims[1] - 1, max(0, int(np.floor((py - lo[1]) / cell))))
        c2 = min(dims[2] - 1, max(0, int(np.floor((pz - lo[2]) / cell))))
        best = np.inf
        for r in range(rmax + 1):
            # faces outside the rings visited so far are at least r * cell away
            if best <= (r - 1) * cell * ((r - 1) * cell) and r > 0:
                break
            for x in range(max(0, c0 - r), min(dims[0] - 1, c0 + r) + 1):
                for y in range(max(0, c1 - r), min(dims[1] - 1, c1 + r) + 1):
                    for z in range(max(0, c2 - r), min(dims[2] - 1, c2 + r) + 1):
                        if max(abs(x - c0), max(abs(y - c1), abs(z - c2))) != r:
                            continue
                        k = x + dims[0] * (y + dims[1] * z)
                        if start[k] == start[k + 1]:
                            continue
                        if _box_sq(px, py, pz, lo, cell, x, y, z) >= best:
                            continue
                        for s in range(start[k], start[k + 1]):
                            f = items[s]
                            d = _closest_sq(px, py, pz, tri[f, 0], tri[f, 1], tri[f, 2])
                            if d < best:
                                best = d
        out[i] = np.sqrt(best)
    return out


def point_mesh_distance(points, mesh: TriangleMesh) -> np.ndarray:
    """Exact distance from each point to the closest triangle of ``mesh``.

    Faces are binned into a uniform grid by bounding box; each query visits
    rings of cells outward until no unvisited cell can hold a closer face.
    """
    pts = _points(points, "points")
    tri = np.ascontiguousarray(mesh.vertices[mesh.faces])
    if len(tri) == 0:
        raise ValueError("mesh has no faces")
    lo = tri.reshape(-1, 3).min(axis=0)
    ext = tri.reshape(-1, 3).max(axis=0) - lo
    edge = np.linalg.norm(tri[:, 1] - tri[:, 0], axis=1).mean()
    cell = max(2.0 * edge, float(ext.max()) / 128.0, 1e-12)
    dims = np.maximum(1, np.ceil(ext / cell).astype(np.int64) + 1)
    start, items = _bin_faces(tri, lo, cell, dims)
    return _grid_query(pts, tri, lo, cell, dims, start, items)


def point_mesh_distance_bruteforce(points, mesh: TriangleMesh) -> np.ndarray:
    """Scan every face: projection onto the plane if inside, else nearest edge."""
    pts = _points(points, "points")
    tri = mesh.vertices[mesh.faces]
    out = np.full(len(pts), np.inf)
    for a, b, c in tri:
        n = np.cross(b - a, c - a)
        nn = np.dot(n, n)
        s = (pts - a) @ n / nn
        proj = pts - s[:, None] * n
        # barycentric sign tests on the projection
        inside = np.ones(len(pts), dtype=bool)
        for u, v in ((a, b), (b, c), (c, a)):
            inside &= np.cross(v - u, proj - u) @ n >= 0
        d = np.where(inside, np.abs(s) * np.sqrt(nn), np.inf)
        for u, v in ((a, b), (b, c), (c, a)):
            e = v - u
            t = np.clip((pts - u) @ e / np.dot(e, e), 0.0, 1.0)
            d = np.minimum(d, np.linalg.norm(pts - (u + t[:, None] * e), axis=1))
        out = np.minimum(out, d)
    return out


# --------------------------------------------------------------------------
# sampling metrics

def sample_surface(mesh: TriangleMesh, n: int, rng) -> np.ndarray:
    """Uniform points on the surface (faces chosen by area, uniform barycentrics)."""
    areas = mesh.face_areas()
    total = areas.sum()
    if not total > 0:
        raise ValueError("mesh has zero surface area")
    rng = np.random.default_rng(rng)
    f = rng.choice(len(areas), size=n, p=areas / total)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    tri = mesh.vertices[mesh.faces[f]]
    return (1 - r1)[:, None] * tri[:, 0] + (r1 * (1 - r2))[:, None] * tri[:, 1] + (r1 * r2)[:, None] * tri[:, 2]


def surface_distances(pred: TriangleMesh, gt: TriangleMesh, n_samples: int = 100_000, seed: int = 0):
    """Directed sample distances ``(pred -> gt, gt -> pred)``."""
    for name, m in (("pred", pred), ("gt", gt)):
        if not m.face_areas().sum() > 0:
            raise ValueError(f"{name} mesh has zero surface area")
    rng = np.random.default_rng(seed)
    sp = sample_surface(pred, n_samples, rng)
    sg = sample_surface(gt, n_samples, rng)
    return point_mesh_distance(sp, gt), point_mesh_distance(sg, pred)


def nearest_rank(values, q: float) -> float:
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if v.size == 0:
        raise ValueError("no values")
    return float(v[max(0, math.ceil(q * v.size) - 1)])


def assd(pred, gt, n_samples: int = 100_000, seed: int = 0) -> float:
    """Mean of the two directed mean sample-to-surface distances."""
    d1, d2 = surface_distances(pred, gt, n_samples, seed)
    return 0.5 * (float(d1.mean()) + float(d2.mean()))


def hausdorff90(pred, gt, n_samples: int = 100_000, seed: int = 0) -> float:
    """90th percentile (nearest rank) of the pooled sample distances."""
    d1, d2 = surface_distances(pred, gt, n_samples, seed)
    return nearest_rank(np.concatenate([d1, d2]), 0.9)


@dataclass
class MetricsReport:
    assd_mm: float
    hd90_mm: float
    sif_fraction: float
    n_samples: int
    seed: int

    def to_dict(self) -> dict:
        return {"schema": REPORT_SCHEMA, **asdict(self)}


def evaluate(pred: TriangleMesh, gt: TriangleMesh, n_samples: int = 100_000, seed: int = 0, spacing: float = 1.0) -> MetricsReport:
    """Sample once and report ASSD, HD90 (scaled by ``spacing``) and the SIF ratio of ``pred``."""
    from .intersect import self_intersection_ratio

    d1, d2 = surface_distances(pred, gt, n_samples, seed)
    sif, _ = self_intersection_ratio(pred)
    return MetricsReport(
        assd_mm=spacing * 0.5 * (float(d1.mean()) + float(d2.mean())),
        hd90_mm=spacing * nearest_rank(np.concatenate([d1, d2]), 0.9),
        sif_fraction=float(sif),
        n_samples=int(n_samples),
        seed=int(seed),
    )
