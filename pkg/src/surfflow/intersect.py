"""Self-intersecting-face detection.

Candidate face pairs come from a uniform spatial hash of face bounding boxes.
Pairs that share a vertex are skipped.  The survivors go through the
Guigue-Devillers triangle-triangle test, which needs nothing but orientation
predicates.  Each predicate is evaluated in floating point with Shewchuk's
static error bound and recomputed in exact rational arithmetic when the sign
is not certified, so the verdict is exact for the given float coordinates.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np

from .mesh import TriangleMesh

_EPS = np.finfo(np.float64).eps / 2
_O3D_BOUND = (7.0 + 56.0 * _EPS) * _EPS
_O2D_BOUND = (3.0 + 16.0 * _EPS) * _EPS


# --------------------------------------------------------------------------
# predicates

def _exact_det3(o, a, b, c):
    o = [Fraction(t) for t in o]
    a = [Fraction(t) - s for t, s in zip(a, o)]
    b = [Fraction(t) - s for t, s in zip(b, o)]
    c = [Fraction(t) - s for t, s in zip(c, o)]
    return (a[0] * (b[1] * c[2] - b[2] * c[1])
            - a[1] * (b[0] * c[2] - b[2] * c[0])
            + a[2] * (b[0] * c[1] - b[1] * c[0]))


def orient3d(o, a, b, c) -> int:
    """Sign of det[a-o, b-o, c-o]."""
    ax, ay, az = a[0] - o[0], a[1] - o[1], a[2] - o[2]
    bx, by, bz = b[0] - o[0], b[1] - o[1], b[2] - o[2]
    cx, cy, cz = c[0] - o[0], c[1] - o[1], c[2] - o[2]
    m1 = by * cz - bz * cy
    m2 = bx * cz - bz * cx
    m3 = bx * cy - by * cx
    det = ax * m1 - ay * m2 + az * m3
    perm = (abs(ax) * (abs(by * cz) + abs(bz * cy))
            + abs(ay) * (abs(bx * cz) + abs(bz * cx))
            + abs(az) * (abs(bx * cy) + abs(by * cx)))
    if abs(det) > _O3D_BOUND * perm:
        return 1 if det > 0 else -1
    d = _exact_det3(o, a, b, c)
    return (d > 0) - (d < 0)


def orient2d(a, b, c) -> int:
    """Sign of the 2D cross product (b-a) x (c-a)."""
    l = (b[0] - a[0]) * (c[1] - a[1])
    r = (b[1] - a[1]) * (c[0] - a[0])
    det = l - r
    if abs(det) > _O2D_BOUND * (abs(l) + abs(r)):
        return 1 if det > 0 else -1
    a = [Fraction(t) for t in a[:2]]
    b = [Fraction(t) for t in b[:2]]
    c = [Fraction(t) for t in c[:2]]
    d = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    return (d > 0) - (d < 0)


# --------------------------------------------------------------------------
# coplanar case

def _on_segment(a, b, p) -> bool:
    return min(a[0], b[0]) <= p[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= p[1] <= max(a[1], b[1])


def _segments_meet(a, b, c, d) -> bool:
    o1, o2 = orient2d(a, b, c), orient2d(a, b, d)
    o3, o4 = orient2d(c, d, a), orient2d(c, d, b)
    if o1 * o2 < 0 and o3 * o4 < 0:
        return True
    return ((o1 == 0 and _on_segment(a, b, c)) or (o2 == 0 and _on_segment(a, b, d))
            or (o3 == 0 and _on_segment(c, d, a)) or (o4 == 0 and _on_segment(c, d, b)))


def _point_in_tri2d(p, a, b, c) -> bool:
    s1, s2, s3 = orient2d(a, b, p), orient2d(b, c, p), orient2d(c, a, p)
    return (s1 >= 0 and s2 >= 0 and s3 >= 0) or (s1 <= 0 and s2 <= 0 and s3 <= 0)


def _coplanar_overlap(t1, t2) -> bool:
    n = np.cross(np.subtract(t1[1], t1[0]), np.subtract(t1[2], t1[0]))
    drop = int(np.argmax(np.abs(n)))
    keep = [k for k in range(3) if k != drop]
    a = [(float(p[keep[0]]), float(p[keep[1]])) for p in t1]
    b = [(float(p[keep[0]]), float(p[keep[1]])) for p in t2]
    for i in range(3):
        for j in range(3):
            if _segments_meet(a[i], a[(i + 1) % 3], b[j], b[(j + 1) % 3]):
                return True
    return _point_in_tri2d(a[0], *b) or _point_in_tri2d(b[0], *a)


# --------------------------------------------------------------------------
# Guigue-Devillers

def _plane(tri, p) -> int:
    # sign of det[q-p_, r-p_, x-p_] written as orientation about the third vertex
    return orient3d(tri[2], tri[0], tri[1], p)


def _check_min_max(p1, q1, r1, p2, q2, r2) -> bool:
    if orient3d(q1, p2, p1, q2) > 0:
        return False
    if orient3d(p1, p2, r1, r2) > 0:
        return False
    return True


def _tri_tri_3d(p1, q1, r1, p2, q2, r2, dp2, dq2, dr2, t1, t2) -> bool:
    if dp2 > 0:
        if dq2 > 0:
            return _check_min_max(p1, r1, q1, r2, p2, q2)
        if dr2 > 0:
            return _check_min_max(p1, r1, q1, q2, r2, p2)
        return _check_min_max(p1, q1, r1, p2, q2, r2)
    if dp2 < 0:
        if dq2 < 0:
            return _check_min_max(p1, q1, r1, r2, p2, q2)
        if dr2 < 0:
            return _check_min_max(p1, q1, r1, q2, r2, p2)
        return _check_min_max(p1, r1, q1, p2, q2, r2)
    if dq2 < 0:
        if dr2 >= 0:
            return _check_min_max(p1, r1, q1, q2, r2, p2)
        return _check_min_max(p1, q1, r1, p2, q2, r2)
    if dq2 > 0:
        if dr2 > 0:
            return _check_min_max(p1, r1, q1, p2, q2, r2)
        return _check_min_max(p1, q1, r1, q2, r2, p2)
    if dr2 > 0:
        return _check_min_max(p1, q1, r1, r2, p2, q2)
    if dr2 < 0:
        return _check_min_max(p1, r1, q1, r2, p2, q2)
    return _coplanar_overlap(t1, t2)


def triangles_intersect(t1, t2) -> bool:
    """Exact closed-set intersection test for two non-degenerate triangles."""
    p1, q1, r1 = (tuple(map(float, v)) for v in t1)
    p2, q2, r2 = (tuple(map(float, v)) for v in t2)
    T1, T2 = (p1, q1, r1), (p2, q2, r2)
    dp1, dq1, dr1 = _plane(T2, p1), _plane(T2, q1), _plane(T2, r1)
    if dp1 * dq1 > 0 and dp1 * dr1 > 0:
        return False
    dp2, dq2, dr2 = _plane(T1, p2), _plane(T1, q2), _plane(T1, r2)
    if dp2 * dq2 > 0 and dp2 * dr2 > 0:
        return False
    if dp1 > 0:
        if dq1 > 0:
            return _tri_tri_3d(r1, p1, q1, p2, r2, q2, dp2, dr2, dq2, T1, T2)
        if dr1 > 0:
            return _tri_tri_3d(q1, r1, p1, p2, r2, q2, dp2, dr2, dq2, T1, T2)
        return _tri_tri_3d(p1, q1, r1, p2, q2, r2, dp2, dq2, dr2, T1, T2)
    if dp1 < 0:
        if dq1 < 0:
            return _tri_tri_3d(r1, p1, q1, p2, q2, r2, dp2, dq2, dr2, T1, T2)
        if dr1 < 0:
            return _tri_tri_3d(q1, r1, p1, p2, q2, r2, dp2, dq2, dr2, T1, T2)
        return _tri_tri_3d(p1, q1, r1, p2, r2, q2, dp2, dr2, dq2, T1, T2)
    if dq1 < 0:
        if dr1 >= 0:
            return _tri_tri_3d(q1, r1, p1, p2, r2, q2, dp2, dr2, dq2, T1, T2)
        return _tri_tri_3d(p1, q1, r1, p2, q2, r2, dp2, dq2, dr2, T1, T2)
    if dq1 > 0:
        if dr1 > 0:
            return _tri_tri_3d(p1, q1, r1, p2, r2, q2, dp2, dr2, dq2, T1, T2)
        return _tri_tri_3d(q1, r1, p1, p2, q2, r2, dp2, dq2, dr2, T1, T2)
    if dr1 > 0:
        return _tri_tri_3d(r1, p1, q1, p2, q2, r2, dp2, dq2, dr2, T1, T2)
    if dr1 < 0:
        return _tri_tri_3d(r1, p1, q1, p2, r2, q2, dp2, dr2, dq2, T1, T2)
    return _coplanar_overlap(T1, T2)


# --------------------------------------------------------------------------
# broad phase

def _pairs_within_groups(keys: np.ndarray, items: np.ndarray) -> np.ndarray:
    """All (a, b) item pairs that share a key, a < b, deduplicated."""
    order = np.lexsort((items, keys))
    keys, items = keys[order], items[order]
    starts = np.flatnonzero(np.r_[True, keys[1:] != keys[:-1]])
    ends = np.r_[starts[1:], len(keys)]
    group_end = np.repeat(ends, ends - starts)
    n_after = group_end - np.arange(len(keys)) - 1
    total = int(n_after.sum())
    if total == 0:
        return np.empty((0, 2), dtype=np.int64)
    first = np.repeat(np.arange(len(keys)), n_after)
    offs = np.arange(total) - np.repeat(np.cumsum(n_after) - n_after, n_after)
    second = first + 1 + offs
    a, b = items[first], items[second]
    pairs = np.stack([np.minimum(a, b), np.maximum(a, b)], axis=1)
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    return np.unique(pairs, axis=0)


def candidate_pairs(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Face pairs with overlapping bounding boxes and no shared vertex."""
    tri = vertices[faces]
    lo, hi = tri.min(axis=1), tri.max(axis=1)
    ext = (hi - lo).max(axis=1)
    cell = max(float(np.median(ext)) * 2.0, 1e-12)
    origin = lo.min(axis=0)
    c0 = np.floor((lo - origin) / cell).astype(np.int64)
    c1 = np.floor((hi - origin) / cell).astype(np.int64)
    span = c1 - c0 + 1
    count = span.prod(axis=1)
    face_rep = np.repeat(np.arange(len(faces)), count)
    local = np.arange(count.sum()) - np.repeat(np.cumsum(count) - count, count)
    sx, sy = span[face_rep, 0], span[face_rep, 1]
    cx = c0[face_rep, 0] + local % sx
    cy = c0[face_rep, 1] + (local // sx) % sy
    cz = c0[face_rep, 2] + local // (sx * sy)
    dims = c1.max(axis=0) + 1
    key = cx + dims[0] * (cy + dims[1] * cz)
    pairs = _pairs_within_groups(key, face_rep)
    if len(pairs) == 0:
        return pairs
    a, b = pairs[:, 0], pairs[:, 1]
    overlap = np.all((lo[a] <= hi[b]) & (lo[b] <= hi[a]), axis=1)
    pairs = pairs[overlap]
    fa, fb = faces[pairs[:, 0]], faces[pairs[:, 1]]
    shared = (fa[:, :, None] == fb[:, None, :]).any(axis=(1, 2))
    return pairs[~shared]


def _plane_reject(tri: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    """Certified fast rejection: one triangle strictly on one side of the other's plane."""
    keep = np.ones(len(pairs), dtype=bool)
    for s, o in ((0, 1), (1, 0)):
        A = tri[pairs[:, s]]
        B = tri[pairs[:, o]]
        base = A[:, 2]
        a = A[:, 0] - base
        b = A[:, 1] - base
        n = np.cross(a, b)
        pn = np.abs(a)[:, [1, 2, 0]] * np.abs(b)[:, [2, 0, 1]] + np.abs(a)[:, [2, 0, 1]] * np.abs(b)[:, [1, 2, 0]]
        signs = []
        for k in range(3):
            c = B[:, k] - base
            det = np.einsum("ij,ij->i", n, c)
            perm = np.einsum("ij,ij->i", pn, np.abs(c))
            certain = np.abs(det) > _O3D_BOUND * perm * 1.01
            signs.append(np.where(certain, np.sign(det), 0.0))
        s0, s1, s2 = signs
        same = ((s0 > 0) & (s1 > 0) & (s2 > 0)) | ((s0 < 0) & (s1 < 0) & (s2 < 0))
        keep &= ~same
    return keep


def self_intersections(mesh: TriangleMesh) -> np.ndarray:
    """Intersecting non-adjacent face pairs, shape (k, 2)."""
    if mesh.n_faces < 2:
        return np.empty((0, 2), dtype=np.int64)
    pairs = candidate_pairs(mesh.vertices, mesh.faces)
    if len(pairs) == 0:
        return pairs
    tri = mesh.vertices[mesh.faces]
    pairs = pairs[_plane_reject(tri, pairs)]
    hits = [bool(triangles_intersect(tri[i], tri[j])) for i, j in pairs]
    return pairs[np.asarray(hits, dtype=bool)] if hits else pairs


def self_intersection_ratio(mesh: TriangleMesh):
    """(fraction of faces in at least one intersecting pair, those face indices)."""
    hit = self_intersections(mesh)
    faces = np.unique(hit.ravel())
    return (len(faces) / mesh.n_faces if mesh.n_faces else 0.0), faces
