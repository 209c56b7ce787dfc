"""Marching cubes with a connectivity-consistent case table.

The 256-case table is generated, not transcribed.  A corner is *inside* when
its value is strictly above the level.  Ambiguous faces always join the
inside corners, and the four cases with exactly two inside corners on a cube
diagonal get a tube.  Inside is thereby 26-connected and outside 6-connected,
the same pairing the topology corrector preserves, so the extracted surface
has the topology of the thresholded voxels.

Triangles wind so that normals point toward decreasing values (outward under
the interior-positive convention).
"""

from __future__ import annotations

import numpy as np

from .mesh import TriangleMesh

CORNERS = np.array([(c & 1, (c >> 1) & 1, (c >> 2) & 1) for c in range(8)], dtype=np.int64)
# edges as (lower corner, axis); the upper corner is lower | (1 << axis)
EDGES = [(c, a) for a in range(3) for c in range(8) if not (c >> a) & 1]
EDGE_CORNERS = np.array([(c, c | (1 << a)) for c, a in EDGES], dtype=np.int64)
EDGE_AXIS = np.array([a for _, a in EDGES], dtype=np.int64)
_EDGE_ID = {tuple(sorted(p)): i for i, p in enumerate(EDGE_CORNERS.tolist())}

INTERP_EPS = 1e-4


def _faces():
    faces = []
    for axis in range(3):
        u, v = [a for a in range(3) if a != axis]
        for s in (0, 1):
            cyc = []
            for bu, bv in ((0, 0), (1, 0), (1, 1), (0, 1)):
                cyc.append((s << axis) | (bu << u) | (bv << v))
            faces.append(cyc)
    return faces


FACES = _faces()


def _edge(a, b):
    return _EDGE_ID[(min(a, b), max(a, b))]


def _loops(case):
    inside = [(case >> c) & 1 for c in range(8)]
    nbr = {}

    def link(e1, e2):
        nbr.setdefault(e1, []).append(e2)
        nbr.setdefault(e2, []).append(e1)

    for cyc in FACES:
        crossing = [_edge(cyc[i], cyc[(i + 1) % 4]) for i in range(4) if inside[cyc[i]] != inside[cyc[(i + 1) % 4]]]
        if len(crossing) == 2:
            link(*crossing)
        elif len(crossing) == 4:
            # ambiguous face: cut off each outside corner, keeping inside joined
            for i in range(4):
                if not inside[cyc[i]]:
                    link(_edge(cyc[i - 1], cyc[i]), _edge(cyc[i], cyc[(i + 1) % 4]))
    loops = []
    seen = set()
    for start in sorted(nbr):
        if start in seen:
            continue
        loop = [start]
        seen.add(start)
        prev, cur = None, start
        while True:
            a, b = nbr[cur]
            nxt = a if a != prev else b
            if nxt == start:
                break
            loop.append(nxt)
            seen.add(nxt)
            prev, cur = cur, nxt
        loops.append(loop)
    return loops


def _midpoint(e):
    a, b = EDGE_CORNERS[e]
    return 0.5 * (CORNERS[a] + CORNERS[b])


def _outward(e, case):
    """Direction from the inside corner to the outside corner of edge e."""
    a, b = EDGE_CORNERS[e]
    if (case >> a) & 1:
        return CORNERS[b] - CORNERS[a]
    return CORNERS[a] - CORNERS[b]


def _tri_normal(tri):
    p = [_midpoint(e) for e in tri]
    return np.cross(p[1] - p[0], p[2] - p[0])


def _case_triangles(case):
    loops = _loops(case)
    inside = [c for c in range(8) if (case >> c) & 1]
    tris = []
    if len(inside) == 2 and inside[0] ^ inside[1] == 7:
        # two inside corners on a cube diagonal: join their caps with a tube
        a, b = inside
        la = [_edge(a, a ^ (1 << k)) for k in range(3)]
        lb = [_edge(b, b ^ (1 << k)) for k in range(3)]
        # band between the caps: edge a->a^k lies next to edges b->b^j, j != k
        for k in range(3):
            k1 = (k + 1) % 3
            k2 = (k + 2) % 3
            tris.append([la[k], la[k1], lb[k2]])
            tris.append([la[k], lb[k2], lb[k1]])
        axis_p = CORNERS[a].astype(float)
        axis_d = (CORNERS[b] - CORNERS[a]).astype(float)
        out = []
        for t in tris:
            c = np.mean([_midpoint(e) for e in t], axis=0)
            radial = c - axis_p - np.dot(c - axis_p, axis_d) / np.dot(axis_d, axis_d) * axis_d
            if np.dot(_tri_normal(t), radial) < 0:
                t = [t[0], t[2], t[1]]
            out.append(t)
        return out
    for loop in loops:
        pts = np.array([_midpoint(e) for e in loop])
        newell = np.zeros(3)
        for i in range(len(loop)):
            newell += np.cross(pts[i], pts[(i + 1) % len(loop)])
        ref = np.sum([_outward(e, case) for e in loop], axis=0)
        if np.dot(newell, ref) < 0:
            loop = loop[::-1]
        for i in range(1, len(loop) - 1):
            tris.append([loop[0], loop[i], loop[i + 1]])
    return tris


def _build_table():
    cases = [_case_triangles(c) for c in range(256)]
    width = max(len(t) for t in cases)
    table = -np.ones((256, width, 3), dtype=np.int64)
    for c, tris in enumerate(cases):
        if tris:
            table[c, : len(tris)] = tris
    return table


TRI_TABLE = _build_table()
TRI_COUNT = (TRI_TABLE[:, :, 0] >= 0).sum(axis=1)


def edge_manifold_report(faces: np.ndarray):
    """Undirected edges with a face count other than two."""
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e.sort(axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    return uniq[counts != 2], counts[counts != 2]


def marching_cubes(values: np.ndarray, level: float, require_closed: bool = True):
    """Extract the ``level`` isosurface of a 3D array.

    Returns vertices in voxel coordinates and faces.  Shared edge vertices are
    welded.  With ``require_closed`` an open or non-manifold result raises.
    """
    values = np.asarray(values, dtype=np.float64)
    nx, ny, nz = values.shape
    inside = values > level
    idx = np.zeros((nx - 1, ny - 1, nz - 1), dtype=np.int64)
    for c, (dx, dy, dz) in enumerate(CORNERS):
        idx |= inside[dx : nx - 1 + dx, dy : ny - 1 + dy, dz : nz - 1 + dz].astype(np.int64) << c
    active = np.nonzero(TRI_COUNT[idx] > 0)
    cells = np.stack(active, axis=1)
    if cells.shape[0] == 0:
        raise ValueError(f"level {level} does not cross the volume")
    cases = idx[active]
    tri = TRI_TABLE[cases]  # (ncell, width, 3)
    valid = tri[:, :, 0] >= 0
    cell_of_tri = np.repeat(np.arange(cells.shape[0]), valid.sum(axis=1))
    local = tri[valid]  # (ntri, 3) local edge ids
    # global edge key: 3 * linear(lower endpoint) + axis
    lower = cells[cell_of_tri][:, None, :] + CORNERS[EDGE_CORNERS[local, 0]]
    lin = lower[..., 0] + nx * (lower[..., 1] + ny * lower[..., 2])
    keys = 3 * lin + EDGE_AXIS[local]
    ukeys, inv = np.unique(keys.ravel(), return_inverse=True)
    faces = inv.reshape(-1, 3)
    axis = ukeys % 3
    lin0 = ukeys // 3
    p0 = np.stack([lin0 % nx, (lin0 // nx) % ny, lin0 // (nx * ny)], axis=1)
    p1 = p0 + np.eye(3, dtype=np.int64)[axis]
    v0 = values[p0[:, 0], p0[:, 1], p0[:, 2]]
    v1 = values[p1[:, 0], p1[:, 1], p1[:, 2]]
    t = np.clip((level - v0) / (v1 - v0), INTERP_EPS, 1.0 - INTERP_EPS)
    verts = p0 + t[:, None] * (p1 - p0)
    if require_closed:
        bad, counts = edge_manifold_report(faces)
        if bad.size:
            cells_bad = np.unique(np.floor(verts[bad[:, 0]]).astype(np.int64), axis=0)
            kind = "open (touches the grid border)" if np.all(counts < 2) else "non-manifold"
            raise ValueError(f"extracted surface is {kind}; {len(bad)} bad edges near cells {cells_bad[:10].tolist()}")
    return verts, faces


def extract_isosurface(sdf, alpha: float, require_closed: bool = True) -> TriangleMesh:
    """Marching-cubes mesh of ``{U = alpha}`` in voxel coordinates."""
    values = np.asarray(sdf) if isinstance(sdf, np.ndarray) else sdf.data
    lo, hi = float(values.min()), float(values.max())
    if not lo < alpha < hi:
        raise ValueError(f"level {alpha} outside the value range ({lo}, {hi})")
    verts, faces = marching_cubes(values, alpha, require_closed=require_closed)
    return TriangleMesh(verts, faces)
