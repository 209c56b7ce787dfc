"""Triangle meshes: adjacency, smoothing, normals, inflation, Euler characteristic."""

from __future__ import annotations

from functools import cached_property

import numpy as np
from scipy import sparse


class TriangleMesh:
    """Vertices ``(m, 3)`` and faces ``(F, 3)``; adjacency is derived lazily.

    Coordinates carry no unit of their own.  Meshes coming out of extraction
    are in voxel coordinates; the flow works in the normalized frame (see
    ``surfflow.frame``).
    """

    def __init__(self, vertices, faces):
        v = np.array(vertices, dtype=np.float64)
        f = np.array(faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError(f"vertices must be (m, 3), got {v.shape}")
        if f.size == 0:
            f = f.reshape(0, 3)
        if f.ndim != 2 or f.shape[1] != 3:
            raise ValueError(f"faces must be (F, 3), got {f.shape}")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise ValueError("face index out of range")
        if f.size and np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
            raise ValueError("degenerate face with repeated vertex index")
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite vertex coordinates")
        self.vertices = v
        self.faces = f

    def __repr__(self):
        return f"TriangleMesh(m={self.n_vertices}, F={self.n_faces})"

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def with_vertices(self, vertices) -> "TriangleMesh":
        """Same connectivity, new positions (adjacency cache is shared)."""
        out = TriangleMesh.__new__(TriangleMesh)
        out.vertices = np.array(vertices, dtype=np.float64)
        if out.vertices.shape != self.vertices.shape:
            raise ValueError("vertex array shape changed")
        out.faces = self.faces
        if "adjacency_matrix" in self.__dict__:
            out.__dict__["adjacency_matrix"] = self.__dict__["adjacency_matrix"]
        return out

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected edges, each row sorted."""
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    @cached_property
    def adjacency_matrix(self) -> sparse.csr_matrix:
        e = self.edges
        m = self.n_vertices
        data = np.ones(2 * len(e))
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        return sparse.csr_matrix((data, (rows, cols)), shape=(m, m))

    def neighbors(self, i: int) -> np.ndarray:
        a = self.adjacency_matrix
        return a.indices[a.indptr[i] : a.indptr[i + 1]]

    @property
    def degree(self) -> np.ndarray:
        return np.diff(self.adjacency_matrix.indptr)

    def face_normals(self, normalize: bool = True) -> np.ndarray:
        p = self.vertices[self.faces]
        n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        if normalize:
            norm = np.linalg.norm(n, axis=1, keepdims=True)
            n = n / np.where(norm > 0, norm, 1.0)
        return n

    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.face_normals(normalize=False), axis=1)

    def signed_volume(self) -> float:
        p = self.vertices[self.faces]
        return float(np.einsum("ij,ij->i", p[:, 0], np.cross(p[:, 1], p[:, 2])).sum() / 6.0)

    def is_closed_manifold(self) -> bool:
        f = self.faces
        directed = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        # consistent orientation: every directed edge once, and its reverse once
        uniq = np.unique(directed, axis=0)
        if len(uniq) != len(directed):
            return False
        rev = directed[:, ::-1]
        key = lambda a: a[:, 0] * (self.n_vertices + 1) + a[:, 1]
        return bool(np.isin(key(rev), key(directed)).all())


def euler_characteristic(mesh: TriangleMesh) -> int:
    """V - E + F over unique undirected edges."""
    return int(mesh.n_vertices - len(mesh.edges) + mesh.n_faces)


def laplacian_smooth(mesh: TriangleMesh, iterations: int = 1) -> TriangleMesh:
    """Replace every vertex by the mean of its neighbors, ``iterations`` times.

    Updates are simultaneous (Jacobi style).
    """
    if iterations < 0:
        raise ValueError("iterations must be non-negative")
    if iterations == 0:
        return mesh.with_vertices(mesh.vertices.copy())
    a = mesh.adjacency_matrix
    deg = np.diff(a.indptr)
    if np.any(deg == 0):
        raise ValueError(f"isolated vertices: {np.flatnonzero(deg == 0)[:10].tolist()}")
    v = mesh.vertices
    for _ in range(iterations):
        v = (a @ v) / deg[:, None]
    return mesh.with_vertices(v)


def vertex_normals(mesh: TriangleMesh) -> np.ndarray:
    """Angle-weighted mean of incident face normals, unit length."""
    p = mesh.vertices[mesh.faces]
    fn = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    area2 = np.linalg.norm(fn, axis=1)
    unit = fn / np.where(area2 > 0, area2, 1.0)[:, None]
    acc = np.zeros_like(mesh.vertices)
    for k in range(3):
        e1 = p[:, (k + 1) % 3] - p[:, k]
        e2 = p[:, (k + 2) % 3] - p[:, k]
        n1 = np.linalg.norm(e1, axis=1)
        n2 = np.linalg.norm(e2, axis=1)
        ok = (n1 > 0) & (n2 > 0)
        cos = np.einsum("ij,ij->i", e1, e2) / np.where(ok, n1 * n2, 1.0)
        ang = np.where(ok, np.arccos(np.clip(cos, -1.0, 1.0)), 0.0)
        np.add.at(acc, mesh.faces[:, k], unit * ang[:, None])
    norm = np.linalg.norm(acc, axis=1)
    bad = ~(norm > 0)
    if np.any(bad):
        raise ValueError(f"vertices without a non-degenerate incident face: {np.flatnonzero(bad)[:10].tolist()}")
    return acc / norm[:, None]


def inflate_and_smooth(mesh: TriangleMesh, n_iters: int = 2, rho: float = 0.002) -> TriangleMesh:
    """Alternate a neighbor-mean smoothing pass and a push of ``rho`` along the normals.

    Normals are recomputed on the freshly smoothed positions in every iteration.
    """
    if not np.isfinite(rho):
        raise ValueError("rho must be finite")
    out = mesh
    for _ in range(n_iters):
        out = laplacian_smooth(out, 1)
        if rho != 0:
            out = out.with_vertices(out.vertices + rho * vertex_normals(out))
    return out


def icosphere(subdivisions: int = 3, radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Geodesic sphere by midpoint subdivision of an icosahedron (outward winding)."""
    t = (1.0 + 5 ** 0.5) / 2.0
    v = np.array(
        [[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
         [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
         [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]],
        dtype=np.float64,
    )
    f = np.array(
        [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
         [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
         [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
         [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]],
        dtype=np.int64,
    )
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    for _ in range(subdivisions):
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e.sort(axis=1)
        uniq, inv = np.unique(e, axis=0, return_inverse=True)
        inv = inv.reshape(3, -1).T + len(v)
        mid = v[uniq].mean(axis=1)
        mid /= np.linalg.norm(mid, axis=1, keepdims=True)
        v = np.concatenate([v, mid])
        a, b, c = f.T
        ab, bc, ca = inv.T
        f = np.concatenate([
            np.stack([a, ab, ca], 1), np.stack([b, bc, ab], 1),
            np.stack([c, ca, bc], 1), np.stack([ab, bc, ca], 1),
        ])
    return TriangleMesh(v * radius + np.asarray(center, dtype=np.float64), f)


def torus_mesh(n_major: int = 8, n_minor: int = 8, major: float = 2.0, minor: float = 0.5) -> TriangleMesh:
    """Grid-triangulated torus (two triangles per quad)."""
    i, j = np.meshgrid(np.arange(n_major), np.arange(n_minor), indexing="ij")
    u = 2 * np.pi * i.ravel() / n_major
    w = 2 * np.pi * j.ravel() / n_minor
    v = np.stack([(major + minor * np.cos(w)) * np.cos(u), (major + minor * np.cos(w)) * np.sin(u), minor * np.sin(w)], 1)
    idx = lambda a, b: (a % n_major) * n_minor + (b % n_minor)
    faces = []
    for a in range(n_major):
        for b in range(n_minor):
            faces.append([idx(a, b), idx(a + 1, b), idx(a + 1, b + 1)])
            faces.append([idx(a, b), idx(a + 1, b + 1), idx(a, b + 1)])
    return TriangleMesh(v, faces)
