"""Analytic test shapes: signed distance volumes and corresponded mesh pairs.

Shapes live in whatever units the caller picks.  ``make_sdf_volume`` reads
them in voxel coordinates, or in the normalized frame when a
:class:`~surfflow.frame.Frame` is passed (values are then rescaled to voxels).
Interior is positive.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import sph_harm_y

from .frame import Frame
from .mesh import TriangleMesh, icosphere
from .sdf import SignedDistanceVolume
from .volume import LabelMask

KINDS = ("sphere", "ellipsoid", "torus", "handle_sphere", "harmonic_blob")
STAR_SHAPED = ("sphere", "ellipsoid", "harmonic_blob")


@dataclass(frozen=True)
class ShapeSpec:
    """Parameters per kind.

    sphere: ``radius``.  ellipsoid: ``radii``.  torus: ``radius`` (major),
    ``tube`` (minor), axis z.  handle_sphere: sphere of ``radius`` plus a
    torus of major ``handle_radius`` and minor ``tube`` centred on the sphere
    surface along +x, ring in the xz plane.  harmonic_blob: ``radius``
    modulated by ``1 + amplitude * Y(u)`` with ``Y`` a random degree-``degree``
    real spherical harmonic scaled to max 1.
    """

    kind: str
    radius: float = 1.0
    radii: tuple[float, float, float] = (1.0, 1.0, 1.0)
    tube: float = 0.25
    handle_radius: float = 0.6
    amplitude: float = 0.15
    degree: int = 3
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    seed: int = 0
    _coef: np.ndarray | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown shape kind {self.kind!r}")
        if self.radius <= 0 or min(self.radii) <= 0 or self.tube <= 0 or self.handle_radius <= 0:
            raise ValueError("radii must be positive")
        if self.kind == "torus" and self.tube >= self.radius:
            raise ValueError("torus tube must be thinner than the major radius")
        if self.kind == "harmonic_blob":
            if not 0 <= self.amplitude < 1:
                raise ValueError("blob amplitude must be in [0, 1) to stay star-shaped")
            if self.degree < 0:
                raise ValueError("degree must be non-negative")
            object.__setattr__(self, "_coef", _harmonic_coefficients(self.degree, self.seed))

    @classmethod
    def from_dict(cls, d: dict) -> "ShapeSpec":
        d = dict(d)
        for k in ("radii", "center"):
            if k in d:
                d[k] = tuple(float(v) for v in d[k])
        return cls(**d)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind, "radius": self.radius, "radii": list(self.radii), "tube": self.tube,
            "handle_radius": self.handle_radius, "amplitude": self.amplitude, "degree": self.degree,
            "center": list(self.center), "seed": self.seed,
        }

    # -- geometry ---------------------------------------------------------

    def extent(self) -> float:
        """Radius of a ball about ``center`` containing the shape."""
        if self.kind == "sphere":
            return self.radius
        if self.kind == "ellipsoid":
            return max(self.radii)
        if self.kind == "torus":
            return self.radius + self.tube
        if self.kind == "handle_sphere":
            return max(self.radius, self.radius + self.handle_radius + self.tube)
        return self.radius * (1 + self.amplitude)

    def signed_distance(self, p) -> np.ndarray:
        """Interior-positive (pseudo) distance at points ``(..., 3)``."""
        q = np.asarray(p, dtype=np.float64) - np.asarray(self.center)
        if self.kind == "sphere":
            return self.radius - np.linalg.norm(q, axis=-1)
        if self.kind == "ellipsoid":
            r = np.asarray(self.radii)
            k0 = np.linalg.norm(q / r, axis=-1)
            k1 = np.linalg.norm(q / r ** 2, axis=-1)
            with np.errstate(divide="ignore", invalid="ignore"):
                d = k0 * (1.0 - k0) / k1
            return np.where(k1 > 0, d, min(self.radii))
        if self.kind == "torus":
            return _torus(q, self.radius, self.tube, axis=2)
        if self.kind == "handle_sphere":
            s = self.radius - np.linalg.norm(q, axis=-1)
            h = _torus(q - np.array([self.radius, 0.0, 0.0]), self.handle_radius, self.tube, axis=1)
            return np.maximum(s, h)
        n = np.linalg.norm(q, axis=-1)
        u = q / np.where(n > 0, n, 1.0)[..., None]
        return self.radial(u) - n

    def radial(self, u) -> np.ndarray:
        """Boundary distance from ``center`` along unit directions ``u``."""
        if self.kind not in STAR_SHAPED:
            raise ValueError(f"{self.kind} is not star-shaped about its center")
        u = np.asarray(u, dtype=np.float64)
        if self.kind == "sphere":
            return np.full(u.shape[:-1], float(self.radius))
        if self.kind == "ellipsoid":
            return 1.0 / np.sqrt(np.sum((u / np.asarray(self.radii)) ** 2, axis=-1))
        return self.radius * (1.0 + self.amplitude * _harmonic(u, self.degree, self._coef))


def _torus(q, major, minor, axis):
    a, b = [i for i in range(3) if i != axis]
    ring = np.hypot(q[..., a], q[..., b]) - major
    return minor - np.hypot(ring, q[..., axis])


def _fibonacci_sphere(n):
    i = np.arange(n) + 0.5
    z = 1 - 2 * i / n
    phi = np.pi * (1 + 5 ** 0.5) * i
    r = np.sqrt(1 - z * z)
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def _real_harmonics(u, degree):
    theta = np.arccos(np.clip(u[..., 2], -1.0, 1.0))
    phi = np.arctan2(u[..., 1], u[..., 0])
    out = []
    for m in range(-degree, degree + 1):
        y = sph_harm_y(degree, abs(m), theta, phi)
        if m < 0:
            out.append(np.sqrt(2) * y.imag)
        elif m == 0:
            out.append(y.real)
        else:
            out.append(np.sqrt(2) * y.real)
    return np.stack(out, axis=-1)


def _harmonic_coefficients(degree, seed):
    c = np.random.default_rng(seed).normal(size=2 * degree + 1)
    if degree == 0:
        return np.ones(1) / _real_harmonics(np.array([[0.0, 0.0, 1.0]]), 0)[0]
    # scale so the pattern peaks at magnitude 1 on a dense direction set
    peak = np.abs(_real_harmonics(_fibonacci_sphere(20000), degree) @ c).max()
    return c / peak


def _harmonic(u, degree, coef):
    return np.clip(_real_harmonics(u, degree) @ coef, -1.0, 1.0)


# --------------------------------------------------------------------------

def _grid_points(dims):
    axes = [np.arange(d, dtype=np.float64) for d in dims]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def make_sdf_volume(spec: ShapeSpec, dims, frame: Frame | None = None, margin: float = 2.0) -> SignedDistanceVolume:
    """Sample the shape's signed distance on a voxel grid of ``dims``.

    Without a frame the spec is read in voxel units.  With one it is read in
    normalized units and values are scaled to voxels.
    """
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or min(dims) < 2:
        raise ValueError(f"dims must be three sizes >= 2, got {dims}")
    if frame is None:
        center_vox = np.asarray(spec.center)
        ext_vox = spec.extent()
    else:
        center_vox = frame.to_voxel(spec.center)
        ext_vox = spec.extent() * frame.scale
    lo = center_vox - ext_vox
    hi = center_vox + ext_vox
    if np.any(lo < margin) or np.any(hi > np.asarray(dims) - 1 - margin):
        raise ValueError(f"shape spans voxels {lo.round(2).tolist()}..{hi.round(2).tolist()}, outside {dims} with margin {margin}")
    pts = _grid_points(dims)
    if frame is None:
        values = spec.signed_distance(pts)
    else:
        values = spec.signed_distance(frame.to_normalized(pts)) * frame.scale
    return SignedDistanceVolume.from_array(values)


def make_mask(spec: ShapeSpec, dims, frame: Frame | None = None) -> LabelMask:
    """Binary mask of the shape interior."""
    sdf = make_sdf_volume(spec, dims, frame)
    return LabelMask((sdf.data > 0).astype(np.uint8), alphabet=(0, 1))


def star_mesh(spec: ShapeSpec, subdivision: int = 4) -> TriangleMesh:
    """Icosphere with each vertex pushed radially onto the shape boundary."""
    base = icosphere(subdivision)
    u = base.vertices
    return base.with_vertices(np.asarray(spec.center) + spec.radial(u)[:, None] * u)


def make_corresponded_pair(spec_a: ShapeSpec, spec_b: ShapeSpec, subdivision: int = 4):
    """Two meshes with identical faces and vertex order, one per shape."""
    if not np.allclose(spec_a.center, spec_b.center):
        raise ValueError("shapes must share a center for the radial correspondence")
    return star_mesh(spec_a, subdivision), star_mesh(spec_b, subdivision)
