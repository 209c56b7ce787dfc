"""Mask-to-surfaces pipeline.

Volume stages: largest component, signed distance, rescale and blur,
topology correction, isosurface extraction.  Surface stages: smoothing,
inner flow, inflation, outer flow.  Every stage is timed; failures are
re-raised with the stage name.
"""

from __future__ import annotations

import platform
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .flow import SolverConfig, integrate
from .frame import Frame
from .intersect import self_intersection_ratio
from .marching_cubes import extract_isosurface
from .mesh import TriangleMesh, euler_characteristic, inflate_and_smooth, laplacian_smooth
from .metrics import MetricsReport, evaluate
from .network import DeformationField, DeformNetParams, NetHyper, init_params
from .sdf import sdf_postprocess, signed_distance_transform
from .topology import correct_topology
from .volume import LabelMask, largest_connected_component, pyramid

VOL, SURF = "vol", "surf"


class PipelineError(RuntimeError):
    def __init__(self, stage, msg):
        super().__init__(f"stage {stage}: {msg}")
        self.stage = stage


@dataclass(frozen=True)
class PipelineConfig:
    alpha_hat: float = -1.0
    alpha0: float = -0.05
    sdf_scale: float = 1.0 / 16.0
    gaussian_sigma: float = 0.5
    initial_smooth_iters: int = 2
    inflate_iters: int = 2
    inflate_rho: float = 0.002
    inner_solver: SolverConfig = SolverConfig("euler", 10)
    outer_solver: SolverConfig = SolverConfig("euler", 10)
    label: int = 1
    inner_net: str | None = None
    outer_net: str | None = None
    n_samples: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if not self.alpha_hat < self.alpha0 < 0:
            raise ValueError(f"need alpha_hat < alpha0 < 0, got {self.alpha_hat}, {self.alpha0}")
        if self.sdf_scale <= 0 or self.gaussian_sigma < 0:
            raise ValueError("sdf_scale must be positive and gaussian_sigma non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["inner_solver"] = asdict(self.inner_solver)
        d["outer_solver"] = asdict(self.outer_solver)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        for k in ("inner_solver", "outer_solver"):
            if isinstance(d.get(k), dict):
                d[k] = SolverConfig(**d[k])
        return cls(**d)


@dataclass
class PipelineResult:
    inner_mesh: TriangleMesh
    outer_mesh: TriangleMesh
    timings: list[dict] = field(default_factory=list)
    metrics: dict[str, MetricsReport] = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    manifest: dict = field(default_factory=dict)

    def split(self) -> dict:
        """Seconds per group (vol / surf)."""
        out = {VOL: 0.0, SURF: 0.0}
        for t in self.timings:
            out[t["group"]] += t["seconds"]
        return out


def identity_params(hyper: NetHyper = NetHyper(), seed: int = 0) -> DeformNetParams:
    """Network with a zero output layer: the flow leaves points where they are."""
    return init_params(hyper, seed=seed, zero_head=True)


def _flow(mesh_vox, params, volume, solver, frame):
    fld = DeformationField(params, pyramid(volume, params.hyper.Q), frame)
    x = frame.to_normalized(mesh_vox.vertices)
    return mesh_vox.with_vertices(frame.to_voxel(integrate(x, fld, solver).final_vertices))


def run_pipeline(mask, cfg: PipelineConfig, inner_params: DeformNetParams, outer_params: DeformNetParams,
                 gt_inner: TriangleMesh | None = None, gt_outer: TriangleMesh | None = None) -> PipelineResult:
    """Run every stage on one labelled region; meshes come back in voxel coordinates."""
    timings: list[dict] = []

    @contextmanager
    def stage(name, group):
        t0 = time.perf_counter()
        try:
            yield
        except PipelineError:
            raise
        except Exception as e:  # noqa: BLE001 - re-raised with context
            raise PipelineError(name, f"{type(e).__name__}: {e}") from e
        timings.append({"stage": name, "group": group, "seconds": time.perf_counter() - t0})

    if not isinstance(mask, LabelMask):
        mask = LabelMask(np.asarray(mask))
    checks: dict = {}
    with stage("largest_component", VOL):
        region = largest_connected_component(mask, cfg.label)
    with stage("signed_distance", VOL):
        sdf = signed_distance_transform(region)
    with stage("sdf_postprocess", VOL):
        sdf = sdf_postprocess(sdf, cfg.sdf_scale, cfg.gaussian_sigma)
    with stage("topology_correction", VOL):
        fixed, report = correct_topology(sdf, cfg.alpha_hat)
        checks["topology"] = report.to_dict()
    with stage("isosurface", VOL):
        initial = extract_isosurface(fixed, cfg.alpha0)
        chi = euler_characteristic(initial)
        checks["initial_euler"] = chi
        if chi != 2:
            raise PipelineError("isosurface", f"Euler characteristic {chi} after topology correction, expected 2")
    frame = Frame.for_dims(sdf.dims)
    with stage("initial_smoothing", SURF):
        initial = laplacian_smooth(initial, cfg.initial_smooth_iters)
    checks["initial_sif"] = self_intersection_ratio(initial)[0]
    with stage("inner_flow", SURF):
        inner = _flow(initial, inner_params, sdf.vol, cfg.inner_solver, frame)
    with stage("inflate", SURF):
        # rho is a normalized-frame length; meshes here are in voxels
        inflated = inflate_and_smooth(inner, cfg.inflate_iters, cfg.inflate_rho * frame.scale)
    with stage("outer_flow", SURF):
        outer = _flow(inflated, outer_params, sdf.vol, cfg.outer_solver, frame)
    checks["inner_euler"] = euler_characteristic(inner)
    checks["outer_euler"] = euler_characteristic(outer)
    checks["inner_sif"] = self_intersection_ratio(inner)[0]
    checks["outer_sif"] = self_intersection_ratio(outer)[0]

    metrics = {}
    spacing = sdf.vol.spacing
    if gt_inner is not None:
        metrics["inner"] = evaluate(inner, gt_inner, cfg.n_samples, cfg.seed, spacing)
    if gt_outer is not None:
        metrics["outer"] = evaluate(outer, gt_outer, cfg.n_samples, cfg.seed, spacing)

    result = PipelineResult(inner, outer, timings, metrics, checks)
    result.manifest = {
        "schema": "surfflow.run/1",
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "dims": list(sdf.dims),
        "frame": {"center": list(frame.center), "scale": frame.scale},
        "timings": timings,
        "split_seconds": result.split(),
        "checks": checks,
        "metrics": {k: v.to_dict() for k, v in metrics.items()},
        "meshes": {
            "inner": {"vertices": inner.n_vertices, "faces": inner.n_faces},
            "outer": {"vertices": outer.n_vertices, "faces": outer.n_faces},
        },
    }
    return result
