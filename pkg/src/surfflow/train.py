"""Training by backpropagation through the unrolled solver, with Adam.

Meshes handed to :func:`train` are in normalized coordinates (see
``surfflow.frame``); the volume is in voxels and the frame links the two.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .flow import SolverConfig, integrate, integrate_with_pullback
from .frame import Frame
from .mesh import TriangleMesh
from .metrics import chamfer_loss, mse_loss
from .network import DeformationField, DeformNetParams, NetHyper, init_params
from .volume import Volume, pyramid

log = logging.getLogger(__name__)

TASKS = ("chamfer_fit", "corresponded_fit")
TASK_ALIASES = {"chamfer": "chamfer_fit", "mse": "corresponded_fit"}


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params: DeformNetParams, grads: dict, state: AdamState, lr: float):
    """One bias-corrected Adam update, in place on copies; returns ``(params, state)``."""
    for path, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in {path}")
    new = params.copy()
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    m, v = dict(state.m), dict(state.v)
    for path, p in new.arrays():
        g = grads.get(path)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match {path} {p.shape}")
        m[path] = b1 * state.m.get(path, np.zeros_like(p)) + (1 - b1) * g
        v[path] = b2 * state.v.get(path, np.zeros_like(p)) + (1 - b2) * g * g
        mhat = m[path] / (1 - b1 ** t)
        vhat = v[path] / (1 - b2 ** t)
        p -= lr * mhat / (np.sqrt(vhat) + state.eps)
    return new, AdamState(m, v, t, b1, b2, state.eps)


def sample_vertices(mesh_or_count, m: int, seed=None) -> np.ndarray:
    """``m`` distinct vertex indices, uniform without replacement."""
    n = mesh_or_count.n_vertices if isinstance(mesh_or_count, TriangleMesh) else int(mesh_or_count)
    if not 0 < m <= n:
        raise ValueError(f"cannot sample {m} of {n} vertices")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return rng.choice(n, size=m, replace=False)


@dataclass(frozen=True)
class TrainConfig:
    task: str = "chamfer_fit"
    epochs: int = 400
    learning_rate: float = 1e-4
    sample_m: int = 2000
    solver: SolverConfig = SolverConfig("euler", 10)
    seed: int = 0
    fullset_every: int = 10
    hyper: NetHyper = NetHyper()

    def __post_init__(self):
        object.__setattr__(self, "task", TASK_ALIASES.get(self.task, self.task))
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0 or self.sample_m < 1:
            raise ValueError("epochs must be >= 0 and sample_m >= 1")

    def to_dict(self) -> dict:
        hp = self.hyper
        return {
            "task": self.task, "epochs": self.epochs, "learning_rate": self.learning_rate, "sample_m": self.sample_m,
            "solver": {"method": self.solver.method, "steps": self.solver.steps, "horizon": self.solver.horizon},
            "seed": self.seed, "fullset_every": self.fullset_every,
            "hyper": {"Q": hp.Q, "K": hp.K, "C": hp.C, "C_mid": hp.C_mid, "H": hp.H, "activation": hp.activation, "slope": hp.slope},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "solver" in d and isinstance(d["solver"], dict):
            d["solver"] = SolverConfig(**d["solver"])
        if "hyper" in d and isinstance(d["hyper"], dict):
            d["hyper"] = NetHyper(**d["hyper"])
        return cls(**d)


@dataclass
class History:
    epoch: list[int] = field(default_factory=list)
    sampled_loss: list[float] = field(default_factory=list)
    fullset_loss: list[float | None] = field(default_factory=list)
    seconds: float = 0.0

    def rows(self):
        return list(zip(self.epoch, self.sampled_loss, self.fullset_loss))


def task_loss(task: str, pred: np.ndarray, target: np.ndarray):
    """Loss and its gradient w.r.t. ``pred``."""
    if task == "chamfer_fit":
        loss, g, _ = chamfer_loss(pred, target, with_grad=True)
        return loss, g
    return mse_loss(pred, target, with_grad=True)


def loss_and_grad(params: DeformNetParams, x0, target, volumes, task: str, solver: SolverConfig, frame: Frame):
    """Loss of the flowed points ``x0`` against ``target`` and its parameter gradient."""
    fld = DeformationField(params, volumes, frame)
    final, pullback = integrate_with_pullback(x0, fld, solver)
    loss, g = task_loss(task, final, target)
    _, grads = pullback(g)
    return loss, grads


def deform(mesh: TriangleMesh, params: DeformNetParams, volume: Volume, solver: SolverConfig, frame: Frame | None = None) -> TriangleMesh:
    """Flow every vertex of a normalized-frame mesh."""
    frame = frame or Frame.for_dims(volume.dims)
    fld = DeformationField(params, pyramid(volume, params.hyper.Q), frame)
    return mesh.with_vertices(integrate(mesh.vertices, fld, solver).final_vertices)


def train(initial_mesh: TriangleMesh, target_mesh: TriangleMesh, volume: Volume, cfg: TrainConfig = TrainConfig(),
          params: DeformNetParams | None = None, frame: Frame | None = None):
    """Fit a deformation network; returns ``(params, History)``."""
    if cfg.task == "corresponded_fit" and initial_mesh.n_vertices != target_mesh.n_vertices:
        raise ValueError("corresponded task needs meshes with equal vertex counts")
    m = min(cfg.sample_m, initial_mesh.n_vertices, target_mesh.n_vertices)
    frame = frame or Frame.for_dims(volume.dims)
    volumes = pyramid(volume, cfg.hyper.Q)
    if params is None:
        params = init_params(cfg.hyper, seed=cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    state = AdamState()
    hist = History()
    t0 = time.perf_counter()
    x_all = initial_mesh.vertices
    y_all = target_mesh.vertices
    for epoch in range(cfg.epochs + 1):
        idx = sample_vertices(initial_mesh.n_vertices, m, rng)
        if cfg.task == "corresponded_fit":
            tgt = y_all[idx]
        else:
            tgt = y_all[sample_vertices(target_mesh.n_vertices, m, rng)]
        fld = DeformationField(params, volumes, frame)
        try:
            final, pullback = integrate_with_pullback(x_all[idx], fld, cfg.solver)
        except FloatingPointError as e:
            raise FloatingPointError(f"epoch {epoch}: {e}") from None
        loss, g = task_loss(cfg.task, final, tgt)
        if not np.isfinite(loss):
            raise FloatingPointError(f"loss is not finite at epoch {epoch}")
        full = None
        if epoch % cfg.fullset_every == 0 or epoch == cfg.epochs:
            moved = integrate(x_all, fld, cfg.solver).final_vertices
            full = task_loss(cfg.task, moved, y_all)[0]
            log.info("epoch %d sampled %.6g full %.6g", epoch, loss, full)
        hist.epoch.append(epoch)
        hist.sampled_loss.append(loss)
        hist.fullset_loss.append(full)
        if epoch == cfg.epochs:
            break
        # the Chamfer loss is a sum; averaging its gradient over the batch
        # keeps the step size independent of m (MSE is already a mean)
        _, grads = pullback(g / m if cfg.task == "chamfer_fit" else g)
        try:
            params, state = adam_step(params, grads, state, cfg.learning_rate)
        except FloatingPointError as e:
            raise FloatingPointError(f"epoch {epoch}: {e}") from None
    hist.seconds = time.perf_counter() - t0
    return params, hist
