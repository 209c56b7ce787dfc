"""Fixed-step explicit integration of vertex positions under a derivative field.

A field is any callable mapping ``(m, 3)`` positions to ``(m, 3)`` velocities.
For training it must also expose ``vjp(x, u) -> (grad_x, param_grads)``
(see :class:`surfflow.network.DeformationField`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist

# Butcher tableaux: (A strictly lower triangular, b weights, c nodes)
TABLEAUX = {
    "euler": (np.zeros((1, 1)), np.array([1.0]), np.array([0.0])),
    "midpoint": (np.array([[0.0, 0.0], [0.5, 0.0]]), np.array([0.0, 1.0]), np.array([0.0, 0.5])),
    "rk4": (
        np.array([[0.0, 0, 0, 0], [0.5, 0, 0, 0], [0.0, 0.5, 0, 0], [0.0, 0, 1.0, 0]]),
        np.array([1.0, 2.0, 2.0, 1.0]) / 6.0,
        np.array([0.0, 0.5, 0.5, 1.0]),
    ),
}
ORDER = {"euler": 1, "midpoint": 2, "rk4": 4}


@dataclass(frozen=True)
class SolverConfig:
    method: str = "euler"
    steps: int = 10
    horizon: float = 1.0

    def __post_init__(self):
        if self.method not in TABLEAUX:
            raise ValueError(f"unknown method {self.method!r}; choose from {sorted(TABLEAUX)}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError(f"steps must be a positive integer, got {self.steps}")
        if not (np.isfinite(self.horizon) and self.horizon > 0):
            raise ValueError(f"horizon must be positive, got {self.horizon}")

    @property
    def step_size(self) -> float:
        return self.horizon / self.steps

    @property
    def stages(self) -> int:
        return len(TABLEAUX[self.method][1])

    @property
    def nfe(self) -> int:
        return self.steps * self.stages


@dataclass
class FlowResult:
    final_vertices: np.ndarray
    nfe: int
    snapshots: np.ndarray | None = None  # (N+1, m, 3) when requested


def _stages(x, field, A, h, skip_last=False):
    ys, ks = [], []
    s = A.shape[0]
    for i in range(s):
        y = x.copy()
        for j in range(i):
            if A[i, j] != 0.0:
                y += h * A[i, j] * ks[j]
        ys.append(y)
        if skip_last and i == s - 1:
            break
        ks.append(np.asarray(field(y), dtype=np.float64).reshape(x.shape))
    return ys, ks


def _step(x, field, A, b, h):
    _, ks = _stages(x, field, A, h)
    dx = sum(bi * k for bi, k in zip(b, ks) if bi != 0.0)
    return x + h * dx


def integrate(vertices, field, cfg: SolverConfig = SolverConfig(), snapshots: bool = False) -> FlowResult:
    """Advance all vertices through ``cfg.steps`` steps; connectivity is not touched."""
    x = np.array(vertices, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != 3:
        raise ValueError(f"vertices must be (m, 3), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite state at step 0")
    A, b, _ = TABLEAUX[cfg.method]
    h = cfg.step_size
    snaps = [x.copy()] if snapshots else None
    for n in range(cfg.steps):
        x = _step(x, field, A, b, h)
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"non-finite state at step {n + 1}")
        if snapshots:
            snaps.append(x.copy())
    return FlowResult(x, cfg.nfe, np.stack(snaps) if snapshots else None)


def integrate_with_pullback(vertices, field, cfg: SolverConfig):
    """Forward solve that keeps step states, plus a reverse-mode pullback.

    ``pullback(upstream)`` returns ``(grad_x0, param_grads)`` for a cotangent
    on the final positions.  Stage values are recomputed from the stored step
    states during the reverse sweep.
    """
    x = np.array(vertices, dtype=np.float64)
    A, b, _ = TABLEAUX[cfg.method]
    h = cfg.step_size
    states = [x]
    for n in range(cfg.steps):
        x = _step(x, field, A, b, h)
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"non-finite state at step {n + 1}")
        states.append(x)

    def pullback(upstream):
        lam = np.array(upstream, dtype=np.float64).reshape(x.shape)
        grads: dict[str, np.ndarray] = {}
        s = len(b)
        for n in range(cfg.steps - 1, -1, -1):
            ys, _ = _stages(states[n], field, A, h, skip_last=True)
            gk = [h * b[i] * lam for i in range(s)]
            gx = lam.copy()
            for i in range(s - 1, -1, -1):
                if not np.any(gk[i]):
                    continue
                gy, gp = field.vjp(ys[i], gk[i])
                gx += gy
                for key, val in gp.items():
                    if key in grads:
                        grads[key] += val
                    else:
                        grads[key] = val.copy()
                for j in range(i):
                    if A[i, j] != 0.0:
                        gk[j] = gk[j] + h * A[i, j] * gy
            lam = gx
        return lam, grads

    return states[-1], pullback


def integrate_vjp(vertices, field, cfg: SolverConfig, upstream):
    """``(final_vertices, grad_x0, param_grads)`` for a fixed cotangent."""
    final, pullback = integrate_with_pullback(vertices, field, cfg)
    gx, grads = pullback(upstream)
    return final, gx, grads


def min_pairwise_trajectory_gap(points, field, cfg: SolverConfig = SolverConfig()) -> float:
    """Smallest distance between any two tracked points over all recorded steps."""
    p = np.asarray(points, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != 3 or len(p) < 2:
        raise ValueError("need at least two 3D points")
    if len(np.unique(p, axis=0)) != len(p):
        raise ValueError("duplicate input points")
    res = integrate(p, field, cfg, snapshots=True)
    return float(min(pdist(s).min() for s in res.snapshots))


def gap_history(points, field, cfg: SolverConfig = SolverConfig()) -> np.ndarray:
    """Minimum pairwise distance at every recorded step (length N+1)."""
    p = np.asarray(points, dtype=np.float64)
    if len(np.unique(p, axis=0)) != len(p):
        raise ValueError("duplicate input points")
    res = integrate(p, field, cfg, snapshots=True)
    return np.array([pdist(s).min() for s in res.snapshots])


def exponential_test_errors(method: str, steps_list=(8, 16, 32, 64, 128)):
    """``(h, |x(1) - e|)`` for dx/dt = x, x(0) = 1 over a unit horizon."""
    rows = []
    for n in steps_list:
        cfg = SolverConfig(method, int(n), 1.0)
        x = integrate(np.ones((1, 3)), lambda y: y, cfg).final_vertices[0, 0]
        rows.append((cfg.step_size, abs(x - np.e)))
    return rows


def observed_order(rows) -> float:
    """Least-squares slope of log error against log step size."""
    h, err = np.array(rows).T
    return float(np.polyfit(np.log(h), np.log(err), 1)[0])
