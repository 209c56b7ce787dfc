"""Deformation network: point branch, multi-scale cube sampling, fusion head.

Layer layout (``phi`` is the activation, absent on the last layer)::

    z_p = phi(W1 x + b1)                         3      -> C
    v   = cube samples of the volume pyramid     x      -> Q*K^3
    z_l = phi(W3 phi(W2 v + b2) + b3)            Q*K^3  -> C_mid -> C
    out = W6 phi(W5 phi(W4 [z_p; z_l] + b4) + b5) + b6   2C -> H -> H -> 3

``x`` is in normalized flow coordinates; cube sampling converts it to voxels
with the volume's :class:`~surfflow.frame.Frame`.  Gradients are hand-written
reverse mode, checked against finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .frame import Frame
from .volume import Volume, _cube_batch

LAYERS = ("f1", "f2", "f3", "f4", "f5", "f6")
ACTIVATIONS = {"leaky_relu": 1.0, "tanh": 1.0, "identity": 1.0}


@dataclass(frozen=True)
class NetHyper:
    Q: int = 3
    K: int = 5
    C: int = 128
    C_mid: int = 128
    H: int = 128
    activation: str = "leaky_relu"
    slope: float = 0.2

    def __post_init__(self):
        if self.K % 2 != 1:
            raise ValueError(f"cube side K must be odd, got {self.K}")
        if self.Q < 1:
            raise ValueError("Q must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def lipschitz_phi(self) -> float:
        if self.activation == "leaky_relu":
            return max(1.0, abs(self.slope))
        return ACTIVATIONS[self.activation]

    def shapes(self) -> dict[str, tuple[int, int]]:
        """(out, in) of every layer."""
        n_cube = self.Q * self.K ** 3
        return {
            "f1": (self.C, 3),
            "f2": (self.C_mid, n_cube),
            "f3": (self.C, self.C_mid),
            "f4": (self.H, 2 * self.C),
            "f5": (self.H, self.H),
            "f6": (3, self.H),
        }


@dataclass
class DeformNetParams:
    hyper: NetHyper
    W: dict[str, np.ndarray] = field(default_factory=dict)
    b: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        for name, (o, i) in self.hyper.shapes().items():
            if self.W[name].shape != (o, i) or self.b[name].shape != (o,):
                raise ValueError(f"layer {name}: expected W {(o, i)}, b {(o,)}; got {self.W[name].shape}, {self.b[name].shape}")
            if not (np.all(np.isfinite(self.W[name])) and np.all(np.isfinite(self.b[name]))):
                raise ValueError(f"layer {name} has non-finite weights")

    def arrays(self):
        """(path, array) pairs in a fixed order; paths look like ``W.f1``."""
        for name in LAYERS:
            yield f"W.{name}", self.W[name]
            yield f"b.{name}", self.b[name]

    def copy(self) -> "DeformNetParams":
        return DeformNetParams(self.hyper, {k: v.copy() for k, v in self.W.items()}, {k: v.copy() for k, v in self.b.items()})

    def n_params(self) -> int:
        return sum(a.size for _, a in self.arrays())


def init_params(hyper: NetHyper = NetHyper(), seed: int = 0, zero_head: bool = True) -> DeformNetParams:
    """Uniform fan-in initialization; the last layer starts at zero (identity flow)."""
    rng = np.random.default_rng(seed)
    W, b = {}, {}
    for name, (o, i) in hyper.shapes().items():
        bound = 1.0 / np.sqrt(i)
        W[name] = rng.uniform(-bound, bound, size=(o, i))
        b[name] = rng.uniform(-bound, bound, size=o)
    if zero_head:
        W["f6"][:] = 0.0
        b["f6"][:] = 0.0
    return DeformNetParams(hyper, W, b)


# --------------------------------------------------------------------------
# cube sampling

def cube_offsets(K: int) -> np.ndarray:
    """Integer offsets ``delta_hij`` in (h, i, j) order, h along x."""
    if K % 2 != 1:
        raise ValueError(f"cube side K must be odd, got {K}")
    r = np.arange(K) - (K - 1) // 2
    h, i, j = np.meshgrid(r, r, r, indexing="ij")
    return np.stack([h.ravel(), i.ravel(), j.ravel()], axis=1).astype(np.float64)


def _cube_sample_batch(vox: np.ndarray, volumes, K: int, with_grad: bool):
    """Samples (m, Q*K^3) and optionally d(sample)/d(voxel coord) (m, Q*K^3, 3)."""
    offs = cube_offsets(K)
    vox = np.ascontiguousarray(vox, dtype=np.float64)
    if not np.all(np.isfinite(vox)):
        # only reachable when the flowed state overflows the frame map
        raise FloatingPointError("non-finite voxel coordinate")
    m, n_off = vox.shape[0], offs.shape[0]
    values = np.empty((m, len(volumes) * n_off))
    grads = np.zeros((m, len(volumes) * n_off, 3) if with_grad else (1, 1, 3))
    for q, vol in enumerate(volumes, start=1):
        _cube_batch(vol.data, vox, 2.0 ** (q - 1), offs, values, grads, (q - 1) * n_off, with_grad)
    if with_grad:
        return values, grads
    return values


def cube_sample(x, volumes, K: int) -> np.ndarray:
    """Cube stack ``(Q, K, K, K)`` around voxel-coordinate point ``x``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (3,):
        raise ValueError(f"expected a 3D point, got shape {x.shape}")
    v = _cube_sample_batch(x[None], volumes, K, with_grad=False)
    return v.reshape(len(volumes), K, K, K)


# --------------------------------------------------------------------------
# forward / backward

def _act(z, hyper):
    if hyper.activation == "leaky_relu":
        return np.maximum(z, hyper.slope * z) if 0 <= hyper.slope <= 1 else np.where(z > 0, z, hyper.slope * z)
    if hyper.activation == "tanh":
        return np.tanh(z)
    return z


def _act_grad(z, a, hyper):
    if hyper.activation == "leaky_relu":
        return np.where(z > 0, 1.0, hyper.slope)
    if hyper.activation == "tanh":
        return 1.0 - a * a
    return np.ones_like(z)


def _check_volumes(params, volumes):
    if len(volumes) != params.hyper.Q:
        raise ValueError(f"network expects Q={params.hyper.Q} volumes, got {len(volumes)}")


def _forward(params, x, volumes, frame, with_grad):
    hp = params.hyper
    W, b = params.W, params.b
    cache = {"x": x}
    vox = frame.to_voxel(x)
    if with_grad:
        v, dv = _cube_sample_batch(vox, volumes, hp.K, True)
        cache["dv"] = dv * frame.scale
    else:
        v = _cube_sample_batch(vox, volumes, hp.K, False)
    cache["v"] = v
    z1 = x @ W["f1"].T + b["f1"]
    a1 = _act(z1, hp)
    z2 = v @ W["f2"].T + b["f2"]
    a2 = _act(z2, hp)
    z3 = a2 @ W["f3"].T + b["f3"]
    a3 = _act(z3, hp)
    h = np.concatenate([a1, a3], axis=1)
    z4 = h @ W["f4"].T + b["f4"]
    a4 = _act(z4, hp)
    z5 = a4 @ W["f5"].T + b["f5"]
    a5 = _act(z5, hp)
    out = a5 @ W["f6"].T + b["f6"]
    cache.update(z1=z1, a1=a1, z2=z2, a2=a2, z3=z3, a3=a3, h=h, z4=z4, a4=a4, z5=z5, a5=a5)
    return out, cache


def _prep(params, x, volumes, frame):
    _check_volumes(params, volumes)
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = np.atleast_2d(x)
    if x2.shape[1] != 3:
        raise ValueError(f"points must have 3 coordinates, got shape {x.shape}")
    if frame is None:
        frame = Frame.for_dims(volumes[0].dims)
    return x2, single, frame


def forward(params: DeformNetParams, x, volumes, frame: Frame | None = None) -> np.ndarray:
    """Derivative vectors for one point ``(3,)`` or a batch ``(m, 3)``."""
    x2, single, frame = _prep(params, x, volumes, frame)
    out, _ = _forward(params, x2, volumes, frame, with_grad=False)
    return out[0] if single else out


def backward(params: DeformNetParams, x, volumes, upstream, frame: Frame | None = None):
    """Reverse-mode pass: ``(grads, grad_x)`` for the cotangent ``upstream``.

    ``grads`` maps ``W.f1``-style paths to arrays summed over the batch;
    ``grad_x`` has the shape of ``x``.  On a voxel-cell face the trilinear
    derivative of the cell starting at that face is used.
    """
    x2, single, frame = _prep(params, x, volumes, frame)
    u = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
    if u.shape != x2.shape:
        raise ValueError(f"upstream shape {u.shape} does not match points {x2.shape}")
    out, c = _forward(params, x2, volumes, frame, with_grad=True)
    hp = params.hyper
    W = params.W
    g = {}
    g["W.f6"] = u.T @ c["a5"]
    g["b.f6"] = u.sum(0)
    d5 = (u @ W["f6"]) * _act_grad(c["z5"], c["a5"], hp)
    g["W.f5"] = d5.T @ c["a4"]
    g["b.f5"] = d5.sum(0)
    d4 = (d5 @ W["f5"]) * _act_grad(c["z4"], c["a4"], hp)
    g["W.f4"] = d4.T @ c["h"]
    g["b.f4"] = d4.sum(0)
    dh = d4 @ W["f4"]
    C = hp.C
    d1 = dh[:, :C] * _act_grad(c["z1"], c["a1"], hp)
    d3 = dh[:, C:] * _act_grad(c["z3"], c["a3"], hp)
    g["W.f3"] = d3.T @ c["a2"]
    g["b.f3"] = d3.sum(0)
    d2 = (d3 @ W["f3"]) * _act_grad(c["z2"], c["a2"], hp)
    g["W.f2"] = d2.T @ c["v"]
    g["b.f2"] = d2.sum(0)
    g["W.f1"] = d1.T @ x2
    g["b.f1"] = d1.sum(0)
    dv = d2 @ W["f2"]
    gx = d1 @ W["f1"] + np.einsum("mk,mkd->md", dv, c["dv"])
    return g, (gx[0] if single else gx)


class DeformationField:
    """``F(x)`` with parameters and volume pyramid bound, as the ODE right-hand side."""

    def __init__(self, params: DeformNetParams, volumes, frame: Frame | None = None):
        _check_volumes(params, volumes)
        self.params = params
        self.volumes = list(volumes)
        self.frame = frame or Frame.for_dims(volumes[0].dims)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        out, _ = _forward(self.params, np.atleast_2d(x), self.volumes, self.frame, with_grad=False)
        return out

    def vjp(self, x: np.ndarray, u: np.ndarray):
        """(grad wrt x, param grads) for cotangent u."""
        g, gx = backward(self.params, x, self.volumes, u, self.frame)
        return gx, g


# --------------------------------------------------------------------------
# Lipschitz bound

def operator_norm(W: np.ndarray, p: float) -> float:
    """Induced p-norm; exact for p in {1, 2, inf}, Riesz-Thorin bound otherwise."""
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    n1 = float(np.abs(W).sum(axis=0).max())
    ninf = float(np.abs(W).sum(axis=1).max())
    if p == 1:
        return n1
    if p == np.inf:
        return ninf
    if p == 2:
        return float(np.linalg.norm(W, 2))
    return n1 ** (1.0 / p) * ninf ** (1.0 - 1.0 / p)


def _pnorm_combine(values, p):
    values = np.asarray(values, dtype=np.float64)
    if p == np.inf:
        return float(values.max())
    return float((values ** p).sum() ** (1.0 / p))


def chain_lipschitz(weights, p: float, lipschitz_phi: float = 1.0, last_activation: bool = True) -> float:
    """Bound for a chain of affine+activation layers: product of ``L_phi ||W||_p``."""
    L = 1.0
    for k, W in enumerate(weights):
        act = lipschitz_phi if (last_activation or k < len(weights) - 1) else 1.0
        L *= act * operator_norm(np.asarray(W), p)
    return L


def sampling_lipschitz(volumes, K: int, p: float, frame: Frame) -> float:
    """Bound on the cube-sampling map from normalized coordinates.

    One trilinear entry at scale q changes by at most
    ``2^(1-q) * range(V_q) * ||dv||_1`` for a voxel displacement dv; the
    conversion from the 1-norm to the p-norm costs ``3^(1 - 1/p)`` and the
    frame adds its scale.
    """
    dual = 3.0 ** (1.0 - 1.0 / p) if p != np.inf else 3.0
    per_q = [frame.scale * 2.0 ** (1 - q) * vol.value_range() * dual for q, vol in enumerate(volumes, start=1)]
    entries = np.repeat(per_q, K ** 3)
    return _pnorm_combine(entries, p)


def lipschitz_upper_bound(params: DeformNetParams, volumes, p_norm: float = 2.0, frame: Frame | None = None) -> float:
    """Upper bound on the Lipschitz constant of ``x -> F(x)`` in the p-norm."""
    if p_norm < 1:
        raise ValueError(f"p must be >= 1, got {p_norm}")
    _check_volumes(params, volumes)
    frame = frame or Frame.for_dims(volumes[0].dims)
    hp = params.hyper
    Lphi = hp.lipschitz_phi
    W = params.W
    L_p = Lphi * operator_norm(W["f1"], p_norm)
    L_gamma = sampling_lipschitz(volumes, hp.K, p_norm, frame)
    L_l = Lphi * operator_norm(W["f3"], p_norm) * Lphi * operator_norm(W["f2"], p_norm) * L_gamma
    L_head = chain_lipschitz([W["f4"], W["f5"], W["f6"]], p_norm, Lphi, last_activation=False)
    return L_head * _pnorm_combine([L_p, L_l], p_norm)
