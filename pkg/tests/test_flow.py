import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from surfflow.flow import (
    SolverConfig,
    exponential_test_errors,
    gap_history,
    integrate,
    integrate_vjp,
    min_pairwise_trajectory_gap,
    observed_order,
)
from surfflow.network import DeformationField, NetHyper, forward, init_params
from surfflow.volume import Volume, pyramid

METHODS = ["euler", "midpoint", "rk4"]
# one step of x' = a x for each method, as a polynomial in z = h a
GROWTH = {
    "euler": lambda z: 1 + z,
    "midpoint": lambda z: 1 + z + z ** 2 / 2,
    "rk4": lambda z: 1 + z + z ** 2 / 2 + z ** 3 / 6 + z ** 4 / 24,
}


class Counting:
    def __init__(self, f):
        self.f = f
        self.calls = 0

    def __call__(self, x):
        self.calls += 1
        return self.f(x)


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig("heun", 10)
    with pytest.raises(ValueError):
        SolverConfig("euler", 0)
    with pytest.raises(ValueError):
        SolverConfig("euler", 2.5)
    with pytest.raises(ValueError):
        SolverConfig("euler", 10, -1.0)
    cfg = SolverConfig("rk4", 8, 2.0)
    assert cfg.step_size * cfg.steps == 2.0


@pytest.mark.parametrize("method,steps,nfe", [("euler", 10, 10), ("midpoint", 5, 10), ("rk4", 5, 20)])
def test_nfe_counts(method, steps, nfe):
    field = Counting(lambda x: -x)
    res = integrate(np.ones((4, 3)), field, SolverConfig(method, steps))
    assert res.nfe == nfe == field.calls


@pytest.mark.parametrize("method", METHODS)
def test_zero_field_is_identity(method):
    x = np.random.default_rng(0).normal(size=(5, 3))
    assert np.array_equal(integrate(x, lambda y: np.zeros_like(y), SolverConfig(method, 7)).final_vertices, x)


@pytest.mark.parametrize("method", METHODS)
def test_constant_field(method):
    x = np.zeros((3, 3))
    c = np.array([0.5, -0.25, 2.0])
    res = integrate(x, lambda y: np.broadcast_to(c, y.shape), SolverConfig(method, 8))
    assert np.allclose(res.final_vertices, c, atol=1e-14)


@pytest.mark.parametrize("method", METHODS)
def test_linear_field_matches_growth_polynomial(method):
    a = -0.7
    cfg = SolverConfig(method, 6, 1.5)
    x0 = np.array([[1.0, -2.0, 0.5]])
    got = integrate(x0, lambda y: a * y, cfg).final_vertices
    assert np.allclose(got, x0 * GROWTH[method](cfg.step_size * a) ** cfg.steps, rtol=1e-14)


@pytest.mark.parametrize("method,order", [("euler", 1), ("midpoint", 2), ("rk4", 4)])
def test_convergence_order(method, order):
    assert abs(observed_order(exponential_test_errors(method)) - order) < 0.3


def test_snapshots_and_connectivity():
    x = np.random.default_rng(1).normal(size=(6, 3))
    res = integrate(x, lambda y: -y, SolverConfig("midpoint", 4), snapshots=True)
    assert res.snapshots.shape == (5, 6, 3)
    assert np.array_equal(res.snapshots[0], x)
    assert np.array_equal(res.snapshots[-1], res.final_vertices)
    assert integrate(x, lambda y: -y, SolverConfig("midpoint", 4)).snapshots is None


def test_nonfinite_state_names_step():
    def blow(y):
        return np.where(y < 2.5, 1.0, np.inf)

    # x goes 1 -> 2 -> 3, then the field is infinite
    with pytest.raises(FloatingPointError, match="step 3"):
        integrate(np.ones((1, 3)), blow, SolverConfig("euler", 5, 5.0))
    with pytest.raises(ValueError):
        integrate(np.full((1, 3), np.nan), lambda y: y)
    with pytest.raises(ValueError):
        integrate(np.ones((2, 2)), lambda y: y)


def test_gap_static_field():
    p = np.array([[0, 0, 0], [0.3, 0.4, 0]], dtype=float)
    hist = gap_history(p, lambda y: np.zeros_like(y), SolverConfig("euler", 5))
    assert np.allclose(hist, 0.5)


def test_gap_contracting_field():
    p = np.array([[1, 0, 0], [0, 1, 0]], dtype=float)
    cfg = SolverConfig("rk4", 10)
    hist = gap_history(p, lambda y: -y, cfg)
    assert hist[-1] / hist[0] == pytest.approx(np.exp(-1), rel=1e-6)
    gap = min_pairwise_trajectory_gap(p, lambda y: -y, cfg)
    assert gap == pytest.approx(hist[-1])
    assert gap > 0


P3 = np.array([[1, 0, 0], [0, 1, 0], [0, 0, 2]], dtype=float)


def _final_gap(method, n, sign):
    return gap_history(P3, lambda y: sign * y, SolverConfig(method, n))[-1]


@given(st.integers(10, 60), st.sampled_from(METHODS))
def test_halving_step_does_not_shrink_gap_expanding(n, method):
    assert _final_gap(method, 2 * n, 1.0) >= _final_gap(method, n, 1.0) - 1e-12


@given(st.integers(10, 60))
def test_halving_step_does_not_shrink_gap_contracting_euler(n):
    assert _final_gap("euler", 2 * n, -1.0) >= _final_gap("euler", n, -1.0) - 1e-12


@given(st.integers(10, 60), st.sampled_from(["midpoint", "rk4"]))
def test_higher_order_contracting_gap_stays_above_exact(n, method):
    # their one-step factor exceeds exp(-h), so the gap falls towards the
    # exact value from above as h shrinks, and never crosses it
    exact = np.sqrt(2) * np.exp(-1)
    coarse, fine = _final_gap(method, n, -1.0), _final_gap(method, 2 * n, -1.0)
    assert coarse >= fine >= exact


def test_gap_errors():
    with pytest.raises(ValueError):
        min_pairwise_trajectory_gap(np.zeros((2, 3)), lambda y: y)
    with pytest.raises(ValueError):
        min_pairwise_trajectory_gap(np.zeros((1, 3)), lambda y: y)


def _small_field(seed=0):
    hyper = NetHyper(Q=2, K=3, C=6, C_mid=5, H=6)
    params = init_params(hyper, seed=seed, zero_head=False)
    data = np.random.default_rng(seed).normal(size=(12, 12, 12))
    return params, pyramid(Volume(data), 2)


@pytest.mark.parametrize("method", METHODS)
def test_pullback_matches_finite_differences(method):
    params, vols = _small_field(1)
    cfg = SolverConfig(method, 3, 0.6)
    rng = np.random.default_rng(2)
    x0 = rng.uniform(-1, 1, size=(4, 3))
    u = rng.normal(size=(4, 3))

    def loss(p, x):
        return float((integrate(x, DeformationField(p, vols), cfg).final_vertices * u).sum())

    _, gx, grads = integrate_vjp(x0, DeformationField(params, vols), cfg, u)
    h = 1e-6
    for k, d in [(0, 0), (1, 2), (3, 1)]:
        e = np.zeros_like(x0)
        e[k, d] = h
        fd = (loss(params, x0 + e) - loss(params, x0 - e)) / (2 * h)
        assert abs(fd - gx[k, d]) <= 1e-6 * max(1, abs(fd))
    for path, idx in [("W.f6", (1, 2)), ("b.f4", (3,)), ("W.f2", (0, 5)), ("W.f1", (2, 1))]:
        kind, layer = path.split(".")
        qp, qm = params.copy(), params.copy()
        getattr(qp, kind)[layer][idx] += h
        getattr(qm, kind)[layer][idx] -= h
        fd = (loss(qp, x0) - loss(qm, x0)) / (2 * h)
        assert abs(fd - grads[path][idx]) <= 1e-5 * max(1e-3, abs(fd))


def test_pullback_final_matches_integrate():
    params, vols = _small_field(3)
    field = DeformationField(params, vols)
    x0 = np.random.default_rng(0).uniform(-1, 1, size=(5, 3))
    cfg = SolverConfig("rk4", 2)
    final, _, _ = integrate_vjp(x0, field, cfg, np.ones((5, 3)))
    assert np.array_equal(final, integrate(x0, field, cfg).final_vertices)
    # the field used is exactly the network
    assert np.allclose(field(x0), forward(params, x0, vols))
