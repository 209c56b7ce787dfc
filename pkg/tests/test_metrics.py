import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from surfflow.mesh import TriangleMesh, icosphere
from surfflow.metrics import (
    MetricsReport,
    assd,
    chamfer_loss,
    evaluate,
    hausdorff90,
    mse_loss,
    nearest_rank,
    point_mesh_distance,
    point_triangle_distance,
    sample_surface,
)


def test_chamfer_examples():
    A = np.array([[0.0, 0, 0]])
    B = np.array([[3.0, 4, 0]])
    assert chamfer_loss(A, B) == 50.0
    assert chamfer_loss(A, A) == 0.0
    with pytest.raises(ValueError):
        chamfer_loss(np.zeros((0, 3)), B)
    with pytest.raises(ValueError):
        chamfer_loss(np.full((1, 3), np.nan), B)


@given(st.integers(0, 10_000))
def test_chamfer_matches_bruteforce(seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(rng.integers(1, 60), 3))
    B = rng.normal(size=(rng.integers(1, 60), 3))
    assert chamfer_loss(A, B) == pytest.approx(oracles.chamfer_bruteforce(A, B), rel=1e-12)


def test_chamfer_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(20, 3))
    B = rng.normal(size=(25, 3))
    _, gA, gB = chamfer_loss(A, B, with_grad=True)
    h = 1e-7
    for arr, g, other, first in ((A, gA, B, True), (B, gB, A, False)):
        for k, d in [(0, 0), (5, 2), (11, 1)]:
            e = np.zeros_like(arr)
            e[k, d] = h
            f = (lambda X: chamfer_loss(X, other)) if first else (lambda X: chamfer_loss(other, X))
            fd = (f(arr + e) - f(arr - e)) / (2 * h)
            assert abs(fd - g[k, d]) < 1e-6


def test_chamfer_gradient_flows_both_directions():
    A = np.array([[0.0, 0, 0], [10.0, 0, 0]])
    B = np.array([[9.0, 0, 0]])
    # A[1] is B's nearest point and also nearest to B in the A -> B direction;
    # A[0] is only seen through the A -> B term
    _, gA, _ = chamfer_loss(A, B, with_grad=True)
    assert gA[1, 0] == pytest.approx(2 * 1 + 2 * 1)
    assert gA[0, 0] == pytest.approx(2 * -9)


def test_mse_and_gradient():
    P = np.ones((4, 3))
    G = np.zeros((4, 3))
    loss, g = mse_loss(P, G, with_grad=True)
    assert loss == 3.0
    assert np.allclose(g, 0.5)
    with pytest.raises(ValueError):
        mse_loss(np.zeros((3, 3)), np.zeros((4, 3)))


def test_point_triangle_cases():
    a, b, c = np.array([0.0, 0, 0]), np.array([1.0, 0, 0]), np.array([0.0, 1, 0])
    P = np.array([[0.2, 0.2, 1.0], [-1, -1, 0], [2, 0, 0], [0.5, 0.5, 0], [0.5, -1, 0], [0.1, 0.1, 0]])
    want = [1.0, np.sqrt(2), 1.0, 0.0, 1.0, 0.0]
    n = len(P)
    got = point_triangle_distance(P, np.tile(a, (n, 1)), np.tile(b, (n, 1)), np.tile(c, (n, 1)))
    assert np.allclose(got, want, atol=1e-15)


@given(st.integers(0, 10_000))
def test_point_triangle_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    tri = rng.normal(size=(3, 3))
    P = rng.normal(scale=2, size=(30, 3))
    n = len(P)
    got = point_triangle_distance(P, np.tile(tri[0], (n, 1)), np.tile(tri[1], (n, 1)), np.tile(tri[2], (n, 1)))
    ref = np.array([oracles.point_triangle_bruteforce(p, tri) for p in P])
    assert np.max(np.abs(got - ref)) < 1e-10


@pytest.mark.parametrize("seed", range(4))
def test_point_mesh_distance_matches_bruteforce(seed):
    rng = np.random.default_rng(seed)
    mesh = icosphere(2)
    mesh = mesh.with_vertices(mesh.vertices * (1 + 0.2 * rng.random((mesh.n_vertices, 1))))
    P = rng.normal(scale=1.5, size=(200, 3))
    got = point_mesh_distance(P, mesh)
    ref = oracles.point_mesh_bruteforce(P, mesh.vertices, mesh.faces)
    assert np.max(np.abs(got - ref)) < 1e-10


def test_point_mesh_distance_on_surface_is_zero():
    mesh = icosphere(2)
    P = sample_surface(mesh, 500, 0)
    assert np.max(point_mesh_distance(P, mesh)) < 1e-12


def test_sample_surface_uniform_by_area():
    # two triangles, the second with three times the area
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [10, 0, 0], [13, 0, 0], [10, 1, 0]], dtype=float)
    mesh = TriangleMesh(v, [[0, 1, 2], [3, 4, 5]])
    P = sample_surface(mesh, 40_000, 1)
    frac = np.mean(P[:, 0] >= 10)
    assert frac == pytest.approx(0.75, abs=0.01)
    # uniform inside a triangle: mean is the centroid
    first = P[P[:, 0] < 10]
    assert np.allclose(first.mean(0), [1 / 3, 1 / 3, 0], atol=0.01)


def test_nearest_rank():
    assert nearest_rank(np.arange(1, 11), 0.9) == 9
    assert nearest_rank([5.0], 0.9) == 5.0
    assert nearest_rank(np.arange(1, 101), 0.9) == 90
    with pytest.raises(ValueError):
        nearest_rank([], 0.9)


def test_identical_meshes_give_zero():
    mesh = icosphere(3)
    assert assd(mesh, mesh, 20_000) < 1e-9
    assert hausdorff90(mesh, mesh, 20_000) < 1e-9


def test_concentric_spheres():
    a, b = icosphere(4, 1.0), icosphere(4, 1.1)
    assert assd(a, b, 20_000) == pytest.approx(0.1, abs=0.005)
    assert hausdorff90(a, b, 20_000) == pytest.approx(0.1, abs=0.005)


def test_evaluate_report():
    a, b = icosphere(3, 1.0), icosphere(3, 1.1)
    rep = evaluate(a, b, 5000, seed=3, spacing=0.5)
    assert isinstance(rep, MetricsReport)
    assert rep.assd_mm == pytest.approx(0.5 * assd(a, b, 5000, 3))
    assert rep.sif_fraction == 0.0
    d = rep.to_dict()
    assert d["schema"] == "surfflow.metrics/1" and d["seed"] == 3 and d["n_samples"] == 5000


def test_metrics_deterministic_for_seed():
    a, b = icosphere(3, 1.0), icosphere(2, 1.05)
    assert assd(a, b, 3000, 7) == assd(a, b, 3000, 7)


def test_zero_area_mesh_rejected():
    flat = TriangleMesh(np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0]], dtype=float), [[0, 1, 2]])
    with pytest.raises(ValueError):
        assd(flat, icosphere(1), 10)
