import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from surfflow.marching_cubes import TRI_TABLE, extract_isosurface, marching_cubes
from surfflow.mesh import TriangleMesh, euler_characteristic
from surfflow.synth import ShapeSpec, make_sdf_volume


def _analytic_sphere(r=10.0, n=64):
    g = np.indices((n, n, n)) - (n - 1) / 2
    return r - np.sqrt((g ** 2).sum(0))


def test_sphere_closed_and_on_the_surface():
    data = _analytic_sphere()
    mesh = extract_isosurface(data, 0.0)
    assert mesh.is_closed_manifold()
    assert euler_characteristic(mesh) == 2
    r = np.linalg.norm(mesh.vertices - 31.5, axis=1)
    assert np.max(np.abs(10.0 - r)) <= 0.05 * np.sqrt(3)


def test_outward_orientation():
    mesh = extract_isosurface(_analytic_sphere(), 0.0)
    assert mesh.signed_volume() > 0
    assert mesh.signed_volume() == pytest.approx(4 / 3 * np.pi * 1000, rel=0.02)
    n = mesh.face_normals()
    c = mesh.vertices[mesh.faces].mean(axis=1) - 31.5
    assert np.all(np.einsum("ij,ij->i", n, c) > 0)


def test_torus_has_euler_zero(torus_sdf):
    assert euler_characteristic(extract_isosurface(torus_sdf, 0.0)) == 0


def test_level_outside_range():
    data = _analytic_sphere(5, 16)
    with pytest.raises(ValueError):
        extract_isosurface(data, data.max() + 1)
    with pytest.raises(ValueError):
        extract_isosurface(data, data.min() - 1)


def test_open_surface_is_reported():
    data = np.zeros((6, 6, 6))
    data[:, :, 3:] = 1.0
    with pytest.raises(ValueError, match="open"):
        marching_cubes(data, 0.5)
    v, f = marching_cubes(data, 0.5, require_closed=False)
    assert len(f) > 0


def test_welded_vertices_are_unique():
    mesh = extract_isosurface(_analytic_sphere(6, 20), 0.0)
    assert len(np.unique(mesh.vertices, axis=0)) == mesh.n_vertices


def test_vertices_interpolate_edge_values():
    data = _analytic_sphere(6, 20)
    mesh = extract_isosurface(data, 0.3)
    # each vertex lies on a grid edge, where linear interpolation is exact
    v = mesh.vertices
    frac = v - np.floor(v)
    on_edge = (np.count_nonzero(frac > 1e-12, axis=1) == 1)
    assert np.all(on_edge)
    vals = np.array([oracles.trilinear_clamped(data, p) for p in v[:200]])
    assert np.allclose(vals, 0.3, atol=1e-3)


def test_table_has_no_triangles_for_empty_and_full_cells():
    assert np.all(TRI_TABLE[0] < 0)
    assert np.all(TRI_TABLE[255] < 0)


@given(st.integers(0, 10_000), st.floats(0.2, 0.8))
def test_random_fields_match_voxel_topology(seed, density):
    rng = np.random.default_rng(seed)
    core = rng.random((5, 5, 5))
    data = np.pad(core, 1, constant_values=-1.0)
    level = float(np.quantile(core, 1 - density))
    inside = data > level
    if not inside.any():
        return
    v, f = marching_cubes(data, level)
    mesh = TriangleMesh(v, f)
    assert mesh.is_closed_manifold()
    assert euler_characteristic(mesh) == 2 * oracles.euler_number26(inside)


def test_handle_sphere_raw_genus_one(handle_spec):
    sdf = make_sdf_volume(handle_spec, (64, 64, 64))
    assert euler_characteristic(extract_isosurface(sdf, 0.0)) == 0


def test_sphere_ray_oracle():
    spec = ShapeSpec("sphere", radius=9.0, center=(20.0, 21.0, 22.0))
    sdf = make_sdf_volume(spec, (44, 44, 44))
    mesh = extract_isosurface(sdf, 0.0)
    r = np.linalg.norm(mesh.vertices - np.array([20.0, 21.0, 22.0]), axis=1)
    assert np.abs(r - 9.0).max() < 0.05
