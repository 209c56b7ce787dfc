import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.ndimage import gaussian_filter

import oracles
from surfflow.volume import (
    LabelMask,
    Volume,
    downsample_pow2,
    gaussian_kernel,
    gaussian_smooth,
    largest_connected_component,
    pyramid,
    trilinear_batch,
    trilinear_sample,
)


def test_volume_layout_is_x_fastest():
    data = np.arange(24, dtype=float).reshape(2, 3, 4)
    vol = Volume(data)
    x, y, z = 1, 2, 3
    assert vol.flat[x + 2 * (y + 3 * z)] == data[x, y, z]
    assert np.array_equal(Volume.from_flat(vol.flat, (2, 3, 4)).data, data)


def test_volume_rejects_bad_input():
    with pytest.raises(ValueError):
        Volume(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        Volume(np.array([[[np.nan]]]))
    with pytest.raises(ValueError):
        Volume.from_flat(np.zeros(7), (2, 2, 2))


def test_label_alphabet_enforced():
    with pytest.raises(ValueError):
        LabelMask(np.full((2, 2, 2), 3))
    assert LabelMask(np.ones((2, 2, 2), dtype=bool)).labels.dtype == np.uint8


def test_trilinear_lattice_and_midpoint(rng):
    data = rng.normal(size=(5, 6, 7))
    vol = Volume(data)
    assert trilinear_sample(vol, (2, 3, 1)) == data[2, 3, 1]
    a, b = data[0, 0, 0], data[1, 0, 0]
    assert trilinear_sample(vol, (0.5, 0, 0)) == pytest.approx((a + b) / 2, abs=1e-15)


def test_trilinear_matches_eight_term_blend(rng):
    data = rng.normal(size=(2, 2, 2))
    vol = Volume(data)
    for p in rng.random((50, 3)):
        assert abs(trilinear_sample(vol, p) - oracles.blend8(data, p)) < 1e-12


def test_trilinear_clamps_and_rejects_nan(rng):
    data = rng.normal(size=(4, 4, 4))
    vol = Volume(data)
    assert trilinear_sample(vol, (-3, 10, 1)) == data[0, 3, 1]
    with pytest.raises(ValueError):
        trilinear_sample(vol, (np.nan, 0, 0))


def test_trilinear_gradient_matches_differences(rng):
    data = rng.normal(size=(6, 6, 6))
    pts = rng.uniform(0.2, 4.8, size=(40, 3))
    _, g = trilinear_batch(data, pts, with_grad=True)
    eps = 1e-6
    for d in range(3):
        e = np.zeros(3)
        e[d] = eps
        fd = (trilinear_batch(data, pts + e) - trilinear_batch(data, pts - e)) / (2 * eps)
        assert np.allclose(fd, g[:, d], atol=1e-6)


def test_trilinear_gradient_on_cell_face_uses_following_cell():
    data = np.zeros((3, 1, 1))
    data[:, 0, 0] = [0.0, 1.0, 3.0]
    _, g = trilinear_batch(data, np.array([[1.0, 0, 0], [2.0, 0, 0]]), with_grad=True)
    assert g[0, 0] == 2.0
    assert g[1, 0] == 2.0


@given(st.lists(st.floats(-2, 6), min_size=6, max_size=6))
def test_trilinear_lipschitz_per_axis(coords):
    data = np.random.default_rng(7).normal(size=(5, 5, 5))
    vol = Volume(data)
    p, q = np.array(coords[:3]), np.array(coords[3:])
    bound = vol.value_range() * np.abs(p - q).sum()
    assert abs(trilinear_sample(vol, p) - trilinear_sample(vol, q)) <= bound + 1e-12


def test_downsample_identity_and_constant():
    vol = Volume(np.random.default_rng(0).normal(size=(8, 8, 8)))
    assert np.array_equal(downsample_pow2(vol, 1).data, vol.data)
    const = downsample_pow2(Volume(np.full((9, 8, 7), 2.5)), 2)
    assert const.dims == (4, 4, 3)
    assert np.all(const.data == 2.5)


def test_downsample_block_mean_oracle():
    ramp = np.arange(64, dtype=float).reshape(4, 4, 4)
    assert np.allclose(downsample_pow2(Volume(ramp), 2).data, oracles.block_mean(ramp, 2))
    rnd = np.random.default_rng(3).normal(size=(12, 9, 8))
    assert np.allclose(downsample_pow2(Volume(rnd), 3).data, oracles.block_mean(rnd, 4))


def test_downsample_errors():
    with pytest.raises(ValueError):
        downsample_pow2(Volume(np.zeros((3, 3, 3))), 0)
    with pytest.raises(ValueError):
        downsample_pow2(Volume(np.zeros((3, 3, 3))), 3)


def test_pyramid_lookup_matches_scaled_sampling(rng):
    data = rng.normal(size=(16, 16, 16))
    vols = pyramid(Volume(data), 3)
    x = np.array([5.3, 7.1, 9.9])
    for q, v in enumerate(vols, start=1):
        expect = oracles.trilinear_clamped(oracles.block_mean(data, 2 ** (q - 1)), x / 2 ** (q - 1))
        assert trilinear_sample(v, x / 2 ** (q - 1)) == pytest.approx(expect, abs=1e-12)


def test_gaussian_identity_and_constant():
    vol = Volume(np.random.default_rng(0).normal(size=(6, 6, 6)))
    assert np.array_equal(gaussian_smooth(vol, 0).data, vol.data)
    const = Volume(np.full((6, 7, 8), -1.25))
    assert np.array_equal(gaussian_smooth(const, 0.5).data, const.data)
    with pytest.raises(ValueError):
        gaussian_smooth(vol, -0.1)


def test_gaussian_kernel_truncation():
    k = gaussian_kernel(0.5)
    assert len(k) == 2 * 2 + 1
    assert k.sum() == pytest.approx(1.0, abs=1e-15)


def test_gaussian_impulse_matches_dense_convolution():
    data = np.zeros((9, 9, 9))
    data[4, 4, 4] = 1.0
    k = gaussian_kernel(0.5)
    k3 = k[:, None, None] * k[None, :, None] * k[None, None, :]
    got = gaussian_smooth(Volume(data), 0.5).data
    assert np.allclose(got, oracles.dense_convolve_reflect(data, k3), atol=1e-15)
    # frozen taps of the normalized 1D kernel at sigma 0.5
    assert np.allclose(k, [2.63865083e-04, 1.06450772e-01, 7.86570726e-01, 1.06450772e-01, 2.63865083e-04], atol=1e-11)


def test_gaussian_boundary_uses_dense_oracle(rng):
    data = rng.normal(size=(7, 6, 5))
    k = gaussian_kernel(0.8)
    k3 = k[:, None, None] * k[None, :, None] * k[None, None, :]
    assert np.allclose(gaussian_smooth(Volume(data), 0.8).data, oracles.dense_convolve_reflect(data, k3), atol=1e-12)


def test_gaussian_preserves_sum(rng):
    data = rng.normal(size=(20, 18, 16))
    out = gaussian_smooth(Volume(data), 1.3).data
    assert abs(out.sum() - data.sum()) <= 1e-9 * np.abs(data).sum()


def test_gaussian_close_to_scipy_filter(rng):
    data = rng.normal(size=(10, 10, 10))
    ref = gaussian_filter(data, 0.5, mode="reflect", truncate=4.0)
    assert np.allclose(gaussian_smooth(Volume(data), 0.5).data, ref, atol=1e-12)


def _two_blobs():
    m = np.zeros((20, 20, 20), dtype=np.uint8)
    m[2:7, 2:7, 2:6] = 1  # 100 voxels
    m[12:14, 12:14, 12:17] = 1  # 20 voxels
    return m


def test_largest_component_matches_flood_fill():
    m = _two_blobs()
    out = largest_connected_component(LabelMask(m), 1).labels.astype(bool)
    comps = oracles.flood_components(m == 1)
    biggest = max(comps, key=len)
    assert len(biggest) == 100
    expect = np.zeros_like(out)
    expect[tuple(np.array(biggest).T)] = True
    assert np.array_equal(out, expect)


def test_largest_component_diagonal_contact_is_connected():
    m = np.zeros((5, 5, 5), dtype=np.uint8)
    m[1, 1, 1] = m[2, 2, 2] = m[3, 3, 3] = 1
    assert largest_connected_component(LabelMask(m), 1).labels.sum() == 3


def test_largest_component_tie_prefers_lowest_index():
    m = np.zeros((6, 6, 6), dtype=np.uint8)
    m[4, 0, 0] = 1
    m[0, 0, 4] = 1
    out = largest_connected_component(LabelMask(m), 1).labels
    # x-fastest order: (4,0,0) has linear index 4, (0,0,4) has 144
    assert out[4, 0, 0] == 1 and out[0, 0, 4] == 0


def test_largest_component_missing_label():
    with pytest.raises(ValueError):
        largest_connected_component(LabelMask(np.zeros((3, 3, 3), dtype=np.uint8)), 2)


def test_single_blob_unchanged():
    m = np.zeros((10, 10, 10), dtype=np.uint8)
    g = np.indices(m.shape) - 4.5
    m[(g ** 2).sum(0) < 9] = 2
    out = largest_connected_component(LabelMask(m), 2).labels
    assert np.array_equal(out.astype(bool), m == 2)
