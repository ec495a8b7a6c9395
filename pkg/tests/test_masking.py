import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvsrefine.masking import (DepthPatch, cluster_dd, compute_mask, depth_differences,
                               image_masks, valid_count_map)
from mvsrefine.raster import DepthMap


def step_patch(far_cols=2, near=1.0, far=2.0, size=5):
    v = np.full((size, size), near)
    if far_cols:
        v[:, size - far_cols:] = far
    return DepthPatch(v)


def test_depth_differences():
    assert np.all(depth_differences(DepthPatch(np.full((5, 5), 3.0))) == 0)
    v = np.ones((5, 5))
    v[0, 4] = 2.0
    dd = depth_differences(DepthPatch(v))
    assert dd[0, 4] == 1.0 and dd[2, 2] == 0.0


def test_depth_differences_uncovered_marked():
    v = np.ones((3, 3))
    v[0, 0] = np.nan
    dd = depth_differences(DepthPatch(v))
    assert np.isnan(dd[0, 0]) and np.isfinite(dd[1:, 1:]).all()


def test_patch_validation():
    with pytest.raises(ValueError):
        DepthPatch(np.ones((4, 4)))
    v = np.ones((3, 3))
    v[1, 1] = np.nan
    with pytest.raises(ValueError):
        DepthPatch(v)


def test_cluster_separated():
    near, far = cluster_dd(np.array([0, 0, 0, 1, 1.0]))
    assert near.tolist() == [True, True, True, False, False]
    assert far.tolist() == [False, False, False, True, True]


def test_cluster_flat():
    near, far = cluster_dd(np.zeros(5))
    assert near.all() and not far.any()


def test_cluster_two_means_refinement():
    near, far = cluster_dd(np.array([0, 0.1, 0.9, 1.0]))
    assert near.tolist() == [True, True, False, False]


def test_flat_patch_all_valid():
    assert compute_mask(DepthPatch(np.full((5, 5), 2.0))).sum() == 25


def test_step_patch_15_valid_10_invalid():
    m = compute_mask(step_patch())
    assert m.sum() == 15
    assert m[:, :3].all() and not m[:, 3:].any()


def test_valid_count_decreases_as_strip_widens():
    counts = [compute_mask(step_patch(w)).sum() for w in range(3)]
    assert counts == sorted(counts, reverse=True) and len(set(counts)) == 3


def test_uncovered_cells_masked_out():
    v = np.ones((5, 5))
    v[0, :] = np.nan
    m = compute_mask(DepthPatch(v))
    assert not m[0].any() and m[1:].all()


def test_center_forced_valid():
    # a ramp whose farthest near-cluster cell is far from zero
    rng = np.random.default_rng(0)
    for _ in range(200):
        v = rng.uniform(1, 3, (5, 5))
        assert compute_mask(DepthPatch(v))[2, 2]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-5, 5), st.floats(0.1, 10))
def test_mask_shift_and_scale_invariance(seed, shift, scale):
    rng = np.random.default_rng(seed)
    v = rng.uniform(1, 2, (5, 5))
    v[:, rng.integers(0, 5):] += rng.uniform(0, 3)
    base = compute_mask(DepthPatch(v))
    assert np.array_equal(compute_mask(DepthPatch(v + shift + 10)), base)
    # scaling by powers of two keeps every dd exact
    s = 2.0 ** np.round(np.log2(scale))
    assert np.array_equal(compute_mask(DepthPatch(v * s)), base)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_two_level_family(seed):
    rng = np.random.default_rng(seed)
    d1 = rng.uniform(0.5, 5)
    d2 = d1 + rng.uniform(0.1, 5)
    far = rng.random((5, 5)) < 0.5
    far[2, 2] = False
    v = np.where(far, d2, d1)
    m = compute_mask(DepthPatch(v))
    assert np.array_equal(m, ~far)


def scalar_masks(depth, size):
    H, W = depth.shape
    r = size // 2
    out = np.zeros((size * size, H, W), bool)
    pad = np.pad(depth, r, constant_values=np.nan)
    for y in range(H):
        for x in range(W):
            if not np.isfinite(depth[y, x]):
                continue
            out[:, y, x] = compute_mask(DepthPatch(pad[y:y + size, x:x + size])).ravel()
    return out


@pytest.mark.parametrize("size", [3, 5])
def test_image_masks_match_per_patch(size):
    rng = np.random.default_rng(size)
    depth = rng.uniform(2, 3, (20, 24))
    depth[:, 12:] += 1.5
    depth[5:9, 3:8] = rng.uniform(0.5, 1.0, (4, 5))
    depth[rng.random(depth.shape) < 0.05] = np.nan
    depth[:, :2] = np.nan
    fid = np.where(np.isfinite(depth), 0, -1)
    dm = DepthMap(np.where(np.isfinite(depth), depth, np.inf), fid, np.zeros(depth.shape + (3,)))
    assert np.array_equal(image_masks(dm, size), scalar_masks(depth, size))


def test_valid_count_map():
    depth = np.full((6, 6), 1.0)
    dm = DepthMap(depth, np.zeros((6, 6), int), np.zeros((6, 6, 3)))
    counts = valid_count_map(image_masks(dm, 5))
    assert counts[2, 2] == 25 and counts[0, 0] == 9
