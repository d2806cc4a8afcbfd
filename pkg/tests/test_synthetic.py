import numpy as np
import pytest

from oracles import render_layers
from usamnet.errors import ConfigurationError, GenerationError
from usamnet.metrics import ArdBucketConfig, ard_buckets, disparity_to_depth
from usamnet.synthetic import generate_dataset, generate_synthetic_scene, render_synthetic_scene


def test_same_seed_is_bit_identical():
    a = generate_synthetic_scene(42)
    b = generate_synthetic_scene(42)
    for k, v in a.fields().items():
        np.testing.assert_array_equal(v, b.fields()[k], err_msg=k)
    c = generate_synthetic_scene(43)
    assert not np.array_equal(a.left, c.left)


def test_sample_layout_and_ranges():
    s = generate_synthetic_scene(3, 64, 96, num_shapes=5, max_disparity=12)
    assert s.left.shape == s.right.shape == s.seg.shape == (3, 64, 96)
    assert s.disparity_gt.shape == s.valid_mask.shape == s.sky_mask.shape == (1, 64, 96)
    assert s.left.dtype == np.float32 and s.valid_mask.dtype == bool
    assert 0.0 <= s.left.min() and s.left.max() <= 1.0
    d = s.disparity_gt[s.valid_mask]
    assert d.min() >= 1 and d.max() <= 12
    # valid implies positive ground truth; the sky band is invalid at disparity 0
    assert np.all(s.disparity_gt[s.valid_mask] > 0)
    assert not s.valid_mask[s.sky_mask].any()
    assert np.all(s.disparity_gt[s.sky_mask] == 0)
    assert s.sky_mask[0, :8].all() and not s.sky_mask[0, 8:].any()


def test_matches_per_pixel_painter():
    for seed in range(8):
        sample, layout = render_synthetic_scene(seed, 32, 64, num_shapes=4, max_disparity=10)
        left, right, disp, rdisp = render_layers(layout.layers, 32, 64)
        np.testing.assert_array_equal(np.rint(sample.left * 255).astype(np.uint8), left)
        np.testing.assert_array_equal(np.rint(sample.right * 255).astype(np.uint8), right)
        np.testing.assert_array_equal(sample.disparity_gt[0], disp)
        np.testing.assert_array_equal(layout.right_disparity, rdisp)


def test_warp_consistency_over_100_seeds():
    for seed in range(100):
        sample, layout = render_synthetic_scene(seed, 32, 64, num_shapes=4, max_disparity=12)
        _, _, _, rdisp = render_layers(layout.layers, 32, 64)
        d = sample.disparity_gt[0].astype(np.int64)
        checked = 0
        for y, x in zip(*np.nonzero(sample.valid_mask[0])):
            xr = x - d[y, x]
            if xr < 0 or rdisp[y, xr] != d[y, x]:
                continue  # leaves the right view or occluded there
            checked += 1
            assert np.array_equal(sample.left[:, y, x], sample.right[:, y, xr]), (seed, y, x)
        assert checked > 0.5 * sample.valid_mask.sum()


def test_zero_shapes_is_a_constant_plane():
    s = generate_synthetic_scene(9, 64, 64, num_shapes=0, max_disparity=12, dropout=0.0)
    d = s.disparity_gt[s.valid_mask]
    assert d.size == 64 * 56 and np.all(d == d[0])
    fb = 80.0
    depth = disparity_to_depth(s.disparity_gt, fb)
    ard = ard_buckets(s.disparity_gt, s.disparity_gt, s.valid_mask, depth, ArdBucketConfig())
    present = [a for a in ard if a is not None]
    assert present and all(a == 0.0 for a in present)


def test_dropout_fraction():
    s = generate_synthetic_scene(1, 64, 64, dropout=0.5, num_shapes=0)
    frac = s.valid_mask[0, 8:].mean()
    assert 0.4 < frac < 0.6


def test_infeasible_geometry_raises_generation_error():
    # with a 31-row sky band no shape of at least 4 rows fits below it
    with pytest.raises(GenerationError):
        generate_synthetic_scene(0, 32, 32, num_shapes=1, max_disparity=4, sky_fraction=0.97)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"height": 60},
        {"width": 0},
        {"max_disparity": 0},
        {"max_disparity": 16},
        {"num_shapes": -1},
        {"dropout": 1.0},
    ],
)
def test_configuration_guards(kwargs):
    args = {"height": 64, "width": 64, "max_disparity": 12, **kwargs}
    with pytest.raises(ConfigurationError):
        generate_synthetic_scene(0, **args)


def test_generate_dataset_is_deterministic():
    a = generate_dataset(3, seed=7, height=32, width=32, max_disparity=4)
    b = generate_dataset(3, seed=7, height=32, width=32, max_disparity=4)
    assert len(a) == 3
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.left, y.left)
    assert not np.array_equal(a[0].left, a[1].left)
    assert generate_dataset(0, seed=7) == []
