import numpy as np

from usamnet.render import COLORMAP_ANCHORS, OVERLAY_ALPHA, colorize, heatmap_to_uint8, overlay_heatmap


def test_colorize_endpoints_and_shape():
    v = np.array([[[0.0, 5.0, 10.0]]])
    rgb = colorize(v)
    assert rgb.shape == (1, 3, 3) and rgb.dtype == np.uint8
    np.testing.assert_array_equal(rgb[0, 0], COLORMAP_ANCHORS[0])
    np.testing.assert_array_equal(rgb[0, 1], COLORMAP_ANCHORS[2])
    np.testing.assert_array_equal(rgb[0, 2], COLORMAP_ANCHORS[-1])


def test_colorize_fixed_range_clips():
    rgb = colorize(np.array([[0.0, 300.0]]), vmax=255.0)
    np.testing.assert_array_equal(rgb[0, 1], COLORMAP_ANCHORS[-1])
    # an all-zero map stays at the bottom colour
    assert np.all(colorize(np.zeros((2, 2))) == COLORMAP_ANCHORS[0])


def test_heatmap_to_uint8():
    out = heatmap_to_uint8(np.array([[[0.0, 0.5, 1.0]]]))
    assert out.tolist() == [[0, 128, 255]]


def test_overlay_blend():
    left = np.full((3, 2, 2), 0.4)
    heat = np.array([[[0.0, 1.0], [0.5, 0.0]]])
    out = overlay_heatmap(left, heat)
    assert out.shape == (2, 2, 3)
    # zero heat leaves the grayscale image
    assert out[0, 0].tolist() == [102, 102, 102]
    w = OVERLAY_ALPHA
    expected = np.rint(np.array([0.4 * (1 - w) + w, 0.4 * (1 - w), 0.4 * (1 - w)]) * 255)
    np.testing.assert_array_equal(out[0, 1], expected)
