"""8-bit renderings: colorized disparity, heatmaps and heatmap overlays."""

from __future__ import annotations

import numpy as np

# Fixed ramp (dark purple -> blue -> teal -> green -> yellow), sampled from the
# viridis colormap at t = 0, 0.25, 0.5, 0.75, 1 and linearly interpolated.
COLORMAP_ANCHORS = np.array(
    [
        [68, 1, 84],
        [59, 82, 139],
        [33, 145, 140],
        [94, 201, 98],
        [253, 231, 37],
    ],
    dtype=np.float64,
)
OVERLAY_ALPHA = 0.6


def colorize(values: np.ndarray, vmax: float = None) -> np.ndarray:
    """Map a (1, H, W) or (H, W) array onto the ramp; returns (H, W, 3) uint8."""
    v = np.asarray(values, dtype=np.float64)
    v = v.reshape(v.shape[-2:])
    top = float(v.max(initial=0.0)) if vmax is None else float(vmax)
    t = np.clip(v / top, 0.0, 1.0) if top > 0 else np.zeros_like(v)
    pos = t * (len(COLORMAP_ANCHORS) - 1)
    lo = np.minimum(np.floor(pos).astype(int), len(COLORMAP_ANCHORS) - 2)
    frac = (pos - lo)[..., None]
    rgb = COLORMAP_ANCHORS[lo] * (1.0 - frac) + COLORMAP_ANCHORS[lo + 1] * frac
    return np.rint(rgb).astype(np.uint8)


def heatmap_to_uint8(heat: np.ndarray) -> np.ndarray:
    """(1, H, W) heatmap in [0, 1] -> (H, W) uint8 in [0, 255]."""
    h = np.asarray(heat, dtype=np.float64)
    return np.rint(np.clip(h.reshape(h.shape[-2:]), 0.0, 1.0) * 255.0).astype(np.uint8)


def overlay_heatmap(left: np.ndarray, heat: np.ndarray, alpha: float = OVERLAY_ALPHA) -> np.ndarray:
    """Blend ``heat`` as red over the grayscale of ``left`` (3, H, W in [0, 1]); returns (H, W, 3) uint8."""
    img = np.asarray(left, dtype=np.float64)
    gray = 0.299 * img[0] + 0.587 * img[1] + 0.114 * img[2]
    w = alpha * np.clip(np.asarray(heat, dtype=np.float64).reshape(gray.shape), 0.0, 1.0)
    out = np.stack([gray * (1.0 - w) + w, gray * (1.0 - w), gray * (1.0 - w)], axis=-1)
    return np.rint(np.clip(out, 0.0, 1.0) * 255.0).astype(np.uint8)
