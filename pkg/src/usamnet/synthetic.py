"""Synthetic stereo scenes with exact ground truth.

A scene is a stack of fronto-parallel layers, each with an integer disparity
and its own texture defined in left-image coordinates: a sky band at
disparity 0, a textured background plane, and rectangles/ellipses drawn
far-to-near.  The right view samples every layer at ``x + disparity``, so a
left pixel that is not occluded in the right view satisfies
``left[y, x] == right[y, x - d]`` bit for bit.  Textures are quantized to
multiples of 1/255 so the property also survives 8-bit PNG round trips.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import StereoSample
from .errors import ConfigurationError, GenerationError

MAX_SHAPE_RETRIES = 16


@dataclass
class Layer:
    kind: str  # "sky", "background", "rect" or "ellipse"
    disparity: int
    mask: np.ndarray  # (H, W + max_disparity) coverage in left-image coordinates
    texture: np.ndarray  # (3, H, W + max_disparity) uint8
    seg_color: tuple


@dataclass
class SceneLayout:
    """Everything needed to re-derive the rendering independently."""

    layers: list = field(default_factory=list)  # drawing order: far to near
    sky_rows: int = 0
    right_disparity: np.ndarray = None  # (H, W) disparity of the layer visible in the right view


def _texture(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    base = rng.integers(40, 216, size=(3, 1, 1))
    block = int(rng.integers(1, 4))
    coarse = rng.integers(-60, 61, size=(3, h // block + 1, w // block + 1))
    coarse = np.repeat(np.repeat(coarse, block, axis=1), block, axis=2)[:, :h, :w]
    fine = rng.integers(-20, 21, size=(3, h, w))
    return np.clip(base + coarse + fine, 0, 255).astype(np.uint8)


def _sky_texture(h: int, w: int, sky_rows: int) -> np.ndarray:
    """Vertical blue gradient over the top ``sky_rows`` rows, zeros below."""
    tex = np.zeros((3, h, w), np.uint8)
    ramp = np.linspace(150.0, 230.0, max(sky_rows, 1))[:sky_rows].reshape(-1, 1)
    for c, gain in enumerate((0.6, 0.8, 1.0)):
        tex[c, :sky_rows] = np.floor(ramp * gain).astype(np.uint8)
    return tex


def _place_shape(rng, height, width, sky_rows):
    for _ in range(MAX_SHAPE_RETRIES):
        w = int(rng.integers(max(2, width // 8), width + 1))
        h = int(rng.integers(max(2, height // 8), height + 1))
        if w > width or h > height - sky_rows:
            continue
        x0 = int(rng.integers(0, width - w + 1))
        y0 = int(rng.integers(sky_rows, height - h + 1))
        return x0, y0, w, h
    raise GenerationError(f"could not place a shape inside {height}x{width} after {MAX_SHAPE_RETRIES} attempts")


def render_synthetic_scene(
    seed: int,
    height: int = 64,
    width: int = 64,
    num_shapes: int = 4,
    max_disparity: int = 12,
    dropout: float = 0.1,
    sky_fraction: float = 0.125,
):
    """Return ``(sample, layout)`` for one random scene."""
    if height <= 0 or width <= 0 or height % 32 or width % 32:
        raise ConfigurationError(f"scene size {height}x{width} must be positive multiples of 32")
    if not (1 <= max_disparity < 255 and max_disparity < width / 4):
        raise ConfigurationError(f"max_disparity={max_disparity} must be in [1, 255) and below width/4={width / 4}")
    if num_shapes < 0:
        raise ConfigurationError("num_shapes must be non-negative")
    if not 0.0 <= dropout < 1.0 or not 0.0 <= sky_fraction < 1.0:
        raise ConfigurationError("dropout and sky_fraction must lie in [0, 1)")

    rng = np.random.default_rng(seed)
    cw = width + max_disparity
    sky_rows = int(height * sky_fraction)
    rows = np.arange(height).reshape(-1, 1)
    cols = np.arange(cw).reshape(1, -1)

    sky_mask = np.broadcast_to(rows < sky_rows, (height, cw)).copy()
    layers = [Layer("sky", 0, sky_mask, _sky_texture(height, cw, sky_rows), (70, 130, 180))]
    bg_disp = int(rng.integers(1, max(1, max_disparity // 4) + 1))
    layers.append(Layer("background", bg_disp, ~sky_mask, _texture(rng, height, cw), (128, 64, 128)))

    shapes = []
    for _ in range(num_shapes):
        kind = "rect" if rng.random() < 0.5 else "ellipse"
        disp = int(rng.integers(1, max_disparity + 1))
        x0, y0, w, h = _place_shape(rng, height, width, sky_rows)
        if kind == "rect":
            mask = (cols >= x0) & (cols < x0 + w) & (rows >= y0) & (rows < y0 + h)
        else:
            cy, cx = y0 + (h - 1) / 2.0, x0 + (w - 1) / 2.0
            mask = ((rows - cy) / (h / 2.0)) ** 2 + ((cols - cx) / (w / 2.0)) ** 2 <= 1.0
        color = tuple(int(c) for c in rng.integers(0, 256, size=3))
        shapes.append(Layer(kind, disp, mask, _texture(rng, height, cw), color))
    # nearer (larger disparity) drawn last; stable for ties
    shapes.sort(key=lambda layer: layer.disparity)
    layers.extend(shapes)

    left = np.zeros((3, height, width), np.uint8)
    right = np.zeros((3, height, width), np.uint8)
    seg = np.zeros((3, height, width), np.uint8)
    disparity = np.zeros((height, width), np.int64)
    right_disparity = np.zeros((height, width), np.int64)
    xs = np.arange(width)
    for layer in layers:
        cover = layer.mask[:, :width]
        left[:, cover] = layer.texture[:, :, :width][:, cover]
        seg[:, cover] = np.array(layer.seg_color, np.uint8).reshape(3, 1)
        disparity[cover] = layer.disparity
        src = xs + layer.disparity
        rcover = layer.mask[:, src]
        right[:, rcover] = layer.texture[:, :, src][:, rcover]
        right_disparity[rcover] = layer.disparity

    valid = (disparity > 0) & (rng.random((height, width)) >= dropout)
    scale = np.float32(255.0)
    sample = StereoSample(
        left=left.astype(np.float32) / scale,
        right=right.astype(np.float32) / scale,
        disparity_gt=disparity.astype(np.float32)[None],
        valid_mask=valid[None],
        seg=seg.astype(np.float32) / scale,
        sky_mask=(rows < sky_rows).repeat(width, axis=1)[None],
    )
    return sample, SceneLayout(layers, sky_rows, right_disparity)


def generate_synthetic_scene(seed: int, height: int = 64, width: int = 64, num_shapes: int = 4, max_disparity: int = 12, **kwargs) -> StereoSample:
    sample, _ = render_synthetic_scene(seed, height, width, num_shapes, max_disparity, **kwargs)
    return sample


def generate_dataset(count: int, seed: int, height: int = 64, width: int = 64, **kwargs) -> list:
    """``count`` scenes with per-scene seeds derived from ``seed``."""
    seeds = np.random.SeedSequence(seed).generate_state(count) if count else []
    return [generate_synthetic_scene(int(s), height, width, **kwargs) for s in seeds]
