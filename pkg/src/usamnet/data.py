"""Stereo samples: file I/O, normalization and training-time augmentation.

On-disk conventions:

* images are 8-bit RGB PNGs, scaled to [0, 1] on load;
* disparity maps are 16-bit grayscale PNGs holding ``round(disparity * 256)``,
  with 0 reserved for "no ground truth";
* masks (sky) are 8-bit PNGs, nonzero meaning true.

A manifest is a JSON file::

    {"split": "train",
     "records": [{"left_path": "left/000000.png",
                  "right_path": "right/000000.png",
                  "seg_path": "seg/000000.png",          # optional / null
                  "disparity_path": "disp/000000.png",
                  "sky_mask_path": "sky/000000.png"}]}   # optional / null

Relative paths are resolved against the manifest's directory.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from .errors import ConfigurationError, DataError, UsageError

DISPARITY_SCALE = 256.0
MAX_DISPARITY = 255.0


@dataclass
class StereoSample:
    left: np.ndarray  # (3, H, W) float32 in [0, 1]
    right: np.ndarray
    disparity_gt: np.ndarray  # (1, H, W) float32, pixels
    valid_mask: np.ndarray  # (1, H, W) bool
    seg: Optional[np.ndarray] = None
    sky_mask: Optional[np.ndarray] = None

    @property
    def height(self) -> int:
        return self.left.shape[1]

    @property
    def width(self) -> int:
        return self.left.shape[2]

    def fields(self) -> dict:
        return {k: v for k, v in vars(self).items() if v is not None}

    def copy(self) -> "StereoSample":
        return StereoSample(**{k: (None if v is None else v.copy()) for k, v in vars(self).items()})


@dataclass(frozen=True)
class ManifestRecord:
    left_path: str
    right_path: str
    disparity_path: str
    seg_path: Optional[str] = None
    sky_mask_path: Optional[str] = None


@dataclass
class DatasetManifest:
    records: list
    split: str = "train"
    root: Path = field(default_factory=Path)

    def __len__(self) -> int:
        return len(self.records)

    def resolve(self, path: Optional[str]) -> Optional[Path]:
        if path is None:
            return None
        p = Path(path)
        return p if p.is_absolute() else self.root / p

    @property
    def has_segmentation(self) -> bool:
        return bool(self.records) and all(r.seg_path is not None for r in self.records)


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    split = doc.get("split", "train")
    if split not in ("train", "test"):
        raise DataError(f"manifest {path}: split must be 'train' or 'test', got {split!r}")
    try:
        records = [ManifestRecord(**r) for r in doc["records"]]
    except (KeyError, TypeError) as exc:
        raise DataError(f"manifest {path}: malformed records ({exc})") from exc
    return DatasetManifest(records, split, path.parent)


def write_manifest(manifest: DatasetManifest, path) -> None:
    doc = {
        "split": manifest.split,
        "records": [{k: v for k, v in vars(r).items()} for r in manifest.records],
    }
    atomic_write_bytes(Path(path), (json.dumps(doc, indent=2) + "\n").encode())


def atomic_write_bytes(path: Path, payload: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def save_png(array: np.ndarray, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    Image.fromarray(array).save(tmp, format="PNG")
    os.replace(tmp, path)


def read_image(path) -> np.ndarray:
    """8-bit RGB PNG -> (3, H, W) float32 in [0, 1]."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    except OSError as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from exc
    return np.ascontiguousarray(arr.transpose(2, 0, 1)) / np.float32(255.0)


def write_image(img: np.ndarray, path) -> None:
    """(3, H, W) in [0, 1] -> 8-bit RGB PNG."""
    arr = np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    save_png(np.ascontiguousarray(arr.transpose(1, 2, 0)), path)


def read_mask(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("L"))
    except OSError as exc:
        raise DataError(f"cannot decode mask {path}: {exc}") from exc
    return (arr != 0)[None]


def write_mask(mask: np.ndarray, path) -> None:
    save_png(np.where(np.asarray(mask).reshape(mask.shape[-2:]), 255, 0).astype(np.uint8), path)


def read_disparity(path) -> tuple:
    """16-bit PNG -> ((1, H, W) disparity in px, (1, H, W) validity)."""
    try:
        with Image.open(path) as im:
            raw = np.asarray(im, dtype=np.uint32)
    except OSError as exc:
        raise DataError(f"cannot decode disparity {path}: {exc}") from exc
    if raw.ndim != 2:
        raise DataError(f"disparity file {path} must be single-channel, got shape {raw.shape}")
    valid = raw > 0
    disparity = raw.astype(np.float32) / np.float32(DISPARITY_SCALE)
    if np.any(disparity[valid] >= MAX_DISPARITY):
        raise DataError(f"disparity file {path} has valid values >= {MAX_DISPARITY} px, which the network cannot express")
    return disparity[None], valid[None]


def write_disparity(disparity: np.ndarray, path) -> None:
    """Write (1, H, W) or (H, W) disparity as a 16-bit PNG with raw = round(d * 256).

    Exact zeros become the invalid sentinel, as do positive values below 1/512 px.
    """
    d = np.asarray(disparity, dtype=np.float64)
    d = d.reshape(d.shape[-2:])
    if not np.all(np.isfinite(d)) or d.min(initial=0.0) < 0 or d.max(initial=0.0) >= MAX_DISPARITY:
        raise DataError(f"disparity values must lie in [0, {MAX_DISPARITY}) to be written to {path}")
    raw = np.rint(d * DISPARITY_SCALE).astype(np.uint16)
    save_png(raw, path)


def load_sample(record: ManifestRecord, expected_dims: Optional[tuple] = None, manifest: Optional[DatasetManifest] = None) -> StereoSample:
    """Decode one manifest record; ``expected_dims`` is an optional (H, W) to enforce."""
    resolve = manifest.resolve if manifest is not None else (lambda p: None if p is None else Path(p))
    left_path = resolve(record.left_path)
    left = read_image(left_path)
    dims = tuple(left.shape[1:])
    if expected_dims is not None and dims != tuple(expected_dims):
        raise DataError(f"{left_path}: image is {dims[0]}x{dims[1]}, expected {expected_dims[0]}x{expected_dims[1]}")

    def check(arr, path):
        if tuple(arr.shape[1:]) != dims:
            raise DataError(f"{path}: size {arr.shape[1]}x{arr.shape[2]} does not match left image {dims[0]}x{dims[1]}")
        return arr

    right_path = resolve(record.right_path)
    right = check(read_image(right_path), right_path)
    disp_path = resolve(record.disparity_path)
    disparity, valid = read_disparity(disp_path)
    check(disparity, disp_path)
    seg = sky = None
    if record.seg_path is not None:
        seg_path = resolve(record.seg_path)
        seg = check(read_image(seg_path), seg_path)
    if record.sky_mask_path is not None:
        sky_path = resolve(record.sky_mask_path)
        sky = check(read_mask(sky_path), sky_path)
    return StereoSample(left, right, disparity, valid, seg, sky)


def load_dataset(manifest: DatasetManifest, expected_dims: Optional[tuple] = None) -> list:
    return [load_sample(r, expected_dims, manifest) for r in manifest.records]


def save_sample(sample: StereoSample, root, index: int) -> ManifestRecord:
    """Write every field of ``sample`` under ``root`` and return its manifest record (relative paths)."""
    root = Path(root)
    name = f"{index:06d}.png"
    rel = {
        "left_path": f"left/{name}",
        "right_path": f"right/{name}",
        "disparity_path": f"disparity/{name}",
        "seg_path": f"seg/{name}" if sample.seg is not None else None,
        "sky_mask_path": f"sky/{name}" if sample.sky_mask is not None else None,
    }
    for p in rel.values():
        if p is not None:
            (root / p).parent.mkdir(parents=True, exist_ok=True)
    write_image(sample.left, root / rel["left_path"])
    write_image(sample.right, root / rel["right_path"])
    write_disparity(np.where(sample.valid_mask, sample.disparity_gt, 0.0), root / rel["disparity_path"])
    if sample.seg is not None:
        write_image(sample.seg, root / rel["seg_path"])
    if sample.sky_mask is not None:
        write_mask(sample.sky_mask, root / rel["sky_mask_path"])
    return ManifestRecord(**rel)


# ---------------------------------------------------------------------------
# normalization


@dataclass(frozen=True)
class NormalizationStats:
    mean: tuple = (0.50625, 0.52283, 0.41453)
    std: tuple = (0.21669, 0.19807, 0.18691)

    def __post_init__(self):
        if len(self.mean) != 3 or len(self.std) != 3:
            raise ConfigurationError("normalization stats need three channels")
        if min(self.std) <= 0:
            raise ConfigurationError(f"std must be positive, got {self.std}")


def normalize_image(img: np.ndarray, stats: NormalizationStats = NormalizationStats()) -> np.ndarray:
    mean = np.asarray(stats.mean, dtype=np.float32).reshape(3, 1, 1)
    std = np.asarray(stats.std, dtype=np.float32).reshape(3, 1, 1)
    return (img - mean) / std


def denormalize_image(img: np.ndarray, stats: NormalizationStats = NormalizationStats()) -> np.ndarray:
    mean = np.asarray(stats.mean, dtype=np.float32).reshape(3, 1, 1)
    std = np.asarray(stats.std, dtype=np.float32).reshape(3, 1, 1)
    return img * std + mean


def network_input(samples: Sequence[StereoSample], use_segmentation: bool, stats: NormalizationStats = NormalizationStats()) -> np.ndarray:
    """Stack samples into a (B, 6|9, H, W) batch: normalized left, normalized right, raw segmentation."""
    rows = []
    for s in samples:
        parts = [normalize_image(s.left, stats), normalize_image(s.right, stats)]
        if use_segmentation:
            if s.seg is None:
                raise DataError("segmentation model requires a segmentation image for every sample")
            parts.append(s.seg)
        rows.append(np.concatenate(parts, axis=0))
    return np.stack(rows).astype(np.float32)


# ---------------------------------------------------------------------------
# augmentation


@dataclass(frozen=True)
class AugmentConfig:
    jitter_strength: float = 0.1
    top_replace_prob: float = 0.5
    top_fraction: float = 0.25
    sky_masking_enabled: bool = False
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.jitter_strength < 1.0:
            raise ConfigurationError(f"jitter_strength must be in [0, 1), got {self.jitter_strength}")
        if not 0.0 <= self.top_replace_prob <= 1.0:
            raise ConfigurationError(f"top_replace_prob must be in [0, 1], got {self.top_replace_prob}")
        if not 0.0 < self.top_fraction <= 0.5:
            raise ConfigurationError(f"top_fraction must be in (0, 0.5], got {self.top_fraction}")


@dataclass(frozen=True)
class JitterFactors:
    brightness: float = 1.0
    contrast: float = 1.0
    saturation: float = 1.0
    hue: float = 0.0  # fraction of the full hue cycle


_LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float32).reshape(3, 1, 1)


def _grayscale(img: np.ndarray) -> np.ndarray:
    return (img * _LUMA).sum(axis=0, keepdims=True)


def rgb_to_hsv(img: np.ndarray) -> np.ndarray:
    r, g, b = img
    maxc = img.max(axis=0)
    minc = img.min(axis=0)
    delta = maxc - minc
    s = np.where(maxc > 0, delta / np.where(maxc > 0, maxc, 1), 0)
    safe = np.where(delta > 0, delta, 1)
    rc, gc, bc = (maxc - r) / safe, (maxc - g) / safe, (maxc - b) / safe
    h = np.where(maxc == r, bc - gc, np.where(maxc == g, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(delta > 0, (h / 6.0) % 1.0, 0.0)
    return np.stack([h, s, maxc]).astype(img.dtype)


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p, q, t = v * (1 - s), v * (1 - s * f), v * (1 - s * (1 - f))
    i = i.astype(np.int64) % 6
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b]).astype(hsv.dtype)


def sample_jitter(rng: np.random.Generator, strength: float) -> JitterFactors:
    lo, hi = 1.0 - strength, 1.0 + strength
    return JitterFactors(
        brightness=float(rng.uniform(lo, hi)),
        contrast=float(rng.uniform(lo, hi)),
        saturation=float(rng.uniform(lo, hi)),
        hue=float(rng.uniform(-strength, strength)),
    )


def apply_jitter(img: np.ndarray, f: JitterFactors) -> np.ndarray:
    """Brightness, contrast, saturation, hue, in that order, clamping to [0, 1] after each."""
    out = img.astype(np.float32, copy=True)
    if f.brightness != 1.0:
        out = np.clip(out * np.float32(f.brightness), 0.0, 1.0)
    if f.contrast != 1.0:
        m = _grayscale(out).mean()
        out = np.clip((out - m) * np.float32(f.contrast) + m, 0.0, 1.0)
    if f.saturation != 1.0:
        gray = _grayscale(out)
        out = np.clip((out - gray) * np.float32(f.saturation) + gray, 0.0, 1.0)
    if f.hue != 0.0:
        hsv = rgb_to_hsv(out)
        hsv[0] = (hsv[0] + np.float32(f.hue)) % 1.0
        out = np.clip(hsv_to_rgb(hsv), 0.0, 1.0)
    return out.astype(np.float32)


def color_jitter(left: np.ndarray, right: np.ndarray, strength: float, seed) -> tuple:
    """Sample one factor set and apply it identically to both views."""
    if not 0.0 <= strength < 1.0:
        raise ConfigurationError(f"jitter strength must be in [0, 1), got {strength}")
    if strength == 0.0:
        return left.copy(), right.copy()
    factors = sample_jitter(np.random.default_rng(seed), strength)
    return apply_jitter(left, factors), apply_jitter(right, factors)


def top_band_source(height: int, rows: int, source: str) -> int:
    """First row of the band copied over the top ``rows`` rows."""
    if source == "middle":
        return height // 2 - rows // 2
    if source == "bottom":
        return height - rows
    raise UsageError(f"unknown band source {source!r}")


def replace_top(sample: StereoSample, rows: int, source: str) -> StereoSample:
    out = sample.copy()
    start = top_band_source(sample.height, rows, source)
    for name, arr in out.fields().items():
        band = sample.fields()[name][:, start : start + rows].copy()
        arr[:, :rows] = band
    return out


def top_replace_augment(sample: StereoSample, config: AugmentConfig, seed) -> StereoSample:
    """With probability ``top_replace_prob`` overwrite the top band of every field by the middle or bottom band."""
    rows_f = config.top_fraction * sample.height
    rows = int(round(rows_f))
    if abs(rows - rows_f) > 1e-9 or rows < 1:
        raise UsageError(f"top_fraction {config.top_fraction} x height {sample.height} is not a whole number of rows")
    rng = np.random.default_rng(seed)
    apply, pick = rng.random(), rng.random()
    if apply >= config.top_replace_prob:
        return sample.copy()
    return replace_top(sample, rows, "middle" if pick < 0.5 else "bottom")


def apply_sky_mask(sample: StereoSample) -> StereoSample:
    """Turn sky pixels into supervised zero-disparity targets."""
    if sample.sky_mask is None:
        raise UsageError("apply_sky_mask needs a sample with a sky_mask")
    out = sample.copy()
    sky = sample.sky_mask.astype(bool)
    out.disparity_gt[sky] = 0.0
    out.valid_mask[sky] = True
    return out


def augment_sample(sample: StereoSample, config: AugmentConfig, seed) -> StereoSample:
    """Sky masking (if enabled), top-band replacement, then colour jitter of the stereo pair."""
    ss = np.random.SeedSequence(seed if isinstance(seed, (list, tuple)) else [seed])
    top_seed, jitter_seed = ss.spawn(2)
    out = apply_sky_mask(sample) if config.sky_masking_enabled else sample
    out = top_replace_augment(out, config, top_seed)
    left, right = color_jitter(out.left, out.right, config.jitter_strength, jitter_seed)
    return replace(out, left=left, right=right)
