"""Disparity evaluation: EPE, D1, threshold-k error, per-depth-bucket ARD and GD.

All sums use :func:`math.fsum` on float64 terms, so results are correctly
rounded and independent of summation order.  Dataset aggregation is pixel
weighted: numerators and denominators are totalled across images before
dividing.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError, NoValidPixelsError


@dataclass(frozen=True)
class MetricConfig:
    tau_abs: float = 3.0
    tau_rel: float = 0.05
    thresholds: tuple = (1, 2, 3)

    def __post_init__(self):
        if self.tau_abs <= 0 or self.tau_rel < 0:
            raise ConfigurationError("tau_abs must be > 0 and tau_rel >= 0")


@dataclass(frozen=True)
class ArdBucketConfig:
    min_depth: float = 0.0
    max_depth: float = 80.0
    interval: float = 8.0
    range_r: float = 4.0

    @property
    def centers(self) -> list:
        n = int(round((self.max_depth - self.min_depth) / self.interval))
        return [self.min_depth + self.interval * (i + 1) for i in range(n)]

    def bounds(self) -> list:
        """Half-open [center - r, center + r) depth interval of every bucket."""
        return [(c - self.range_r, c + self.range_r) for c in self.centers]


def _column(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64).reshape(-1)


def _valid_pairs(pred, gt, valid_mask):
    pred, gt = _column(pred), _column(gt)
    valid = np.asarray(valid_mask, dtype=bool).reshape(-1)
    if not (pred.shape == gt.shape == valid.shape):
        raise ConfigurationError(f"pred, gt and mask sizes differ: {pred.size}, {gt.size}, {valid.size}")
    return pred[valid], gt[valid]


def _require(n: int) -> None:
    if n == 0:
        raise NoValidPixelsError("no valid ground-truth pixels")


def epe(pred, gt, valid_mask) -> float:
    p, g = _valid_pairs(pred, gt, valid_mask)
    _require(g.size)
    return math.fsum(np.abs(p - g).tolist()) / g.size


def d1_outliers(p: np.ndarray, g: np.ndarray, cfg: MetricConfig) -> np.ndarray:
    return np.abs(p - g) > np.maximum(cfg.tau_abs, cfg.tau_rel * g)


def d1(pred, gt, valid_mask, cfg: MetricConfig = MetricConfig()) -> float:
    p, g = _valid_pairs(pred, gt, valid_mask)
    _require(g.size)
    return 100.0 * int(d1_outliers(p, g, cfg).sum()) / g.size


def threshold_error(pred, gt, valid_mask, k: float) -> float:
    p, g = _valid_pairs(pred, gt, valid_mask)
    _require(g.size)
    return 100.0 * int((np.abs(p - g) > k).sum()) / g.size


def disparity_to_depth(disparity, focal_baseline: float) -> np.ndarray:
    """depth = focal_baseline / disparity; pixels with disparity <= 0 get depth 0 (invalid)."""
    if focal_baseline <= 0:
        raise ConfigurationError(f"focal_baseline must be positive, got {focal_baseline}")
    d = np.asarray(disparity, dtype=np.float64)
    out = np.zeros_like(d)
    pos = d > 0
    out[pos] = focal_baseline / d[pos]
    return out


def bucket_index(depth: np.ndarray, cfg: ArdBucketConfig) -> np.ndarray:
    """Bucket of every depth value, -1 where it falls in none."""
    idx = np.full(depth.shape, -1, dtype=np.int64)
    for i, (lo, hi) in enumerate(cfg.bounds()):
        idx[(depth >= lo) & (depth < hi) & (idx < 0)] = i
    return idx


def ard_terms(pred, gt, valid_mask, depth_gt, cfg: ArdBucketConfig):
    """Per bucket: (sum of |dp - dg| / dg as an fsum, pixel count)."""
    valid = np.asarray(valid_mask, dtype=bool).reshape(-1)
    p, g = _column(pred)[valid], _column(gt)[valid]
    buckets = bucket_index(_column(depth_gt)[valid], cfg)
    rel = np.abs(p - g) / g
    out = []
    for i in range(len(cfg.centers)):
        sel = rel[buckets == i]
        out.append((math.fsum(sel.tolist()), int(sel.size)))
    return out


def ard_buckets(pred, gt, valid_mask, depth_gt, cfg: ArdBucketConfig = ArdBucketConfig()) -> list:
    """ARD per bucket; ``None`` marks a bucket without valid pixels."""
    return [s / n if n else None for s, n in ard_terms(pred, gt, valid_mask, depth_gt, cfg)]


def gd(ard_values: Sequence[Optional[float]]) -> float:
    """100 x mean ARD over the non-empty buckets."""
    present = [a for a in ard_values if a is not None]
    _require(len(present))
    return 100.0 * math.fsum(present) / len(present)


def attn_diff_heatmap(disp_a, disp_b) -> np.ndarray:
    """|a - b| scaled by its maximum into [0, 1]; an all-zero difference stays zero."""
    a = np.asarray(disp_a, dtype=np.float64)
    b = np.asarray(disp_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ConfigurationError(f"disparity maps differ in shape: {a.shape} vs {b.shape}")
    diff = np.abs(a - b)
    peak = diff.max(initial=0.0)
    heat = diff / peak if peak > 0 else np.zeros_like(diff)
    return heat.reshape((1,) + heat.shape[-2:]).astype(np.float32)


# ---------------------------------------------------------------------------
# reports


@dataclass
class MetricReport:
    epe: float
    d1: float
    threshold_errors: dict
    ard: list
    gd: Optional[float]
    valid_pixel_count: int
    bucket_centers: list = field(default_factory=lambda: ArdBucketConfig().centers)

    def columns(self) -> list:
        return (
            ["EPE", "D1"]
            + [f"thres_{_fmt_num(k)}" for k in self.threshold_errors]
            + [f"ARD_{_fmt_num(c)}" for c in self.bucket_centers]
            + ["GD"]
        )

    def row(self) -> list:
        return [self.epe, self.d1, *self.threshold_errors.values(), *self.ard, self.gd]

    def to_dict(self) -> dict:
        return {
            "EPE": self.epe,
            "D1": self.d1,
            "thresholds": {f"thres_{_fmt_num(k)}": v for k, v in self.threshold_errors.items()},
            "ARD": {f"ARD_{_fmt_num(c)}": a for c, a in zip(self.bucket_centers, self.ard)},
            "GD": self.gd,
            "valid_pixel_count": self.valid_pixel_count,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def ard_curve_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["bucket_center", "ard"])
        for c, a in zip(self.bucket_centers, self.ard):
            writer.writerow([_fmt_num(c), "" if a is None else repr(a)])
        return buf.getvalue()


def _fmt_num(x) -> str:
    return str(int(x)) if float(x).is_integer() else str(x)


def reports_to_csv(reports: Sequence[MetricReport]) -> str:
    """One row per report; empty ARD buckets and missing GD are blank cells."""
    if not reports:
        raise ConfigurationError("no reports to write")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(reports[0].columns())
    for r in reports:
        writer.writerow(["" if v is None else repr(float(v)) for v in r.row()])
    return buf.getvalue()


class MetricAccumulator:
    """Pixel-weighted aggregation of all metrics over many images."""

    def __init__(self, metric_cfg: MetricConfig = MetricConfig(), bucket_cfg: ArdBucketConfig = ArdBucketConfig()):
        self.metric_cfg = metric_cfg
        self.bucket_cfg = bucket_cfg
        self.abs_err_sums: list = []
        self.count = 0
        self.d1_count = 0
        self.thres_counts = {k: 0 for k in metric_cfg.thresholds}
        self.ard_sums: list = [[] for _ in bucket_cfg.centers]
        self.ard_counts = [0 for _ in bucket_cfg.centers]

    def add(self, pred, gt, valid_mask, depth_gt) -> None:
        p, g = _valid_pairs(pred, gt, valid_mask)
        err = np.abs(p - g)
        self.abs_err_sums.append(math.fsum(err.tolist()))
        self.count += g.size
        self.d1_count += int(d1_outliers(p, g, self.metric_cfg).sum())
        for k in self.thres_counts:
            self.thres_counts[k] += int((err > k).sum())
        for i, (s, n) in enumerate(ard_terms(pred, gt, valid_mask, depth_gt, self.bucket_cfg)):
            self.ard_sums[i].append(s)
            self.ard_counts[i] += n

    def report(self) -> MetricReport:
        _require(self.count)
        n = self.count
        ard = [math.fsum(s) / c if c else None for s, c in zip(self.ard_sums, self.ard_counts)]
        present = [a for a in ard if a is not None]
        return MetricReport(
            epe=math.fsum(self.abs_err_sums) / n,
            d1=100.0 * self.d1_count / n,
            threshold_errors={k: 100.0 * c / n for k, c in self.thres_counts.items()},
            ard=ard,
            gd=gd(present) if present else None,
            valid_pixel_count=n,
            bucket_centers=list(self.bucket_cfg.centers),
        )
