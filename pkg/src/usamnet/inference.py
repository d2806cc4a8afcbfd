"""Eval-mode prediction and dataset evaluation."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .data import NormalizationStats, StereoSample, network_input
from .metrics import ArdBucketConfig, MetricAccumulator, MetricConfig, MetricReport, disparity_to_depth
from .model import UsamNet, forward
from .tensor import no_grad


def predict_disparity(model: UsamNet, samples: Sequence[StereoSample], stats: NormalizationStats = NormalizationStats(),
                      batch_size: int = 1) -> list:
    """Run ``model`` in eval mode and return one (1, H, W) float32 map per sample."""
    out = []
    with no_grad():
        for i in range(0, len(samples), batch_size):
            chunk = samples[i : i + batch_size]
            pred = forward(model, network_input(chunk, model.config.use_segmentation, stats), "eval")
            out.extend(np.array(p, dtype=np.float32) for p in pred.data)
    return out


def evaluate_predictions(predictions: Sequence[np.ndarray], samples: Sequence[StereoSample], focal_baseline: float,
                         metric_cfg: MetricConfig = MetricConfig(), bucket_cfg: ArdBucketConfig = ArdBucketConfig(),
                         depths: Optional[Sequence[np.ndarray]] = None) -> MetricReport:
    """Pixel-weighted report over paired predictions and ground truth.

    Depth for bucketing comes from ``depths`` when given, else from the
    ground-truth disparity through ``focal_baseline``.
    """
    acc = MetricAccumulator(metric_cfg, bucket_cfg)
    for i, (pred, s) in enumerate(zip(predictions, samples, strict=True)):
        depth = depths[i] if depths is not None else disparity_to_depth(s.disparity_gt, focal_baseline)
        acc.add(pred, s.disparity_gt, s.valid_mask, depth)
    return acc.report()


def evaluate(model: UsamNet, samples: Sequence[StereoSample], focal_baseline: float,
             metric_cfg: MetricConfig = MetricConfig(), bucket_cfg: ArdBucketConfig = ArdBucketConfig(),
             stats: NormalizationStats = NormalizationStats()) -> MetricReport:
    return evaluate_predictions(predict_disparity(model, samples, stats), samples, focal_baseline, metric_cfg, bucket_cfg)
