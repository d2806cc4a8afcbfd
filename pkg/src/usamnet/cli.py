"""``usamnet`` command-line entry point.

Subcommands: gen-data, train, eval, predict, attn-diff, param-count.  Every
command exits 0 on success and 1 with a one-line ``error:`` diagnostic on
failure; argument errors exit 2.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, model_from_checkpoint
from .config import load_run_config, write_effective_config
from .data import (
    DatasetManifest,
    StereoSample,
    atomic_write_bytes,
    load_dataset,
    load_manifest,
    read_image,
    save_png,
    save_sample,
    write_disparity,
    write_manifest,
)
from .errors import ConfigurationError, DataError, UsageError, UsamError
from .inference import evaluate, predict_disparity
from .metrics import attn_diff_heatmap, reports_to_csv
from .model import VARIANTS, ModelConfig, build_model, param_count, param_table
from .render import colorize, heatmap_to_uint8, overlay_heatmap
from .synthetic import render_synthetic_scene
from .train import read_loss_log, train_epochs, write_loss_log

logger = logging.getLogger("usamnet")


def _write_text(path: Path, text: str) -> None:
    atomic_write_bytes(Path(path), text.encode())


def _save_rgb(arr: np.ndarray, path: Path) -> None:
    save_png(np.ascontiguousarray(arr), path)


# ---------------------------------------------------------------------------
# gen-data


def cmd_gen_data(args) -> int:
    ModelConfig(input_height=args.height, input_width=args.width)  # dimension guard
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = np.random.SeedSequence(args.seed).generate_state(args.count) if args.count else []
    records = []
    for i, s in enumerate(seeds):
        sample, _ = render_synthetic_scene(
            int(s), args.height, args.width, num_shapes=args.num_shapes, max_disparity=args.max_disparity, dropout=args.dropout
        )
        records.append(save_sample(sample, out, i))
    write_manifest(DatasetManifest(records, args.split, out), out / "manifest.json")
    print(f"wrote {len(records)} samples to {out}")
    return 0


# ---------------------------------------------------------------------------
# train


def _run_config(args):
    overrides = list(args.set or [])
    cfg = load_run_config(args.config, overrides)
    if getattr(args, "variant", None):
        seg, attn = VARIANTS[args.variant]
        cfg = replace(cfg, model=replace(cfg.model, use_segmentation=seg, use_attention=attn))
    if getattr(args, "out", None):
        cfg = replace(cfg, output_dir=str(Path(args.out)))
    return cfg


def _load_training_data(cfg, manifest_path):
    if manifest_path is None:
        raise UsageError("no training manifest: set data.train_manifest in the config or pass --manifest")
    manifest = load_manifest(manifest_path)
    if not manifest.records:
        raise DataError(f"manifest {manifest_path} has no records")
    if cfg.model.use_segmentation and not manifest.has_segmentation:
        raise DataError(f"the {cfg.model.variant} variant needs segmentation images but {manifest_path} lacks seg_path entries")
    return load_dataset(manifest, (cfg.model.input_height, cfg.model.input_width))


def cmd_train(args) -> int:
    cfg = _run_config(args)
    samples = _load_training_data(cfg, args.manifest or cfg.data.train_manifest)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_effective_config(cfg, out)
    resume = load_checkpoint(args.resume, expected_config=cfg.model) if args.resume else None
    model = build_model(cfg.model, seed=cfg.init_seed)
    result = train_epochs(model, samples, cfg.train, resume=resume, checkpoint_dir=out / "checkpoints", stats=cfg.normalization)
    log_path = out / "loss.csv"
    write_loss_log(result.loss_log, log_path, append=resume is not None)
    if result.loss_log:
        first = read_loss_log(log_path)[0].loss
        last = result.loss_log[-1].loss
        print(f"steps {result.checkpoint.step}  initial loss {first:.6g}  final loss {last:.6g}  ratio {last / first:.4g}")
    else:
        print(f"steps {result.checkpoint.step}  (no new steps)")
    return 0


# ---------------------------------------------------------------------------
# eval


def cmd_eval(args) -> int:
    cfg = load_run_config(args.config, list(args.set or [])) if (args.config or args.set) else None
    ckpt = load_checkpoint(args.checkpoint, expected_config=cfg.model if (cfg and args.config) else None)
    model = model_from_checkpoint(ckpt)
    manifest_path = args.manifest or (cfg.data.eval_manifest if cfg else None)
    if manifest_path is None:
        raise UsageError("eval needs --manifest (or data.eval_manifest in --config)")
    manifest = load_manifest(manifest_path)
    if not manifest.records:
        raise DataError(f"manifest {manifest_path} has no records")
    if model.config.use_segmentation and not manifest.has_segmentation:
        raise DataError(f"checkpoint is a {model.config.variant} model but {manifest_path} lacks segmentation images")
    samples = load_dataset(manifest, (model.config.input_height, model.config.input_width))
    focal_baseline = args.focal_baseline if args.focal_baseline is not None else (cfg.focal_baseline if cfg else None)
    if focal_baseline is None:
        raise UsageError("eval needs --focal-baseline (or focal_baseline in --config)")
    kwargs = {}
    if cfg is not None:
        kwargs = dict(metric_cfg=cfg.metrics, bucket_cfg=cfg.buckets, stats=cfg.normalization)
    report = evaluate(model, samples, focal_baseline, **kwargs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_text(out / "report.csv", reports_to_csv([report]))
    _write_text(out / "report.json", report.to_json() + "\n")
    _write_text(out / "ard_curve.csv", report.ard_curve_csv())
    gd = "n/a" if report.gd is None else f"{report.gd:.4f}%"
    print(f"EPE {report.epe:.4f}px  D1 {report.d1:.4f}%  GD {gd}  ({report.valid_pixel_count} valid px)")
    return 0


# ---------------------------------------------------------------------------
# predict / attn-diff


def _input_sample(left_path, right_path, seg_path, need_seg: bool) -> StereoSample:
    left = read_image(left_path)
    right = read_image(right_path)
    if right.shape != left.shape:
        raise ConfigurationError(f"right image is {right.shape[1]}x{right.shape[2]} but left is {left.shape[1]}x{left.shape[2]}")
    seg = None
    if need_seg:
        if seg_path is None:
            raise UsageError("this checkpoint uses segmentation input; pass --seg")
        seg = read_image(seg_path)
        if seg.shape != left.shape:
            raise ConfigurationError(f"segmentation image is {seg.shape[1]}x{seg.shape[2]} but left is {left.shape[1]}x{left.shape[2]}")
    h, w = left.shape[1:]
    return StereoSample(left, right, np.zeros((1, h, w), np.float32), np.zeros((1, h, w), bool), seg)


def _check_dims(config: ModelConfig, sample: StereoSample) -> None:
    if (sample.height, sample.width) != (config.input_height, config.input_width):
        raise ConfigurationError(
            f"input is {sample.height}x{sample.width} but the checkpoint expects {config.input_height}x{config.input_width}"
        )


def cmd_predict(args) -> int:
    model = model_from_checkpoint(load_checkpoint(args.checkpoint))
    need_seg = model.config.use_segmentation
    if args.seg is not None and not need_seg:
        logger.warning("the %s checkpoint does not use segmentation; ignoring --seg", model.config.variant)
    sample = _input_sample(args.left, args.right, args.seg, need_seg)
    _check_dims(model.config, sample)
    (disp,) = predict_disparity(model, [sample])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_disparity(disp, out)
    if args.color:
        _save_rgb(colorize(disp, vmax=model.config.output_scale if args.fixed_range else None), Path(args.color))
    print(f"wrote {out}  (disparity range {disp.min():.3f}..{disp.max():.3f} px)")
    return 0


def cmd_attn_diff(args) -> int:
    model_a = model_from_checkpoint(load_checkpoint(args.checkpoint_a))
    model_b = model_from_checkpoint(load_checkpoint(args.checkpoint_b))
    ca, cb = model_a.config, model_b.config
    if ca.in_channels != cb.in_channels:
        raise UsageError(f"checkpoints take different inputs ({ca.in_channels} vs {cb.in_channels} channels)")
    if (ca.input_height, ca.input_width) != (cb.input_height, cb.input_width):
        raise UsageError("checkpoints were built for different input sizes")
    sample = _input_sample(args.left, args.right, args.seg, ca.use_segmentation)
    _check_dims(ca, sample)
    (disp_a,) = predict_disparity(model_a, [sample])
    (disp_b,) = predict_disparity(model_b, [sample])
    heat = attn_diff_heatmap(disp_a, disp_b)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_png(heatmap_to_uint8(heat), out / "heatmap.png")
    _save_rgb(overlay_heatmap(sample.left, heat), out / "overlay.png")
    diff = np.abs(disp_a.astype(np.float64) - disp_b.astype(np.float64))
    print(f"max |a - b| = {diff.max():.6g} px, mean = {diff.mean():.6g} px")
    return 0


# ---------------------------------------------------------------------------
# param-count


def cmd_param_count(args) -> int:
    cfg = ModelConfig.for_variant(args.variant, input_height=args.height, input_width=args.width, width_divisor=args.width_divisor)
    model = build_model(cfg)
    table = param_table(model)
    total = param_count(model)
    if args.json:
        doc = {
            "variant": args.variant,
            "layers": [{"name": n, "shape": list(s), "count": c} for n, s, c in table],
            "total": total,
        }
        print(json.dumps(doc, indent=2))
    else:
        width = max(len(n) for n, _, _ in table)
        for name, shape, count in table:
            print(f"{name:<{width}}  {str(shape):<22} {count:>12,}")
        print(f"{'total':<{width}}  {'':<22} {total:>12,}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="usamnet", description="Stereo disparity estimation with segmentation and attention.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="render a synthetic stereo dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-disparity", type=int, default=12)
    p.add_argument("--num-shapes", type=int, default=4)
    p.add_argument("--dropout", type=float, default=0.1, help="fraction of pixels without ground truth")
    p.add_argument("--split", choices=("train", "test"), default="train")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model variant")
    p.add_argument("--config")
    p.add_argument("--variant", choices=sorted(VARIANTS))
    p.add_argument("--manifest", help="training manifest (overrides data.train_manifest)")
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key, e.g. train.epochs=5")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest")
    p.add_argument("--focal-baseline", type=float)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="run config supplying metric settings; its model section must match the checkpoint")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="predict a disparity map for one stereo pair")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--left", required=True)
    p.add_argument("--right", required=True)
    p.add_argument("--seg")
    p.add_argument("--out", required=True, help="16-bit disparity PNG")
    p.add_argument("--color", help="optional 8-bit colorized rendering")
    p.add_argument("--fixed-range", action="store_true", help="color scale spans the full output range instead of the map's max")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("attn-diff", help="heatmap of where two checkpoints disagree")
    p.add_argument("--checkpoint-a", required=True)
    p.add_argument("--checkpoint-b", required=True)
    p.add_argument("--left", required=True)
    p.add_argument("--right", required=True)
    p.add_argument("--seg")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_attn_diff)

    p = sub.add_parser("param-count", help="per-layer parameter table")
    p.add_argument("--variant", choices=sorted(VARIANTS), default="seg-attn")
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--width-divisor", type=int, default=1)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_param_count)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (UsamError, ValueError, OSError) as exc:
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
