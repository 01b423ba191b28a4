"""Command-line entry point.

Subcommands: gen-data, train, eval, det, attn, param-count. Exit codes:
0 success, 1 usage or configuration error, 2 data or schema error. The
default output directory comes from PITRACK_OUT (falling back to the
current directory); no subcommand modifies its input files.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config, losses, metrics, sim, svg, training
from .recurrent import (
    BaselineModel,
    PirnnModel,
    baseline_param_shapes,
    count_params,
    param_breakdown,
    param_match,
    pirnn_param_shapes,
)
from .sim import DatasetError
from .tensor import CheckpointError


class _Parser(argparse.ArgumentParser):
    """argparse with exit code 1 on usage errors (default is 2)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _out_dir(args) -> Path:
    base = args.out or os.environ.get("PITRACK_OUT") or "."
    path = Path(base)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_config(args, extra=()):
    overrides = list(extra) + (args.set or [])
    return config.load(args.config, overrides)


def cmd_gen_data(args) -> int:
    extra = [f"sim.seed={args.seed}"] if args.seed is not None else []
    sim_cfg, _, _, _ = _load_config(args, extra)
    scenes = sim.make_dataset(sim_cfg, args.scenes, args.start_index)
    out = Path(args.dataset) if args.dataset else _out_dir(args) / "dataset.jsonl"
    out.parent.mkdir(parents=True, exist_ok=True)
    sim.save_scenes(out, scenes)
    print(f"wrote {len(scenes)} scenes to {out}")
    return 0


def cmd_train(args) -> int:
    extra = []
    if args.seed is not None:
        extra.append(f"train.seed={args.seed}")
    if args.model:
        extra.append(f"train.model_kind={args.model}")
    _, _, train_cfg, _ = _load_config(args, extra)
    out = _out_dir(args)
    train_cfg = replace(
        train_cfg,
        checkpoint=str(out / train_cfg.checkpoint),
        log=str(out / train_cfg.log),
    )
    result = training.train(train_cfg)
    print(
        f"best val loss {result.best_val_loss:.6g} at epoch {result.best_epoch}; "
        f"checkpoint {result.checkpoint_path}, log {result.log_path}"
    )
    return 0


def _arm_tag(arm: str) -> str:
    return {"pirnn": "pirnn", "baseline": "baseline", "detector": "detector"}[arm]


def cmd_eval(args) -> int:
    _, _, train_cfg, eval_opts = _load_config(args)
    out = _out_dir(args)
    reports, aggregate, predictions = training.evaluate(
        train_cfg, args.dataset, args.model, args.checkpoint,
        eval_opts.gate_deg, eval_opts.activity_threshold,
    )
    tag = _arm_tag(args.model)
    metrics.write_report_csv(out / f"report_{tag}.csv", reports, aggregate)
    metrics.write_report_json(out / f"report_{tag}.json", reports, aggregate)
    scenes = sim.load_scenes(args.dataset)
    points = det_points = metrics.det_curve(
        predictions, scenes, eval_opts.thresholds, eval_opts.gate_deg
    )
    metrics.write_det_csv(out / f"det_{tag}.csv", points)
    svg.line_plot(
        {tag: ([p.fp_rate for p in det_points], [p.miss_rate for p in det_points])},
        out / f"det_{tag}.svg",
        title=f"detection error tradeoff ({tag})",
        x_label="false positives per frame",
        y_label="miss rate",
    )
    print(
        f"{tag}: mean err {aggregate['mean_error_deg']:.3f} deg, "
        f"ids/min {aggregate['ids_per_active_min']:.3f}, "
        f"fp {aggregate['fp']}, miss {aggregate['miss']} "
        f"-> {out / ('report_' + tag + '.csv')}"
    )
    return 0


def cmd_det(args) -> int:
    _, _, train_cfg, eval_opts = _load_config(args)
    out = _out_dir(args)
    scenes = sim.load_scenes(args.dataset)
    series = {}
    for arm in args.model:
        _, _, predictions = training.evaluate(
            train_cfg, args.dataset, arm,
            args.checkpoint if arm != "detector" else None,
            eval_opts.gate_deg, eval_opts.activity_threshold,
        )
        points = metrics.det_curve(predictions, scenes, eval_opts.thresholds, eval_opts.gate_deg)
        tag = _arm_tag(arm)
        metrics.write_det_csv(out / f"det_{tag}.csv", points)
        series[tag] = ([p.fp_rate for p in points], [p.miss_rate for p in points])
    svg.line_plot(
        series, out / "det.svg",
        title="detection error tradeoff",
        x_label="false positives per frame", y_label="miss rate",
    )
    print(f"wrote DET curves for {', '.join(args.model)} to {out}")
    return 0


def _parse_frame_range(spec: str, n_frames: int) -> range:
    lo, _, hi = spec.partition(":")
    start = int(lo) if lo else 0
    stop = int(hi) if hi else n_frames
    if not (0 <= start < stop <= n_frames):
        raise config.ConfigError(f"frame range {spec!r} outside 0:{n_frames}")
    return range(start, stop)


def cmd_attn(args) -> int:
    _, _, train_cfg, _ = _load_config(args)
    if train_cfg.model_kind != "pirnn":
        raise config.ConfigError("attention export requires train.model_kind = pirnn")
    out = _out_dir(args)
    scenes = sim.load_scenes(args.dataset)
    if not (0 <= args.scene < len(scenes)):
        raise DatasetError(f"scene index {args.scene} outside dataset of {len(scenes)}")
    scene = scenes[args.scene]
    model = training.load_checkpoint(args.checkpoint, train_cfg)
    _, attention = model.forward(scene.detections, collect_attention=True)
    frames = _parse_frame_range(args.frames, scene.frames)
    for t in frames:
        weights = attention[t]
        stem = f"attn_s{args.scene:03d}_f{t:04d}"
        for head in range(weights.n_heads):
            weights.write_csv(out / f"{stem}_h{head}.csv", head)
        weights.write_csv(out / f"{stem}_mean.csv", "mean")
        svg.heatmap(
            weights.head_mean(),
            weights.column_labels(),
            [f"out{i}" for i in range(weights.weights.shape[1])],
            out / f"{stem}_mean.svg",
            title=f"assignment weights, frame {t} (head mean)",
        )
    print(f"wrote attention matrices for frames {frames.start}:{frames.stop} to {out}")
    return 0


def cmd_param_count(args) -> int:
    _, model_cfg, _, _ = _load_config(args)
    shapes = pirnn_param_shapes(model_cfg)
    total = count_params(shapes)
    print("tracking model parameters:")
    for group, count in param_breakdown(shapes).items():
        print(f"  {group:<8} {count:>10}")
    print(f"  {'total':<8} {total:>10}")
    width = model_cfg.baseline_width or param_match(model_cfg)
    bl_shapes = baseline_param_shapes(model_cfg.slots, width)
    bl_total = count_params(bl_shapes)
    print(f"baseline (width {width}) parameters:")
    for group, count in param_breakdown(bl_shapes).items():
        print(f"  {group:<8} {count:>10}")
    print(f"  {'total':<8} {bl_total:>10}")
    print(f"ratio baseline/model: {bl_total / total:.4f}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="pitrack", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, checkpoint=False, dataset=False):
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a configuration key (repeatable)")
        p.add_argument("--out", help="output directory (default $PITRACK_OUT or .)")
        if checkpoint:
            p.add_argument("--checkpoint", help="checkpoint JSON path")
        if dataset:
            p.add_argument("--dataset", required=True, help="JSON-lines dataset path")

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--dataset", help="output dataset path (default <out>/dataset.jsonl)")
    p.add_argument("--scenes", type=int, default=100)
    p.add_argument("--seed", type=int, help="override sim.seed")
    p.add_argument("--start-index", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model")
    common(p)
    p.add_argument("--model", choices=["pirnn", "baseline"], help="override train.model_kind")
    p.add_argument("--seed", type=int, help="override train.seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint or the raw detector")
    common(p, checkpoint=True, dataset=True)
    p.add_argument("--model", choices=["pirnn", "baseline", "detector"], default="pirnn")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("det", help="detection error tradeoff curves")
    common(p, checkpoint=True, dataset=True)
    p.add_argument("--model", nargs="+", choices=["pirnn", "baseline", "detector"],
                   default=["detector"])
    p.set_defaults(func=cmd_det)

    p = sub.add_parser("attn", help="export assignment attention matrices")
    common(p, checkpoint=True, dataset=True)
    p.add_argument("--scene", type=int, default=0)
    p.add_argument("--frames", default=":", help="frame range as start:stop")
    p.set_defaults(func=cmd_attn)

    p = sub.add_parser("param-count", help="parameter ledger and baseline matching")
    common(p)
    p.set_defaults(func=cmd_param_count)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    except config.ConfigError as exc:
        print(f"pitrack: {exc}", file=sys.stderr)
        return 1
    except (DatasetError, CheckpointError, FileNotFoundError) as exc:
        print(f"pitrack: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
