"""Command-line interface.

Commands: gen-data, train-source, adapt, eval, calibrate, sweep.  Global
options (--seed, --config, --out) apply to every command; adapt exposes the
method, thresholds, selection mode, and loss toggles directly.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

from .harness import (
    RunConfig,
    cmd_adapt,
    cmd_calibrate,
    cmd_eval,
    cmd_gen_data,
    cmd_sweep,
    cmd_train_source,
    load_run_config,
)

_SPLITS = ("source_train", "source_val", "target")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override config seed")
    common.add_argument("--config", type=str, default=None, help="run config JSON path")
    common.add_argument("--out", type=str, default=None, help="override output directory")

    p = argparse.ArgumentParser(
        prog="docadapt",
        description="Document-model test-time adaptation experiments "
        "(see configs/ for ready-made run configs)",
    )
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-data", parents=[common], help="generate corpora and vocab")

    tr = sub.add_parser("train-source", parents=[common], help="supervised training")
    tr.add_argument(
        "--on", choices=("source", "target"), default=None,
        help="train on source (default) or target (upper bound)",
    )

    ad = sub.add_parser("adapt", parents=[common], help="adapt a checkpoint on target")
    ad.add_argument("--method", choices=("doctta", "docuda", "tent"), default=None)
    ad.add_argument("--gamma", type=float, default=None, help="uncertainty threshold, nats")
    ad.add_argument("--conf", type=float, default=None, help="confidence threshold")
    ad.add_argument(
        "--select", choices=("entropy", "confidence", "both", "none"), default=None
    )
    ad.add_argument("--no-mvlm", action="store_true", help="drop the masking loss")
    ad.add_argument("--no-div", action="store_true", help="drop the diversity loss")
    ad.add_argument("--no-ce", action="store_true", help="drop the pseudo-label loss")
    ad.add_argument("--epochs", type=int, default=None)
    ad.add_argument("--lr", type=float, default=None)
    ad.add_argument("--checkpoint", type=str, default=None, help="source checkpoint path")

    ev = sub.add_parser("eval", parents=[common], help="score a checkpoint on a split")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--split", choices=_SPLITS, default="target")

    ca = sub.add_parser("calibrate", parents=[common], help="calibration report + exports")
    ca.add_argument("--checkpoint", required=True)
    ca.add_argument("--checkpoint-after", default=None, help="second checkpoint for a before/after pair")
    ca.add_argument("--split", choices=_SPLITS, default="target")

    sw = sub.add_parser("sweep", parents=[common], help="lr/weight-decay/gamma grid on source-val")
    sw.add_argument("--checkpoint", default=None)
    return p


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    config = load_run_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if args.out is not None:
        config = replace(config, out_dir=args.out)
    return config


def _adapt_overrides(args: argparse.Namespace) -> dict:
    over: dict = {}
    if args.method is not None:
        over["method"] = args.method
    if args.gamma is not None:
        over["gamma"] = args.gamma
    if args.conf is not None:
        over["conf_threshold"] = args.conf
    if args.select is not None:
        over["select"] = args.select
    if args.no_mvlm:
        over["use_mvlm"] = False
    if args.no_div:
        over["use_div"] = False
    if args.no_ce:
        over["use_ce"] = False
    if args.epochs is not None:
        over["epochs"] = args.epochs
    if args.lr is not None:
        over["lr"] = args.lr
    return over


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    config = _resolve_config(args)

    if args.command == "gen-data":
        summary = cmd_gen_data(config)
    elif args.command == "train-source":
        if args.on is not None:
            config = replace(config, train=replace(config.train, train_on=args.on))
        ckpt, record = cmd_train_source(config)
        summary = {"checkpoint": str(ckpt), "run_id": record.run_id,
                   "final_metrics": record.final_metrics}
    elif args.command == "adapt":
        config = replace(config, adapt=replace(config.adapt, **_adapt_overrides(args)))
        ckpt, record = cmd_adapt(config, args.checkpoint)
        summary = {"checkpoint": str(ckpt), "run_id": record.run_id,
                   "metrics_before": record.metrics_before,
                   "final_metrics": record.final_metrics}
    elif args.command == "eval":
        record = cmd_eval(config, args.checkpoint, split=args.split)
        summary = {"run_id": record.run_id, "final_metrics": record.final_metrics}
    elif args.command == "calibrate":
        reports = cmd_calibrate(
            config, args.checkpoint, args.checkpoint_after, split=args.split
        )
        summary = {tag: {"ece": r.ece, "overall_accuracy": r.overall_accuracy}
                   for tag, r in reports.items()}
    elif args.command == "sweep":
        result = cmd_sweep(config, args.checkpoint)
        summary = {"best": result["best"], "n_configs": len(result["grid"])}
    else:  # pragma: no cover - argparse enforces the choices
        raise ValueError(args.command)

    print(json.dumps(summary, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
