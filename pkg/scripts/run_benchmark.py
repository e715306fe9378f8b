#!/usr/bin/env python3
"""Multi-seed adaptation benchmark driver.

Runs data generation, source training, and every requested adaptation method
for each seed, then writes a summary with per-seed and mean metrics under the
config's out_dir. Typical use:

    python scripts/run_benchmark.py --config configs/shift_large.json \
        --methods doctta,tent --confidence-ablation
    python scripts/run_benchmark.py --config configs/shift_small.json \
        --methods doctta,docuda
"""

import argparse
import json
from dataclasses import replace

import torch

from docadapt.harness import load_run_config, run_benchmark


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", required=True, help="RunConfig JSON path")
    parser.add_argument("--seeds", default="0,1,2,3,4", help="comma-separated seeds")
    parser.add_argument(
        "--methods", default="doctta,tent",
        help="comma-separated adaptation methods to run per seed",
    )
    parser.add_argument(
        "--confidence-ablation", action="store_true",
        help="also run doctta with confidence-threshold selection",
    )
    parser.add_argument("--out", default=None, help="override config out_dir")
    parser.add_argument("--threads", type=int, default=1)
    args = parser.parse_args()

    torch.set_num_threads(args.threads)
    config = load_run_config(args.config)
    if args.out:
        config = replace(config, out_dir=args.out)
    seeds = [int(s) for s in args.seeds.split(",") if s]
    methods = [m for m in args.methods.split(",") if m]
    summary = run_benchmark(
        config, seeds, methods, confidence_ablation=args.confidence_ablation
    )
    print(json.dumps(summary["mean"], sort_keys=True, indent=2))
    if "ece_improved_seeds" in summary:
        print(f"ece improved on {summary['ece_improved_seeds']}/{len(seeds)} seeds")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
