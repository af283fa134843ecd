"""Command-line front end.

    perceptual-attack --model toy/model.json --image-dir toy/images \\
        --lambda 10 --out-csv runs.csv --out-json summary.json
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .engine import DYNAMIC, LR_SCHEDULES, AttackConfig
from .distribution import GRAD_MODES
from .harness import ExperimentConfig, run_batch
from .image import BoundingBox
from .metrics import MetricKind
from .oracle import OracleSpec

log = logging.getLogger("perceptual_attack")


def _lambda(text: str):
    if text == DYNAMIC:
        return DYNAMIC
    value = float(text)
    if value < 0:
        raise argparse.ArgumentTypeError("lambda must be >= 0")
    return value


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="perceptual-attack",
        description="Black-box attack that learns a tile noise distribution under a "
        "perceptual-distance penalty.",
    )
    target = p.add_mutually_exclusive_group(required=True)
    target.add_argument("--model", type=Path, help="weights JSON for the built-in classifier")
    target.add_argument("--oracle-cmd", help="command line of an external oracle process")
    p.add_argument("--num-classes", type=int, help="expected logit count (external oracle)")

    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--image", type=Path, action="append", help="PNG to attack (repeatable)")
    src.add_argument("--image-dir", type=Path, help="attack every *.png in this directory")

    p.add_argument("--eps", type=float, default=0.05, help="l-infinity bound (default 0.05)")
    p.add_argument("--n-freq", type=int, default=1, help="sampling frequency N (1..12)")
    p.add_argument("--q", type=float, default=0.01, help="fraction of tiles redrawn per step")
    p.add_argument("--lambda", dest="lam", type=_lambda, default=10.0,
                   help='perceptual weight, or "dynamic" for the line search')
    p.add_argument("--metric", default="ssim", choices=("ssim", "ciede2000", "l0", "l1", "l2"))
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--lr-schedule", default="constant", choices=LR_SCHEDULES)
    p.add_argument("--tile", type=int, default=2, help="tile size in pixels")
    p.add_argument("--max-queries", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repeats", type=int, default=1, help="seeds seed..seed+repeats-1 per image")
    p.add_argument("--mask", type=Path,
                   help='bounding-box JSON {"x0","y0","x1","y1"} or {image_name: box}')
    p.add_argument("--grad-mode", default="full_categorical", choices=GRAD_MODES)
    p.add_argument("--out-csv", type=Path)
    p.add_argument("--out-json", type=Path)
    p.add_argument("--adv-dir", type=Path, help="write adversarial PNGs here")
    p.add_argument("--trace-dir", type=Path, help="write per-run best-loss traces here")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--no-wall-time", action="store_true",
                   help="leave wall_time empty so repeated runs give identical CSVs")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def load_masks(path: Path):
    with open(path) as fh:
        data = json.load(fh)
    if "x0" in data:
        return BoundingBox.from_dict(data)
    return {name: BoundingBox.from_dict(box) for name, box in data.items()}


def config_from_args(args) -> ExperimentConfig:
    if args.image_dir is not None:
        images = sorted(args.image_dir.glob("*.png"))
        if not images:
            raise ValueError(f"no PNG files in {args.image_dir}")
    else:
        images = list(args.image)
    if args.repeats < 1:
        raise ValueError("--repeats must be >= 1")
    attack = AttackConfig(
        eps=args.eps,
        n_freq=args.n_freq,
        q=args.q,
        lam=args.lam,
        lr=args.lr,
        lr_schedule=args.lr_schedule,
        tile_size=args.tile,
        metric=MetricKind.parse(args.metric, args.eps),
        max_queries=args.max_queries,
        seed=args.seed,
        grad_mode=args.grad_mode,
    )
    oracle = (
        OracleSpec(weights=args.model)
        if args.model is not None
        else OracleSpec(command=args.oracle_cmd, num_classes=args.num_classes)
    )
    return ExperimentConfig(
        images=images,
        oracle=oracle,
        attack=attack,
        seeds=tuple(range(args.seed, args.seed + args.repeats)),
        masks=load_masks(args.mask) if args.mask else None,
        out_csv=args.out_csv,
        out_json=args.out_json,
        adv_dir=args.adv_dir,
        trace_dir=args.trace_dir,
        record_wall_time=not args.no_wall_time,
        workers=args.workers,
    )


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = config_from_args(args)
        records, stats = run_batch(config)
    except (ValueError, OSError) as exc:
        print(f"perceptual-attack: {exc}", file=sys.stderr)
        return 2
    print(
        f"runs={stats.runs} success_rate={stats.success_rate:.3f} "
        f"avg_queries={stats.avg_queries:.1f} errors={stats.errors}"
    )
    return 0 if stats.errors == 0 else 1


if __name__ == "__main__":
    sys.exit(main())
