"""polyp-trainer CLI: train, export-scores, gradcam."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .export import export_scores
from .gradcam import render_gradcam
from .train import Hyperparams, train

log = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="polyp-trainer")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fine-tune ResNet-18 on a patch manifest")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--epochs", type=int, default=250)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--learning-rate", type=float, default=1e-4)
    p.add_argument("--weight-decay", type=float, default=1e-4)
    p.add_argument("--lr-decay", type=float, default=0.99)
    p.add_argument("--gamma", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=0)
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--no-pretrained", action="store_true",
                   help="random init (e.g. when the weight host is unreachable)")
    p.add_argument("--no-deterministic", action="store_true",
                   help="trade reproducibility for speed")
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("export-scores", help="score manifest patches to CSV")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--scores-out", type=Path, required=True)
    p.add_argument("--split", choices=["train", "val", "test", "all"], default="all")
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("gradcam", help="class-activation overlay for one patch PNG")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--patch", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--target-class", type=int, default=None)
    p.add_argument("--json", action="store_true")

    return parser


def emit(args, summary: dict, line: str) -> None:
    if args.json:
        print(json.dumps(summary, sort_keys=True))
    else:
        print(line)


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("POLYP_TRAINER_LOG", "INFO").upper(), stream=sys.stderr
    )
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            hp = Hyperparams(
                learning_rate=args.learning_rate,
                weight_decay=args.weight_decay,
                lr_decay=args.lr_decay,
                batch_size=args.batch_size,
                epochs=args.epochs,
                gamma=args.gamma,
                seed=args.seed,
                num_workers=args.workers,
                deterministic=not args.no_deterministic,
                pretrained=not args.no_pretrained,
                augment=not args.no_augment,
            )
            summary = train(args.manifest, args.out, hp)
            emit(
                args,
                summary,
                f"best epoch {summary['best_epoch']} "
                f"(val balanced accuracy {summary['best_val_balanced_accuracy']:.4f}) "
                f"-> {summary['checkpoint']}",
            )
        elif args.command == "export-scores":
            split = None if args.split == "all" else args.split
            summary = export_scores(args.checkpoint, args.manifest, args.scores_out, split)
            emit(args, summary, f"wrote {summary['rows']} rows to {summary['scores']}")
        elif args.command == "gradcam":
            summary = render_gradcam(args.checkpoint, args.patch, args.out, args.target_class)
            emit(args, summary, f"overlay -> {summary['overlay']}")
        return 0
    except (ValueError, FileNotFoundError) as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
