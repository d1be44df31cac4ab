"""
Main entry point for the semi-supervised segmentation framework.

    python -m src.main --mode train --config config/default.cfg --max-iter 200
    python -m src.main --mode eval --checkpoint runs/default/final
    python -m src.main --mode ablation --preset loss_terms
"""
import argparse
import sys
from typing import Any, Dict, List, Optional

import structlog
import torch

from .shared.config import load_config, parse_assignments, read_config_file
from .shared.errors import ConfigError
from .shared.logging_config import RuntimeSettings, configure_logging
from .shared.models import FusionMode


logger = structlog.get_logger(__name__)

# CLI flag -> config key
FLAG_KEYS = {
    "labeled_ratio": "labeled_ratio",
    "lambda_fm": "lambda_fm",
    "lambda_st": "lambda_st",
    "lambda_cons": "lambda_cons",
    "gamma": "gamma",
    "tau": "tau",
    "ema_decay": "ema_decay",
    "seed": "seed",
    "max_iter": "max_iter",
    "resume": "resume",
    "fusion": "fusion",
    "output_dir": "output_dir",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="semiseg",
        description="Semi-supervised semantic segmentation with a GAN branch and a "
                    "multi-label Mean Teacher branch",
    )
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--mode", choices=["train", "eval", "ablation"], default="train")
    parser.add_argument("--labeled-ratio", type=float)
    parser.add_argument("--lambda-fm", type=float)
    parser.add_argument("--lambda-st", type=float)
    parser.add_argument("--lambda-cons", type=float)
    parser.add_argument("--gamma", type=float)
    parser.add_argument("--tau", type=float)
    parser.add_argument("--ema-decay", type=float)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--max-iter", type=int)
    parser.add_argument("--resume", metavar="PATH", help="checkpoint directory to continue from")
    parser.add_argument("--fusion", choices=[m.value for m in FusionMode])
    parser.add_argument("--preset", help="ablation preset from config/experiments.yaml")
    parser.add_argument("--checkpoint", metavar="PATH", help="checkpoint directory to evaluate")
    parser.add_argument("--split", choices=["val", "train"], default="val")
    parser.add_argument("--output-dir")
    parser.add_argument("--set", dest="assignments", action="append", default=[],
                        metavar="KEY=VALUE", help="override any config key (repeatable)")
    return parser


def collect_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    """Config file values, then --set assignments, then dedicated flags."""
    values: Dict[str, Any] = {}
    if args.config:
        values.update(read_config_file(args.config))
    values.update(parse_assignments(args.assignments))
    for attr, key in FLAG_KEYS.items():
        value = getattr(args, attr)
        if value is not None:
            values[key] = value
    return values


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    settings = RuntimeSettings()
    configure_logging(settings)
    if settings.torch_threads > 0:
        torch.set_num_threads(settings.torch_threads)

    # imported late so that --help stays fast
    from .orchestrator import run_ablation, run_eval, run_train

    try:
        overrides = collect_overrides(args)
        if args.mode == "ablation":
            if not args.preset:
                raise ConfigError("--mode ablation needs --preset")
            rows = run_ablation(args.preset, overrides)
            for row in rows:
                median = "n/a" if row.median_miou is None else f"{row.median_miou:.4f}"
                extra = " ".join(f"{k}={v:.4f}" for k, v in sorted(row.extra.items()) if v is not None)
                print(f"{row.rank:>2}  {row.name:<32} {median}  {extra}")
            return 0

        if args.mode == "eval":
            # the evaluated modes come from --fusion, not from the training key
            overrides.pop("fusion", None)
        config = load_config(overrides=overrides)
        if args.mode == "train":
            result = run_train(config)
            print(f"checkpoint: {result.checkpoint}")
            print(f"metrics:    {result.metrics_path}")
            return 0

        if not args.checkpoint:
            raise ConfigError("--mode eval needs --checkpoint")
        modes = [args.fusion] if args.fusion else None
        report = run_eval(config, args.checkpoint, split=args.split, modes=modes)
        for row in report.rows:
            detail = row.threshold if row.threshold is not None else (row.thresholds or "")
            print(f"{row.mode.value:<28} {row.miou:.4f}  {detail}")
        return 0
    except (ValueError, FileNotFoundError) as e:
        logger.error("run_failed", mode=args.mode, error=str(e))
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
