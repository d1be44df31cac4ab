"""
Checkpoint evaluation: mIoU of every requested fusion mode on one split.
"""
import csv
import json
from pathlib import Path
from typing import List, Optional, Sequence, Union

import structlog

from ..evaluation.evaluator import Predictions, collect_predictions, evaluate_modes
from ..shared.config import RunConfig
from ..shared.errors import IncompatibleCheckpointError
from ..shared.models import EvalReport, FusionMode, SegmentationSample
from ..shared.state import CheckpointManager
from .training import build_bundle, fusion_classifiers, load_data


logger = structlog.get_logger(__name__)

SPLITS = ("val", "train")


def available_modes(preds: Predictions) -> List[FusionMode]:
    modes = [FusionMode.NONE]
    if "mlmt" in preds.class_probs:
        modes.append(FusionMode.MLMT)
    if "cnn" in preds.class_probs:
        modes.append(FusionMode.CNN)
    modes += [FusionMode.PIXEL_THRESHOLD, FusionMode.CLASSWISE_PIXEL_THRESHOLD]
    return modes


def load_checkpoint_models(checkpoint: Union[str, Path], expected_classes: int):
    """Rebuild the networks a checkpoint was trained with and load its parameters."""
    header = CheckpointManager.read_header(checkpoint)
    if header.num_classes != expected_classes:
        raise IncompatibleCheckpointError(
            f"checkpoint has {header.num_classes} classes, config expects {expected_classes}")
    trained = RunConfig.model_validate(header.config)
    bundle = build_bundle(trained)
    CheckpointManager(Path(checkpoint).parent).load(bundle, checkpoint)
    return trained, bundle


def split_samples(config: RunConfig, split: str) -> List[SegmentationSample]:
    if split not in SPLITS:
        raise ValueError(f"Unknown split '{split}'. Valid splits: {', '.join(SPLITS)}")
    train, val = load_data(config)
    return val if split == "val" else train


def write_report(report: EvalReport, output_dir: Union[str, Path]) -> Path:
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    with (output_dir / f"eval_{report.split}.csv").open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["mode", "miou", "threshold", "thresholds"])
        for row in report.rows:
            writer.writerow([
                row.mode.value, repr(row.miou),
                "" if row.threshold is None else row.threshold,
                "" if row.thresholds is None else ";".join(str(t) for t in row.thresholds),
            ])
    path = output_dir / f"eval_{report.split}.json"
    path.write_text(json.dumps(report.model_dump(mode="json"), indent=2))
    return path


def run_eval(config: RunConfig, checkpoint: Union[str, Path], split: str = "val",
             modes: Optional[Sequence[Union[str, FusionMode]]] = None) -> EvalReport:
    """Evaluate a checkpoint; without explicit modes every applicable mode is scored."""
    requested = [FusionMode(m) for m in modes] if modes else None
    trained, bundle = load_checkpoint_models(checkpoint, config.num_classes)
    samples = split_samples(config, split)
    preds = collect_predictions(bundle.generator, samples,
                                fusion_classifiers(bundle, config.use_teacher))
    rows = evaluate_modes(preds, requested or available_modes(preds), config.tau,
                          config.image_size * config.image_size)
    report = EvalReport(checkpoint=str(checkpoint), split=split, rows=rows)
    for row in rows:
        logger.info("eval_result", mode=row.mode.value, miou=round(row.miou, 4),
                    threshold=row.threshold, thresholds=row.thresholds)
    write_report(report, config.output_dir)
    return report
