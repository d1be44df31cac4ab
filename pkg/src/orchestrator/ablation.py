"""
Ablation presets: train each configuration of a preset over several seeds and rank them.
"""
import csv
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import structlog
import yaml
from pydantic import BaseModel, Field

from ..evaluation.evaluator import (
    Predictions,
    classifier_roc,
    collect_predictions,
    evaluate_modes,
)
from ..evaluation.metrics import write_trace_csv
from ..shared.config import load_config
from ..shared.errors import UndefinedMetricError
from ..shared.models import AblationRow, FusionMode
from .training import TrainingRun, fusion_classifiers


logger = structlog.get_logger(__name__)

DEFAULT_PRESETS_PATH = Path(__file__).resolve().parents[2] / "config" / "experiments.yaml"

# Keys a preset run decides for itself.
_RUN_OWNED_KEYS = {"seed", "output_dir", "resume", "stop_iter"}


class PresetDefaults(BaseModel):
    description: str = ""
    seeds: List[int] = Field(default_factory=lambda: [0, 1, 2])
    settings: Dict[str, Any] = Field(default_factory=dict)


class Preset(BaseModel):
    description: str = ""
    settings: Dict[str, Any] = Field(default_factory=dict)
    runs: Dict[str, Dict[str, Any]]
    modes: Optional[List[FusionMode]] = None
    traces: bool = False
    seeds: Optional[List[int]] = None


def load_presets(path: Optional[Union[str, Path]] = None) -> Tuple[PresetDefaults, Dict[str, Preset]]:
    path = Path(path or DEFAULT_PRESETS_PATH)
    if not path.exists():
        raise FileNotFoundError(f"Preset file not found: {path}")
    raw = yaml.safe_load(path.read_text()) or {}
    defaults = PresetDefaults(**(raw.pop("defaults", None) or {}))
    presets = {name: Preset(**(body or {})) for name, body in raw.items()}
    return defaults, presets


def _median(values: Sequence[float]) -> Optional[float]:
    return float(np.median(values)) if values else None


def _final_gap(trace) -> Optional[float]:
    for row in reversed(trace):
        if row.mean_real is not None and row.mean_fake is not None:
            return abs(row.mean_real - row.mean_fake)
    return None


def _roc_auc(preds: Predictions, name: str) -> Optional[float]:
    try:
        return classifier_roc(preds, name)[1]
    except UndefinedMetricError:
        # validation labels are all positive or all negative
        return None


def write_ablation_table(rows: Sequence[AblationRow], path: Path) -> Path:
    extra_keys = sorted({key for row in rows for key in row.extra})
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["rank", "name", "median_miou", "per_seed", *extra_keys])
        for row in rows:
            writer.writerow([
                row.rank, row.name,
                "" if row.median_miou is None else repr(row.median_miou),
                ";".join(repr(v) for v in row.per_seed),
                *["" if key not in row.extra else repr(row.extra[key]) for key in extra_keys],
            ])
    return path


def run_ablation(preset: str, overrides: Optional[Dict[str, Any]] = None,
                 seeds: Optional[Sequence[int]] = None,
                 presets_path: Optional[Union[str, Path]] = None) -> List[AblationRow]:
    """Run one preset and return its ranked rows (also written as CSV)."""
    defaults, presets = load_presets(presets_path)
    if preset not in presets:
        raise ValueError(f"Unknown preset '{preset}'. Valid presets: {', '.join(sorted(presets))}")
    spec = presets[preset]
    overrides = dict(overrides or {})
    root = Path(overrides.get("output_dir") or "runs/ablation") / preset
    user = {k: v for k, v in overrides.items() if k not in _RUN_OWNED_KEYS and v is not None}
    seeds = list(seeds if seeds is not None else (spec.seeds or defaults.seeds))
    log = logger.bind(preset=preset, seeds=seeds)
    log.info("ablation_started", runs=list(spec.runs), description=spec.description)

    scores: Dict[str, List[float]] = {}
    extras: Dict[str, Dict[str, List[float]]] = {}

    def add(name: str, miou: float, **extra: Optional[float]) -> None:
        scores.setdefault(name, []).append(miou)
        for key, value in extra.items():
            if value is not None:
                extras.setdefault(name, {}).setdefault(key, []).append(value)

    for run_name, run_settings in spec.runs.items():
        for seed in seeds:
            values = {**defaults.settings, **spec.settings, **user, **(run_settings or {})}
            values.update(seed=seed, output_dir=str(root / run_name / f"seed_{seed}"))
            config = load_config(overrides=values)
            run = TrainingRun(config)
            result = run.run()

            preds = collect_predictions(run.bundle.generator, run.data.val,
                                        fusion_classifiers(run.bundle, config.use_teacher))
            modes = spec.modes or [FusionMode(config.fusion)]
            rows = evaluate_modes(preds, modes, config.tau, config.image_size ** 2)
            for mode in modes:
                best = max((r for r in rows if r.mode == mode), key=lambda r: r.miou)
                name = run_name if len(modes) == 1 else (
                    mode.value if len(spec.runs) == 1 else f"{run_name}:{mode.value}")
                extra: Dict[str, Optional[float]] = {}
                if mode in (FusionMode.MLMT, FusionMode.CNN):
                    extra["roc_auc"] = _roc_auc(preds, mode.value)
                if spec.traces:
                    extra["final_gap"] = _final_gap(result.trace)
                add(name, best.miou, **extra)
            if spec.traces:
                write_trace_csv(result.trace, root / "traces" / f"{run_name}_seed{seed}.csv")
            log.info("ablation_run_done", run=run_name, seed=seed,
                     miou=round(max(r.miou for r in rows), 4))

    table = [
        AblationRow(
            name=name,
            median_miou=_median(values),
            per_seed=values,
            extra={key: _median(vals) for key, vals in extras.get(name, {}).items()},
        )
        for name, values in scores.items()
    ]
    table.sort(key=lambda row: -(row.median_miou if row.median_miou is not None else -1.0))
    ranked = [row.model_copy(update={"rank": i + 1}) for i, row in enumerate(table)]
    path = write_ablation_table(ranked, root / f"ablation_{preset}.csv")
    log.info("ablation_finished", table=str(path), rows=len(ranked))
    return ranked
