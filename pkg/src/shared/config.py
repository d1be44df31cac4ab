"""
Run configuration: one flat record loaded from key=value files and CLI overrides.
"""
import hashlib
import json
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple, Union

import structlog
from dotenv import dotenv_values
from pydantic import ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError
from .models import AugmentConfig, FusionMode, HyperParams, SceneSpec, TrainingMode


logger = structlog.get_logger(__name__)

# Keys that steer a run without changing what is trained.
RUN_CONTROL_KEYS = frozenset({
    "stop_iter", "resume", "output_dir", "val_every", "ckpt_every", "fusion", "use_teacher",
    "parallel_branches",
})

# Pixel-count thresholds are quoted for 321x321 crops.
REFERENCE_AREA = 321 * 321


class RunConfig(HyperParams):
    """Every key a run accepts. Field names double as config-file keys."""
    model_config = ConfigDict(extra="forbid")

    training_mode: TrainingMode = TrainingMode.SEMI
    labeled_ratio: float = Field(0.05, gt=0, le=1)
    weak_fraction: float = Field(0.0, ge=0, le=1)

    # data
    manifest: Optional[str] = None
    val_manifest: Optional[str] = None
    num_train: int = Field(1000, gt=0)
    num_val: int = Field(200, gt=0)
    image_size: int = Field(64, ge=16)
    num_classes: int = Field(5, ge=2)
    data_seed: int = 0
    shapes_per_scene: Tuple[int, int] = (1, 3)

    # networks
    seg_widths: List[int] = Field(default_factory=lambda: [16, 32, 64])
    disc_widths: List[int] = Field(default_factory=lambda: [64, 128, 256, 512])
    disc_dropout: float = Field(0.5, ge=0, lt=1)
    cls_widths: List[int] = Field(default_factory=lambda: [16, 32, 64])

    # augmentation
    aug_flip: bool = True
    aug_noise_sigma: float = Field(0.02, ge=0)
    aug_crop: bool = True
    aug_crop_min_area: float = Field(0.9, gt=0, le=1)
    seg_flip: bool = True
    seg_crop: bool = True

    # branches and fusion
    mlmt_enabled: bool = True
    train_cnn_baseline: bool = False
    use_teacher: bool = True
    fusion: FusionMode = FusionMode.MLMT

    # run control
    val_every: int = Field(500, gt=0)
    ckpt_every: int = Field(1000, gt=0)
    stop_iter: Optional[int] = Field(None, gt=0)
    parallel_branches: bool = False
    output_dir: str = "runs/default"
    resume: Optional[str] = None

    @field_validator("seg_widths", "disc_widths", "cls_widths", "shapes_per_scene", "disc_betas",
                     mode="before")
    @classmethod
    def split_comma_list(cls, v: Any) -> Any:
        if isinstance(v, str):
            return [item.strip() for item in v.split(",") if item.strip()]
        return v

    @field_validator("seg_widths", "disc_widths", "cls_widths")
    @classmethod
    def widths_nonempty(cls, v: List[int]) -> List[int]:
        if not v or any(w <= 0 for w in v):
            raise ValueError("widths must be a nonempty list of positive integers")
        return v

    @model_validator(mode="after")
    def apply_training_mode(self) -> "RunConfig":
        if self.labeled_ratio + self.weak_fraction > 1:
            raise ValueError("labeled_ratio + weak_fraction must not exceed 1")
        if self.manifest and not self.val_manifest:
            raise ValueError("val_manifest is required when manifest is set")
        if self.training_mode == TrainingMode.SUPERVISED_ONLY:
            self.lambda_fm = 0.0
            self.lambda_st = 0.0
            self.mlmt_enabled = False
            self.train_cnn_baseline = False
        if not self.mlmt_enabled and self.fusion == FusionMode.MLMT:
            self.fusion = FusionMode.NONE
        if self.fusion == FusionMode.CNN and not self.train_cnn_baseline:
            raise ValueError("fusion=cnn needs train_cnn_baseline=true")
        return self

    @property
    def adversarial(self) -> bool:
        """Whether the discriminator takes part in training."""
        return self.training_mode == TrainingMode.SEMI and (
            self.lambda_fm > 0 or self.lambda_st > 0
        )

    def augment(self) -> AugmentConfig:
        return AugmentConfig(
            flip=self.aug_flip,
            noise_sigma=self.aug_noise_sigma,
            crop=self.aug_crop,
            crop_min_area=self.aug_crop_min_area,
        )

    def scene_spec(self) -> SceneSpec:
        return SceneSpec(
            resolution=(self.image_size, self.image_size),
            num_classes=self.num_classes,
            shapes_per_scene=self.shapes_per_scene,
            seed=self.data_seed,
        )

    def threshold_scale(self) -> float:
        """Factor mapping the reference pixel-count thresholds to this resolution."""
        return (self.image_size * self.image_size) / REFERENCE_AREA


def valid_keys() -> List[str]:
    return sorted(RunConfig.model_fields)


def _check_keys(keys: Iterable[str]) -> None:
    unknown = sorted(set(keys) - set(RunConfig.model_fields))
    if unknown:
        raise ConfigError(f"Unknown config key(s): {', '.join(unknown)}", valid_keys())


def read_config_file(path: Union[str, Path]) -> Dict[str, str]:
    """Parse a flat key=value file; blank values fall back to defaults."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")
    values = {k: v for k, v in dotenv_values(path).items() if v not in (None, "")}
    _check_keys(values)
    return values


def parse_assignments(assignments: Iterable[str]) -> Dict[str, str]:
    """Turn ["key=value", ...] into a dict."""
    parsed = {}
    for item in assignments:
        if "=" not in item:
            raise ConfigError(f"Expected KEY=VALUE, got '{item}'")
        key, value = item.split("=", 1)
        parsed[key.strip()] = value.strip()
    _check_keys(parsed)
    return parsed


def load_config(path: Optional[Union[str, Path]] = None,
                overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Build a RunConfig from defaults, an optional file and explicit overrides."""
    values: Dict[str, Any] = {}
    if path is not None:
        values.update(read_config_file(path))
    if overrides:
        _check_keys(overrides)
        values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        config = RunConfig(**values)
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration: {e}") from e
    logger.debug("config_loaded", source=str(path) if path else "defaults", keys=sorted(values))
    return config


def dump_config(config: RunConfig, path: Union[str, Path]) -> Path:
    """Write a config back out in the flat key=value format."""
    path = Path(path)
    lines = []
    for key, value in config.model_dump(mode="json").items():
        if value is None:
            continue
        if isinstance(value, (list, tuple)):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = str(value).lower()
        lines.append(f"{key}={value}")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    return path


def config_hash(config: RunConfig) -> str:
    """Hash of every key that influences training (run-control keys excluded)."""
    payload = config.model_dump(mode="json", exclude=set(RUN_CONTROL_KEYS))
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()
