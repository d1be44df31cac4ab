"""
Data models for the semi-supervised segmentation framework.
"""
import warnings
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import torch
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


BACKGROUND_CLASS = 0


class TrainingMode(str, Enum):
    """Which branches and losses a training run uses."""
    SEMI = "semi"
    SUPERVISED_ONLY = "supervised_only"


class FusionMode(str, Enum):
    """How segmentation maps are post-filtered at evaluation time."""
    NONE = "none"
    MLMT = "mlmt"
    CNN = "cnn"
    PIXEL_THRESHOLD = "pixel_threshold"
    CLASSWISE_PIXEL_THRESHOLD = "classwise_pixel_threshold"


class FeatureNorm(str, Enum):
    """Distance used by the feature-matching loss."""
    L1 = "l1"
    L2 = "l2"


class GeneratorLoss(str, Enum):
    """Adversarial term of the segmentation objective."""
    FM = "fm"
    SGAN = "sgan"


class ClassifierLoss(str, Enum):
    """Supervised term of the multi-label objective."""
    CCE = "cce"
    BCE = "bce"


class _TensorModel(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


class SegmentationSample(_TensorModel):
    """Image with optional dense mask and optional image-level class vector."""
    sample_id: str
    image: torch.Tensor  # 3 x H x W, float in [0, 1]
    mask: Optional[torch.Tensor] = None  # H x W, int64 class indices
    class_vector: Optional[torch.Tensor] = None  # C, {0, 1}

    @field_validator("image")
    @classmethod
    def image_is_rgb_unit_range(cls, v: torch.Tensor) -> torch.Tensor:
        if v.ndim != 3 or v.shape[0] != 3:
            raise ValueError(f"image must be 3xHxW, got {tuple(v.shape)}")
        if v.numel() and (v.min() < 0 or v.max() > 1):
            raise ValueError("image values must lie in [0, 1]")
        return v

    @model_validator(mode="after")
    def mask_agrees_with_classes(self) -> "SegmentationSample":
        if self.mask is not None:
            if tuple(self.mask.shape) != tuple(self.image.shape[1:]):
                raise ValueError("mask shape must equal image spatial shape")
            if self.mask.numel() and self.mask.min() < 0:
                raise ValueError("mask entries must be nonnegative")
        if self.mask is not None and self.class_vector is not None:
            num_classes = self.class_vector.numel()
            if self.mask.numel() and int(self.mask.max()) >= num_classes:
                raise ValueError("mask holds a class index >= len(class_vector)")
            present = torch.zeros(num_classes, dtype=self.class_vector.dtype)
            present[torch.unique(self.mask)] = 1
            present[BACKGROUND_CLASS] = 1
            if not torch.equal(present, self.class_vector):
                raise ValueError("class_vector does not match the classes in mask")
        return self

    @property
    def num_classes(self) -> Optional[int]:
        return None if self.class_vector is None else self.class_vector.numel()


class SplitPlan(BaseModel):
    """Deterministic labeled / weak / unlabeled partition of a dataset."""
    labeled_ids: List[str]
    unlabeled_ids: List[str]
    weak_ids: List[str] = Field(default_factory=list)
    ratio: float = Field(..., gt=0, le=1)
    weak_fraction: float = Field(0.0, ge=0, le=1)
    seed: int

    @model_validator(mode="after")
    def lists_are_disjoint(self) -> "SplitPlan":
        groups = [set(self.labeled_ids), set(self.unlabeled_ids), set(self.weak_ids)]
        if sum(len(g) for g in groups) != len(set().union(*groups)):
            raise ValueError("labeled, unlabeled and weak ids must be disjoint")
        return self

    @property
    def all_ids(self) -> List[str]:
        return self.labeled_ids + self.weak_ids + self.unlabeled_ids

    @property
    def class_labeled_ids(self) -> List[str]:
        """Ids whose image-level labels the classifier may use."""
        return self.labeled_ids + self.weak_ids


class HyperParams(BaseModel):
    """Scalar knobs of both branches in one validated record."""
    lambda_fm: float = Field(0.1, ge=0)
    lambda_st: float = Field(1.0, ge=0)
    lambda_cons: float = Field(1.0, ge=0)
    gamma: float = Field(0.6, ge=0, le=1)
    tau: float = Field(0.2, ge=0, le=1)
    lr_seg: float = Field(2.5e-4, gt=0)
    lr_disc: float = Field(1e-4, gt=0)
    lr_cls: float = Field(1e-3, gt=0)
    pow: float = Field(0.9, gt=0)
    max_iter: int = Field(35000, gt=0)
    batch_size: int = Field(8, gt=0)
    mlmt_max_iter: Optional[int] = Field(None, gt=0)
    mlmt_batch_size: Optional[int] = Field(None, gt=0)
    ema_decay: float = Field(0.99, ge=0, le=1)
    momentum: float = Field(0.9, ge=0, lt=1)
    weight_decay: float = Field(5e-4, ge=0)
    disc_betas: Tuple[float, float] = (0.9, 0.99)
    fm_norm: FeatureNorm = FeatureNorm.L1
    generator_loss: GeneratorLoss = GeneratorLoss.FM
    cls_loss: ClassifierLoss = ClassifierLoss.CCE
    seed: int = 0

    @field_validator("gamma")
    @classmethod
    def warn_on_weak_gate(cls, v: float) -> float:
        if v < 0.5:
            warnings.warn(
                f"gamma={v} is below chance level; the self-training gate will admit "
                "arbitrary pseudo-labels",
                UserWarning,
                stacklevel=2,
            )
        return v

    @property
    def classifier_max_iter(self) -> int:
        return self.mlmt_max_iter or self.max_iter

    @property
    def classifier_batch_size(self) -> int:
        return self.mlmt_batch_size or self.batch_size


class AugmentConfig(BaseModel):
    """Small perturbations applied to classifier views."""
    flip: bool = True
    noise_sigma: float = Field(0.02, ge=0)
    crop: bool = True
    crop_min_area: float = Field(0.9, gt=0, le=1)


class AugmentedPair(_TensorModel):
    """Student and teacher views of one source image."""
    view_a: torch.Tensor
    view_b: torch.Tensor
    provenance: str

    @model_validator(mode="after")
    def views_share_shape(self) -> "AugmentedPair":
        if self.view_a.shape != self.view_b.shape:
            raise ValueError("view_a and view_b must have equal shapes")
        return self


class PseudoLabel(_TensorModel):
    """Argmax labeling of a prediction admitted by the discriminator gate."""
    mask: torch.Tensor  # H x W int64
    confidence: float = Field(..., ge=0, le=1)


class S4GanLosses(BaseModel):
    """Loss record of one s4GAN iteration."""
    ce: float = Field(..., ge=0)
    fm: float = Field(0.0, ge=0)
    st: float = Field(0.0, ge=0)
    total: float
    d_loss: Optional[float] = None
    d_real_mean: Optional[float] = None
    d_fake_mean: Optional[float] = None
    admitted: int = 0


class MlmtLosses(BaseModel):
    """Loss record of one Mean-Teacher iteration."""
    total: float
    cce: float = Field(..., ge=0)
    cons: float = Field(..., ge=0)


METRICS_HEADER = [
    "iter", "lr", "loss_ce", "loss_fm", "loss_st", "loss_d",
    "loss_cce", "loss_cons", "d_real_mean", "d_fake_mean", "miou_val",
]


class MetricRecord(BaseModel):
    """One row of the training metrics CSV."""
    iter: int = Field(..., ge=0)
    lr: Optional[float] = None
    loss_ce: Optional[float] = None
    loss_fm: Optional[float] = None
    loss_st: Optional[float] = None
    loss_d: Optional[float] = None
    loss_cce: Optional[float] = None
    loss_cons: Optional[float] = None
    d_real_mean: Optional[float] = None
    d_fake_mean: Optional[float] = None
    miou_val: Optional[float] = None


class ManifestRecord(BaseModel):
    """One line of a dataset manifest."""
    id: str
    image: str  # raster path relative to the manifest, or a "synth://seed/index" reference
    mask: Optional[str] = None
    classes: Optional[List[int]] = None


class SceneSpec(BaseModel):
    """Parameters of the synthetic shapes benchmark."""
    resolution: Tuple[int, int] = (64, 64)
    num_classes: int = Field(5, ge=2)
    shapes_per_scene: Tuple[int, int] = (1, 3)
    radius_range: Tuple[int, int] = (6, 14)
    texture_sigma: float = Field(0.08, ge=0)
    color_jitter: float = Field(0.12, ge=0)
    min_class_pixels: int = Field(16, ge=1)
    seed: int = 0

    @field_validator("shapes_per_scene", "radius_range")
    @classmethod
    def range_is_ordered(cls, v: Tuple[int, int]) -> Tuple[int, int]:
        if v[0] < 0 or v[0] > v[1]:
            raise ValueError(f"invalid range {v}")
        return v


class TraceRow(BaseModel):
    """Discriminator scores averaged over one window of iterations."""
    window_start: int
    mean_real: Optional[float] = None
    mean_fake: Optional[float] = None


class CheckpointHeader(BaseModel):
    """Structured header stored next to the parameter blobs."""
    iteration: int = Field(..., ge=0)
    hyperparams_hash: str
    num_classes: int
    networks: List[str]
    config: Dict[str, Any]
    trace: Dict[str, Any] = Field(default_factory=dict)


class EvalRow(BaseModel):
    """mIoU of one fusion setting."""
    mode: FusionMode
    miou: float
    threshold: Optional[int] = None
    thresholds: Optional[List[int]] = None


class EvalReport(BaseModel):
    """Result of evaluating a checkpoint on one split."""
    checkpoint: str
    split: str
    rows: List[EvalRow] = Field(default_factory=list)

    def best(self, mode: FusionMode) -> Optional[EvalRow]:
        candidates = [row for row in self.rows if row.mode == mode]
        return max(candidates, key=lambda row: row.miou) if candidates else None


class AblationRow(BaseModel):
    """One configuration of an ablation preset, aggregated over seeds."""
    rank: int = 0
    name: str
    median_miou: Optional[float] = None
    per_seed: List[float] = Field(default_factory=list)
    extra: Dict[str, float] = Field(default_factory=dict)
