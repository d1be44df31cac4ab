"""
Predict a validation split once and score every fusion mode on the cached predictions.
"""
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import structlog
import torch
import torch.nn as nn

from ..branches.mlmt import classify
from ..branches.s4gan import segment
from ..shared.errors import EmptyInputError
from ..shared.models import EvalRow, FusionMode, SegmentationSample
from .fusion import (
    fuse,
    fuse_pixel_threshold,
    fused_labels,
    pixel_threshold_candidates,
    search_classwise_thresholds,
)
from .metrics import ConfusionMatrix, roc_auc, roc_curve


logger = structlog.get_logger(__name__)

CLASSIFIER_MODES = {FusionMode.MLMT: "mlmt", FusionMode.CNN: "cnn"}


@dataclass
class Predictions:
    """Segmentation maps, ground truth and classifier outputs of one split."""
    seg: torch.Tensor  # N x C x H x W
    masks: torch.Tensor  # N x H x W
    class_labels: torch.Tensor  # N x C
    class_probs: Dict[str, torch.Tensor] = field(default_factory=dict)  # name -> N x C

    @property
    def num_classes(self) -> int:
        return self.seg.shape[1]


@torch.no_grad()
def collect_predictions(generator: nn.Module, samples: Sequence[SegmentationSample],
                        classifiers: Optional[Mapping[str, nn.Module]] = None,
                        batch_size: int = 32) -> Predictions:
    if not samples:
        raise EmptyInputError("cannot evaluate an empty split")
    if any(s.mask is None for s in samples):
        raise ValueError("evaluation samples need ground-truth masks")
    classifiers = dict(classifiers or {})
    generator.eval()
    for clf in classifiers.values():
        clf.eval()
    seg_parts, prob_parts = [], {name: [] for name in classifiers}
    for start in range(0, len(samples), batch_size):
        images = torch.stack([s.image for s in samples[start:start + batch_size]])
        seg_parts.append(segment(generator, images))
        for name, clf in classifiers.items():
            prob_parts[name].append(classify(clf, images))
    masks = torch.stack([s.mask for s in samples])
    num_classes = seg_parts[0].shape[1]
    labels = torch.stack([
        s.class_vector if s.class_vector is not None
        else torch.zeros(num_classes, dtype=torch.long)
        for s in samples
    ])
    return Predictions(
        seg=torch.cat(seg_parts),
        masks=masks,
        class_labels=labels,
        class_probs={name: torch.cat(parts) for name, parts in prob_parts.items()},
    )


def _miou(maps: torch.Tensor, masks: torch.Tensor, num_classes: int) -> float:
    return ConfusionMatrix(num_classes).update(fused_labels(maps), masks).miou()


def evaluate_modes(preds: Predictions, modes: Iterable[FusionMode], tau: float,
                   image_area: int) -> List[EvalRow]:
    """One row per mode; pixel_threshold yields one row per candidate threshold."""
    rows: List[EvalRow] = []
    c = preds.num_classes
    for mode in modes:
        mode = FusionMode(mode)
        if mode == FusionMode.NONE:
            rows.append(EvalRow(mode=mode, miou=_miou(preds.seg, preds.masks, c)))
        elif mode in CLASSIFIER_MODES:
            name = CLASSIFIER_MODES[mode]
            if name not in preds.class_probs:
                raise ValueError(f"fusion mode '{mode.value}' needs a '{name}' classifier")
            fused = fuse(preds.seg, preds.class_probs[name], tau)
            rows.append(EvalRow(mode=mode, miou=_miou(fused, preds.masks, c)))
        elif mode == FusionMode.PIXEL_THRESHOLD:
            for threshold in pixel_threshold_candidates(image_area):
                fused = fuse_pixel_threshold(preds.seg, threshold)
                rows.append(EvalRow(mode=mode, miou=_miou(fused, preds.masks, c),
                                    threshold=threshold))
        elif mode == FusionMode.CLASSWISE_PIXEL_THRESHOLD:
            thresholds, score = search_classwise_thresholds(
                preds.seg, preds.masks, pixel_threshold_candidates(image_area))
            rows.append(EvalRow(mode=mode, miou=score, thresholds=thresholds))
        logger.debug("fusion_scored", mode=mode.value, rows=len(rows))
    return rows


def classifier_roc(preds: Predictions, name: str) -> Tuple[List[Tuple[float, float]], float]:
    """ROC points and area of one classifier over every (sample, class) decision."""
    if name not in preds.class_probs:
        raise ValueError(f"no '{name}' classifier outputs to score")
    scores = list(zip(preds.class_probs[name], preds.class_labels))
    points = roc_curve(scores)
    return points, roc_auc(points)
