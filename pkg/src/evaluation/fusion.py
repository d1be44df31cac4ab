"""
Evaluation-time fusion of the segmentation and classification branches.

Segmentation maps are C x H x W (or N x C x H x W) probabilities; class probabilities
are a length-C vector (or N x C). Channels are zeroed, never renormalized: argmax is the
only consumer.
"""
from typing import List, Optional, Sequence, Tuple, Union

import torch

from ..shared.config import REFERENCE_AREA
from ..shared.errors import ShapeMismatchError
from ..shared.models import BACKGROUND_CLASS
from .metrics import ConfusionMatrix


Thresholds = Union[int, Sequence[int], torch.Tensor]


def _batched(seg: torch.Tensor) -> Tuple[torch.Tensor, bool]:
    if seg.ndim == 3:
        return seg.unsqueeze(0), True
    if seg.ndim == 4:
        return seg, False
    raise ShapeMismatchError(f"expected C x H x W or N x C x H x W maps, got {tuple(seg.shape)}")


def fused_labels(seg: torch.Tensor) -> torch.Tensor:
    """Per-pixel argmax over the class axis (lowest index on ties)."""
    return seg.argmax(dim=-3)


def fuse(seg: torch.Tensor, class_probs: torch.Tensor, tau: float) -> torch.Tensor:
    """Zero channel c wherever class_probs[c] <= tau, except the background channel."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    batch, squeeze = _batched(seg)
    probs = class_probs.unsqueeze(0) if class_probs.ndim == 1 else class_probs
    if probs.shape != batch.shape[:2]:
        raise ShapeMismatchError(
            f"class probabilities {tuple(class_probs.shape)} do not match maps {tuple(seg.shape)}")
    keep = probs > tau
    keep[:, BACKGROUND_CLASS] = True
    fused = torch.where(keep[:, :, None, None], batch, torch.zeros_like(batch))
    return fused[0] if squeeze else fused


def _per_class_thresholds(thresholds: Thresholds, num_classes: int) -> torch.Tensor:
    values = torch.as_tensor(thresholds, dtype=torch.long)
    if values.ndim == 0:
        values = values.repeat(num_classes)
    if values.shape != (num_classes,):
        raise ShapeMismatchError(f"expected {num_classes} thresholds, got {tuple(values.shape)}")
    if (values < 0).any():
        raise ValueError("pixel-count thresholds must be nonnegative")
    return values


def fuse_pixel_threshold(seg: torch.Tensor, thresholds: Thresholds) -> torch.Tensor:
    """Zero the channel of every non-background class predicted on fewer pixels than its threshold."""
    batch, squeeze = _batched(seg)
    num_classes = batch.shape[1]
    limits = _per_class_thresholds(thresholds, num_classes)
    labels = fused_labels(batch).reshape(batch.shape[0], -1)
    counts = torch.stack([torch.bincount(row, minlength=num_classes) for row in labels])
    keep = counts >= limits.unsqueeze(0)
    keep[:, BACKGROUND_CLASS] = True
    fused = torch.where(keep[:, :, None, None], batch, torch.zeros_like(batch))
    return fused[0] if squeeze else fused


def pixel_threshold_candidates(image_area: int, steps: int = 12, step: int = 1000,
                               reference_area: int = REFERENCE_AREA) -> List[int]:
    """The 1K..12K pixel-count sweep rescaled from 321x321 crops to `image_area` pixels."""
    scale = image_area / reference_area
    return [int(round(k * step * scale)) for k in range(1, steps + 1)]


def _miou_of(fused: torch.Tensor, masks: torch.Tensor, num_classes: int) -> float:
    return ConfusionMatrix(num_classes).update(fused_labels(fused), masks).miou()


def search_classwise_thresholds(seg: torch.Tensor, masks: torch.Tensor,
                                candidates: Sequence[int],
                                initial: Optional[Sequence[int]] = None
                                ) -> Tuple[List[int], float]:
    """Coordinate-wise search: per foreground class keep the candidate with the best mIoU.

    Ties go to the smaller threshold. Returns the thresholds (background fixed at 0)
    and the mIoU they reach on (seg, masks).
    """
    if not candidates:
        raise ValueError("need at least one candidate threshold")
    num_classes = seg.shape[-3]
    current = list(initial) if initial is not None else [0] * num_classes
    current[BACKGROUND_CLASS] = 0
    best_score = _miou_of(fuse_pixel_threshold(seg, current), masks, num_classes)
    for c in range(num_classes):
        if c == BACKGROUND_CLASS:
            continue
        for value in sorted(candidates):
            trial = list(current)
            trial[c] = value
            score = _miou_of(fuse_pixel_threshold(seg, trial), masks, num_classes)
            if score > best_score:
                best_score, current = score, trial
    return current, best_score
