"""
Evaluation: branch fusion and metrics.
"""
from .fusion import (
    fuse,
    fuse_pixel_threshold,
    fused_labels,
    pixel_threshold_candidates,
    search_classwise_thresholds,
)
from .metrics import (
    ConfusionMatrix,
    MetricsWriter,
    ScoreTrace,
    confusion_update,
    miou,
    roc_auc,
    roc_curve,
    trace_scores,
)

__all__ = [
    "ConfusionMatrix",
    "MetricsWriter",
    "ScoreTrace",
    "confusion_update",
    "fuse",
    "fuse_pixel_threshold",
    "fused_labels",
    "miou",
    "pixel_threshold_candidates",
    "roc_auc",
    "roc_curve",
    "search_classwise_thresholds",
    "trace_scores",
]
