"""
Multi-label Mean Teacher branch: image-level class presence from few labels.
"""
from .losses import loss_mlmt
from .network import (
    ClassifierConfig,
    ClassifierRole,
    MultiLabelClassifier,
    build_classifier,
    classify,
    ema_update,
    make_teacher,
)
from .trainer import MlmtTrainer

__all__ = [
    "ClassifierConfig",
    "ClassifierRole",
    "MlmtTrainer",
    "MultiLabelClassifier",
    "build_classifier",
    "classify",
    "ema_update",
    "loss_mlmt",
    "make_teacher",
]
