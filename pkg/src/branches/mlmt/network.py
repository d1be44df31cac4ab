"""
Multi-label classifier shared by the student and teacher of the Mean-Teacher branch.
"""
import copy
from enum import Enum
from typing import Sequence, Tuple

import torch
import torch.nn as nn
from pydantic import BaseModel, Field

from ...shared.errors import ArchitectureMismatchError, ShapeMismatchError


class ClassifierRole(str, Enum):
    STUDENT = "student"
    TEACHER = "teacher"


class ClassifierConfig(BaseModel):
    num_classes: int = Field(..., ge=2)
    image_size: Tuple[int, int]
    widths: Tuple[int, ...] = (16, 32, 64)


class MultiLabelClassifier(nn.Module):
    """Strided conv stack, global average pooling and one logit per class."""

    def __init__(self, config: ClassifierConfig, role: ClassifierRole = ClassifierRole.STUDENT):
        super().__init__()
        self.config = config
        self.role = role
        layers = []
        in_channels = 3
        for width in config.widths:
            layers += [nn.Conv2d(in_channels, width, 3, stride=2, padding=1), nn.ReLU(inplace=True)]
            in_channels = width
        self.features = nn.Sequential(*layers)
        self.head = nn.Linear(in_channels, config.num_classes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(x).mean(dim=(2, 3)))


def classify(clf: MultiLabelClassifier, image: torch.Tensor) -> torch.Tensor:
    """Independent per-class probabilities (sigmoid) for one image or a batch."""
    squeeze = image.ndim == 3
    batch = image.unsqueeze(0) if squeeze else image
    expected = tuple(clf.config.image_size)
    if batch.ndim != 4 or batch.shape[1] != 3 or tuple(batch.shape[-2:]) != expected:
        raise ShapeMismatchError(
            f"classify expects images of shape (N,)3x{expected[0]}x{expected[1]}, "
            f"got {tuple(image.shape)}"
        )
    probs = torch.sigmoid(clf(batch))
    return probs[0] if squeeze else probs


def make_teacher(student: MultiLabelClassifier) -> MultiLabelClassifier:
    """Teacher starts as an exact copy of the student and is never optimized directly."""
    teacher = copy.deepcopy(student)
    teacher.role = ClassifierRole.TEACHER
    for param in teacher.parameters():
        param.requires_grad_(False)
    return teacher


def _check_same_architecture(a: nn.Module, b: nn.Module) -> None:
    shapes_a = {k: tuple(v.shape) for k, v in a.state_dict().items()}
    shapes_b = {k: tuple(v.shape) for k, v in b.state_dict().items()}
    if shapes_a != shapes_b:
        raise ArchitectureMismatchError("teacher and student architectures differ")


@torch.no_grad()
def ema_update(teacher: MultiLabelClassifier, student: MultiLabelClassifier,
               decay: float) -> MultiLabelClassifier:
    """In place: every teacher parameter p' <- decay * p' + (1 - decay) * p."""
    if not 0.0 <= decay <= 1.0:
        raise ValueError(f"decay must lie in [0, 1], got {decay}")
    _check_same_architecture(teacher, student)
    for param_t, param_s in zip(teacher.parameters(), student.parameters()):
        param_t.mul_(decay).add_(param_s, alpha=1.0 - decay)
    for buffer_t, buffer_s in zip(teacher.buffers(), student.buffers()):
        buffer_t.copy_(buffer_s)
    return teacher


def build_classifier(num_classes: int, image_size: Sequence[int],
                     widths: Sequence[int]) -> MultiLabelClassifier:
    return MultiLabelClassifier(ClassifierConfig(
        num_classes=num_classes, image_size=tuple(image_size), widths=tuple(widths),
    ))
