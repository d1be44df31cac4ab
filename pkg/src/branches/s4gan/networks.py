"""
Segmentation generator S and image-wise discriminator D.
"""
from typing import Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F
from pydantic import BaseModel, Field

from ...shared.errors import ShapeMismatchError


SCORE_EPS = 1e-7


class GeneratorConfig(BaseModel):
    """Encoder-decoder shape of the segmentation network."""
    num_classes: int = Field(..., ge=2)
    image_size: Tuple[int, int]
    widths: Tuple[int, ...] = (16, 32, 64)


class DiscriminatorConfig(BaseModel):
    """Conv stack of the discriminator."""
    num_classes: int = Field(..., ge=2)
    widths: Tuple[int, ...] = (64, 128, 256, 512)
    negative_slope: float = 0.2
    dropout: float = Field(0.5, ge=0, lt=1)


class SegmentationNetwork(nn.Module):
    """Small U-shaped encoder-decoder producing per-class logits at input resolution."""

    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        widths = list(config.widths)
        self.encoders = nn.ModuleList()
        in_channels = 3
        for width in widths:
            self.encoders.append(nn.Sequential(
                nn.Conv2d(in_channels, width, 3, padding=1),
                nn.ReLU(inplace=True),
                nn.Conv2d(width, width, 3, padding=1),
                nn.ReLU(inplace=True),
            ))
            in_channels = width
        self.decoders = nn.ModuleList([
            nn.Sequential(
                nn.Conv2d(widths[i + 1] + widths[i], widths[i], 3, padding=1),
                nn.ReLU(inplace=True),
            )
            for i in reversed(range(len(widths) - 1))
        ])
        self.head = nn.Conv2d(widths[0], config.num_classes, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        skips = []
        for i, encoder in enumerate(self.encoders):
            x = encoder(x)
            if i < len(self.encoders) - 1:
                skips.append(x)
                x = F.max_pool2d(x, 2)
        for decoder, skip in zip(self.decoders, reversed(skips)):
            x = F.interpolate(x, size=skip.shape[-2:], mode="bilinear", align_corners=False)
            x = decoder(torch.cat([x, skip], dim=1))
        return self.head(x)


class Discriminator(nn.Module):
    """Four strided 4x4 convs with leaky ReLU and dropout, global pooling, scalar head.

    Returns (score, features) where features is the pooled vector feeding the head.
    """

    def __init__(self, config: DiscriminatorConfig):
        super().__init__()
        self.config = config
        layers = []
        in_channels = config.num_classes + 3
        for width in config.widths:
            layers += [
                nn.Conv2d(in_channels, width, 4, stride=2, padding=1),
                nn.LeakyReLU(config.negative_slope, inplace=True),
                nn.Dropout(config.dropout),
            ]
            in_channels = width
        self.features = nn.Sequential(*layers)
        self.head = nn.Linear(in_channels, 1)

    @property
    def feature_dim(self) -> int:
        return self.head.in_features

    def forward(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        pooled = self.features(x).mean(dim=(2, 3))
        score = torch.sigmoid(self.head(pooled)).squeeze(1)
        return score.clamp(SCORE_EPS, 1.0 - SCORE_EPS), pooled


def _batched(x: torch.Tensor) -> Tuple[torch.Tensor, bool]:
    return (x.unsqueeze(0), True) if x.ndim == 3 else (x, False)


def segment(gen: SegmentationNetwork, image: torch.Tensor) -> torch.Tensor:
    """Per-pixel class distribution (softmax over C) for one image or a batch."""
    batch, squeeze = _batched(image)
    expected = tuple(gen.config.image_size)
    if batch.ndim != 4 or batch.shape[1] != 3 or tuple(batch.shape[-2:]) != expected:
        raise ShapeMismatchError(
            f"segment expects images of shape (N,)3x{expected[0]}x{expected[1]}, "
            f"got {tuple(image.shape)}"
        )
    probs = F.softmax(gen(batch), dim=1)
    return probs[0] if squeeze else probs


def one_hot(mask: torch.Tensor, num_classes: int) -> torch.Tensor:
    """N x H x W class indices -> N x C x H x W float one-hot maps."""
    return F.one_hot(mask.long(), num_classes).permute(0, 3, 1, 2).float()


def concat_input(seg: torch.Tensor, image: torch.Tensor) -> torch.Tensor:
    """Channel concatenation seg ⊕ image fed to the discriminator."""
    return torch.cat([seg, image.to(seg.dtype)], dim=1)


def discriminate(disc: Discriminator, seg: torch.Tensor,
                 image: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """Score in (0, 1) and pooled features for probability maps or one-hot masks."""
    seg_b, squeeze = _batched(seg)
    image_b, _ = _batched(image)
    if seg_b.shape[1] != disc.config.num_classes:
        raise ShapeMismatchError(
            f"discriminator expects {disc.config.num_classes} segmentation channels, "
            f"got {seg_b.shape[1]}"
        )
    if seg_b.shape[0] != image_b.shape[0] or seg_b.shape[-2:] != image_b.shape[-2:]:
        raise ShapeMismatchError(
            f"segmentation {tuple(seg.shape)} does not align with image {tuple(image.shape)}"
        )
    score, features = disc(concat_input(seg_b, image_b))
    return (score[0], features[0]) if squeeze else (score, features)


def build_generator(num_classes: int, image_size: Sequence[int],
                    widths: Sequence[int]) -> SegmentationNetwork:
    return SegmentationNetwork(GeneratorConfig(
        num_classes=num_classes, image_size=tuple(image_size), widths=tuple(widths),
    ))


def build_discriminator(num_classes: int, widths: Sequence[int],
                        dropout: float = 0.5) -> Discriminator:
    return Discriminator(DiscriminatorConfig(
        num_classes=num_classes, widths=tuple(widths), dropout=dropout,
    ))
