"""
Generator and discriminator objectives of the s4GAN branch.

Pixel losses are means over pixels (not sums) so that the loss weights do not
depend on resolution; the default weights were tuned on 321x321 crops.
"""
from typing import Callable, Optional, Tuple

import torch

from ...shared.errors import ClassIndexError, EmptyInputError, ShapeMismatchError
from ...shared.models import FeatureNorm, PseudoLabel
from .networks import SCORE_EPS


LOG_EPS = 1e-8

DiscriminatorFn = Callable[[torch.Tensor], Tuple[torch.Tensor, torch.Tensor]]


def _as_batch(pred: torch.Tensor, mask: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    if pred.ndim == 3:
        pred, mask = pred.unsqueeze(0), mask.unsqueeze(0)
    if pred.ndim != 4 or mask.shape != (pred.shape[0], *pred.shape[2:]):
        raise ShapeMismatchError(
            f"prediction {tuple(pred.shape)} does not match mask {tuple(mask.shape)}"
        )
    return pred, mask


def loss_ce(pred: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean over pixels of -log pred[mask]; probabilities are clamped at 1e-8."""
    pred, mask = _as_batch(pred, mask)
    num_classes = pred.shape[1]
    if mask.numel() and (int(mask.min()) < 0 or int(mask.max()) >= num_classes):
        raise ClassIndexError(f"mask entries must lie in [0, {num_classes})")
    picked = pred.gather(1, mask.long().unsqueeze(1)).squeeze(1)
    return -torch.log(picked.clamp_min(LOG_EPS)).mean()


def feature_matching_distance(real_features: torch.Tensor, fake_features: torch.Tensor,
                              norm: FeatureNorm = FeatureNorm.L1) -> torch.Tensor:
    """Distance between batch-mean feature vectors, averaged over feature dimensions."""
    if real_features.shape[0] == 0 or fake_features.shape[0] == 0:
        raise EmptyInputError("feature matching needs nonempty batches on both sides")
    diff = real_features.mean(dim=0) - fake_features.mean(dim=0)
    if FeatureNorm(norm) == FeatureNorm.L2:
        return diff.pow(2).mean()
    return diff.abs().mean()


def loss_fm(disc: DiscriminatorFn, labeled_batch: torch.Tensor, unlabeled_batch: torch.Tensor,
            norm: FeatureNorm = FeatureNorm.L1) -> torch.Tensor:
    """Feature matching between (one-hot ⊕ image) and (prediction ⊕ image) batches.

    The labeled side is a constant target; gradients reach only the generated side.
    """
    if labeled_batch.shape[0] == 0 or unlabeled_batch.shape[0] == 0:
        raise EmptyInputError("feature matching needs nonempty batches on both sides")
    with torch.no_grad():
        _, real_features = disc(labeled_batch)
    _, fake_features = disc(unlabeled_batch)
    return feature_matching_distance(real_features, fake_features, norm)


def make_pseudo_labels(pred: torch.Tensor, score: float, gamma: float) -> Optional[PseudoLabel]:
    """Argmax labeling of one C x H x W prediction if D's score passes the gate."""
    score = float(score)
    if score < gamma:
        return None
    # torch.argmax returns the first maximal index, i.e. the lowest class on ties
    mask = pred.detach().argmax(dim=0)
    return PseudoLabel(mask=mask, confidence=score)


def select_pseudo_labels(pred: torch.Tensor, scores: torch.Tensor,
                         gamma: float) -> Tuple[torch.Tensor, torch.Tensor]:
    """Batch gate: indices of admitted samples and their argmax masks."""
    admitted = torch.nonzero(scores.detach().double() >= gamma, as_tuple=False).flatten()
    masks = pred.detach()[admitted].argmax(dim=1)
    return admitted, masks


def loss_st(pred: torch.Tensor, pseudo: Optional[PseudoLabel]) -> torch.Tensor:
    """Cross-entropy against an admitted pseudo-label, exactly zero otherwise."""
    if pseudo is None:
        return pred.sum() * 0.0
    return loss_ce(pred, pseudo.mask)


def loss_st_batch(pred: torch.Tensor, scores: torch.Tensor,
                  gamma: float) -> Tuple[torch.Tensor, int]:
    """Self-training loss over the admitted samples of a batch and their count."""
    admitted, masks = select_pseudo_labels(pred, scores, gamma)
    if admitted.numel() == 0:
        return pred.sum() * 0.0, 0
    return loss_ce(pred[admitted], masks), int(admitted.numel())


def discriminator_objective(real_scores: torch.Tensor, fake_scores: torch.Tensor) -> torch.Tensor:
    """-[mean log D(real) + mean log(1 - D(fake))] with scores clamped away from 0 and 1."""
    if real_scores.numel() == 0 or fake_scores.numel() == 0:
        raise EmptyInputError("discriminator loss needs nonempty batches")
    real = real_scores.clamp(SCORE_EPS, 1.0 - SCORE_EPS)
    fake = fake_scores.clamp(SCORE_EPS, 1.0 - SCORE_EPS)
    return -(torch.log(real).mean() + torch.log(1.0 - fake).mean())


def loss_discriminator(disc: DiscriminatorFn, labeled_batch: torch.Tensor,
                       unlabeled_pred_batch: torch.Tensor) -> torch.Tensor:
    """GAN objective of D; generated inputs are detached from the generator."""
    real_scores, _ = disc(labeled_batch)
    fake_scores, _ = disc(unlabeled_pred_batch.detach())
    return discriminator_objective(real_scores, fake_scores)


def loss_adversarial_generator(fake_scores: torch.Tensor) -> torch.Tensor:
    """Standard GAN generator loss -mean log D(S(x) ⊕ x)."""
    return -torch.log(fake_scores.clamp(SCORE_EPS, 1.0 - SCORE_EPS)).mean()
