"""
Alternating D / S updates of the s4GAN branch.
"""
from typing import Any, Dict, Tuple

import structlog
import torch
import torch.nn as nn
from torch import optim

from ...shared.models import GeneratorLoss, HyperParams, S4GanLosses
from ...shared.utils import check_finite, poly_lr, set_learning_rate, to_float
from .losses import (
    discriminator_objective,
    feature_matching_distance,
    loss_adversarial_generator,
    loss_ce,
    loss_st_batch,
)
from .networks import Discriminator, SegmentationNetwork, concat_input, one_hot, segment


logger = structlog.get_logger(__name__)


def _set_requires_grad(module: nn.Module, flag: bool) -> None:
    for param in module.parameters():
        param.requires_grad_(flag)


class S4GanTrainer:
    """Owns the generator/discriminator optimizers and performs one iteration at a time.

    Each step first updates D on (ground truth ⊕ image) vs (detached prediction ⊕ image),
    then updates S on L_ce + λ_fm L_fm + λ_st L_st. Without an adversarial term
    (λ_fm = λ_st = 0) the D step is skipped and S trains on cross-entropy alone.
    """

    def __init__(self, generator: SegmentationNetwork, discriminator: Discriminator,
                 hp: HyperParams, adversarial: bool = True):
        self.generator = generator
        self.discriminator = discriminator
        self.hp = hp
        self.adversarial = adversarial
        self.num_classes = generator.config.num_classes
        self.optimizer_seg = optim.SGD(
            generator.parameters(), lr=hp.lr_seg, momentum=hp.momentum,
            weight_decay=hp.weight_decay,
        )
        self.optimizer_disc = optim.Adam(
            discriminator.parameters(), lr=hp.lr_disc, betas=tuple(hp.disc_betas),
        )

    def learning_rates(self, iteration: int) -> Tuple[float, float]:
        return (
            poly_lr(self.hp.lr_seg, iteration, self.hp.max_iter, self.hp.pow),
            poly_lr(self.hp.lr_disc, iteration, self.hp.max_iter, self.hp.pow),
        )

    def _discriminator_step(self, gt_input: torch.Tensor, pred_u: torch.Tensor,
                            unlabeled_images: torch.Tensor, iteration: int
                            ) -> Tuple[float, float, float]:
        _set_requires_grad(self.discriminator, True)
        self.optimizer_disc.zero_grad(set_to_none=True)
        real_scores, _ = self.discriminator(gt_input)
        fake_scores, _ = self.discriminator(concat_input(pred_u.detach(), unlabeled_images))
        d_loss = discriminator_objective(real_scores, fake_scores)
        check_finite({"loss_d": d_loss}, iteration)
        d_loss.backward()
        self.optimizer_disc.step()
        return (
            float(d_loss.detach()),
            float(real_scores.detach().mean()),
            float(fake_scores.detach().mean()),
        )

    def train_step(self, labeled_images: torch.Tensor, labeled_masks: torch.Tensor,
                   unlabeled_images: torch.Tensor, iteration: int) -> S4GanLosses:
        if iteration >= self.hp.max_iter:
            raise ValueError(f"iteration {iteration} >= max_iter {self.hp.max_iter}")
        lr_seg, lr_disc = self.learning_rates(iteration)
        set_learning_rate(self.optimizer_seg, lr_seg)
        set_learning_rate(self.optimizer_disc, lr_disc)
        self.generator.train()
        self.discriminator.train()

        pred_l = segment(self.generator, labeled_images)
        pred_u = segment(self.generator, unlabeled_images)
        gt_onehot = one_hot(labeled_masks, self.num_classes).to(labeled_images.dtype)
        gt_input = concat_input(gt_onehot, labeled_images)

        d_loss = d_real = d_fake = None
        if self.adversarial:
            d_loss, d_real, d_fake = self._discriminator_step(
                gt_input, pred_u, unlabeled_images, iteration)

        self.optimizer_seg.zero_grad(set_to_none=True)
        ce = loss_ce(pred_l, labeled_masks)
        fm = st = pred_u.sum() * 0.0
        admitted = 0
        if self.adversarial:
            _set_requires_grad(self.discriminator, False)
            fake_scores, fake_features = self.discriminator(concat_input(pred_u, unlabeled_images))
            if self.hp.generator_loss == GeneratorLoss.SGAN:
                fm = loss_adversarial_generator(fake_scores)
            else:
                with torch.no_grad():
                    _, real_features = self.discriminator(gt_input)
                fm = feature_matching_distance(real_features, fake_features, self.hp.fm_norm)
            st, admitted = loss_st_batch(pred_u, fake_scores, self.hp.gamma)
            _set_requires_grad(self.discriminator, True)

        total = ce + self.hp.lambda_fm * fm + self.hp.lambda_st * st
        check_finite({"loss_ce": ce, "loss_fm": fm, "loss_st": st, "loss_total": total}, iteration)
        total.backward()
        self.optimizer_seg.step()

        losses = S4GanLosses(
            ce=to_float(ce), fm=to_float(fm), st=to_float(st), total=to_float(total),
            d_loss=d_loss, d_real_mean=d_real, d_fake_mean=d_fake, admitted=admitted,
        )
        logger.debug("s4gan_step", iteration=iteration, lr=lr_seg, **losses.model_dump())
        return losses

    def state_dict(self) -> Dict[str, Any]:
        return {
            "seg": self.optimizer_seg.state_dict(),
            "disc": self.optimizer_disc.state_dict(),
        }

    def load_state_dict(self, state: Dict[str, Any]) -> None:
        self.optimizer_seg.load_state_dict(state["seg"])
        self.optimizer_disc.load_state_dict(state["disc"])
