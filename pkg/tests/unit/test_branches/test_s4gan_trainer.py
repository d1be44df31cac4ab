"""
Unit tests for the alternating s4GAN trainer.
"""
import pytest
import torch

from src.branches.s4gan import (
    S4GanTrainer,
    build_discriminator,
    build_generator,
    concat_input,
    one_hot,
    segment,
)
from src.shared.errors import NonFiniteLossError
from src.shared.models import GeneratorLoss


def _snapshot(module):
    return [p.detach().clone() for p in module.parameters()]


def _unchanged(module, snapshot):
    return all(torch.equal(a, b) for a, b in zip(module.parameters(), snapshot))


@pytest.fixture
def batch():
    generator = torch.Generator().manual_seed(0)
    labeled = torch.rand(2, 3, 16, 16, generator=generator)
    masks = torch.randint(0, 3, (2, 16, 16), generator=generator)
    unlabeled = torch.rand(2, 3, 16, 16, generator=generator)
    return labeled, masks, unlabeled


def _trainer(hp, adversarial=True, **updates):
    torch.manual_seed(0)
    gen = build_generator(3, (16, 16), (4, 8))
    disc = build_discriminator(3, (4, 4, 4, 4), dropout=0.0)
    return S4GanTrainer(gen, disc, hp.model_copy(update=updates), adversarial=adversarial)


class TestS4GanTrainer:
    """Test cases for S4GanTrainer.train_step."""

    def test_zero_learning_rates_freeze_everything(self, hp, batch):
        """Test that zero rates leave both networks unchanged."""
        trainer = _trainer(hp, lr_seg=0.0, lr_disc=0.0)
        gen_before = _snapshot(trainer.generator)
        disc_before = _snapshot(trainer.discriminator)
        for it in range(3):
            trainer.train_step(*batch, iteration=it)
        assert _unchanged(trainer.generator, gen_before)
        assert _unchanged(trainer.discriminator, disc_before)

    def test_generator_update_leaves_discriminator(self, hp, batch):
        """Test that the segmentation step does not move the discriminator."""
        trainer = _trainer(hp, lr_disc=0.0)
        gen_before = _snapshot(trainer.generator)
        disc_before = _snapshot(trainer.discriminator)
        trainer.train_step(*batch, iteration=0)
        assert _unchanged(trainer.discriminator, disc_before)
        assert not _unchanged(trainer.generator, gen_before)

    def test_discriminator_step_leaves_generator(self, hp, batch):
        """Test that the discriminator step does not touch the segmentation network."""
        trainer = _trainer(hp)
        labeled, masks, unlabeled = batch
        gen_before = _snapshot(trainer.generator)
        disc_before = _snapshot(trainer.discriminator)
        gt_input = concat_input(one_hot(masks, 3), labeled)
        pred_u = segment(trainer.generator, unlabeled)
        trainer._discriminator_step(gt_input, pred_u, unlabeled, iteration=0)
        assert _unchanged(trainer.generator, gen_before)
        assert all(p.grad is None for p in trainer.generator.parameters())
        assert not _unchanged(trainer.discriminator, disc_before)

    def test_total_is_weighted_sum(self, hp, batch):
        """Test that the total is the weighted sum of its terms."""
        trainer = _trainer(hp, lambda_fm=0.3, lambda_st=0.7, gamma=0.0)
        for it in range(5):
            losses = trainer.train_step(*batch, iteration=it)
            expected = losses.ce + 0.3 * losses.fm + 0.7 * losses.st
            assert losses.total == pytest.approx(expected, rel=1e-5, abs=1e-6)
            assert losses.d_loss is not None
            assert 0.0 < losses.d_real_mean < 1.0
            assert 0.0 < losses.d_fake_mean < 1.0

    def test_gate_at_one_admits_nothing(self, hp, batch):
        """Test that a gate of 1 disables self-training."""
        trainer = _trainer(hp, gamma=1.0)
        losses = trainer.train_step(*batch, iteration=0)
        assert losses.admitted == 0
        assert losses.st == 0.0

    def test_gate_at_zero_admits_every_sample(self, hp, batch):
        """Test that a gate of 0 admits every unlabeled image."""
        trainer = _trainer(hp, gamma=0.0)
        losses = trainer.train_step(*batch, iteration=0)
        assert losses.admitted == 2
        assert losses.st > 0.0

    def test_supervised_only_skips_discriminator(self, hp, batch):
        """Test that non-adversarial steps train on cross-entropy only."""
        trainer = _trainer(hp, adversarial=False)
        disc_before = _snapshot(trainer.discriminator)
        losses = trainer.train_step(*batch, iteration=0)
        assert losses.total == pytest.approx(losses.ce)
        assert losses.d_loss is None
        assert losses.fm == 0.0 and losses.st == 0.0
        assert _unchanged(trainer.discriminator, disc_before)

    def test_sgan_generator_loss(self, hp, batch):
        """Test the plain GAN generator loss in place of feature matching."""
        trainer = _trainer(hp, generator_loss=GeneratorLoss.SGAN, lambda_st=0.0)
        losses = trainer.train_step(*batch, iteration=0)
        # -log of a score in (0, 1) is positive
        assert losses.fm > 0.0

    def test_non_finite_loss_raises(self, hp, batch, mocker):
        """Test that a NaN term stops the step with its name."""
        mocker.patch("src.branches.s4gan.trainer.loss_ce", return_value=torch.tensor(float("nan")))
        trainer = _trainer(hp)
        with pytest.raises(NonFiniteLossError) as exc_info:
            trainer.train_step(*batch, iteration=4)
        assert exc_info.value.term == "loss_ce"
        assert exc_info.value.iteration == 4

    def test_iteration_past_schedule(self, hp, batch):
        """Test a step after the last iteration."""
        trainer = _trainer(hp)
        with pytest.raises(ValueError):
            trainer.train_step(*batch, iteration=hp.max_iter)

    def test_learning_rates_follow_poly(self, hp):
        """Test both learning rates against the poly schedule."""
        trainer = _trainer(hp)
        assert trainer.learning_rates(0) == (hp.lr_seg, hp.lr_disc)
        seg, disc = trainer.learning_rates(50)
        assert seg == pytest.approx(hp.lr_seg * 0.5 ** 0.9)
        assert disc == pytest.approx(hp.lr_disc * 0.5 ** 0.9)

    def test_optimizer_state_round_trip(self, hp, batch):
        """Test restoring optimizer state into another trainer."""
        trainer = _trainer(hp)
        trainer.train_step(*batch, iteration=0)
        other = _trainer(hp)
        other.load_state_dict(trainer.state_dict())
        assert other.optimizer_seg.state_dict()["param_groups"] == \
            trainer.optimizer_seg.state_dict()["param_groups"]
        assert len(other.optimizer_disc.state_dict()["state"]) == \
            len(trainer.optimizer_disc.state_dict()["state"])
