"""
GAN-based segmentation branch.
"""
from .losses import (
    discriminator_objective,
    feature_matching_distance,
    loss_adversarial_generator,
    loss_ce,
    loss_discriminator,
    loss_fm,
    loss_st,
    loss_st_batch,
    make_pseudo_labels,
    select_pseudo_labels,
)
from .networks import (
    Discriminator,
    DiscriminatorConfig,
    GeneratorConfig,
    SegmentationNetwork,
    build_discriminator,
    build_generator,
    concat_input,
    discriminate,
    one_hot,
    segment,
)
from .trainer import S4GanTrainer

__all__ = [
    "Discriminator",
    "DiscriminatorConfig",
    "GeneratorConfig",
    "S4GanTrainer",
    "SegmentationNetwork",
    "build_discriminator",
    "build_generator",
    "concat_input",
    "discriminate",
    "discriminator_objective",
    "feature_matching_distance",
    "loss_adversarial_generator",
    "loss_ce",
    "loss_discriminator",
    "loss_fm",
    "loss_st",
    "loss_st_batch",
    "make_pseudo_labels",
    "one_hot",
    "segment",
    "select_pseudo_labels",
]
