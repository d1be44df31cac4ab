"""
Utility functions shared by both training branches.
"""
import math
from enum import IntEnum
from typing import Dict, Optional

import numpy as np
import structlog
import torch

from .errors import NonFiniteLossError


logger = structlog.get_logger(__name__)


class Stream(IntEnum):
    """Independent random streams of a run."""
    SPLIT = 1
    S4GAN = 2
    MLMT = 3
    CNN = 4
    SEG_AUGMENT = 5
    CLS_AUGMENT = 6
    LABELED_BATCHES = 7
    UNLABELED_BATCHES = 8
    CLASS_LABELED_BATCHES = 9
    CNN_BATCHES = 10
    INIT = 11
    CLASS_UNLABELED_BATCHES = 12


def poly_lr(base_lr: float, iteration: int, max_iter: int, power: float) -> float:
    """Poly learning-rate policy: base_lr * (1 - iter/max_iter) ** power."""
    if max_iter <= 0:
        raise ValueError(f"max_iter must be positive, got {max_iter}")
    if iteration < 0 or iteration > max_iter:
        raise ValueError(f"iteration {iteration} outside [0, {max_iter}]")
    return base_lr * ((1.0 - iteration / max_iter) ** power)


def set_learning_rate(optimizer: torch.optim.Optimizer, lr: float) -> None:
    for group in optimizer.param_groups:
        group["lr"] = lr


def derive_seed(seed: int, *keys: int) -> int:
    """Stable 63-bit seed for a (run seed, stream, ...) tuple."""
    state = np.random.SeedSequence([seed & 0xFFFFFFFF, *[int(k) for k in keys]])
    return int(state.generate_state(1, dtype=np.uint64)[0]) >> 1


def seeded_generator(seed: int, *keys: int) -> torch.Generator:
    return torch.Generator().manual_seed(derive_seed(seed, *keys))


def reseed_torch(seed: int, *keys: int) -> None:
    """Reset torch's global RNG (dropout masks) for one branch step."""
    torch.manual_seed(derive_seed(seed, *keys))


def check_finite(losses: Dict[str, torch.Tensor], iteration: int) -> None:
    """Raise NonFiniteLossError naming the first NaN/inf loss term."""
    for term, value in losses.items():
        scalar = float(value.detach()) if torch.is_tensor(value) else float(value)
        if not math.isfinite(scalar):
            logger.error("non_finite_loss", term=term, iteration=iteration, value=scalar)
            raise NonFiniteLossError(term, iteration, scalar)


def to_float(value: Optional[torch.Tensor]) -> Optional[float]:
    if value is None:
        return None
    return float(value.detach()) if torch.is_tensor(value) else float(value)
