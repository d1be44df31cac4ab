"""
Shared fixtures and helpers for the test suite.
"""
from pathlib import Path
from typing import Callable, Dict

import pytest
import structlog
import torch

from src.shared.config import RunConfig, load_config
from src.shared.models import HyperParams


def gradient_agreement(loss_fn: Callable[[], torch.Tensor], module: torch.nn.Module,
                       eps: float = 1e-4, rtol: float = 1e-3, atol: float = 1e-7) -> float:
    """Fraction of parameters whose analytic gradient matches central differences."""
    params = [p for p in module.parameters() if p.requires_grad]
    module.zero_grad()
    loss_fn().backward()
    analytic = [p.grad.detach().clone() for p in params]
    matched = total = 0
    with torch.no_grad():
        for param, grad in zip(params, analytic):
            flat, grad_flat = param.view(-1), grad.view(-1)
            for i in range(flat.numel()):
                original = flat[i].item()
                flat[i] = original + eps
                up = loss_fn().item()
                flat[i] = original - eps
                down = loss_fn().item()
                flat[i] = original
                numeric = (up - down) / (2 * eps)
                exact = grad_flat[i].item()
                total += 1
                if abs(numeric - exact) <= atol + rtol * max(abs(numeric), abs(exact)):
                    matched += 1
    return matched / total


def smooth_activations(module: torch.nn.Module) -> torch.nn.Module:
    """Swap (leaky) ReLUs for Softplus so finite differences never straddle a kink."""
    for parent in list(module.modules()):
        for name, child in list(parent.named_children()):
            if isinstance(child, (torch.nn.ReLU, torch.nn.LeakyReLU)):
                setattr(parent, name, torch.nn.Softplus())
    return module


@pytest.fixture(autouse=True)
def _reset_structlog():
    """Undo structlog configuration made by a test (e.g. via main()), so later
    tests don't log to that test's already-closed captured stream."""
    yield
    structlog.reset_defaults()


@pytest.fixture
def hp() -> HyperParams:
    """Small-schedule hyperparameters."""
    return HyperParams(max_iter=100, batch_size=2)


@pytest.fixture
def tiny_values(tmp_path: Path) -> Dict[str, object]:
    """Config values for runs that finish in seconds on a CPU."""
    return {
        "num_train": 16,
        "num_val": 4,
        "image_size": 16,
        "num_classes": 3,
        "labeled_ratio": 0.25,
        "batch_size": 2,
        "max_iter": 10,
        "seg_widths": "4,8",
        "disc_widths": "4,4,4,4",
        "cls_widths": "4,8",
        "val_every": 5,
        "ckpt_every": 100,
        "output_dir": str(tmp_path / "run"),
    }


@pytest.fixture
def tiny_config(tiny_values) -> RunConfig:
    return load_config(overrides=tiny_values)
