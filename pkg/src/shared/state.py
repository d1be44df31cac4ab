"""
Checkpoint state: the networks of a run and their persistence on disk.

A checkpoint directory holds one `<name>.pt` parameter blob per network,
`optimizers.pt`, `rng.pt` and a `header.json` with the iteration, the embedded
config, its hash and the score-trace buffers.
"""
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
import structlog
import torch
import torch.nn as nn

from .errors import IncompatibleCheckpointError
from .models import CheckpointHeader


logger = structlog.get_logger(__name__)

HEADER_FILE = "header.json"
OPTIMIZERS_FILE = "optimizers.pt"
RNG_FILE = "rng.pt"


@dataclass
class ModelBundle:
    """Every network a run trains; absent branches are None."""
    generator: nn.Module
    discriminator: nn.Module
    student: Optional[nn.Module] = None
    teacher: Optional[nn.Module] = None
    cnn: Optional[nn.Module] = None

    def networks(self) -> Dict[str, nn.Module]:
        named = {
            "generator": self.generator,
            "discriminator": self.discriminator,
            "student": self.student,
            "teacher": self.teacher,
            "cnn": self.cnn,
        }
        return {name: net for name, net in named.items() if net is not None}


@dataclass
class LoadedCheckpoint:
    header: CheckpointHeader
    optimizers: Dict[str, Any]
    rng: Dict[str, Any]


class CheckpointManager:
    """Saves and restores ModelBundles under a run directory."""

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)

    def path_for(self, iteration: int) -> Path:
        return self.root / f"iter_{iteration:06d}"

    @property
    def final_path(self) -> Path:
        return self.root / "final"

    def save(self, bundle: ModelBundle, path: Union[str, Path], header: CheckpointHeader,
             optimizers: Optional[Dict[str, Any]] = None) -> Path:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        for name, net in bundle.networks().items():
            torch.save(net.state_dict(), path / f"{name}.pt")
        torch.save(optimizers or {}, path / OPTIMIZERS_FILE)
        torch.save({
            "torch": torch.get_rng_state(),
            "numpy": np.random.get_state(),
        }, path / RNG_FILE)
        (path / HEADER_FILE).write_text(json.dumps(header.model_dump(mode="json"), indent=2, sort_keys=True))
        logger.info("checkpoint_saved", path=str(path), iteration=header.iteration,
                    networks=header.networks)
        return path

    @staticmethod
    def read_header(path: Union[str, Path]) -> CheckpointHeader:
        header_path = Path(path) / HEADER_FILE
        if not header_path.exists():
            raise FileNotFoundError(f"No checkpoint header at {header_path}")
        return CheckpointHeader.model_validate_json(header_path.read_text())

    def load(self, bundle: ModelBundle, path: Union[str, Path],
             expected_hash: Optional[str] = None,
             expected_classes: Optional[int] = None) -> LoadedCheckpoint:
        """Restore parameters into `bundle` after checking the checkpoint belongs to it."""
        path = Path(path)
        header = self.read_header(path)
        if expected_classes is not None and header.num_classes != expected_classes:
            raise IncompatibleCheckpointError(
                f"checkpoint has {header.num_classes} classes, config expects {expected_classes}")
        if expected_hash is not None and header.hyperparams_hash != expected_hash:
            raise IncompatibleCheckpointError(
                f"checkpoint {path} was trained with a different configuration "
                f"(hash {header.hyperparams_hash[:12]} != {expected_hash[:12]})")
        for name, net in bundle.networks().items():
            blob = path / f"{name}.pt"
            if not blob.exists():
                raise IncompatibleCheckpointError(f"checkpoint {path} has no '{name}' network")
            try:
                net.load_state_dict(torch.load(blob, map_location="cpu"))
            except RuntimeError as e:
                raise IncompatibleCheckpointError(f"cannot load '{name}' from {path}: {e}") from e
        optimizers = torch.load(path / OPTIMIZERS_FILE, map_location="cpu")
        rng = torch.load(path / RNG_FILE, weights_only=False)
        logger.info("checkpoint_loaded", path=str(path), iteration=header.iteration)
        return LoadedCheckpoint(header=header, optimizers=optimizers, rng=rng)

    @staticmethod
    def restore_rng(rng: Dict[str, Any]) -> None:
        torch.set_rng_state(rng["torch"])
        np.random.set_state(rng["numpy"])
