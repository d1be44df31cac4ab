"""
Unit tests for checkpoint persistence.
"""
import numpy as np
import pytest
import torch

from src.branches.mlmt import build_classifier, make_teacher
from src.branches.s4gan import build_discriminator, build_generator
from src.shared.errors import IncompatibleCheckpointError
from src.shared.models import CheckpointHeader
from src.shared.state import CheckpointManager, ModelBundle


def _bundle(seed, with_classifier=True, widths=(4,)):
    torch.manual_seed(seed)
    student = build_classifier(3, (16, 16), (4,)) if with_classifier else None
    return ModelBundle(
        generator=build_generator(3, (16, 16), widths),
        discriminator=build_discriminator(3, (4, 4, 4, 4)),
        student=student,
        teacher=make_teacher(student) if student is not None else None,
    )


def _header(bundle, iteration=5, digest="abc123", num_classes=3):
    return CheckpointHeader(
        iteration=iteration, hyperparams_hash=digest, num_classes=num_classes,
        networks=list(bundle.networks()), config={"num_classes": num_classes},
        trace={"window": 100},
    )


class TestCheckpointManager:
    """Test cases for CheckpointManager save/load."""

    def test_paths(self, tmp_path):
        """Test checkpoint directory names."""
        manager = CheckpointManager(tmp_path)
        assert manager.path_for(20).name == "iter_000020"
        assert manager.final_path.name == "final"

    def test_round_trip(self, tmp_path):
        """Test saving and restoring every network and the optimizers."""
        manager = CheckpointManager(tmp_path)
        saved = _bundle(0)
        path = manager.save(saved, manager.path_for(5), _header(saved),
                            optimizers={"seg": {"lr": 0.1}})
        assert sorted(p.name for p in path.iterdir()) == sorted(
            ["generator.pt", "discriminator.pt", "student.pt", "teacher.pt",
             "optimizers.pt", "rng.pt", "header.json"])

        restored = _bundle(1)
        loaded = manager.load(restored, path, expected_hash="abc123", expected_classes=3)
        for name, net in saved.networks().items():
            for a, b in zip(net.state_dict().values(),
                            restored.networks()[name].state_dict().values()):
                assert torch.equal(a, b)
        assert loaded.header.iteration == 5
        assert loaded.header.trace == {"window": 100}
        assert loaded.optimizers == {"seg": {"lr": 0.1}}

    def test_rng_restored(self, tmp_path):
        """Test that restored RNG state replays the same draws."""
        manager = CheckpointManager(tmp_path)
        bundle = _bundle(0)
        torch.manual_seed(42)
        np.random.seed(42)
        path = manager.save(bundle, tmp_path / "ckpt", _header(bundle))
        expected_torch, expected_numpy = torch.rand(3), np.random.rand(3)
        loaded = manager.load(_bundle(0), path)
        CheckpointManager.restore_rng(loaded.rng)
        assert torch.equal(torch.rand(3), expected_torch)
        assert np.array_equal(np.random.rand(3), expected_numpy)

    def test_hash_mismatch(self, tmp_path):
        """Test loading under another configuration hash."""
        manager = CheckpointManager(tmp_path)
        bundle = _bundle(0)
        path = manager.save(bundle, tmp_path / "ckpt", _header(bundle))
        with pytest.raises(IncompatibleCheckpointError):
            manager.load(_bundle(1), path, expected_hash="other")

    def test_class_count_mismatch(self, tmp_path):
        """Test loading with another number of classes."""
        manager = CheckpointManager(tmp_path)
        bundle = _bundle(0)
        path = manager.save(bundle, tmp_path / "ckpt", _header(bundle))
        with pytest.raises(IncompatibleCheckpointError, match="classes"):
            manager.load(_bundle(1), path, expected_classes=5)

    def test_missing_network(self, tmp_path):
        """Test loading a bundle that expects a network the checkpoint lacks."""
        manager = CheckpointManager(tmp_path)
        bundle = _bundle(0, with_classifier=False)
        path = manager.save(bundle, tmp_path / "ckpt", _header(bundle))
        with pytest.raises(IncompatibleCheckpointError, match="student"):
            manager.load(_bundle(1), path)

    def test_architecture_mismatch(self, tmp_path):
        """Test loading into networks of other widths."""
        manager = CheckpointManager(tmp_path)
        bundle = _bundle(0)
        path = manager.save(bundle, tmp_path / "ckpt", _header(bundle))
        with pytest.raises(IncompatibleCheckpointError):
            manager.load(_bundle(1, widths=(8,)), path)

    def test_missing_header(self, tmp_path):
        """Test reading the header of a missing checkpoint."""
        with pytest.raises(FileNotFoundError):
            CheckpointManager.read_header(tmp_path / "nowhere")
