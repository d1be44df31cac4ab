"""
Unit tests for run configuration loading.
"""
import pytest

from src.shared.config import (
    RunConfig,
    config_hash,
    dump_config,
    load_config,
    parse_assignments,
    read_config_file,
    valid_keys,
)
from src.shared.errors import ConfigError
from src.shared.models import FusionMode, GeneratorLoss, TrainingMode


class TestLoadConfig:
    """Test cases for load_config precedence and validation."""

    def test_defaults(self):
        """Test the default semi-supervised configuration."""
        config = load_config()
        assert config.training_mode == TrainingMode.SEMI
        assert config.lambda_fm == 0.1
        assert config.fusion == FusionMode.MLMT
        assert config.adversarial

    def test_file_values(self, tmp_path):
        """Test parsing typed values from a config file."""
        path = tmp_path / "run.cfg"
        path.write_text("# comment\nlambda_st=0.5\nseg_widths=8,16\ngenerator_loss=sgan\nmlmt_max_iter=\n")
        config = load_config(path)
        assert config.lambda_st == 0.5
        assert config.seg_widths == [8, 16]
        assert config.generator_loss == GeneratorLoss.SGAN
        assert config.mlmt_max_iter is None

    def test_overrides_beat_file(self, tmp_path):
        """Test that overrides take precedence over file values."""
        path = tmp_path / "run.cfg"
        path.write_text("gamma=0.7\ntau=0.3\n")
        config = load_config(path, overrides={"gamma": 0.8})
        assert config.gamma == 0.8
        assert config.tau == 0.3

    def test_unknown_key_lists_valid_keys(self, tmp_path):
        """Test that an unknown key is reported with the valid keys."""
        path = tmp_path / "run.cfg"
        path.write_text("lambda_fn=0.1\n")
        with pytest.raises(ConfigError) as exc_info:
            load_config(path)
        message = str(exc_info.value)
        assert "lambda_fn" in message
        assert "lambda_fm" in message
        assert "Valid keys" in message

    def test_invalid_value(self):
        """Test that an out-of-range value is rejected."""
        with pytest.raises(ConfigError):
            load_config(overrides={"tau": 2.0})

    def test_missing_file(self, tmp_path):
        """Test reading a config file that does not exist."""
        with pytest.raises(ConfigError):
            read_config_file(tmp_path / "absent.cfg")

    def test_supervised_only_disables_ssl_terms(self):
        """Test that supervised-only mode switches off every semi-supervised term."""
        config = load_config(overrides={"training_mode": "supervised_only"})
        assert config.lambda_fm == 0.0
        assert config.lambda_st == 0.0
        assert not config.mlmt_enabled
        assert config.fusion == FusionMode.NONE
        assert not config.adversarial

    def test_cnn_fusion_needs_baseline(self):
        """Test that CNN fusion requires the baseline classifier."""
        with pytest.raises(ConfigError):
            load_config(overrides={"fusion": "cnn"})
        config = load_config(overrides={"fusion": "cnn", "train_cnn_baseline": "true"})
        assert config.train_cnn_baseline

    def test_manifest_needs_validation_manifest(self):
        """Test that a training manifest needs a validation manifest."""
        with pytest.raises(ConfigError):
            load_config(overrides={"manifest": "data/manifest.jsonl"})

    def test_threshold_scale(self):
        """Test the pixel threshold scale at the reference crop size."""
        assert load_config(overrides={"image_size": 321}).threshold_scale() == pytest.approx(1.0)


class TestAssignments:
    """Test cases for --set KEY=VALUE parsing."""

    def test_parse(self):
        """Test parsing KEY=VALUE pairs."""
        assert parse_assignments(["gamma=0.7", "seg_widths=4,8"]) == {
            "gamma": "0.7", "seg_widths": "4,8"}

    def test_missing_equals(self):
        """Test an assignment without a value."""
        with pytest.raises(ConfigError):
            parse_assignments(["gamma"])

    def test_unknown_key(self):
        """Test an assignment to an unknown key."""
        with pytest.raises(ConfigError):
            parse_assignments(["nope=1"])


class TestPersistence:
    """Test cases for dumping configs and hashing them."""

    def test_dump_and_reload(self, tmp_path):
        """Test that a dumped config loads back equal."""
        config = load_config(overrides={"gamma": 0.65, "disc_widths": "8,8,8,8", "seed": 3})
        path = dump_config(config, tmp_path / "out.cfg")
        assert load_config(path) == config

    def test_hash_ignores_run_control_keys(self):
        """Test that output paths and stop points leave the hash unchanged."""
        base = load_config()
        moved = load_config(overrides={"output_dir": "elsewhere", "stop_iter": 5,
                                       "resume": "runs/x/iter_000005"})
        assert config_hash(base) == config_hash(moved)

    def test_hash_tracks_training_keys(self):
        """Test that a training value changes the hash."""
        assert config_hash(load_config()) != config_hash(load_config(overrides={"lambda_st": 0.5}))

    def test_valid_keys_are_fields(self):
        """Test that valid keys are exactly the config fields."""
        keys = valid_keys()
        assert "lambda_cons" in keys
        assert set(keys) == set(RunConfig.model_fields)
