"""Tests for bilab.config module."""
import shutil
import tempfile
from pathlib import Path

import pytest

from bilab.config import ExperimentConfig, config_from_mapping, load_config
from bilab.errors import ConfigError


class TestExperimentConfig:
    """Tests for defaults and validation."""

    def test_defaults(self):
        """Test a few default values."""
        cfg = ExperimentConfig()

        assert cfg.n == 33
        assert cfg.q1_kind == "power"
        assert cfg.forward_grids == [33, 65, 129]
        assert cfg.to_dict()["seed"] == 0

    def test_non_positive_tolerance(self):
        """Test that tolerances must be positive."""
        with pytest.raises(ConfigError, match="fp_tol"):
            ExperimentConfig(fp_tol=0.0)

    def test_single_forward_grid(self):
        """Test that a convergence order needs two grids."""
        with pytest.raises(ConfigError, match="forward_grids"):
            ExperimentConfig(forward_grids=[33])

    def test_unknown_kind(self):
        """Test that unknown nonlinearity kinds are rejected."""
        with pytest.raises(ConfigError, match="q1_kind"):
            ExperimentConfig(q1_kind="cubic")

    def test_sweep_fraction_range(self):
        """Test that sweep fractions stay in [-1, 1]."""
        with pytest.raises(ConfigError):
            ExperimentConfig(sweep_fractions=[0.0, 1.5])


class TestConfigFromMapping:
    """Tests for mapping parsed TOML values onto the config."""

    def test_unknown_key(self):
        """Test that unknown keys are named in the error."""
        with pytest.raises(ConfigError, match="grid_size"):
            config_from_mapping({"grid_size": 17})

    def test_integers_promoted_to_float(self):
        """Test that integer values are accepted for float fields."""
        cfg = config_from_mapping({"v_norm": 1, "eps": [1, 2]})

        assert cfg.v_norm == 1.0
        assert isinstance(cfg.eps[0], float)

    @pytest.mark.parametrize(
        "key,value",
        [
            ("n", 17.5),
            ("n", True),
            ("q1_kind", 3),
            ("report_runtimes", "yes"),
            ("scales", 0.5),
            ("sweep_points", [0.5, 0.5]),
        ],
    )
    def test_wrong_types(self, key, value):
        """Test that values of the wrong type are rejected."""
        with pytest.raises(ConfigError, match=key):
            config_from_mapping({key: value})

    def test_nested_lists_are_coerced(self):
        """Test that entries of nested list fields follow their type hints."""
        cfg = config_from_mapping({"sweep_points": [[1, 0]], "runge_k": [8, 16]})

        assert cfg.sweep_points == [[1.0, 0.0]]
        assert all(isinstance(x, float) for x in cfg.sweep_points[0])
        assert cfg.runge_k == [8, 16]

    def test_floats_rejected_in_integer_lists(self):
        """Test that list entries are checked one by one."""
        with pytest.raises(ConfigError, match="runge_k: expected an integer"):
            config_from_mapping({"runge_k": [8, 16.5]})

    def test_nested_table(self):
        """Test that nested tables are rejected."""
        with pytest.raises(ConfigError):
            config_from_mapping({"n": {"value": 17}})


class TestLoadConfig:
    """Tests for reading configuration files."""

    def setup_method(self):
        """Set up a temporary directory."""
        self.test_dir = Path(tempfile.mkdtemp())

    def teardown_method(self):
        """Clean up the temporary directory."""
        if self.test_dir.exists():
            shutil.rmtree(self.test_dir)

    def test_no_path_gives_defaults(self):
        """Test that no file means the default configuration."""
        assert load_config(None) == ExperimentConfig()

    def test_flat_file(self):
        """Test reading a flat TOML file."""
        path = self.test_dir / "cfg.toml"
        path.write_text('n = 17\nq1_kind = "sine"\nsweep_points = [[0.5, 0.5]]\n')

        cfg = load_config(path)

        assert cfg.n == 17
        assert cfg.q1_kind == "sine"
        assert cfg.sweep_points == [[0.5, 0.5]]

    def test_missing_file(self):
        """Test that a missing file is a configuration error."""
        with pytest.raises(ConfigError, match="not found"):
            load_config(self.test_dir / "missing.toml")

    def test_invalid_toml(self):
        """Test that unparsable files are configuration errors."""
        path = self.test_dir / "bad.toml"
        path.write_text("n = = 17\n")

        with pytest.raises(ConfigError, match="Could not parse"):
            load_config(path)
