"""Tests for experiment configuration loading."""

from pathlib import Path

import numpy as np
import pytest
from pydantic import ValidationError

from csdml.config import ExperimentConfig, SweepVariable, load_config, parse_key_value
from csdml.errors import DomainError
from csdml.models import BenchMethod

CATALOG = Path(__file__).parent.parent / "catalog" / "experiments"


class TestLoadConfig:
    """Tests for YAML and key=value loading."""

    def test_yaml(self, tmp_path):
        path = tmp_path / "exp.yaml"
        path.write_text(
            "name: snr\n"
            "doas_deg: [2.37, 30.82]\n"
            "sweep: snr\n"
            "values: [0, 10, 20]\n"
            "methods: [omp, csdml-omp]\n"
            "trials: 50\n"
            "newton:\n"
            "  max_iters: 20\n"
        )
        config = load_config(path)
        assert config.name == "snr"
        assert config.values == [0.0, 10.0, 20.0]
        assert config.methods == [BenchMethod.OMP, BenchMethod.CSDML_OMP]
        assert config.newton.max_iters == 20
        assert config.k == 2

    def test_key_value(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text(
            "# grid sweep\n"
            "sweep = grid\n"
            "values = [1, 2, 4]\n"
            "doa_intervals_deg = [[-3, 3], [27, 33]]\n"
            "record_timing = true   # fill mean_time_s\n"
            "\n"
            "trials=10\n"
        )
        config = load_config(path)
        assert config.sweep is SweepVariable.GRID
        assert config.doa_intervals_deg == [(-3.0, 3.0), (27.0, 33.0)]
        assert config.record_timing is True
        assert config.trials == 10
        assert config.random_doas

    def test_overrides(self, tmp_path):
        """Overrides win over the file; None overrides are ignored."""
        path = tmp_path / "exp.yaml"
        path.write_text("doas_deg: [5.0]\nvalues: [10]\ntrials: 50\n")
        config = load_config(path, {"trials": 3, "seed": None})
        assert config.trials == 3
        assert config.seed == 0

    def test_overrides_only(self):
        config = load_config(None, {"doas_deg": [1.0, 20.0], "values": [5]})
        assert config.doas_deg == [1.0, 20.0]

    def test_yaml_must_be_mapping(self, tmp_path):
        path = tmp_path / "exp.yaml"
        path.write_text("- 1\n- 2\n")
        with pytest.raises(DomainError):
            load_config(path)

    def test_key_value_bad_line(self):
        with pytest.raises(DomainError):
            parse_key_value("trials 10\n")

    def test_key_value_types(self):
        data = parse_key_value("a = 3\nb = 0.5\nc = omp\nd =\n")
        assert data == {"a": 3, "b": 0.5, "c": "omp", "d": None}

    @pytest.mark.parametrize("path", sorted(CATALOG.glob("*.yaml")), ids=lambda p: p.stem)
    def test_catalog(self, path):
        """Every shipped experiment parses."""
        config = load_config(path)
        assert config.trials >= 1
        assert config.k < config.array.m


class TestValidation:
    """Tests for config validation."""

    def test_needs_one_doa_source(self):
        with pytest.raises(ValidationError):
            ExperimentConfig(values=[10])
        with pytest.raises(ValidationError):
            ExperimentConfig(values=[10], doas_deg=[1.0], doa_intervals_deg=[(0, 2)])

    def test_intervals_must_not_overlap(self):
        with pytest.raises(ValidationError):
            ExperimentConfig(values=[10], doa_intervals_deg=[(-3, 3), (2, 5)])

    def test_intervals_sorted(self):
        config = ExperimentConfig(values=[10], doa_intervals_deg=[(27, 33), (-3, 3)])
        assert config.doa_intervals_deg == [(-3.0, 3.0), (27.0, 33.0)]

    def test_interval_bounds(self):
        with pytest.raises(ValidationError):
            ExperimentConfig(values=[10], doa_intervals_deg=[(80, 95)])

    def test_values_required(self):
        with pytest.raises(ValidationError):
            ExperimentConfig(doas_deg=[1.0], values=[])

    def test_snapshot_values_integral(self):
        with pytest.raises(ValidationError):
            ExperimentConfig(doas_deg=[1.0], sweep="snapshots", values=[50.5])

    def test_grid_values_range(self):
        with pytest.raises(ValidationError):
            ExperimentConfig(doas_deg=[1.0], sweep="grid", values=[40])

    def test_unknown_key(self):
        with pytest.raises(ValidationError):
            ExperimentConfig(doas_deg=[1.0], values=[10], trails=5)

    def test_bad_geometry(self):
        with pytest.raises(ValidationError):
            ExperimentConfig(doas_deg=[1.0], values=[10], geometry="hexagon")

    def test_duplicate_methods_collapse(self):
        config = ExperimentConfig(doas_deg=[1.0], values=[10], methods=["omp", "omp", "sbl"])
        assert config.methods == [BenchMethod.OMP, BenchMethod.SBL]


class TestScenario:
    """Tests for per-point scenarios."""

    def test_point(self):
        config = ExperimentConfig(doas_deg=[1.0], values=[10], snr_db=5.0, snapshots=100)
        assert config.point(20.0) == (20.0, 100, 2.0)
        assert config.model_copy(update={"sweep": SweepVariable.SNAPSHOTS}).point(50) == (
            5.0,
            50,
            2.0,
        )
        assert config.model_copy(update={"sweep": SweepVariable.GRID}).point(3.0) == (
            5.0,
            100,
            3.0,
        )

    def test_fixed_scenario(self):
        config = ExperimentConfig(doas_deg=[2.37, 30.82], values=[10])
        scenario = config.scenario(15.0, np.random.default_rng(0))
        assert scenario.doas_deg == pytest.approx([2.37, 30.82])
        assert scenario.noise_power == pytest.approx(10 ** -1.5)

    def test_random_scenario_within_intervals(self):
        config = ExperimentConfig(doa_intervals_deg=[(-3, 3), (27, 33)], values=[10])
        rng = np.random.default_rng(4)
        for _ in range(20):
            low, high = config.scenario(10.0, rng).doas_deg
            assert -3 <= low <= 3
            assert 27 <= high <= 33
