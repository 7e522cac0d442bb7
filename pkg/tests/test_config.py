# test_config.py

"""
Unit tests for PipelineConfig and CurveConfig.
"""

import json

import pytest

from profile_sphere.config import DEFAULT_BINS, CurveConfig, PipelineConfig, validate_bins
from profile_sphere.errors import ParameterError


class TestCurveConfig:
    """Test the principal-curve settings."""

    def test_defaults(self):
        """Test the default tolerance, iteration cap and grid."""
        config = CurveConfig()
        assert config.tol == 1e-4
        assert config.max_iter == 50
        assert config.grid_size == 2000
        config.validate()

    @pytest.mark.parametrize("points, expected", [(20, 4), (100, 10), (250, 25), (5000, 25)])
    def test_knot_count(self, points, expected):
        """Test min(25, M // 10) with a floor of four knots."""
        assert CurveConfig().knot_count(points) == expected

    def test_explicit_knots(self):
        """Test that an explicit knot count wins."""
        assert CurveConfig(knots=7).knot_count(1000) == 7

    @pytest.mark.parametrize("kwargs", [
        {'tol': 0.0}, {'max_iter': 0}, {'knots': 0}, {'grid_size': 5},
        {'lambda_floor': -1.0}, {'explained_floor': 1.5}, {'neighbors': 1},
    ])
    def test_invalid(self, kwargs):
        """Test that out-of-range fields are refused."""
        with pytest.raises(ParameterError):
            CurveConfig(**kwargs).validate()


class TestPipelineConfig:
    """Test the pipeline settings."""

    def test_defaults(self):
        """Test N = 3, 95% regions and the C1-C4 cut-points."""
        config = PipelineConfig()
        assert config.retained == 3
        assert config.level == 0.95
        assert config.bins == DEFAULT_BINS
        assert not config.robust_radius

    def test_retained_must_be_three(self):
        """Test that sphere modelling refuses N != 3."""
        with pytest.raises(ParameterError):
            PipelineConfig(retained=4).validate()

    @pytest.mark.parametrize("level", [0.0, 1.0, 1.2])
    def test_invalid_level(self, level):
        """Test that the level must lie strictly inside (0, 1)."""
        with pytest.raises(ParameterError):
            PipelineConfig(level=level).validate()

    def test_with_overrides(self):
        """Test that None values are ignored and bins become a tuple."""
        config = PipelineConfig().with_overrides(level=0.99, bins=[0.5], seed=None)
        assert config.level == 0.99
        assert config.bins == (0.5,)
        assert config.seed == 0

    def test_dict_round_trip(self):
        """Test to_dict/from_dict including the nested curve settings."""
        config = PipelineConfig(level=0.9, bins=(0.3, 0.7), seed=4, curve=CurveConfig(max_iter=20))
        again = PipelineConfig.from_dict(config.to_dict())
        assert again == config

    def test_from_json_partial(self, tmp_path):
        """Test that a config file may hold any subset of the fields."""
        path = tmp_path / "config.json"
        path.write_text(json.dumps({'level': 0.99, 'curve': {'tol': 1e-5}, 'unknown': 1}))
        config = PipelineConfig.from_json(str(path))
        assert config.level == 0.99
        assert config.curve.tol == 1e-5
        assert config.bins == DEFAULT_BINS

    def test_from_json_errors(self, tmp_path):
        """Test missing files, bad JSON and non-object documents."""
        with pytest.raises(ParameterError):
            PipelineConfig.from_json(str(tmp_path / "missing.json"))
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        with pytest.raises(ParameterError):
            PipelineConfig.from_json(str(bad))
        listing = tmp_path / "list.json"
        listing.write_text("[1, 2]")
        with pytest.raises(ParameterError):
            PipelineConfig.from_json(str(listing))


class TestBins:
    """Test cut-point validation."""

    @pytest.mark.parametrize("bins", [(), (0.0,), (0.5, 1.0), (0.4, 0.2), (0.3, 0.3)])
    def test_invalid(self, bins):
        """Test empty, out-of-range and non-increasing cut-points."""
        with pytest.raises(ParameterError):
            validate_bins(bins)

    def test_valid(self):
        """Test that strictly increasing interior cut-points pass."""
        validate_bins((0.1, 0.5, 0.9))
