# config.py

"""
Configuration objects for the pipeline.

Defaults: three retained components, a 95%
rejection region, and the C1-C4 cut-points [0.2, 0.4, 0.6] on the
principal-curve parameter.
"""

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

from profile_sphere.errors import ParameterError

DEFAULT_BINS: Tuple[float, ...] = (0.2, 0.4, 0.6)


@dataclass(frozen=True)
class CurveConfig:
    """
    Settings for the principal-curve fit.

    Attributes:
        tol: Relative change of the mean squared projection distance that stops iterating
        max_iter: Maximum number of projection/smoothing alternations
        knots: Interior knot count of the smoother (None picks min(25, M // 10))
        grid_size: Number of s-grid points used by the projection search
        lambda_floor: Smallest penalty allowed, relative to the basis/penalty trace ratio
        explained_floor: Explained-variance share under which the fit is flagged as weak
        neighbors: Nearest neighbours per point in the graph that seeds the first iterate
    """
    tol: float = 1e-4
    max_iter: int = 50
    knots: Optional[int] = None
    grid_size: int = 2000
    lambda_floor: float = 1e-6
    explained_floor: float = 0.75
    neighbors: int = 8

    def validate(self) -> None:
        """Raise ParameterError if any field is out of range."""
        if not self.tol > 0:
            raise ParameterError(f"Curve tolerance must be positive, got {self.tol}")
        if self.max_iter < 1:
            raise ParameterError(f"max_iter must be at least 1, got {self.max_iter}")
        if self.knots is not None and self.knots < 1:
            raise ParameterError(f"knots must be at least 1, got {self.knots}")
        if self.grid_size < 10:
            raise ParameterError(f"grid_size must be at least 10, got {self.grid_size}")
        if not self.lambda_floor > 0:
            raise ParameterError(f"lambda_floor must be positive, got {self.lambda_floor}")
        if not 0.0 <= self.explained_floor <= 1.0:
            raise ParameterError(f"explained_floor must lie in [0, 1], got {self.explained_floor}")
        if self.neighbors < 2:
            raise ParameterError(f"neighbors must be at least 2, got {self.neighbors}")

    def knot_count(self, n_points: int) -> int:
        """Number of interior knots to use for a cloud of n_points."""
        if self.knots is not None:
            return self.knots
        return max(4, min(25, n_points // 10))

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'CurveConfig':
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        config = cls(**known)
        config.validate()
        return config


@dataclass(frozen=True)
class PipelineConfig:
    """
    Settings for a full fit / outlier / order / generate run.

    Attributes:
        retained: Number of principal components kept for the sphere (N)
        level: Confidence level of the rejection regions
        curve: Principal-curve settings
        bins: Interior s cut-points defining the hard clusters
        seed: Base seed for every random stream
        robust_radius: Pre-screen gross radius outliers before the skew-normal fit
    """
    retained: int = 3
    level: float = 0.95
    curve: CurveConfig = field(default_factory=CurveConfig)
    bins: Tuple[float, ...] = DEFAULT_BINS
    seed: int = 0
    robust_radius: bool = False

    def validate(self) -> None:
        """Raise ParameterError if this config or its sub-configs are invalid."""
        if self.retained != 3:
            # Sphere modelling is defined for the 3-D embedding only
            raise ParameterError(f"retained must be 3 for sphere modelling, got {self.retained}")
        if not 0.0 < self.level < 1.0:
            raise ParameterError(f"level must lie in (0, 1), got {self.level}")
        validate_bins(self.bins)
        self.curve.validate()

    def with_overrides(self, **overrides: Any) -> 'PipelineConfig':
        """Return a copy with the non-None overrides applied."""
        changes = {k: v for k, v in overrides.items() if v is not None}
        if 'bins' in changes:
            changes['bins'] = tuple(changes['bins'])
        config = replace(self, **changes)
        config.validate()
        return config

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data['bins'] = list(self.bins)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'PipelineConfig':
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        if 'curve' in known:
            known['curve'] = CurveConfig.from_dict(known['curve'])
        if 'bins' in known:
            known['bins'] = tuple(float(b) for b in known['bins'])
        config = cls(**known)
        config.validate()
        return config

    @classmethod
    def from_json(cls, path: str) -> 'PipelineConfig':
        """
        Load a configuration file.

        Args:
            path: JSON file holding any subset of the PipelineConfig fields

        Raises:
            ParameterError: If the file cannot be read or holds invalid values
        """
        try:
            with open(Path(path), 'r', encoding='utf-8') as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ParameterError(f"Cannot read config file {path}: {e}")
        if not isinstance(data, dict):
            raise ParameterError(f"Config file {path} must hold a JSON object")
        return cls.from_dict(data)


def validate_bins(bins: Tuple[float, ...]) -> None:
    """Cut-points must be strictly increasing inside (0, 1)."""
    values = list(bins)
    if not values:
        raise ParameterError("At least one bin cut-point is required")
    for b in values:
        if not 0.0 < b < 1.0:
            raise ParameterError(f"Bin cut-point {b} is outside (0, 1)")
    for a, b in zip(values, values[1:]):
        if not a < b:
            raise ParameterError(f"Bin cut-points must be strictly increasing: {values}")
