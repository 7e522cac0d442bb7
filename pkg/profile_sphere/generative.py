# generative.py

"""
Synthetic profile generation and scoring.

A von Mises-Fisher distribution centred on the principal curve samples new
points on the sphere; inverting the PCA turns them back into standardized
profile shapes. A per-cluster multivariate Gaussian serves as baseline, and
KS / RMSE compare synthetic sets against real ones.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg, optimize, stats

from profile_sphere.curve import PrincipalCurve
from profile_sphere.embedding import EmbeddingModel
from profile_sphere.errors import (
    InsufficientDataError,
    NumericError,
    ParameterError,
    ProfileSphereError,
    ShapeError,
)
from profile_sphere.profiles import MINUTES_PER_DAY, ProfileMatrix
from profile_sphere.sphere import SphereFit

logger = logging.getLogger(__name__)

VMF_KAPPA_MAX = 1e8
DEFAULT_S_GRID = tuple(k / 25.0 for k in range(1, 26))
DEFAULT_PER_POINT = 10

SeedLike = Union[int, np.random.Generator]


class DegenerateDirectionError(ProfileSphereError, ArithmeticError):
    """A curve point coincides with the sphere centre so no direction exists."""
    pass


class UndefinedMomentError(ProfileSphereError, ArithmeticError):
    """Skewness and kurtosis are undefined for a constant sample."""
    pass


def make_generator(seed: SeedLike) -> np.random.Generator:
    """Counter-based Philox stream for a seed (generators pass through)."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def spawn_generators(seed: int, count: int) -> List[np.random.Generator]:
    """Independent child streams, one per batch."""
    return [np.random.Generator(np.random.Philox(child))
            for child in np.random.SeedSequence(seed).spawn(count)]


# ==================== VON MISES-FISHER ====================

@dataclass(frozen=True)
class VmfParams:
    """Von Mises-Fisher distribution on the unit 2-sphere."""
    mean_direction: np.ndarray
    kappa: float

    def __post_init__(self):
        mu = np.array(self.mean_direction, dtype=np.float64, copy=True)
        if mu.shape != (3,):
            raise ShapeError(f"Mean direction must be a 3-vector, got shape {mu.shape}")
        if abs(np.linalg.norm(mu) - 1.0) >= 1e-9:
            raise ParameterError("Mean direction must have unit norm")
        if not self.kappa > 0:
            raise ParameterError(f"kappa must be positive, got {self.kappa}; use sample_uniform_sphere for kappa = 0")
        mu.setflags(write=False)
        object.__setattr__(self, 'mean_direction', mu)
        object.__setattr__(self, 'kappa', float(self.kappa))

    @classmethod
    def toward(cls, vector: Any, kappa: float) -> 'VmfParams':
        """Parameters with the mean direction along an arbitrary nonzero vector."""
        v = np.asarray(vector, dtype=np.float64)
        norm = np.linalg.norm(v)
        if norm <= 1e-12:
            raise DegenerateDirectionError("Cannot take the direction of a zero vector")
        return cls(mean_direction=v / norm, kappa=kappa)


def mean_resultant_length(kappa: float) -> float:
    """A_3(kappa) = coth(kappa) - 1/kappa, the expected cosine to the mean direction."""
    if kappa < 1e-3:
        return kappa / 3.0 - kappa ** 3 / 45.0
    return float(1.0 / np.tanh(kappa) - 1.0 / kappa)


def sample_vmf(params: VmfParams, n: int, seed: SeedLike = 0) -> np.ndarray:
    """
    Draw n unit vectors from VMF(mu, kappa) on the 2-sphere.

    The cosine w to mu is drawn by inverting its CDF on [-1, 1]
    (density proportional to exp(kappa w)); the azimuth about mu is uniform.

    Returns:
        np.ndarray: n x 3 unit vectors
    """
    if n < 1:
        raise ParameterError(f"Sample size must be at least 1, got {n}")
    rng = make_generator(seed)
    kappa = params.kappa
    u = 1.0 - rng.random(n)
    w = 1.0 + np.log(u + (1.0 - u) * np.exp(-2.0 * kappa)) / kappa
    w = np.clip(w, -1.0, 1.0)
    psi = rng.uniform(0.0, 2.0 * np.pi, n)

    tangent = linalg.null_space(params.mean_direction[None, :])
    directions = np.cos(psi)[:, None] * tangent[:, 0] + np.sin(psi)[:, None] * tangent[:, 1]
    return w[:, None] * params.mean_direction + np.sqrt(1.0 - w ** 2)[:, None] * directions


def sample_uniform_sphere(n: int, seed: SeedLike = 0) -> np.ndarray:
    """n unit vectors uniform on the 2-sphere (the kappa = 0 case)."""
    if n < 1:
        raise ParameterError(f"Sample size must be at least 1, got {n}")
    draws = make_generator(seed).standard_normal((n, 3))
    return draws / np.linalg.norm(draws, axis=1, keepdims=True)


def fit_vmf(unit_vectors: Any) -> VmfParams:
    """
    Maximum-likelihood VMF fit: mean direction of the resultant and kappa
    solving A_3(kappa) = R-bar.

    Raises:
        NumericError: If the resultant vanishes (no mean direction)
    """
    x = np.asarray(unit_vectors, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != 3:
        raise ShapeError(f"Expected n x 3 unit vectors, got shape {x.shape}")
    resultant = x.mean(axis=0)
    length = float(np.linalg.norm(resultant))
    if length < 1e-12:
        raise NumericError("Resultant length is zero; mean direction undefined")
    if mean_resultant_length(VMF_KAPPA_MAX) <= length:
        kappa = VMF_KAPPA_MAX
    else:
        kappa = optimize.brentq(lambda k: mean_resultant_length(k) - length, 1e-14, VMF_KAPPA_MAX, xtol=1e-12)
    return VmfParams(mean_direction=resultant / length, kappa=float(kappa))


# ==================== CURVE-BASED GENERATOR ====================

@dataclass(frozen=True)
class GeneratorModel:
    """
    Everything needed to turn curve positions into profiles.

    Attributes:
        curve: Principal curve in the 3-D embedding
        kappa: VMF concentration (by default the polar-angle von Mises kappa)
        sphere: Sphere the samples are scaled onto
        embedding: PCA model used to invert the projection
        resolution_minutes: Time-step length of the generated profiles
    """
    curve: PrincipalCurve
    kappa: float
    sphere: SphereFit
    embedding: EmbeddingModel
    resolution_minutes: Optional[int] = None

    def __post_init__(self):
        if not self.kappa > 0:
            raise ParameterError(f"kappa must be positive, got {self.kappa}")
        if self.embedding.retained != 3 or self.curve.dimension != 3:
            raise ShapeError("Generator needs a 3-component embedding and a 3-D curve")
        if self.resolution_minutes is None:
            object.__setattr__(self, 'resolution_minutes', MINUTES_PER_DAY // self.embedding.steps)

    @property
    def retained(self) -> int:
        return self.embedding.retained


@dataclass(frozen=True)
class SyntheticBatch:
    """Generated profiles (standardized shapes) tagged with their source s."""
    profiles: np.ndarray
    source_s: np.ndarray
    resolution_minutes: int

    def __len__(self) -> int:
        return self.profiles.shape[0]

    def meter_ids(self, prefix: str = 'syn') -> Tuple[str, ...]:
        width = max(4, len(str(len(self))))
        return tuple(f"{prefix}{i:0{width}d}" for i in range(1, len(self) + 1))

    def to_profile_matrix(self, prefix: str = 'syn') -> ProfileMatrix:
        return ProfileMatrix(values=self.profiles, meter_ids=self.meter_ids(prefix),
                             resolution_minutes=self.resolution_minutes)


def embedding_to_profiles(embedding: EmbeddingModel, points: np.ndarray) -> np.ndarray:
    """P-bar = sqrt(D) (Z V-bar^T + column_means) for 3-D points Z."""
    basis = embedding.basis(points.shape[1])
    return np.sqrt(embedding.steps) * (points @ basis.T + embedding.column_means)


def curve_profiles(curve: PrincipalCurve, embedding: EmbeddingModel, s_values: Sequence[float]) -> np.ndarray:
    """Profiles lying exactly on the curve: the smoothed reconstruction at each s."""
    return embedding_to_profiles(embedding, np.atleast_2d(curve.evaluate(np.asarray(s_values, dtype=float))))


def generate_profiles(model: GeneratorModel, s_values: Sequence[float] = DEFAULT_S_GRID,
                      per_point: int = DEFAULT_PER_POINT, seed: int = 0) -> SyntheticBatch:
    """
    Sample profiles around curve positions.

    For each s the VMF is centred on the direction of f(s) from the sphere
    centre; samples are scaled to the sphere radius, shifted by the centre and
    mapped back through the PCA. Each s gets its own child random stream.

    Raises:
        ParameterError: If an s value is outside [0, 1] or per_point < 1
        DegenerateDirectionError: If f(s) coincides with the sphere centre
    """
    s_array = np.asarray(s_values, dtype=np.float64).ravel()
    if s_array.size == 0 or np.any(s_array < 0.0) or np.any(s_array > 1.0):
        raise ParameterError("s values must be a nonempty subset of [0, 1]")
    if per_point < 1:
        raise ParameterError(f"per_point must be at least 1, got {per_point}")

    center, radius = model.sphere.center, model.sphere.radius
    batches = []
    for s, rng in zip(s_array, spawn_generators(seed, s_array.size)):
        offset = model.curve.evaluate(s) - center
        if np.linalg.norm(offset) <= 1e-12:
            raise DegenerateDirectionError(f"Curve point at s={s:.4f} coincides with the sphere centre")
        samples = sample_vmf(VmfParams.toward(offset, model.kappa), per_point, rng)
        batches.append(center + radius * samples)

    points = np.vstack(batches)
    logger.info("Generated %d profiles over %d curve positions (kappa=%.3g)",
                points.shape[0], s_array.size, model.kappa)
    return SyntheticBatch(
        profiles=embedding_to_profiles(model.embedding, points),
        source_s=np.repeat(s_array, per_point),
        resolution_minutes=model.resolution_minutes,
    )


# ==================== MVG BASELINE ====================

@dataclass(frozen=True)
class MvgModel:
    """Multivariate Gaussian of profile vectors."""
    mean: np.ndarray
    covariance: np.ndarray
    regularized: bool = False

    def __post_init__(self):
        mean = np.array(self.mean, dtype=np.float64, copy=True)
        covariance = np.array(self.covariance, dtype=np.float64, copy=True)
        if covariance.shape != (mean.shape[0], mean.shape[0]):
            raise ShapeError(f"Covariance shape {covariance.shape} does not match mean length {mean.shape[0]}")
        if np.max(np.abs(covariance - covariance.T), initial=0.0) >= 1e-9:
            raise NumericError("Covariance matrix is not symmetric")
        object.__setattr__(self, 'mean', mean)
        object.__setattr__(self, 'covariance', covariance)


def _profile_values(profiles: Any) -> np.ndarray:
    values = getattr(profiles, 'values', profiles)
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ShapeError("Expected an n x D profile set")
    return values


def fit_mvg(profiles: Any) -> MvgModel:
    """
    Moment fit of a profile set.

    Rank-deficient covariances get diagonal loading of 1e-6 * trace / D.
    """
    values = _profile_values(profiles)
    if values.shape[0] < 2:
        raise InsufficientDataError(f"MVG fit needs at least 2 profiles, got {values.shape[0]}")
    steps = values.shape[1]
    covariance = np.cov(values, rowvar=False, ddof=1).reshape(steps, steps)
    covariance = 0.5 * (covariance + covariance.T)
    regularized = False
    if np.linalg.matrix_rank(covariance) < steps and np.trace(covariance) > 0:
        covariance = covariance + (1e-6 * np.trace(covariance) / steps) * np.eye(steps)
        regularized = True
        logger.debug("Cluster covariance is rank deficient; applied diagonal loading")
    return MvgModel(mean=values.mean(axis=0), covariance=covariance, regularized=regularized)


def sample_mvg(model: MvgModel, n: int, seed: SeedLike = 0) -> np.ndarray:
    """Draw n profiles through the eigendecomposition of the covariance."""
    if n < 1:
        raise ParameterError(f"Sample size must be at least 1, got {n}")
    eigenvalues, eigenvectors = linalg.eigh(model.covariance)
    if eigenvalues.min(initial=0.0) < -1e-8:
        raise NumericError(f"Covariance is not positive semidefinite (eigenvalue {eigenvalues.min():.3g})")
    factor = eigenvectors * np.sqrt(np.maximum(eigenvalues, 0.0))
    draws = make_generator(seed).standard_normal((n, model.mean.shape[0]))
    return model.mean + draws @ factor.T


def fit_mvg_by_cluster(profiles: Any, labels: Sequence[str]) -> Dict[str, MvgModel]:
    """One MVG per cluster label; clusters with fewer than 2 members are skipped."""
    values = _profile_values(profiles)
    label_array = np.asarray(labels)
    if label_array.shape[0] != values.shape[0]:
        raise ShapeError(f"{label_array.shape[0]} labels for {values.shape[0]} profiles")
    models = {}
    for label in sorted(set(label_array.tolist())):
        members = values[label_array == label]
        if members.shape[0] < 2:
            logger.warning("Cluster %s has %d profile(s); no MVG fitted", label, members.shape[0])
            continue
        models[label] = fit_mvg(members)
    return models


# ==================== METRICS ====================

def ks_distance(a: Any, b: Any) -> float:
    """Two-sample KS statistic of the pooled values of both sets."""
    first = np.asarray(a, dtype=np.float64).ravel()
    second = np.asarray(b, dtype=np.float64).ravel()
    if first.size == 0 or second.size == 0:
        raise ParameterError("KS distance needs two nonempty samples")
    return float(stats.ks_2samp(first, second).statistic)


def per_step_ks(a: Any, b: Any) -> np.ndarray:
    """KS statistic per time step (column) instead of pooled."""
    first, second = _profile_values(a), _profile_values(b)
    if first.shape[1] != second.shape[1]:
        raise ShapeError(f"Profile lengths differ: {first.shape[1]} vs {second.shape[1]}")
    return np.array([ks_distance(first[:, j], second[:, j]) for j in range(first.shape[1])])


def rmse_profiles(a: Any, b: Any) -> float:
    """RMSE between the per-time-step median profiles of two sets."""
    first, second = _profile_values(a), _profile_values(b)
    if first.shape[1] != second.shape[1]:
        raise ShapeError(f"Profile lengths differ: {first.shape[1]} vs {second.shape[1]}")
    difference = np.median(first, axis=0) - np.median(second, axis=0)
    return float(np.sqrt(np.mean(difference ** 2)))


def summary_stats(sample: Any) -> Dict[str, float]:
    """
    Mean, standard deviation, skewness and excess kurtosis of a sample.

    Raises:
        InsufficientDataError: If fewer than 4 values are given
        UndefinedMomentError: If the sample is constant
    """
    values = np.asarray(sample, dtype=np.float64).ravel()
    if values.size < 4:
        raise InsufficientDataError(f"Summary statistics need at least 4 values, got {values.size}")
    std = float(values.std(ddof=1))
    if not std > 0:
        raise UndefinedMomentError("Sample has zero variance; skewness and kurtosis are undefined")
    return {
        'mean': float(values.mean()),
        'std': std,
        'skewness': float(stats.skew(values, bias=True)),
        'kurtosis': float(stats.kurtosis(values, fisher=True, bias=True)),
    }
