# embedding.py

"""
PCA embedding of normalized profiles and the Gram-matrix (PCoA) pathway.

The covariance of the column-centred unit-norm profiles is decomposed once;
its eigenvectors are the eigenprofiles and projecting onto the first three
gives the point cloud that the sphere and curve modules work on.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg

from profile_sphere.errors import (
    InsufficientDataError,
    NumericError,
    ParameterError,
    ProfileSphereError,
    ShapeError,
)
from profile_sphere.profiles import NormalizedMatrix

logger = logging.getLogger(__name__)

SIGN_CONVENTION = 'largest-magnitude-entry-positive'
EIGEN_CLAMP = 1e-9
ORTHONORMAL_TOLERANCE = 1e-8


class UndefinedVarianceError(ProfileSphereError, ArithmeticError):
    """The spectrum is all zero so explained-variance ratios are undefined."""
    pass


def _readonly(values: Any) -> np.ndarray:
    array = np.array(values, dtype=np.float64, copy=True)
    array.setflags(write=False)
    return array


def _apply_sign_convention(vectors: np.ndarray) -> np.ndarray:
    """Flip columns so that each column's largest-magnitude entry is positive."""
    pivots = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[pivots, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


@dataclass(frozen=True)
class EmbeddingModel:
    """
    Spectral decomposition of the profile covariance.

    Attributes:
        column_means: Length-D column means removed before the decomposition
        eigenvalues: Length-D eigenvalues, nonincreasing and nonnegative
        eigenvectors: D x D orthonormal matrix; column i is eigenprofile v_i
        retained: Number of leading components used downstream (N)
        sample_count: Number of profiles the model was fitted on
    """
    column_means: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    retained: int
    sample_count: int

    def __post_init__(self):
        means = _readonly(self.column_means)
        values = _readonly(self.eigenvalues)
        vectors = _readonly(self.eigenvectors)
        steps = means.shape[0]
        if means.ndim != 1 or values.shape != (steps,) or vectors.shape != (steps, steps):
            raise ShapeError(
                f"Inconsistent embedding shapes: means {means.shape}, eigenvalues {values.shape}, "
                f"eigenvectors {vectors.shape}"
            )
        if np.any(np.diff(values) > EIGEN_CLAMP) or np.any(values < 0):
            raise NumericError("Eigenvalues must be nonnegative and sorted in decreasing order")
        gram = vectors.T @ vectors
        if np.max(np.abs(gram - np.eye(steps))) >= ORTHONORMAL_TOLERANCE:
            raise NumericError("Eigenvector matrix is not orthonormal")
        if not 1 <= self.retained <= steps:
            raise ParameterError(f"retained must lie in [1, {steps}], got {self.retained}")
        object.__setattr__(self, 'column_means', means)
        object.__setattr__(self, 'eigenvalues', values)
        object.__setattr__(self, 'eigenvectors', vectors)

    @property
    def steps(self) -> int:
        return self.column_means.shape[0]

    def basis(self, n: Optional[int] = None) -> np.ndarray:
        """The first n eigenprofiles as a D x n matrix (V-bar)."""
        n = self.retained if n is None else n
        _check_component_count(n, self.steps)
        return self.eigenvectors[:, :n]

    def covariance(self) -> np.ndarray:
        """V diag(lambda) V^T, the covariance the model was fitted to."""
        return (self.eigenvectors * self.eigenvalues) @ self.eigenvectors.T

    def to_dict(self) -> Dict[str, Any]:
        return {
            'column_means': self.column_means.tolist(),
            'eigenvalues': self.eigenvalues.tolist(),
            'eigenvectors': self.eigenvectors.tolist(),
            'retained': int(self.retained),
            'sample_count': int(self.sample_count),
            'sign_convention': SIGN_CONVENTION,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'EmbeddingModel':
        convention = data.get('sign_convention', SIGN_CONVENTION)
        if convention != SIGN_CONVENTION:
            raise ParameterError(f"Unsupported eigenvector sign convention '{convention}'")
        return cls(
            column_means=np.array(data['column_means'], dtype=np.float64),
            eigenvalues=np.array(data['eigenvalues'], dtype=np.float64),
            eigenvectors=np.array(data['eigenvectors'], dtype=np.float64),
            retained=int(data['retained']),
            sample_count=int(data['sample_count']),
        )


@dataclass(frozen=True)
class Embedding:
    """Principal-component scores: one row of N z-scores per profile."""
    coords: np.ndarray
    meter_ids: Tuple[str, ...]

    def __post_init__(self):
        coords = _readonly(self.coords)
        if coords.ndim != 2:
            raise ShapeError("Embedding coordinates must be a 2-D matrix")
        ids = tuple(self.meter_ids)
        if len(ids) != coords.shape[0]:
            raise ShapeError(f"{len(ids)} meter ids for {coords.shape[0]} embedded rows")
        object.__setattr__(self, 'coords', coords)
        object.__setattr__(self, 'meter_ids', ids)

    @property
    def n(self) -> int:
        return self.coords.shape[1]


@dataclass(frozen=True)
class GramEmbedding:
    """PCoA coordinates W = xi * sqrt(lambda) of the double-centred Gram matrix."""
    coords: np.ndarray
    eigenvalues: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'coords', _readonly(self.coords))
        object.__setattr__(self, 'eigenvalues', _readonly(self.eigenvalues))


@dataclass(frozen=True)
class ReconstructedMatrix:
    """
    Rank-n reconstruction X-hat of normalized profiles.

    Rows only keep unit norm when n = D, so this is not a NormalizedMatrix.
    """
    values: np.ndarray
    source_meter_ids: Tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, 'values', _readonly(self.values))
        object.__setattr__(self, 'source_meter_ids', tuple(self.source_meter_ids))

    def to_normalized(self) -> NormalizedMatrix:
        """Validate as a NormalizedMatrix (holds for full-rank reconstructions)."""
        return NormalizedMatrix(values=self.values, source_meter_ids=self.source_meter_ids)


@dataclass(frozen=True)
class BandContrast:
    """Mean Gram similarity of near-diagonal pairs against far-apart pairs."""
    near_mean: float
    far_mean: float
    near: int
    far: int

    @property
    def banded(self) -> bool:
        return self.near_mean > self.far_mean


def _check_component_count(n: int, steps: int) -> None:
    if not 1 <= n <= steps:
        raise ParameterError(f"Component count must lie in [1, {steps}], got {n}")


def _matrix_values(x: Union[NormalizedMatrix, np.ndarray]) -> np.ndarray:
    values = x.values if isinstance(x, NormalizedMatrix) else np.asarray(x, dtype=np.float64)
    if values.ndim != 2:
        raise ShapeError("Expected a 2-D profile matrix")
    return values


# ==================== PCA ====================

def fit_pca(x: NormalizedMatrix, retained: int = 3) -> EmbeddingModel:
    """
    Eigendecompose the covariance of the column-centred normalized profiles.

    Args:
        x: Normalized profiles (M >= 3)
        retained: Number of components kept for projection (capped at D)

    Returns:
        EmbeddingModel: Sorted spectrum with the sign convention applied

    Raises:
        InsufficientDataError: If M < 3
        NumericError: If the eigensolver fails
    """
    values = x.values
    rows, steps = values.shape
    if rows < 3:
        raise InsufficientDataError(f"PCA needs at least 3 profiles, got {rows}")

    means = values.mean(axis=0)
    centered = values - means
    covariance = centered.T @ centered / (rows - 1)
    try:
        eigenvalues, eigenvectors = linalg.eigh(covariance)
    except linalg.LinAlgError as e:
        raise NumericError(f"Covariance eigendecomposition failed: {e}")

    order = np.argsort(eigenvalues)[::-1]
    eigenvalues = eigenvalues[order]
    eigenvectors = _apply_sign_convention(eigenvectors[:, order])
    if eigenvalues[-1] < -EIGEN_CLAMP:
        logger.debug("Clamping negative eigenvalue %.3g to zero", eigenvalues[-1])
    eigenvalues = np.maximum(eigenvalues, 0.0)

    model = EmbeddingModel(
        column_means=means,
        eigenvalues=eigenvalues,
        eigenvectors=eigenvectors,
        retained=min(retained, steps),
        sample_count=rows,
    )
    logger.debug("PCA fitted on %dx%d, leading eigenvalues %s", rows, steps, eigenvalues[:3])
    return model


def project(model: EmbeddingModel, x: NormalizedMatrix, n: Optional[int] = None) -> Embedding:
    """Z = (X - column_means) V-bar with V-bar the first n eigenprofiles."""
    values = _matrix_values(x)
    if values.shape[1] != model.steps:
        raise ShapeError(f"Model has D={model.steps}, data has D={values.shape[1]}")
    coords = (values - model.column_means) @ model.basis(n)
    if isinstance(x, NormalizedMatrix):
        ids = x.source_meter_ids
    else:
        ids = tuple(f"row{i + 1}" for i in range(values.shape[0]))
    return Embedding(coords=coords, meter_ids=ids)


def reconstruct(model: EmbeddingModel, emb: Embedding) -> ReconstructedMatrix:
    """X-hat = Z V-bar^T + column_means, the sum of the n leading elementary matrices."""
    if emb.n > model.steps:
        raise ShapeError(f"Embedding has {emb.n} columns but the model only {model.steps}")
    values = emb.coords @ model.basis(emb.n).T + model.column_means
    return ReconstructedMatrix(values=values, source_meter_ids=emb.meter_ids)


def elementary_matrix(model: EmbeddingModel, emb: Embedding, k: int) -> np.ndarray:
    """
    The rank-one term z_k v_k^T of the expansion X = sum_k X_k + means.

    Args:
        model: Fitted embedding
        emb: Scores produced by this model
        k: 1-based component index, at most the number of embedded columns

    Raises:
        ParameterError: If k is out of range
    """
    if not 1 <= k <= emb.n:
        raise ParameterError(f"Elementary matrix index must lie in [1, {emb.n}], got {k}")
    return np.outer(emb.coords[:, k - 1], model.eigenvectors[:, k - 1])


def cev(model: EmbeddingModel, n: int) -> float:
    """
    Cumulative explained variance of the first n components.

    Raises:
        ParameterError: If n is outside [1, D]
        UndefinedVarianceError: If every eigenvalue is zero
    """
    _check_component_count(n, model.steps)
    total = float(model.eigenvalues.sum())
    if total <= 0.0:
        raise UndefinedVarianceError("All eigenvalues are zero; explained variance is undefined")
    if n == model.steps:
        return 1.0
    return min(1.0, float(model.eigenvalues[:n].sum()) / total)


def cev_table(model: EmbeddingModel) -> List[Tuple[int, float]]:
    """(n, CEV(n)) for every n from 1 to D."""
    return [(n, cev(model, n)) for n in range(1, model.steps + 1)]


def refit_without(x: NormalizedMatrix, model: EmbeddingModel,
                  exclude_ids: Sequence[str]) -> Tuple[EmbeddingModel, NormalizedMatrix]:
    """
    Re-fit the embedding after removing the given meters.

    Column means are only ever re-estimated through this call.

    Returns:
        Tuple of the new model and the reduced normalized matrix
    """
    dropped = set(exclude_ids)
    keep = [i for i, m in enumerate(x.source_meter_ids) if m not in dropped]
    reduced = NormalizedMatrix(
        values=x.values[keep],
        source_meter_ids=tuple(x.source_meter_ids[i] for i in keep),
    )
    logger.info("Re-fitting embedding without %d meters", len(x.source_meter_ids) - len(keep))
    return fit_pca(reduced, retained=model.retained), reduced


# ==================== GRAM MATRIX / PCoA ====================

def similarity_matrix(x: Union[NormalizedMatrix, np.ndarray]) -> np.ndarray:
    """S = X X^T; for unit-norm rows the entries are cosines of inter-profile angles."""
    values = _matrix_values(x)
    return values @ values.T


def band_contrast(similarity: np.ndarray, near: int = 5, far: int = 50) -> BandContrast:
    """
    Compare mean similarity of pairs with lag 1..near against lag >= far.

    Args:
        similarity: Square Gram matrix with rows in the order under test
        near: Largest lag counted as near-diagonal
        far: Smallest lag counted as far

    Raises:
        ParameterError: If the lags are inconsistent or the matrix is too small
    """
    s = np.asarray(similarity, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ShapeError("Similarity matrix must be square")
    if not 1 <= near < far:
        raise ParameterError(f"Need 1 <= near < far, got near={near}, far={far}")
    if s.shape[0] <= far:
        raise ParameterError(f"Need more than {far} rows to measure lag >= {far}, got {s.shape[0]}")
    index = np.arange(s.shape[0])
    lag = np.abs(np.subtract.outer(index, index))
    near_mask = (lag >= 1) & (lag <= near)
    return BandContrast(
        near_mean=float(s[near_mask].mean()),
        far_mean=float(s[lag >= far].mean()),
        near=near,
        far=far,
    )


def pcoa(x: Union[NormalizedMatrix, np.ndarray], n: int = 3) -> GramEmbedding:
    """
    Principal coordinates of the double-centred Gram matrix.

    G = C_M S C_M with C_M = I - 11^T / M; the top n eigenpairs give
    W = xi sqrt(lambda), the same projection PCA yields up to column signs.

    Raises:
        InsufficientDataError: If M < 3
        NumericError: If the leading eigenvalue is negative beyond -1e-6
    """
    values = _matrix_values(x)
    rows = values.shape[0]
    if rows < 3:
        raise InsufficientDataError(f"PCoA needs at least 3 profiles, got {rows}")
    if not 1 <= n <= rows:
        raise ParameterError(f"Component count must lie in [1, {rows}], got {n}")

    similarity = values @ values.T
    centering = np.eye(rows) - np.full((rows, rows), 1.0 / rows)
    gram = centering @ similarity @ centering
    gram = 0.5 * (gram + gram.T)
    try:
        eigenvalues, eigenvectors = linalg.eigh(gram)
    except linalg.LinAlgError as e:
        raise NumericError(f"Gram eigendecomposition failed: {e}")

    order = np.argsort(eigenvalues)[::-1][:n]
    eigenvalues = eigenvalues[order]
    if eigenvalues[0] < -1e-6:
        raise NumericError(f"Leading Gram eigenvalue is negative ({eigenvalues[0]:.3g})")
    eigenvalues = np.maximum(eigenvalues, 0.0)
    vectors = _apply_sign_convention(eigenvectors[:, order])
    return GramEmbedding(coords=vectors * np.sqrt(eigenvalues), eigenvalues=eigenvalues)
