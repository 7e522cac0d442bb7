# curve.py

"""
Principal curve through the embedded point cloud, projection indices,
s-binning into clusters and a Ward-linkage clustering baseline.

The curve is fitted by alternating projection and smoothing: every point is
projected onto the current curve, each coordinate is smoothed against the
projection index with a penalized cubic B-spline, and the result is
reparametrized by arc length onto [0, 1].
"""

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg, optimize, sparse, stats
from scipy.cluster import hierarchy
from scipy.interpolate import BSpline
from scipy.sparse import csgraph
from scipy.spatial import cKDTree

from profile_sphere.config import DEFAULT_BINS, CurveConfig, validate_bins
from profile_sphere.errors import InsufficientDataError, NumericError, ParameterError, ShapeError

logger = logging.getLogger(__name__)

MIN_CURVE_POINTS = 20
ARC_TABLE_SIZE = 4001
TIE_TOLERANCE = 1e-12
PROJECTION_CHUNK = 512
GCV_GRID = 49


def _as_points(points: Any) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[None, :]
    if pts.ndim != 2 or pts.shape[1] < 1:
        raise ShapeError(f"Expected an M x N point matrix, got shape {pts.shape}")
    return pts


# ==================== CURVE ====================

@dataclass(frozen=True, eq=False)
class PrincipalCurve:
    """
    Smooth curve f(s), s in [0, 1], parametrized by normalized arc length.

    The curve is a B-spline f(u) in a raw parameter u; arc_u/arc_s tabulate
    u against normalized cumulative length so that evaluate(s) has unit speed.

    Attributes:
        knots: Full knot vector of the spline
        coefficients: Control values, one column per coordinate
        degree: Spline degree (3 for fitted curves, 1 for polylines)
        arc_u: Raw parameter samples
        arc_s: Normalized arc length at arc_u (0 to 1)
        total_length: Length of the curve
        fit_residual: Mean squared distance of the training points to the curve
        iterations: Projection/smoothing alternations performed
        converged: False when max_iter was reached first
        explained: 1 - fit_residual / mean squared distance to the centroid
        weak_fit: True when explained is below the configured floor
        residual_history: Mean squared projection distance per accepted iterate
        grid_size: Points in the projection search grid
    """
    knots: np.ndarray
    coefficients: np.ndarray
    degree: int
    arc_u: np.ndarray
    arc_s: np.ndarray
    total_length: float
    fit_residual: float = 0.0
    iterations: int = 0
    converged: bool = True
    explained: float = 1.0
    weak_fit: bool = False
    residual_history: Tuple[float, ...] = field(default=())
    grid_size: int = 2000

    @classmethod
    def from_spline(cls, knots: np.ndarray, coefficients: np.ndarray, degree: int, **extra: Any) -> 'PrincipalCurve':
        """Build a curve from spline data, tabulating its arc length."""
        spline = BSpline(knots, coefficients, degree)
        u = np.linspace(0.0, 1.0, ARC_TABLE_SIZE)
        samples = spline(u)
        cumulative = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(samples, axis=0), axis=1))])
        total = float(cumulative[-1])
        if not total > 0:
            raise NumericError("Curve has zero length")
        return cls(
            knots=np.asarray(knots, dtype=np.float64),
            coefficients=np.asarray(coefficients, dtype=np.float64),
            degree=int(degree),
            arc_u=u,
            arc_s=cumulative / total,
            total_length=total,
            **extra,
        )

    @classmethod
    def from_polyline(cls, points: Any, grid_size: int = 2000) -> 'PrincipalCurve':
        """
        Piecewise-linear curve through the given vertices, in order.

        Args:
            points: K x N vertices (K >= 2); repeated consecutive vertices are dropped
        """
        vertices = _as_points(points)
        keep = np.concatenate([[True], np.linalg.norm(np.diff(vertices, axis=0), axis=1) > 0])
        vertices = vertices[keep]
        if vertices.shape[0] < 2:
            raise ParameterError("A polyline needs at least two distinct vertices")
        chord = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(vertices, axis=0), axis=1))])
        u = chord / chord[-1]
        knots = np.concatenate([[0.0], u, [1.0]])
        return cls.from_spline(knots, vertices, 1, grid_size=grid_size)

    @cached_property
    def spline(self) -> BSpline:
        return BSpline(self.knots, self.coefficients, self.degree)

    @property
    def dimension(self) -> int:
        return self.coefficients.shape[1]

    def raw_parameter(self, s: Any) -> np.ndarray:
        return np.interp(np.clip(s, 0.0, 1.0), self.arc_s, self.arc_u)

    def evaluate(self, s: Any) -> np.ndarray:
        """f(s) for scalar or array s (clipped to [0, 1])."""
        return self.spline(self.raw_parameter(s))

    def __call__(self, s: Any) -> np.ndarray:
        return self.evaluate(s)

    @cached_property
    def search_grid(self) -> Tuple[np.ndarray, np.ndarray]:
        """(s values, curve points) of the uniform projection grid."""
        s = np.linspace(0.0, 1.0, self.grid_size)
        return s, self.evaluate(s)

    def polyline(self, n: int = 500) -> np.ndarray:
        """n samples of f(s) at equally spaced s."""
        return self.evaluate(np.linspace(0.0, 1.0, n))

    def arc_length(self, s: float, samples: int = 20001) -> float:
        """Length of f over [0, s] measured on a fine polyline."""
        points = self.evaluate(np.linspace(0.0, float(s), samples))
        return float(np.sum(np.linalg.norm(np.diff(points, axis=0), axis=1)))

    def reversed(self) -> 'PrincipalCurve':
        """The same curve traversed in the opposite direction (s -> 1 - s)."""
        return PrincipalCurve.from_spline(
            1.0 - self.knots[::-1],
            self.coefficients[::-1].copy(),
            self.degree,
            fit_residual=self.fit_residual,
            iterations=self.iterations,
            converged=self.converged,
            explained=self.explained,
            weak_fit=self.weak_fit,
            residual_history=self.residual_history,
            grid_size=self.grid_size,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            'knots': self.knots.tolist(),
            'coefficients': self.coefficients.tolist(),
            'degree': self.degree,
            'total_length': self.total_length,
            'fit_residual': self.fit_residual,
            'iterations': self.iterations,
            'converged': self.converged,
            'explained': self.explained,
            'weak_fit': self.weak_fit,
            'residual_history': list(self.residual_history),
            'grid_size': self.grid_size,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'PrincipalCurve':
        return cls.from_spline(
            np.array(data['knots']),
            np.array(data['coefficients']),
            int(data['degree']),
            fit_residual=float(data.get('fit_residual', 0.0)),
            iterations=int(data.get('iterations', 0)),
            converged=bool(data.get('converged', True)),
            explained=float(data.get('explained', 1.0)),
            weak_fit=bool(data.get('weak_fit', False)),
            residual_history=tuple(data.get('residual_history', ())),
            grid_size=int(data.get('grid_size', 2000)),
        )


# ==================== PROJECTION ====================

def _grid_projection(curve: PrincipalCurve, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Index of the nearest grid point (largest index among ties) and its squared distance."""
    _, grid = curve.search_grid
    size = grid.shape[0]
    index = np.empty(points.shape[0], dtype=int)
    best = np.empty(points.shape[0])
    for start in range(0, points.shape[0], PROJECTION_CHUNK):
        block = points[start:start + PROJECTION_CHUNK]
        d2 = np.sum((block[:, None, :] - grid[None, :, :]) ** 2, axis=2)
        minimum = d2.min(axis=1)
        ties = d2 <= minimum[:, None] + TIE_TOLERANCE
        index[start:start + block.shape[0]] = size - 1 - np.argmax(ties[:, ::-1], axis=1)
        best[start:start + block.shape[0]] = minimum
    return index, best


def _refine(curve: PrincipalCurve, point: np.ndarray, index: int, d2: float) -> Tuple[float, float]:
    s_grid, _ = curve.search_grid
    low = s_grid[max(index - 1, 0)]
    high = s_grid[min(index + 1, s_grid.shape[0] - 1)]
    result = optimize.minimize_scalar(
        lambda s: float(np.sum((point - curve.evaluate(s)) ** 2)),
        bounds=(low, high),
        method='bounded',
        options={'xatol': 1e-10},
    )
    if result.fun < d2 - TIE_TOLERANCE:
        return float(result.x), float(result.fun)
    return float(s_grid[index]), d2


def project_points(curve: PrincipalCurve, points: Any, refine: bool = True) -> Tuple[np.ndarray, np.ndarray]:
    """
    Projection indices of many points.

    Returns:
        Tuple of (s per point, squared distance per point)
    """
    pts = _as_points(points)
    if pts.shape[1] != curve.dimension:
        raise ShapeError(f"Curve is {curve.dimension}-D, points are {pts.shape[1]}-D")
    index, d2 = _grid_projection(curve, pts)
    s_grid, _ = curve.search_grid
    s = s_grid[index].copy()
    if refine:
        for i in range(pts.shape[0]):
            s[i], d2[i] = _refine(curve, pts[i], int(index[i]), float(d2[i]))
    return s, d2


def project_to_curve(curve: PrincipalCurve, point: Any) -> float:
    """
    Projection index of one point: the largest s attaining the minimum distance.

    Dense grid search followed by bounded refinement inside the winning cell.
    """
    s, _ = project_points(curve, _as_points(point), refine=True)
    return float(s[0])


# ==================== SMOOTHING ====================

def _penalized_spline(s: np.ndarray, values: np.ndarray, interior_knots: int,
                      lambda_floor: float) -> Tuple[np.ndarray, np.ndarray, float]:
    """
    Cubic P-spline fit of every column of values against s, lambda chosen by GCV.

    Returns:
        Tuple of (knot vector, coefficients, chosen lambda)
    """
    degree = 3
    inner = np.linspace(0.0, 1.0, interior_knots + 2)[1:-1]
    knots = np.concatenate([np.zeros(degree + 1), inner, np.ones(degree + 1)])
    basis = BSpline.design_matrix(np.clip(s, 0.0, 1.0), knots, degree).toarray()
    n_basis = basis.shape[1]
    difference = np.diff(np.eye(n_basis), n=2, axis=0)
    penalty = difference.T @ difference
    btb = basis.T @ basis
    bty = basis.T @ values
    scale = np.trace(btb) / np.trace(penalty)
    rows = s.shape[0]

    best = None
    for lam in scale * np.logspace(np.log10(lambda_floor), 3.0, GCV_GRID):
        system = btb + lam * penalty
        try:
            coefficients = linalg.solve(system, bty, assume_a='pos')
            hat_trace = float(np.trace(linalg.solve(system, btb, assume_a='pos')))
        except linalg.LinAlgError:
            continue
        if hat_trace >= rows - 1e-9:
            continue
        rss = float(np.sum((values - basis @ coefficients) ** 2))
        score = rows * rss / (rows - hat_trace) ** 2
        if best is None or score < best[0]:
            best = (score, coefficients, lam)
    if best is None:
        raise NumericError("Penalized spline system could not be solved for any smoothing parameter")
    return knots, best[1], float(best[2])


def _smooth_curve(points: np.ndarray, s: np.ndarray, config: CurveConfig) -> PrincipalCurve:
    knots, coefficients, lam = _penalized_spline(
        s, points, config.knot_count(points.shape[0]), config.lambda_floor,
    )
    logger.debug("Smoothed curve with lambda=%.3g", lam)
    return PrincipalCurve.from_spline(knots, coefficients, 3, grid_size=config.grid_size)


def _neighbour_graph(points: np.ndarray, neighbors: int) -> sparse.csr_matrix:
    """Symmetric 0/1 adjacency of the k-nearest-neighbour graph, widened until connected."""
    count = points.shape[0]
    tree = cKDTree(points)
    k = min(neighbors, count - 1)
    while True:
        _, idx = tree.query(points, k=k + 1)
        rows = np.repeat(np.arange(count), k)
        adjacency = sparse.csr_matrix((np.ones(rows.size), (rows, idx[:, 1:].ravel())), shape=(count, count))
        adjacency = adjacency.maximum(adjacency.T)
        components, _ = csgraph.connected_components(adjacency, directed=False)
        if components == 1 or k == count - 1:
            return adjacency
        logger.debug("Neighbour graph has %d components at k=%d; widening", components, k)
        k = min(2 * k, count - 1)


def _initial_parameter(points: np.ndarray, neighbors: int) -> np.ndarray:
    """
    Rank points along the Fiedler vector of their nearest-neighbour graph.

    The vector varies monotonically along a chain of neighbours, so the ranks
    follow the path through the cloud rather than a fixed direction.
    """
    laplacian = csgraph.laplacian(_neighbour_graph(points, neighbors)).toarray()
    _, vectors = linalg.eigh(laplacian, subset_by_index=[1, 1])
    ranks = stats.rankdata(vectors[:, 0], method='ordinal') - 1
    return ranks / (points.shape[0] - 1)


def _endpoint_azimuth(curve: PrincipalCurve, centroid: np.ndarray) -> Tuple[float, float]:
    ends = curve.evaluate(np.array([0.0, 1.0])) - centroid
    azimuth = np.arctan2(ends[:, 1], ends[:, 0])
    return float(azimuth[0]), float(azimuth[1])


def fit_principal_curve(points: Any, config: Optional[CurveConfig] = None) -> PrincipalCurve:
    """
    Fit a principal curve by alternating projection and smoothing.

    Args:
        points: M x 3 point cloud, M >= 20
        config: Curve settings (defaults to CurveConfig())

    Returns:
        PrincipalCurve: Best iterate, oriented so that s = 0 is the end with
        the smaller azimuth about the cloud centroid

    Raises:
        InsufficientDataError: If fewer than 20 points are given
    """
    config = config or CurveConfig()
    config.validate()
    pts = _as_points(points)
    if pts.shape[0] < MIN_CURVE_POINTS:
        raise InsufficientDataError(f"Principal curve needs {MIN_CURVE_POINTS} points, got {pts.shape[0]}")

    curve = _smooth_curve(pts, _initial_parameter(pts, config.neighbors), config)
    best_curve, history = curve, []
    converged = False
    iterations = 0
    for iterations in range(1, config.max_iter + 1):
        s, d2 = project_points(curve, pts, refine=False)
        residual = float(d2.mean())
        if history and residual > history[-1]:
            logger.debug("Residual rose to %.6g at iteration %d; keeping best iterate", residual, iterations)
            converged = True
            break
        best_curve = curve
        history.append(residual)
        if len(history) > 1 and (history[-2] - residual) <= config.tol * max(history[-2], 1e-300):
            converged = True
            break
        curve = _smooth_curve(pts, s, config)

    if not converged:
        logger.warning("Principal curve did not converge in %d iterations; returning best iterate",
                       config.max_iter)

    centroid = pts.mean(axis=0)
    spread = float(np.mean(np.sum((pts - centroid) ** 2, axis=1)))
    residual = history[-1]
    explained = 1.0 - residual / spread if spread > 0 else 0.0
    weak = explained < config.explained_floor
    if weak:
        logger.warning("Principal curve explains only %.1f%% of the spread; no clear latent ordering",
                       100.0 * explained)

    fitted = PrincipalCurve(
        knots=best_curve.knots,
        coefficients=best_curve.coefficients,
        degree=best_curve.degree,
        arc_u=best_curve.arc_u,
        arc_s=best_curve.arc_s,
        total_length=best_curve.total_length,
        fit_residual=residual,
        iterations=iterations,
        converged=converged,
        explained=explained,
        weak_fit=weak,
        residual_history=tuple(history),
        grid_size=config.grid_size,
    )
    start, end = _endpoint_azimuth(fitted, centroid)
    if end < start:
        fitted = fitted.reversed()
    logger.info("Principal curve: residual=%.4g explained=%.3f after %d iteration(s)",
                residual, explained, iterations)
    return fitted


# ==================== ORDERING AND BINS ====================

@dataclass(frozen=True)
class OrderedDataset:
    """Projection index per profile and the permutation sorting by it."""
    s: np.ndarray
    permutation: np.ndarray
    distances: np.ndarray
    meter_ids: Tuple[str, ...]

    def __post_init__(self):
        if np.any(self.s < 0.0) or np.any(self.s > 1.0):
            raise NumericError("Projection indices must lie in [0, 1]")
        if not np.array_equal(np.sort(self.permutation), np.arange(self.s.shape[0])):
            raise NumericError("Ordering is not a permutation of the rows")

    @property
    def ordered_ids(self) -> List[str]:
        return [self.meter_ids[i] for i in self.permutation]

    def ranks(self) -> np.ndarray:
        """Position of every row in the ordering."""
        ranks = np.empty_like(self.permutation)
        ranks[self.permutation] = np.arange(self.permutation.shape[0])
        return ranks


def order_dataset(curve: PrincipalCurve, points: Any,
                  meter_ids: Optional[Sequence[str]] = None) -> OrderedDataset:
    """Project every point and sort by ascending s (ties by row index)."""
    pts = _as_points(points)
    s, d2 = project_points(curve, pts, refine=True)
    ids = tuple(meter_ids) if meter_ids is not None else tuple(f"row{i + 1}" for i in range(pts.shape[0]))
    if len(ids) != pts.shape[0]:
        raise ShapeError(f"{len(ids)} meter ids for {pts.shape[0]} points")
    return OrderedDataset(
        s=s,
        permutation=np.argsort(s, kind='stable'),
        distances=np.sqrt(d2),
        meter_ids=ids,
    )


@dataclass(frozen=True)
class ClusterBins:
    """Hard clusters C1..Ck cut from the projection index."""
    boundaries: Tuple[float, ...]
    labels: Tuple[str, ...]
    empty: Tuple[str, ...] = ()

    @property
    def names(self) -> List[str]:
        return [f"C{i}" for i in range(1, len(self.boundaries) + 2)]

    def counts(self) -> Dict[str, int]:
        return {name: self.labels.count(name) for name in self.names}

    def members(self, name: str) -> np.ndarray:
        return np.array([label == name for label in self.labels])


def s_labels(s: Any, boundaries: Sequence[float] = DEFAULT_BINS) -> Tuple[str, ...]:
    """Cluster label C1..Ck of each s value for the given cut-points."""
    cuts = tuple(float(b) for b in boundaries)
    validate_bins(cuts)
    index = np.searchsorted(np.array(cuts), np.atleast_1d(np.asarray(s, dtype=float)), side='right')
    return tuple(f"C{i + 1}" for i in index)


def bin_clusters(ordered: OrderedDataset, boundaries: Sequence[float] = DEFAULT_BINS) -> ClusterBins:
    """
    Label profiles by s bin: half-open [b_j, b_j+1) with the last bin closed.

    Empty bins are reported on the result and logged, not raised.
    """
    cuts = tuple(float(b) for b in boundaries)
    labels = s_labels(ordered.s, cuts)
    bins = ClusterBins(boundaries=cuts, labels=labels)
    empty = tuple(name for name, count in bins.counts().items() if count == 0)
    for name in empty:
        logger.warning("Cluster %s is empty", name)
    return ClusterBins(boundaries=cuts, labels=labels, empty=empty)


def mixture_share(s: float, s_from: float, s_to: float) -> float:
    """
    Share of the 'to' cluster for a profile at s between two cluster centroids.

    A profile at s = 0.22 between centroids 0.1 and 0.5 is 30% 'to', 70% 'from'.
    """
    if s_from == s_to:
        raise ParameterError("Cluster centroids must differ")
    return float(np.clip((s - s_from) / (s_to - s_from), 0.0, 1.0))


def spearman_agreement(order_a: Any, order_b: Any) -> float:
    """|Spearman rho| between two orderings (orientation-agnostic)."""
    rho = stats.spearmanr(np.asarray(order_a), np.asarray(order_b)).correlation
    return float(abs(rho))


# ==================== WARD BASELINE ====================

def ward_clustering(points: Any, k: int) -> np.ndarray:
    """
    Ward-linkage agglomerative clustering cut into k clusters.

    Labels are 0..k-1 numbered by first appearance in row order.

    Raises:
        ParameterError: If k is outside [1, M]
    """
    pts = _as_points(points)
    rows = pts.shape[0]
    if not 1 <= k <= rows:
        raise ParameterError(f"k must lie in [1, {rows}], got {k}")
    if k == rows:
        return np.arange(rows)
    if k == 1:
        return np.zeros(rows, dtype=int)
    linkage = hierarchy.linkage(pts, method='ward', metric='euclidean')
    raw = hierarchy.cut_tree(linkage, n_clusters=k).ravel()
    mapping: Dict[int, int] = {}
    for label in raw:
        mapping.setdefault(int(label), len(mapping))
    return np.array([mapping[int(label)] for label in raw])
