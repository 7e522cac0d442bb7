# sphere.py

"""
Sphere fit of the 3-D embedding and spherical-coordinate outlier models.

Points are centred on a least-squares sphere and described by azimuth,
polar angle and radius. The two angles get von Mises fits, the radius a
skew-normal fit, and a profile is flagged when any of its coordinates falls
outside the central confidence interval of the matching marginal.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import linalg, optimize, special, stats

from profile_sphere.errors import (
    InsufficientDataError,
    NumericError,
    ParameterError,
    ProfileSphereError,
    ShapeError,
)

logger = logging.getLogger(__name__)

KAPPA_MAX = 1e4
ORIGIN_EPSILON = 1e-12
RESULTANT_EPSILON = 1e-12
MIN_ANGLE_SAMPLES = 10
MIN_RADIUS_SAMPLES = 20
ROBUST_MAD_CUTOFF = 5.0


class DegenerateGeometryError(ProfileSphereError, ArithmeticError):
    """Points are coplanar or collinear so no unique sphere exists."""
    pass


def wrap_angle(angles: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """Map angles into (-pi, pi]."""
    wrapped = np.pi - np.mod(np.pi - np.asarray(angles, dtype=np.float64), 2.0 * np.pi)
    return float(wrapped) if np.ndim(wrapped) == 0 else wrapped


def _as_points(points: Any) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ShapeError(f"Expected an M x 3 point matrix, got shape {pts.shape}")
    return pts


# ==================== SPHERE FIT ====================

@dataclass(frozen=True)
class SphereFit:
    """
    Least-squares sphere.

    Attributes:
        center: Centre c (3-vector)
        radius: Radius r > 0
        residual_rms: RMS of the geometric residuals ||z - c|| - r
    """
    center: np.ndarray
    radius: float
    residual_rms: float = 0.0

    def __post_init__(self):
        center = np.array(self.center, dtype=np.float64, copy=True)
        if center.shape != (3,):
            raise ShapeError(f"Sphere centre must be a 3-vector, got shape {center.shape}")
        if not self.radius > 0:
            raise DegenerateGeometryError(f"Sphere radius must be positive, got {self.radius}")
        center.setflags(write=False)
        object.__setattr__(self, 'center', center)
        object.__setattr__(self, 'radius', float(self.radius))
        object.__setattr__(self, 'residual_rms', float(self.residual_rms))

    def to_dict(self) -> Dict[str, Any]:
        return {'center': self.center.tolist(), 'radius': self.radius, 'residual_rms': self.residual_rms}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'SphereFit':
        return cls(center=np.array(data['center']), radius=data['radius'],
                   residual_rms=data.get('residual_rms', 0.0))


def sphere_objective(points: np.ndarray, center: np.ndarray, rho: float) -> float:
    """Algebraic objective sum_i (||z_i - c||^2 - rho)^2 minimised by fit_sphere."""
    pts = _as_points(points)
    squared = np.sum((pts - np.asarray(center)) ** 2, axis=1)
    return float(np.sum((squared - rho) ** 2))


def fit_sphere(points: Any, refine: bool = False) -> SphereFit:
    """
    Fit a sphere with the linearized least-squares formulation.

    Expanding ||z - c||^2 = rho gives the linear system
    [2z, 1] (c, rho - ||c||^2) = ||z||^2.

    Args:
        points: M x 3 coordinates, M >= 4 and not coplanar
        refine: Polish the algebraic solution by minimising the geometric residual

    Returns:
        SphereFit: Centre, radius and residual RMS

    Raises:
        InsufficientDataError: If fewer than 4 points are given
        DegenerateGeometryError: If the system is rank deficient
    """
    pts = _as_points(points)
    if pts.shape[0] < 4:
        raise InsufficientDataError(f"Sphere fit needs at least 4 points, got {pts.shape[0]}")

    design = np.hstack([2.0 * pts, np.ones((pts.shape[0], 1))])
    target = np.sum(pts ** 2, axis=1)
    solution, _, rank, singular = linalg.lstsq(design, target)
    if rank < 4 or singular[-1] <= singular[0] * 1e-12:
        raise DegenerateGeometryError("Points are coplanar or collinear; sphere is not determined")

    center = solution[:3]
    rho = solution[3] + float(center @ center)
    if not rho > 0:
        raise DegenerateGeometryError(f"Fitted squared radius is not positive ({rho:.3g})")
    radius = float(np.sqrt(rho))

    if refine:
        result = optimize.least_squares(
            lambda p: np.linalg.norm(pts - p[:3], axis=1) - p[3],
            x0=np.append(center, radius),
            method='lm',
        )
        if result.success and result.x[3] > 0:
            center, radius = result.x[:3], float(result.x[3])
        else:
            logger.warning("Geometric sphere refinement failed (%s); keeping algebraic fit", result.message)

    residual = np.linalg.norm(pts - center, axis=1) - radius
    fit = SphereFit(center=center, radius=radius, residual_rms=float(np.sqrt(np.mean(residual ** 2))))
    logger.debug("Sphere fit: centre=%s radius=%.6f rms=%.3g", fit.center, fit.radius, fit.residual_rms)
    return fit


# ==================== SPHERICAL COORDINATES ====================

@dataclass(frozen=True)
class SphericalCoords:
    """
    Per-profile (azimuth, polar, radius) about the sphere centre.

    Attributes:
        azimuth: phi in (-pi, pi], measured from +z1
        polar: theta in [0, pi], measured from +z3
        radius: Distance to the centre
        undefined: True where the centred point is the origin (direction undefined)
    """
    azimuth: np.ndarray
    polar: np.ndarray
    radius: np.ndarray
    undefined: np.ndarray = field(default=None)

    def __post_init__(self):
        arrays = {}
        for name in ('azimuth', 'polar', 'radius'):
            array = np.array(getattr(self, name), dtype=np.float64, copy=True).ravel()
            array.setflags(write=False)
            arrays[name] = array
        size = arrays['azimuth'].shape[0]
        if arrays['polar'].shape[0] != size or arrays['radius'].shape[0] != size:
            raise ShapeError("azimuth, polar and radius must have the same length")
        undefined = np.zeros(size, dtype=bool) if self.undefined is None else np.array(self.undefined, dtype=bool)
        undefined.setflags(write=False)
        for name, array in arrays.items():
            object.__setattr__(self, name, array)
        object.__setattr__(self, 'undefined', undefined)

    def __len__(self) -> int:
        return self.azimuth.shape[0]

    def to_cartesian(self) -> np.ndarray:
        """Centred Cartesian points r (sin t cos p, sin t sin p, cos t)."""
        sin_polar = np.sin(self.polar)
        return self.radius[:, None] * np.column_stack([
            sin_polar * np.cos(self.azimuth),
            sin_polar * np.sin(self.azimuth),
            np.cos(self.polar),
        ])


def to_spherical(points: Any, fit: SphereFit) -> SphericalCoords:
    """
    Centre points on the sphere and convert to spherical coordinates.

    Uses arctan2 forms equal to phi = sgn(z2) arccos(z1 / sqrt(z1^2 + z2^2))
    and theta = arccos(z3 / r). Rows at the centre get undefined=True and
    zero angles.
    """
    centred = _as_points(points) - fit.center
    radius = np.linalg.norm(centred, axis=1)
    undefined = radius <= ORIGIN_EPSILON

    azimuth = np.arctan2(centred[:, 1], centred[:, 0])
    azimuth = np.where(azimuth <= -np.pi, np.pi, azimuth) + 0.0
    polar = np.arctan2(np.hypot(centred[:, 0], centred[:, 1]), centred[:, 2])

    if undefined.any():
        logger.warning("%d point(s) coincide with the sphere centre; direction undefined", int(undefined.sum()))
        azimuth = np.where(undefined, 0.0, azimuth)
        polar = np.where(undefined, 0.0, polar)
        radius = np.where(undefined, 0.0, radius)
    return SphericalCoords(azimuth=azimuth, polar=polar, radius=radius, undefined=undefined)


def circular_mean(angles: Any) -> Tuple[float, float]:
    """Return (mean direction in (-pi, pi], mean resultant length)."""
    sample = np.asarray(angles, dtype=np.float64)
    c, s = np.mean(np.cos(sample)), np.mean(np.sin(sample))
    return wrap_angle(np.arctan2(s, c)), float(np.hypot(c, s))


def center_azimuth(azimuth: Any, center: float) -> np.ndarray:
    """phi-hat = phi - center, wrapped into (-pi, pi]."""
    return wrap_angle(np.asarray(azimuth, dtype=np.float64) - center)


# ==================== VON MISES ====================

@dataclass(frozen=True)
class VonMisesParams:
    """Von Mises fit of an angle sample."""
    mean_direction: float
    kappa: float
    resultant_length: float = 1.0
    mean_defined: bool = True

    def __post_init__(self):
        if not self.kappa >= 0:
            raise ParameterError(f"kappa must be nonnegative, got {self.kappa}")
        if not -np.pi < self.mean_direction <= np.pi:
            raise ParameterError(f"mean direction {self.mean_direction} is outside (-pi, pi]")

    def to_dict(self) -> Dict[str, Any]:
        return {
            'mean_direction': float(self.mean_direction),
            'kappa': float(self.kappa),
            'resultant_length': float(self.resultant_length),
            'mean_defined': bool(self.mean_defined),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'VonMisesParams':
        return cls(**{k: data[k] for k in ('mean_direction', 'kappa', 'resultant_length', 'mean_defined')})


def bessel_ratio(kappa: float) -> float:
    """A(kappa) = I1(kappa) / I0(kappa)."""
    return float(special.i1e(kappa) / special.i0e(kappa))


def kappa_from_resultant(resultant: float) -> float:
    """
    Solve A(kappa) = R-bar: closed-form start plus one Newton step, capped at KAPPA_MAX.
    """
    if resultant < RESULTANT_EPSILON:
        return 0.0
    if resultant >= 1.0 - RESULTANT_EPSILON:
        return KAPPA_MAX
    kappa = resultant * (2.0 - resultant ** 2) / (1.0 - resultant ** 2)
    ratio = bessel_ratio(kappa)
    slope = 1.0 - ratio / kappa - ratio ** 2
    if slope > 0:
        step = kappa - (ratio - resultant) / slope
        if np.isfinite(step) and step > 0:
            kappa = step
    return float(min(kappa, KAPPA_MAX))


def fit_von_mises(angles: Any) -> VonMisesParams:
    """
    Fit a von Mises distribution to an angle sample.

    Args:
        angles: At least 10 angles in radians

    Returns:
        VonMisesParams: Circular mean and concentration; kappa = 0 with
        mean_defined=False when the resultant length vanishes

    Raises:
        InsufficientDataError: If fewer than 10 angles are given
    """
    sample = np.asarray(angles, dtype=np.float64).ravel()
    if sample.size < MIN_ANGLE_SAMPLES:
        raise InsufficientDataError(f"Von Mises fit needs {MIN_ANGLE_SAMPLES} angles, got {sample.size}")
    mean, resultant = circular_mean(sample)
    if resultant < RESULTANT_EPSILON:
        logger.warning("Resultant length is zero; mean direction undefined, kappa set to 0")
        return VonMisesParams(mean_direction=0.0, kappa=0.0, resultant_length=resultant, mean_defined=False)
    return VonMisesParams(mean_direction=mean, kappa=kappa_from_resultant(resultant), resultant_length=resultant)


# ==================== SKEW NORMAL ====================

@dataclass(frozen=True)
class SkewNormalParams:
    """
    Skew-normal fit of the radius sample.

    Attributes:
        location: xi
        scale: omega > 0
        shape: alpha
        method: 'mle', or 'moments' when the optimizer failed and the start values were kept
    """
    location: float
    scale: float
    shape: float
    method: str = 'mle'

    def __post_init__(self):
        if not self.scale > 0:
            raise ParameterError(f"Skew-normal scale must be positive, got {self.scale}")

    def distribution(self):
        return stats.skewnorm(self.shape, loc=self.location, scale=self.scale)

    def to_dict(self) -> Dict[str, Any]:
        return {'location': float(self.location), 'scale': float(self.scale),
                'shape': float(self.shape), 'method': self.method}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'SkewNormalParams':
        return cls(location=data['location'], scale=data['scale'], shape=data['shape'],
                   method=data.get('method', 'mle'))


def _skew_normal_moments(sample: np.ndarray) -> SkewNormalParams:
    mean, std = sample.mean(), sample.std()
    gamma = float(np.clip(stats.skew(sample), -0.99, 0.99))
    g23 = abs(gamma) ** (2.0 / 3.0)
    delta = np.sign(gamma) * np.sqrt((np.pi / 2.0) * g23 / (g23 + ((4.0 - np.pi) / 2.0) ** (2.0 / 3.0)))
    delta = float(np.clip(delta, -0.995, 0.995))
    scale = std / np.sqrt(1.0 - 2.0 * delta ** 2 / np.pi)
    return SkewNormalParams(
        location=float(mean - scale * delta * np.sqrt(2.0 / np.pi)),
        scale=float(scale),
        shape=float(delta / np.sqrt(1.0 - delta ** 2)),
        method='moments',
    )


def _skew_normal_nll(theta: np.ndarray, sample: np.ndarray) -> float:
    location, log_scale, shape = theta
    z = (sample - location) / np.exp(log_scale)
    log_density = np.log(2.0) - 0.5 * z ** 2 - 0.5 * np.log(2.0 * np.pi) - log_scale + special.log_ndtr(shape * z)
    return float(-np.mean(log_density))


def fit_skew_normal(radii: Any, max_iter: int = 4000) -> SkewNormalParams:
    """
    Maximum-likelihood skew-normal fit started from the method of moments.

    Args:
        radii: At least 20 radii with nonzero variance
        max_iter: Optimizer iteration limit

    Returns:
        SkewNormalParams: MLE, or the moment estimate with method='moments' if
        the optimizer did not converge

    Raises:
        InsufficientDataError: If fewer than 20 radii are given
        ParameterError: If the sample is constant
    """
    sample = np.asarray(radii, dtype=np.float64).ravel()
    if sample.size < MIN_RADIUS_SAMPLES:
        raise InsufficientDataError(f"Skew-normal fit needs {MIN_RADIUS_SAMPLES} radii, got {sample.size}")
    if not sample.std() > 0:
        raise ParameterError("Radius sample has zero variance")

    start = _skew_normal_moments(sample)
    result = optimize.minimize(
        _skew_normal_nll,
        x0=np.array([start.location, np.log(start.scale), start.shape]),
        args=(sample,),
        method='Nelder-Mead',
        options={'maxiter': max_iter, 'xatol': 1e-7, 'fatol': 1e-10},
    )
    if not result.success or not np.all(np.isfinite(result.x)):
        logger.warning("Skew-normal MLE did not converge (%s); using moment estimates", result.message)
        return start
    location, log_scale, shape = result.x
    return SkewNormalParams(location=float(location), scale=float(np.exp(log_scale)), shape=float(shape))


# ==================== REJECTION REGIONS ====================

def _check_level(level: float) -> None:
    if not 0.0 < level < 1.0:
        raise ParameterError(f"Confidence level must lie in (0, 1), got {level}")


def von_mises_half_width(kappa: float, level: float) -> float:
    """Half-width h with P(|angle - mu| <= h) = level under VM(mu, kappa)."""
    _check_level(level)
    if kappa < 1e-8:
        return level * np.pi
    target = 0.5 * (1.0 + level)
    return float(optimize.brentq(
        lambda h: stats.vonmises.cdf(h, kappa) - target, 0.0, np.pi, xtol=1e-12,
    ))


def rejection_bounds(params: Union[VonMisesParams, SkewNormalParams], level: float = 0.95) -> Tuple[float, float]:
    """
    Central interval [q_(1-level)/2, q_(1+level)/2] of a fitted marginal.

    For von Mises fits the bounds are mu -/+ h and may extend past +/-pi;
    membership is tested on the wrapped deviation from mu.
    """
    _check_level(level)
    if isinstance(params, VonMisesParams):
        half = von_mises_half_width(params.kappa, level)
        return params.mean_direction - half, params.mean_direction + half
    if isinstance(params, SkewNormalParams):
        low, high = params.distribution().ppf([0.5 * (1.0 - level), 0.5 * (1.0 + level)])
        return float(low), float(high)
    raise ParameterError(f"Unsupported distribution parameters: {type(params).__name__}")


def outside_angle_region(angles: np.ndarray, params: VonMisesParams, level: float) -> np.ndarray:
    deviation = np.abs(wrap_angle(np.asarray(angles) - params.mean_direction))
    return np.atleast_1d(deviation > von_mises_half_width(params.kappa, level))


# ==================== SPHERE MODEL ====================

@dataclass(frozen=True)
class SphereModel:
    """
    Sphere fit plus the three independent marginal fits.

    Attributes:
        sphere: Fitted sphere
        azimuth_center: Circular mean of the raw azimuths (subtracted before fitting)
        azimuth: Von Mises fit of the centred azimuth
        polar: Von Mises fit of the (uncentred) polar angle
        radius: Skew-normal fit of the radius
        robust_excluded: Radii dropped by the robust pre-screen before the radius fit
    """
    sphere: SphereFit
    azimuth_center: float
    azimuth: VonMisesParams
    polar: VonMisesParams
    radius: SkewNormalParams
    robust_excluded: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            'sphere': self.sphere.to_dict(),
            'azimuth_center': float(self.azimuth_center),
            'azimuth': self.azimuth.to_dict(),
            'polar': self.polar.to_dict(),
            'radius': self.radius.to_dict(),
            'robust_excluded': int(self.robust_excluded),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'SphereModel':
        return cls(
            sphere=SphereFit.from_dict(data['sphere']),
            azimuth_center=float(data['azimuth_center']),
            azimuth=VonMisesParams.from_dict(data['azimuth']),
            polar=VonMisesParams.from_dict(data['polar']),
            radius=SkewNormalParams.from_dict(data['radius']),
            robust_excluded=int(data.get('robust_excluded', 0)),
        )


def _robust_radii(radii: np.ndarray) -> np.ndarray:
    median = np.median(radii)
    spread = stats.median_abs_deviation(radii, scale='normal')
    if spread <= 0:
        return radii
    return radii[radii >= median - ROBUST_MAD_CUTOFF * spread]


def fit_marginals(coords: SphericalCoords, sphere: SphereFit, robust: bool = False) -> SphereModel:
    """Fit the azimuth, polar and radius marginals of the defined rows."""
    defined = ~coords.undefined
    azimuth_center, _ = circular_mean(coords.azimuth[defined])
    radii = coords.radius[defined]
    screened = _robust_radii(radii) if robust else radii
    if screened.size < radii.size:
        logger.info("Robust radius screen dropped %d gross outlier(s) before the skew-normal fit",
                    radii.size - screened.size)
    return SphereModel(
        sphere=sphere,
        azimuth_center=azimuth_center,
        azimuth=fit_von_mises(center_azimuth(coords.azimuth[defined], azimuth_center)),
        polar=fit_von_mises(coords.polar[defined]),
        radius=fit_skew_normal(screened),
        robust_excluded=int(radii.size - screened.size),
    )


def fit_sphere_model(points: Any, robust: bool = False, refine: bool = False) -> SphereModel:
    """Fit the sphere and its three marginal distributions to an M x 3 cloud."""
    sphere = fit_sphere(points, refine=refine)
    return fit_marginals(to_spherical(points, sphere), sphere, robust=robust)


# ==================== OUTLIERS ====================

@dataclass(frozen=True)
class OutlierReport:
    """
    Per-meter rejection-region flags.

    radius_side is -1 below the radius interval, +1 above it and 0 inside.
    """
    meter_ids: Tuple[str, ...]
    azimuth_out: np.ndarray
    polar_out: np.ndarray
    radius_out: np.ndarray
    radius_side: np.ndarray
    bounds: Dict[str, Tuple[float, float]]
    level: float
    centred_azimuth: np.ndarray
    polar: np.ndarray
    radius: np.ndarray

    def __post_init__(self):
        for name, (low, high) in self.bounds.items():
            if not low < high:
                raise NumericError(f"Rejection bounds for {name} are not ordered: ({low}, {high})")

    @property
    def outlier(self) -> np.ndarray:
        return self.azimuth_out | self.polar_out | self.radius_out

    def flagged_ids(self, variable: Optional[str] = None) -> List[str]:
        """Meter ids flagged on one variable ('azimuth', 'polar', 'radius') or on any."""
        mask = self.outlier if variable is None else getattr(self, f"{variable}_out")
        return [m for m, flag in zip(self.meter_ids, mask) if flag]

    def flag_rates(self) -> Dict[str, float]:
        return {
            'azimuth': float(self.azimuth_out.mean()),
            'polar': float(self.polar_out.mean()),
            'radius': float(self.radius_out.mean()),
            'any': float(self.outlier.mean()),
        }

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            'meter_id': list(self.meter_ids),
            'azimuth_out': self.azimuth_out.astype(bool),
            'polar_out': self.polar_out.astype(bool),
            'radius_out': self.radius_out.astype(bool),
            'phi': self.centred_azimuth,
            'theta': self.polar,
            'r': self.radius,
        })


def detect_outliers(coords: SphericalCoords, level: float = 0.95,
                    model: Optional[SphereModel] = None,
                    meter_ids: Optional[Sequence[str]] = None) -> OutlierReport:
    """
    Flag profiles outside the central rejection regions.

    Args:
        coords: Spherical coordinates of the profiles
        level: Confidence level of every interval
        model: Fitted marginals; fitted from coords when omitted
        meter_ids: Ids aligned with coords (defaults to row1..rowM)

    Returns:
        OutlierReport: Flags, bounds and the tested values
    """
    _check_level(level)
    if model is None:
        sphere = SphereFit(center=np.zeros(3), radius=1.0)
        model = fit_marginals(coords, sphere)
    ids = tuple(meter_ids) if meter_ids is not None else tuple(f"row{i + 1}" for i in range(len(coords)))
    if len(ids) != len(coords):
        raise ShapeError(f"{len(ids)} meter ids for {len(coords)} coordinate rows")

    centred = center_azimuth(coords.azimuth, model.azimuth_center)
    azimuth_out = outside_angle_region(centred, model.azimuth, level)
    polar_out = outside_angle_region(coords.polar, model.polar, level)
    low, high = rejection_bounds(model.radius, level)
    radius_side = np.where(coords.radius < low, -1, np.where(coords.radius > high, 1, 0))
    radius_side = np.where(coords.undefined, -1, radius_side)
    azimuth_out = azimuth_out & ~coords.undefined
    polar_out = polar_out & ~coords.undefined

    report = OutlierReport(
        meter_ids=ids,
        azimuth_out=azimuth_out,
        polar_out=polar_out,
        radius_out=radius_side != 0,
        radius_side=radius_side,
        bounds={
            'azimuth': rejection_bounds(model.azimuth, level),
            'polar': rejection_bounds(model.polar, level),
            'radius': (low, high),
        },
        level=level,
        centred_azimuth=centred,
        polar=coords.polar,
        radius=coords.radius,
    )
    logger.info("Flagged %d of %d profiles at level %.2f", int(report.outlier.sum()), len(ids), level)
    return report
