# oracle.py

"""
Ground-truth corpora: a gradually changing synthetic process with a known
latent order, and planted defective meters with known labels.

Sample i (1-based) of the process is

    h_i(t) = tau(i) g(t, 1) + (1 - tau(i)) g(t, nu(i)) + noise_scale * eps

with g(t, mu) the standard normal density centred on mu,
tau(i) = 0.02 i - 1 and nu(i) = 0.08 i - 4, discretized on t in [-6, 6].
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy import stats

from profile_sphere.errors import ParameterError
from profile_sphere.profiles import MINUTES_PER_DAY, ProfileMatrix

logger = logging.getLogger(__name__)

CLEAN_LABEL = 'clean'
DEFECT_LABELS = ('noise', 'absolute', 'midnight')


@dataclass(frozen=True)
class SyntheticProcessConfig:
    """
    Settings of the gradual-change process.

    Attributes:
        samples: Number of profiles M
        steps: Time steps D (must divide 1440)
        noise_scale: Standard deviation of the additive noise
        seed: Seed of the noise and shuffle streams
        t_min: Left end of the discretized t window
        t_max: Right end of the discretized t window
    """
    samples: int = 100
    steps: int = 20
    noise_scale: float = 0.03
    seed: int = 0
    t_min: float = -6.0
    t_max: float = 6.0

    def validate(self) -> None:
        if self.samples < 2:
            raise ParameterError(f"samples must be at least 2, got {self.samples}")
        if self.steps < 2:
            raise ParameterError(f"steps must be at least 2, got {self.steps}")
        if MINUTES_PER_DAY % self.steps != 0:
            raise ParameterError(f"steps must divide {MINUTES_PER_DAY}, got {self.steps}")
        if self.noise_scale < 0:
            raise ParameterError(f"noise_scale must be nonnegative, got {self.noise_scale}")
        if not self.t_min < self.t_max:
            raise ParameterError(f"t window is empty: [{self.t_min}, {self.t_max}]")


@dataclass(frozen=True)
class PlantedOutlierSpec:
    """Number of defective meters to append, per defect type."""
    noise: int = 0
    absolute: int = 0
    midnight: int = 0

    def __post_init__(self):
        for name in DEFECT_LABELS:
            if getattr(self, name) < 0:
                raise ParameterError(f"Planted {name} count must be nonnegative, got {getattr(self, name)}")

    @property
    def total(self) -> int:
        return self.noise + self.absolute + self.midnight

    def counts(self) -> Dict[str, int]:
        return {name: getattr(self, name) for name in DEFECT_LABELS}


def gaussian_bump(t: np.ndarray, mu) -> np.ndarray:
    """g(t, mu) = exp(-(t - mu)^2 / 2) / sqrt(2 pi)."""
    return stats.norm.pdf(t, loc=mu)


def process_weights(index: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(tau(i), nu(i)) for 1-based sample indices."""
    i = np.asarray(index, dtype=np.float64)
    return 0.02 * i - 1.0, 0.08 * i - 4.0


def process_grid(config: SyntheticProcessConfig) -> np.ndarray:
    return np.linspace(config.t_min, config.t_max, config.steps)


def _streams(seed: int, count: int) -> List[np.random.Generator]:
    return [np.random.Generator(np.random.Philox(child))
            for child in np.random.SeedSequence(seed).spawn(count)]


def generate_process(config: Optional[SyntheticProcessConfig] = None,
                     shuffle: bool = False) -> Tuple[ProfileMatrix, np.ndarray]:
    """
    Discretize the gradual-change process.

    Noise is drawn before shuffling, so a shuffled corpus reordered by
    true_order equals the unshuffled one.

    Args:
        config: Process settings (defaults to SyntheticProcessConfig())
        shuffle: Randomly permute the rows

    Returns:
        Tuple of the profile matrix and true_order, the inverse permutation:
        ``matrix.values[true_order]`` lists the rows in sample order.
    """
    config = config or SyntheticProcessConfig()
    config.validate()
    noise_rng, shuffle_rng = _streams(config.seed, 2)

    index = np.arange(1, config.samples + 1)
    tau, nu = process_weights(index)
    t = process_grid(config)
    values = tau[:, None] * gaussian_bump(t, 1.0) + (1.0 - tau[:, None]) * gaussian_bump(t[None, :], nu[:, None])
    values = values + config.noise_scale * noise_rng.standard_normal(values.shape)
    meter_ids = np.array([f"h{i:03d}" for i in index])

    permutation = shuffle_rng.permutation(config.samples) if shuffle else np.arange(config.samples)
    matrix = ProfileMatrix(
        values=values[permutation],
        meter_ids=tuple(meter_ids[permutation].tolist()),
        resolution_minutes=MINUTES_PER_DAY // config.steps,
    )
    logger.debug("Generated %d x %d process (shuffle=%s)", config.samples, config.steps, shuffle)
    return matrix, np.argsort(permutation)


# ==================== PLANTED DEFECTS ====================

def with_midday_dip(profile: np.ndarray) -> np.ndarray:
    """
    Subtract a midday bump deep enough to drive the profile negative, the
    shape of a feeder with strong PV injection.
    """
    steps = profile.shape[0]
    j = np.arange(steps)
    spread = profile.max() - profile.min()
    depth = profile.max() + max(spread, 1.0)
    bump = np.exp(-0.5 * ((j - (steps - 1) / 2.0) / (steps / 8.0)) ** 2)
    return profile - depth * bump


def absolute_value_defect(profile: np.ndarray) -> np.ndarray:
    """A meter that only stores |active power|: negative injection shows as a positive bump."""
    return np.abs(profile)


def midnight_defect(profile: np.ndarray) -> np.ndarray:
    """Shift the daily shape by half a day (activity around midnight)."""
    return np.roll(profile, profile.shape[0] // 2)


def plant_outliers(base: ProfileMatrix, spec: PlantedOutlierSpec,
                   seed: int = 0) -> Tuple[ProfileMatrix, Tuple[str, ...]]:
    """
    Append defective meters to a clean corpus.

    Noise meters are i.i.d. Gaussian rows with the corpus mean and standard
    deviation; absolute-value meters are |clean row with a negative midday
    dip|; midnight meters are clean rows shifted by half a day.

    Returns:
        Tuple of the extended matrix and one label per row
        ('clean', 'noise', 'absolute' or 'midnight')
    """
    if spec.total == 0:
        return base, tuple(CLEAN_LABEL for _ in base.meter_ids)

    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    steps = base.steps
    mean, std = float(base.values.mean()), float(base.values.std())
    rows, ids, labels = [], [], []

    for k in range(1, spec.noise + 1):
        rows.append(rng.normal(mean, std if std > 0 else 1.0, steps))
        ids.append(f"noise{k:03d}")
    for k in range(1, spec.absolute + 1):
        source = base.values[rng.integers(base.values.shape[0])]
        rows.append(absolute_value_defect(with_midday_dip(source)))
        ids.append(f"absolute{k:03d}")
    for k in range(1, spec.midnight + 1):
        source = base.values[rng.integers(base.values.shape[0])]
        rows.append(midnight_defect(source))
        ids.append(f"midnight{k:03d}")
    for name, count in spec.counts().items():
        labels.extend([name] * count)

    logger.info("Planted %d defective meter(s): %s", spec.total, spec.counts())
    matrix = ProfileMatrix(
        values=np.vstack([base.values, np.array(rows)]),
        meter_ids=base.meter_ids + tuple(ids),
        resolution_minutes=base.resolution_minutes,
        quarantine=base.quarantine,
    )
    return matrix, tuple([CLEAN_LABEL] * base.values.shape[0] + labels)
