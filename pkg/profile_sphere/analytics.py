# analytics.py

"""
Reporting helpers: explained-variance and moment tables, per-cluster
synthetic-data metrics, evaluation against planted ground truth and the
acceptance summary printed by ``demo``.

All functions are pure: they take results and return new data structures.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from profile_sphere.curve import spearman_agreement
from profile_sphere.embedding import EmbeddingModel, cev_table
from profile_sphere.generative import UndefinedMomentError, ks_distance, rmse_profiles, summary_stats
from profile_sphere.errors import InsufficientDataError
from profile_sphere.sphere import SphereModel, SphericalCoords, center_azimuth

logger = logging.getLogger(__name__)

# Type aliases for readability
Table = List[Dict[str, Any]]
MetricsReport = Dict[str, Any]

MOMENT_VARIABLES = ('azimuth_centred', 'polar', 'radius')
AGGREGATION_NOTE = {
    'ks': 'pooled over all time steps of all profiles in the cluster',
    'rmse': 'between per-time-step median profiles',
}


@dataclass(frozen=True)
class DetectionScore:
    """Recall and precision of outlier flags against planted labels."""
    target: str
    recall: float
    precision: float
    true_positives: int
    planted: int
    flagged: int


@dataclass(frozen=True)
class AcceptanceCheck:
    """One pass/fail property of a demo run."""
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ''

    def to_dict(self) -> Dict[str, Any]:
        return {'name': self.name, 'passed': self.passed, 'value': self.value,
                'threshold': self.threshold, 'detail': self.detail}


class PipelineAnalytics:
    """
    Pure reporting functions over pipeline results.
    """

    # ==================== MODEL TABLES ====================

    @staticmethod
    def cev_rows(model: EmbeddingModel, limit: Optional[int] = None) -> Table:
        """
        Cumulative explained variance per component count.

        Args:
            model: Fitted embedding
            limit: Largest n to report (all D when None)

        Returns:
            List of {'n', 'eigenvalue', 'cev'} rows
        """
        rows = [{'n': n, 'eigenvalue': float(model.eigenvalues[n - 1]), 'cev': value}
                for n, value in cev_table(model)]
        return rows if limit is None else rows[:limit]

    @staticmethod
    def moment_table(coords: SphericalCoords, model: SphereModel) -> Dict[str, Optional[Dict[str, float]]]:
        """
        Mean, std, skewness and excess kurtosis of centred azimuth and polar
        angle (degrees) and radius, over the rows with a defined direction.
        """
        defined = ~coords.undefined
        samples = {
            'azimuth_centred': np.degrees(center_azimuth(coords.azimuth[defined], model.azimuth_center)),
            'polar': np.degrees(coords.polar[defined]),
            'radius': coords.radius[defined],
        }
        table: Dict[str, Optional[Dict[str, float]]] = {}
        for name in MOMENT_VARIABLES:
            try:
                table[name] = summary_stats(samples[name])
            except (UndefinedMomentError, InsufficientDataError) as e:
                logger.warning("No moments for %s: %s", name, e)
                table[name] = None
        return table

    # ==================== SYNTHETIC DATA METRICS ====================

    @staticmethod
    def cluster_metrics(real: np.ndarray, real_labels: Sequence[str],
                        synthetic: np.ndarray, synthetic_labels: Sequence[str]) -> Dict[str, Dict[str, float]]:
        """
        KS distance and median-profile RMSE per cluster present in both sets.
        """
        real_labels = np.asarray(real_labels)
        synthetic_labels = np.asarray(synthetic_labels)
        metrics = {}
        for label in sorted(set(real_labels.tolist()) & set(synthetic_labels.tolist())):
            a = real[real_labels == label]
            b = synthetic[synthetic_labels == label]
            metrics[label] = {'ks': ks_distance(a, b), 'rmse': rmse_profiles(a, b)}
        return metrics

    @staticmethod
    def metrics_report(per_model: Dict[str, Dict[str, Dict[str, float]]]) -> MetricsReport:
        """Bundle per-model cluster metrics with the aggregation choices."""
        return {'models': per_model, 'aggregation': AGGREGATION_NOTE}

    # ==================== GROUND-TRUTH EVALUATION ====================

    @staticmethod
    def detection_score(labels: Sequence[str], flags: Sequence[bool], target: str = 'noise') -> DetectionScore:
        """
        Recall and precision of flags for one planted defect type.

        Precision counts every flagged row that carries the target label.
        """
        label_array = np.asarray(labels)
        flag_array = np.asarray(flags, dtype=bool)
        planted = label_array == target
        hits = int(np.sum(planted & flag_array))
        flagged = int(flag_array.sum())
        return DetectionScore(
            target=target,
            recall=hits / int(planted.sum()) if planted.any() else 0.0,
            precision=hits / flagged if flagged else 0.0,
            true_positives=hits,
            planted=int(planted.sum()),
            flagged=flagged,
        )

    @staticmethod
    def order_recovery(true_index: Sequence[int], s: Sequence[float]) -> float:
        """|Spearman rho| between the true sample index and the projection index."""
        return spearman_agreement(true_index, s)

    # ==================== ACCEPTANCE ====================

    @staticmethod
    def at_least(name: str, value: float, threshold: float, detail: str = '') -> AcceptanceCheck:
        return AcceptanceCheck(name=name, passed=bool(value >= threshold), value=float(value),
                               threshold=float(threshold), detail=detail)

    @staticmethod
    def at_most(name: str, value: float, threshold: float, detail: str = '') -> AcceptanceCheck:
        return AcceptanceCheck(name=name, passed=bool(value <= threshold), value=float(value),
                               threshold=float(threshold), detail=detail)

    @staticmethod
    def acceptance_summary(checks: Sequence[AcceptanceCheck]) -> Dict[str, Any]:
        return {
            'passed': all(check.passed for check in checks),
            'checks': [check.to_dict() for check in checks],
        }


# ==================== TEXT FORMATTING ====================

def format_cev_table(rows: Table, limit: int = 6) -> str:
    lines = [f"{'n':>3}  {'eigenvalue':>12}  {'CEV':>7}"]
    for row in rows[:limit]:
        lines.append(f"{row['n']:>3}  {row['eigenvalue']:>12.6f}  {100.0 * row['cev']:>6.2f}%")
    return '\n'.join(lines)


def format_moment_table(table: Dict[str, Optional[Dict[str, float]]]) -> str:
    lines = [f"{'variable':<16}{'mean':>10}{'std':>10}{'skew':>10}{'kurt':>10}"]
    for name, moments in table.items():
        if moments is None:
            lines.append(f"{name:<16}{'n/a':>10}")
            continue
        lines.append(f"{name:<16}{moments['mean']:>10.3f}{moments['std']:>10.3f}"
                     f"{moments['skewness']:>10.3f}{moments['kurtosis']:>10.3f}")
    return '\n'.join(lines)


def format_metrics_table(report: MetricsReport) -> str:
    models = report.get('models', {})
    clusters = sorted({c for per_cluster in models.values() for c in per_cluster})
    lines = [f"{'metric':<8}{'model':<6}" + ''.join(f"{c:>8}" for c in clusters)]
    for metric in ('ks', 'rmse'):
        for model_name, per_cluster in models.items():
            cells = ''.join(
                f"{per_cluster[c][metric]:>8.3f}" if c in per_cluster else f"{'-':>8}" for c in clusters
            )
            lines.append(f"{metric:<8}{model_name:<6}{cells}")
    return '\n'.join(lines)


def format_acceptance(summary: Dict[str, Any]) -> str:
    lines = []
    for check in summary['checks']:
        mark = '✅' if check['passed'] else '❌'
        lines.append(f"{mark} {check['name']}: {check['value']:.4f} (threshold {check['threshold']:g})")
    return '\n'.join(lines)
