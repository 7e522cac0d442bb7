# pipeline.py

"""
PipelineManager - Central controller of the profile-sphere toolkit

This module integrates the numerical modules behind one API:
- profiles / embedding / sphere for fitting and outlier detection
- curve for ordering and s-binning
- generative for synthetic profiles and metrics
- storage_handler for model files and artifacts
- analytics for reports and the demo acceptance summary
"""

import json
import logging
from dataclasses import dataclass, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from profile_sphere.analytics import AcceptanceCheck, PipelineAnalytics
from profile_sphere.config import PipelineConfig
from profile_sphere.curve import (
    ClusterBins,
    OrderedDataset,
    bin_clusters,
    fit_principal_curve,
    order_dataset,
    s_labels,
)
from profile_sphere.embedding import BandContrast, Embedding, band_contrast, fit_pca, project, similarity_matrix
from profile_sphere.errors import ParameterError, ShapeError
from profile_sphere.generative import (
    DEFAULT_PER_POINT,
    DEFAULT_S_GRID,
    SyntheticBatch,
    fit_mvg_by_cluster,
    sample_mvg,
    spawn_generators,
)
from profile_sphere.generative import generate_profiles as sample_profiles
from profile_sphere.model import FittedModel
from profile_sphere.oracle import PlantedOutlierSpec, SyntheticProcessConfig, generate_process, plant_outliers
from profile_sphere.profiles import (
    CsvFormat,
    NormalizedMatrix,
    ProfileMatrix,
    load_profiles,
    quarantine_report,
    standardize,
    time_step_columns,
    to_unit_sphere,
)
from profile_sphere.sphere import (
    OutlierReport,
    SphereModel,
    SphericalCoords,
    detect_outliers,
    fit_sphere_model,
    to_spherical,
)
from profile_sphere.storage_handler import ArtifactWriter, JSONModelStore

logger = logging.getLogger(__name__)

PLOT_DATA = 'plotdata.json'
DENSITY_POINTS = 361
# |Spearman rho| floor of the demo order-recovery check
ORDER_RECOVERY_FLOOR = 0.88


@dataclass(frozen=True)
class OutlierResult:
    """Outlier flags with the embedding and coordinates they were computed from."""
    report: OutlierReport
    embedding: Embedding
    coords: SphericalCoords


@dataclass(frozen=True)
class OrderingResult:
    """Curve fit, ordering and bins of one corpus."""
    model: FittedModel
    ordered: OrderedDataset
    bins: ClusterBins
    embedding: Embedding
    normalized: NormalizedMatrix
    contrast: Optional[BandContrast]


@dataclass(frozen=True)
class GenerationResult:
    """Synthetic profiles, their cluster labels and the comparison metrics."""
    batch: SyntheticBatch
    labels: Tuple[str, ...]
    mvg_profiles: Optional[np.ndarray]
    mvg_labels: Tuple[str, ...]
    metrics: Optional[Dict[str, Any]]


class PipelineManager:
    """
    Central controller for fitting, scoring, ordering and generating.

    Attributes:
        config (PipelineConfig): Effective configuration
        analytics (PipelineAnalytics): Reporting engine
        writer (ArtifactWriter): Output directory for artifacts
    """

    def __init__(self, config: Optional[PipelineConfig] = None, output_dir: str = "."):
        """
        Initialize the manager.

        Args:
            config: Pipeline settings (defaults to PipelineConfig())
            output_dir: Directory receiving CSV/JSON artifacts

        Raises:
            ParameterError: If the configuration is invalid
        """
        self.config = config or PipelineConfig()
        self.config.validate()
        self.analytics = PipelineAnalytics()
        self.writer = ArtifactWriter(output_dir)

    # ==================== DATA ====================

    def load_profiles(self, path: str, fmt: Optional[CsvFormat] = None) -> ProfileMatrix:
        return load_profiles(path, fmt)

    def load_model(self, path: str) -> FittedModel:
        return JSONModelStore(path).load_model()

    def save_model(self, model: FittedModel, path: str) -> None:
        JSONModelStore(path).save_model(model)

    def get_storage_info(self, path: str) -> Dict[str, Any]:
        return JSONModelStore(path).get_storage_info()

    def embed(self, model: FittedModel, profiles: ProfileMatrix) -> Tuple[NormalizedMatrix, Embedding]:
        """
        Normalize profiles and project them with the model's embedding.

        Raises:
            ShapeError: If the profile length differs from the model's
        """
        if profiles.steps != model.embedding.steps:
            raise ShapeError(f"Model expects D={model.embedding.steps} time steps, data has D={profiles.steps}")
        if profiles.fingerprint() != model.fingerprint:
            logger.warning("Corpus differs from the one the model was fitted on; scoring it as new data")
        normalized = to_unit_sphere(profiles)
        return normalized, project(model.embedding, normalized)

    # ==================== FIT ====================

    def fit(self, profiles: ProfileMatrix) -> FittedModel:
        """
        standardize -> normalize -> PCA -> project(3) -> sphere -> marginal fits.

        Returns:
            FittedModel: Model with the CEV and moment tables in its summary
        """
        normalized = to_unit_sphere(profiles)
        embedding_model = fit_pca(normalized, retained=self.config.retained)
        embedding = project(embedding_model, normalized)
        sphere_model = fit_sphere_model(embedding.coords, robust=self.config.robust_radius)
        coords = to_spherical(embedding.coords, sphere_model.sphere)

        summary = {
            'cev': self.analytics.cev_rows(embedding_model),
            'moments': self.analytics.moment_table(coords, sphere_model),
            'quarantine': quarantine_report(profiles),
        }
        logger.info("Fitted model on %d profiles: CEV(3)=%.4f, sphere radius=%.4f",
                    profiles.shape[0], summary['cev'][min(2, len(summary['cev']) - 1)]['cev'],
                    sphere_model.sphere.radius)
        return FittedModel(
            config=self.config,
            fingerprint=profiles.fingerprint(),
            resolution_minutes=profiles.resolution_minutes,
            embedding=embedding_model,
            sphere=sphere_model,
            summary=summary,
        )

    # ==================== OUTLIERS ====================

    def outliers(self, model: FittedModel, profiles: ProfileMatrix, level: Optional[float] = None) -> OutlierResult:
        level = self.config.level if level is None else level
        _, embedding = self.embed(model, profiles)
        coords = to_spherical(embedding.coords, model.sphere.sphere)
        report = detect_outliers(coords, level=level, model=model.sphere, meter_ids=embedding.meter_ids)
        return OutlierResult(report=report, embedding=embedding, coords=coords)

    # ==================== ORDER ====================

    def order(self, model: FittedModel, profiles: ProfileMatrix, bins: Optional[Sequence[float]] = None,
              exclude_outliers: bool = False, level: Optional[float] = None) -> OrderingResult:
        """
        Fit the principal curve and order the profiles along it.

        Args:
            model: Fitted model
            profiles: Corpus to order
            bins: s cut-points (defaults to the configured bins)
            exclude_outliers: Leave flagged meters out of the curve fit and ordering
            level: Confidence level for the exclusion

        Returns:
            OrderingResult: Model with the curve attached, ordering and bins
        """
        cuts = tuple(self.config.bins if bins is None else bins)
        normalized, embedding = self.embed(model, profiles)
        keep = np.arange(len(embedding.meter_ids))
        excluded: List[str] = []
        if exclude_outliers:
            result = self.outliers(model, profiles, level)
            excluded = result.report.flagged_ids()
            keep = np.flatnonzero(~result.report.outlier)
            logger.info("Excluding %d flagged meter(s) from the curve fit", len(excluded))

        points = embedding.coords[keep]
        ids = tuple(embedding.meter_ids[i] for i in keep)
        curve = fit_principal_curve(points, self.config.curve)
        ordered = order_dataset(curve, points, meter_ids=ids)
        clusters = bin_clusters(ordered, cuts)

        kept_rows = normalized.values[keep]
        contrast = None
        if kept_rows.shape[0] > 50:
            contrast = band_contrast(similarity_matrix(kept_rows[ordered.permutation]))
        return OrderingResult(
            model=replace(model, config=replace(model.config, bins=cuts)).with_curve(curve, excluded),
            ordered=ordered,
            bins=clusters,
            embedding=Embedding(coords=points, meter_ids=ids),
            normalized=NormalizedMatrix(values=kept_rows, source_meter_ids=ids),
            contrast=contrast,
        )

    # ==================== GENERATE ====================

    def label_real_profiles(self, model: FittedModel, profiles: ProfileMatrix) -> Tuple[np.ndarray, Tuple[str, ...]]:
        """Standardized real profiles (excluded meters dropped) and their s-bin labels."""
        if model.curve is None:
            raise ParameterError("Model has no principal curve; run 'order' first")
        clean = profiles.exclude(model.excluded_ids) if model.excluded_ids else profiles
        _, embedding = self.embed(model, clean)
        ordered = order_dataset(model.curve, embedding.coords, meter_ids=embedding.meter_ids)
        return standardize(clean).values, s_labels(ordered.s, model.config.bins)

    def generate(self, model: FittedModel, s_values: Sequence[float] = DEFAULT_S_GRID,
                 per_point: int = DEFAULT_PER_POINT, kappa: Optional[float] = None,
                 seed: Optional[int] = None, baseline_mvg: bool = False,
                 real: Optional[ProfileMatrix] = None) -> GenerationResult:
        """
        VMF synthesis on the curve, optionally with the MVG baseline and metrics.

        Args:
            model: Model with a fitted curve
            s_values: Curve positions to sample around
            per_point: Profiles per position
            kappa: VMF concentration (polar-angle kappa when None)
            seed: Seed (configured seed when None)
            baseline_mvg: Also sample the per-cluster multivariate Gaussian
            real: Real corpus for KS/RMSE metrics and the MVG fit

        Raises:
            ParameterError: If the model has no curve, or MVG is requested without real data
        """
        seed = self.config.seed if seed is None else seed
        batch = sample_profiles(model.generator(kappa), s_values, per_point, seed)
        labels = s_labels(batch.source_s, model.config.bins)
        if baseline_mvg and real is None:
            raise ParameterError("The MVG baseline needs the real corpus to fit on")
        if real is None:
            return GenerationResult(batch=batch, labels=labels, mvg_profiles=None, mvg_labels=(), metrics=None)

        real_values, real_labels = self.label_real_profiles(model, real)
        per_model = {'vmf': self.analytics.cluster_metrics(real_values, real_labels, batch.profiles, labels)}
        mvg_profiles, mvg_labels = None, ()
        if baseline_mvg:
            mvg_models = fit_mvg_by_cluster(real_values, real_labels)
            counts = {label: labels.count(label) for label in mvg_models if labels.count(label) > 0}
            streams = spawn_generators(seed + 1, max(len(counts), 1))
            draws, draw_labels = [], []
            for (label, count), rng in zip(sorted(counts.items()), streams):
                draws.append(sample_mvg(mvg_models[label], count, rng))
                draw_labels.extend([label] * count)
            if draws:
                mvg_profiles, mvg_labels = np.vstack(draws), tuple(draw_labels)
                per_model['mvg'] = self.analytics.cluster_metrics(real_values, real_labels,
                                                                  mvg_profiles, mvg_labels)
        return GenerationResult(batch=batch, labels=labels, mvg_profiles=mvg_profiles,
                                mvg_labels=mvg_labels, metrics=self.analytics.metrics_report(per_model))

    def projection_round_trip(self, model: FittedModel, batch: SyntheticBatch) -> Dict[float, float]:
        """Mean projection index of every generated batch, keyed by its source s."""
        normalized = to_unit_sphere(batch.to_profile_matrix())
        embedding = project(model.embedding, normalized)
        s = order_dataset(model.curve, embedding.coords).s
        return {float(source): float(s[batch.source_s == source].mean()) for source in np.unique(batch.source_s)}

    # ==================== ARTIFACTS ====================

    def merge_plot_data(self, section: str, data: Dict[str, Any]) -> None:
        """Add or replace one section of plotdata.json in the output directory."""
        path = self.writer.output_dir / PLOT_DATA
        existing: Dict[str, Any] = {}
        if path.exists():
            try:
                existing = json.loads(path.read_text(encoding='utf-8'))
            except ValueError:
                logger.warning("Replacing unreadable %s", path)
        existing[section] = data
        self.writer.write_json(PLOT_DATA, existing)

    def write_fit_artifacts(self, model: FittedModel) -> None:
        self.writer.write_frame('cev.csv', pd.DataFrame(model.summary['cev']))
        self.writer.write_json('moments.json', model.summary['moments'])

    def write_outlier_artifacts(self, model: FittedModel, result: OutlierResult) -> None:
        report = result.report
        self.writer.write_frame('outliers.csv', report.to_frame())
        self.merge_plot_data('outliers', {
            'meter_ids': list(report.meter_ids),
            'points': result.embedding.coords.tolist(),
            'sphere': model.sphere.sphere.to_dict(),
            'flags': {
                'azimuth': report.azimuth_out.tolist(),
                'polar': report.polar_out.tolist(),
                'radius': report.radius_out.tolist(),
                'radius_side': report.radius_side.tolist(),
            },
            'bounds': {name: list(bounds) for name, bounds in report.bounds.items()},
            'level': report.level,
            'densities': density_curves(model.sphere),
        })

    def write_order_artifacts(self, result: OrderingResult) -> None:
        ordered = result.ordered
        frame = pd.DataFrame({
            'meter_id': list(ordered.meter_ids),
            's': ordered.s,
            'cluster_label': list(result.bins.labels),
        }).iloc[ordered.permutation]
        self.writer.write_frame('ordering.csv', frame)
        gram = similarity_matrix(result.normalized.values[ordered.permutation])
        self.merge_plot_data('order', {
            'curve_polyline': result.model.curve.polyline(500).tolist(),
            'ordered_meter_ids': ordered.ordered_ids,
            'ordered_s': ordered.s[ordered.permutation].tolist(),
            'ordered_gram': gram.tolist(),
            'bins': list(result.bins.boundaries),
            'cluster_counts': result.bins.counts(),
        })

    def write_generation_artifacts(self, result: GenerationResult) -> None:
        batch = result.batch
        frame = pd.DataFrame(batch.profiles, columns=time_step_columns(batch.profiles.shape[1]))
        frame.insert(0, 'meter_id', list(batch.meter_ids('vmf')))
        frame['source_s'] = batch.source_s
        frame['cluster_label'] = list(result.labels)
        frames = [frame]
        if result.mvg_profiles is not None:
            mvg = pd.DataFrame(result.mvg_profiles, columns=time_step_columns(result.mvg_profiles.shape[1]))
            width = max(4, len(str(mvg.shape[0])))
            mvg.insert(0, 'meter_id', [f"mvg{i:0{width}d}" for i in range(1, mvg.shape[0] + 1)])
            mvg['source_s'] = np.nan
            mvg['cluster_label'] = list(result.mvg_labels)
            frames.append(mvg)
        self.writer.write_frame('synthetic.csv', pd.concat(frames, ignore_index=True))
        if result.metrics is not None:
            self.writer.write_json('metrics.json', result.metrics)

    # ==================== DEMO ====================

    def run_demo(self, seed: Optional[int] = None, noise_meters: int = 20) -> Dict[str, Any]:
        """
        Oracle corpus -> planted defects -> fit -> outliers -> order -> generate.

        Writes the full artifact bundle and returns the acceptance summary.
        """
        seed = self.config.seed if seed is None else seed
        process, true_order = generate_process(SyntheticProcessConfig(seed=seed), shuffle=True)
        corpus, labels = plant_outliers(process, PlantedOutlierSpec(noise=noise_meters), seed=seed + 1)
        self.writer.write_profiles('corpus.csv', corpus)
        sample_index = np.empty(len(true_order), dtype=int)
        sample_index[true_order] = np.arange(1, len(true_order) + 1)
        self.writer.write_json('truth.json', {
            'labels': dict(zip(corpus.meter_ids, labels)),
            'sample_index': dict(zip(process.meter_ids, sample_index.tolist())),
        })

        demo = PipelineManager(replace(self.config, robust_radius=True, seed=seed), str(self.writer.output_dir))
        model = demo.fit(corpus)
        scored = demo.outliers(model, corpus)
        demo.write_outlier_artifacts(model, scored)
        low_radius = scored.report.radius_side == -1
        detection = demo.analytics.detection_score(labels, low_radius, target='noise')

        clean = corpus.exclude([m for m, flag in zip(corpus.meter_ids, low_radius) if flag])
        clean_model = demo.fit(clean)
        ordering = demo.order(clean_model, clean)
        demo.write_order_artifacts(ordering)
        curve_model = ordering.model
        demo.save_model(curve_model, str(self.writer.output_dir / 'model.json'))
        demo.write_fit_artifacts(curve_model)

        index_of = dict(zip(process.meter_ids, sample_index))
        known = [i for i, m in enumerate(ordering.ordered.meter_ids) if m in index_of]
        recovery = demo.analytics.order_recovery(
            [index_of[ordering.ordered.meter_ids[i]] for i in known], ordering.ordered.s[known],
        )

        generated = demo.generate(curve_model, baseline_mvg=True, real=clean)
        demo.write_generation_artifacts(generated)
        round_trip = demo.projection_round_trip(curve_model, generated.batch)
        drift = max(abs(mean - source) for source, mean in round_trip.items())
        worst_ks = max(cell['ks'] for cell in generated.metrics['models']['vmf'].values())

        cev3 = curve_model.summary['cev'][2]['cev']
        checks = [
            demo.analytics.at_least('cev_3_components', cev3, 0.85),
            demo.analytics.at_least('noise_meter_recall', detection.recall, 0.9),
            demo.analytics.at_least('noise_meter_precision', detection.precision, 0.8),
            demo.analytics.at_least('order_recovery_spearman', recovery, ORDER_RECOVERY_FLOOR),
            AcceptanceCheck(
                name='band_structure',
                passed=bool(ordering.contrast is not None and ordering.contrast.banded),
                value=ordering.contrast.near_mean - ordering.contrast.far_mean if ordering.contrast else 0.0,
                threshold=0.0,
                detail='mean similarity at lag <= 5 minus lag >= 50',
            ),
            demo.analytics.at_most('generation_round_trip_drift', drift, 0.05),
            demo.analytics.at_most('vmf_cluster_ks', worst_ks, 0.1),
        ]
        summary = demo.analytics.acceptance_summary(checks)
        self.writer.write_json('acceptance.json', summary)
        self.writer.written.extend(p for p in demo.writer.written if p not in self.writer.written)
        return summary


def density_curves(model: SphereModel) -> Dict[str, Dict[str, List[float]]]:
    """Fitted marginal densities on plotting grids (centred azimuth, polar, radius)."""
    angles = np.linspace(-np.pi, np.pi, DENSITY_POINTS)
    polar = np.linspace(0.0, np.pi, DENSITY_POINTS)

    def von_mises_pdf(x: np.ndarray, params) -> List[float]:
        if params.kappa < 1e-8:
            return np.full(x.shape, 1.0 / (2.0 * np.pi)).tolist()
        return stats.vonmises.pdf(x, params.kappa, loc=params.mean_direction).tolist()

    radius_dist = model.radius.distribution()
    low, high = radius_dist.ppf([0.0005, 0.9995])
    radii = np.linspace(low, high, DENSITY_POINTS)
    return {
        'azimuth_centred': {'x': angles.tolist(), 'pdf': von_mises_pdf(angles, model.azimuth)},
        'polar': {'x': polar.tolist(), 'pdf': von_mises_pdf(polar, model.polar)},
        'radius': {'x': radii.tolist(), 'pdf': radius_dist.pdf(radii).tolist()},
    }
