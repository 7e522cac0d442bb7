# test_pipeline.py

"""
Integration tests for PipelineManager on the ground-truth corpus.

Covers fit, outlier scoring, ordering, generation, artifacts and the demo bundle.
"""

import json

import numpy as np
import pandas as pd
import pytest
from scipy.integrate import trapezoid
from scipy.spatial.transform import Rotation

from profile_sphere.config import PipelineConfig
from profile_sphere.curve import fit_principal_curve, order_dataset, spearman_agreement
from profile_sphere.errors import ParameterError, ShapeError
from profile_sphere.oracle import PlantedOutlierSpec, SyntheticProcessConfig, generate_process, plant_outliers
from profile_sphere.pipeline import ORDER_RECOVERY_FLOOR, PLOT_DATA, PipelineManager, density_curves
from profile_sphere.profiles import ProfileMatrix
from profile_sphere.storage_handler import JSONModelStore


def _sample_index(true_order):
    index = np.empty(len(true_order), dtype=int)
    index[true_order] = np.arange(1, len(true_order) + 1)
    return index


class TestFit:
    """Test fitting the embedding and sphere model."""

    def test_explained_variance(self, fitted_model):
        """Test that three components explain at least 90% of the corpus."""
        assert fitted_model.summary['cev'][2]['cev'] >= 0.90
        assert fitted_model.resolution_minutes == 72
        assert fitted_model.summary['quarantine'] == []

    def test_refit_is_byte_identical(self, tmp_path, process_corpus, fitted_model):
        """Test that rerunning fit on identical input gives the same model file."""
        matrix, _ = process_corpus
        first, second = tmp_path / "a.json", tmp_path / "b.json"
        JSONModelStore(str(first)).save_model(fitted_model)
        JSONModelStore(str(second)).save_model(PipelineManager().fit(matrix))
        assert first.read_bytes() == second.read_bytes()

    def test_invalid_config(self):
        """Test that the manager validates its configuration."""
        with pytest.raises(ParameterError):
            PipelineManager(PipelineConfig(level=2.0))


class TestEmbed:
    """Test projecting new data with a stored model."""

    def test_dimension_mismatch(self, fitted_model):
        """Test that profiles of another length are refused."""
        other = ProfileMatrix(values=np.random.default_rng(0).gamma(2.0, size=(5, 24)),
                              meter_ids=list('abcde'), resolution_minutes=60)
        with pytest.raises(ShapeError):
            PipelineManager().embed(fitted_model, other)

    def test_new_corpus_warns(self, fitted_model, caplog):
        """Test that scoring a different corpus is logged."""
        other, _ = generate_process(SyntheticProcessConfig(seed=9))
        PipelineManager().embed(fitted_model, other)
        assert "differs" in caplog.text


class TestOutliers:
    """Test outlier scoring."""

    def test_levels_are_nested(self, process_corpus, fitted_model):
        """Test that flags at 0.99 are a subset of flags at 0.95."""
        matrix, _ = process_corpus
        manager = PipelineManager()
        loose = manager.outliers(fitted_model, matrix, level=0.95).report
        strict = manager.outliers(fitted_model, matrix, level=0.99).report
        assert np.all(loose.outlier[strict.outlier])

    def test_noise_meters_detected(self):
        """Test that planted noise meters fall below the radius interval."""
        base, _ = generate_process(SyntheticProcessConfig(seed=0), shuffle=True)
        corpus, labels = plant_outliers(base, PlantedOutlierSpec(noise=20), seed=1)
        manager = PipelineManager(PipelineConfig(robust_radius=True))
        model = manager.fit(corpus)
        report = manager.outliers(model, corpus).report
        score = manager.analytics.detection_score(labels, report.radius_side == -1)
        assert score.recall >= 0.9
        assert score.precision >= 0.8

    def test_artifacts(self, tmp_path, process_corpus, fitted_model):
        """Test outliers.csv and the outliers section of plotdata.json."""
        matrix, _ = process_corpus
        manager = PipelineManager(output_dir=str(tmp_path))
        result = manager.outliers(fitted_model, matrix)
        manager.write_outlier_artifacts(fitted_model, result)
        frame = pd.read_csv(tmp_path / "outliers.csv")
        assert len(frame) == 100
        plot = json.loads((tmp_path / PLOT_DATA).read_text())
        assert len(plot['outliers']['points']) == 100
        assert set(plot['outliers']['densities']) == {'azimuth_centred', 'polar', 'radius'}


class TestOrder:
    """Test ordering along the principal curve."""

    @pytest.mark.parametrize("seed", range(10))
    def test_order_recovery_and_bands(self, seed):
        """Test order recovery above the floor and the band structure for shuffled corpora."""
        matrix, true_order = generate_process(SyntheticProcessConfig(seed=seed), shuffle=True)
        manager = PipelineManager()
        result = manager.order(manager.fit(matrix), matrix)
        assert spearman_agreement(_sample_index(true_order), result.ordered.s) >= ORDER_RECOVERY_FLOOR
        assert result.contrast is not None and result.contrast.banded

    def test_rotation_invariance(self, process_corpus, ordering):
        """Test that a rotated embedding yields the same ordering."""
        _, true_order = process_corpus
        rotation = Rotation.random(random_state=3).as_matrix()
        rotated = ordering.embedding.coords @ rotation.T
        ordered = order_dataset(fit_principal_curve(rotated), rotated)
        assert spearman_agreement(ordering.ordered.s, ordered.s) >= 0.99
        assert spearman_agreement(_sample_index(true_order), ordered.s) >= ORDER_RECOVERY_FLOOR

    def test_default_bins(self, ordering):
        """Test that the default cut-points give C1..C4 and store the curve."""
        assert ordering.bins.names == ['C1', 'C2', 'C3', 'C4']
        assert ordering.model.has_curve
        assert ordering.model.excluded_ids == ()

    def test_single_cut(self, process_corpus, fitted_model):
        """Test that --bins 0.5 gives two clusters and is kept in the model."""
        matrix, _ = process_corpus
        result = PipelineManager().order(fitted_model, matrix, bins=[0.5])
        assert set(result.bins.labels) == {'C1', 'C2'}
        assert result.model.config.bins == (0.5,)

    def test_exclude_outliers(self):
        """Test that flagged meters are left out of the fit and recorded."""
        base, _ = generate_process(SyntheticProcessConfig(seed=0), shuffle=True)
        corpus, _ = plant_outliers(base, PlantedOutlierSpec(noise=5), seed=2)
        manager = PipelineManager(PipelineConfig(robust_radius=True))
        model = manager.fit(corpus)
        result = manager.order(model, corpus, exclude_outliers=True)
        assert len(result.model.excluded_ids) > 0
        assert not set(result.model.excluded_ids) & set(result.ordered.meter_ids)

    def test_artifacts(self, tmp_path, ordering):
        """Test ordering.csv sorted by s and the order section of plotdata.json."""
        manager = PipelineManager(output_dir=str(tmp_path))
        manager.write_order_artifacts(ordering)
        frame = pd.read_csv(tmp_path / "ordering.csv")
        assert list(frame.columns) == ['meter_id', 's', 'cluster_label']
        assert frame['s'].is_monotonic_increasing
        plot = json.loads((tmp_path / PLOT_DATA).read_text())
        assert len(plot['order']['curve_polyline']) == 500
        assert np.array(plot['order']['ordered_gram']).shape == (100, 100)


class TestGenerate:
    """Test synthesis along the curve."""

    def test_requires_curve(self, fitted_model):
        """Test that a model without a curve cannot generate."""
        with pytest.raises(ParameterError):
            PipelineManager().generate(fitted_model)

    def test_mvg_requires_real_data(self, ordering):
        """Test that the MVG baseline needs the real corpus."""
        with pytest.raises(ParameterError):
            PipelineManager().generate(ordering.model, baseline_mvg=True)

    def test_protocol_and_metrics(self, process_corpus, ordering):
        """Test 250 profiles, per-cluster KS/RMSE for both models and VMF KS within 0.1."""
        matrix, _ = process_corpus
        result = PipelineManager().generate(ordering.model, baseline_mvg=True, real=matrix)
        assert len(result.batch) == 250
        assert len(result.labels) == 250
        models = result.metrics['models']
        assert set(models) == {'vmf', 'mvg'}
        for per_cluster in models.values():
            for cell in per_cluster.values():
                assert set(cell) == {'ks', 'rmse'}
        for label, cell in models['vmf'].items():
            assert cell['ks'] <= 0.1, label

    def test_round_trip_drift(self, ordering):
        """Test that re-projected batches land near their source s."""
        manager = PipelineManager()
        batch = manager.generate(ordering.model).batch
        drift = manager.projection_round_trip(ordering.model, batch)
        assert len(drift) == 25
        assert max(abs(mean - source) for source, mean in drift.items()) <= 0.05

    def test_seed_reproducible_csv(self, tmp_path, ordering):
        """Test that a fixed seed writes identical synthetic.csv files."""
        for name in ('a', 'b'):
            manager = PipelineManager(output_dir=str(tmp_path / name))
            manager.write_generation_artifacts(manager.generate(ordering.model, seed=5))
        assert (tmp_path / "a" / "synthetic.csv").read_bytes() == (tmp_path / "b" / "synthetic.csv").read_bytes()
        assert not (tmp_path / "a" / "metrics.json").exists()


@pytest.fixture(scope="module")
def demo_runs(tmp_path_factory):
    runs = []
    for name in ('first', 'second'):
        out = tmp_path_factory.mktemp(name)
        runs.append((out, PipelineManager(output_dir=str(out)).run_demo(seed=0)))
    return runs


class TestDemo:
    """Test the end-to-end demo bundle."""

    BUNDLE = ('corpus.csv', 'truth.json', 'model.json', 'cev.csv', 'moments.json', 'outliers.csv',
              'ordering.csv', 'synthetic.csv', 'metrics.json', 'acceptance.json', PLOT_DATA)

    def test_bundle_written(self, demo_runs):
        """Test that every artifact of the bundle exists."""
        out, _ = demo_runs[0]
        for name in self.BUNDLE:
            assert (out / name).exists(), name

    def test_bundle_is_deterministic(self, demo_runs):
        """Test that the same seed gives bit-identical bundles."""
        (first, _), (second, _) = demo_runs
        for name in self.BUNDLE:
            assert (first / name).read_bytes() == (second / name).read_bytes(), name

    def test_reports_ordering_checks(self, demo_runs):
        """Test that band structure and order recovery are reported and pass."""
        _, summary = demo_runs[0]
        checks = {c['name']: c for c in summary['checks']}
        assert checks['band_structure']['passed']
        assert checks['order_recovery_spearman']['passed']
        assert checks['noise_meter_recall']['passed']

    def test_all_checks_pass(self, demo_runs):
        """Test that every acceptance check of the default demo passes."""
        _, summary = demo_runs[0]
        failed = [c['name'] for c in summary['checks'] if not c['passed']]
        assert failed == []
        assert summary['passed']


def test_density_curves(fitted_model):
    """Test that the plotted azimuth and radius densities integrate to about one."""
    curves = density_curves(fitted_model.sphere)
    azimuth = curves['azimuth_centred']
    assert trapezoid(azimuth['pdf'], azimuth['x']) == pytest.approx(1.0, abs=1e-3)
    radius = curves['radius']
    assert trapezoid(radius['pdf'], radius['x']) == pytest.approx(1.0, abs=0.01)
    assert len(curves['polar']['x']) == 361
