# test_generative.py

"""
Unit tests for the VMF sampler, the curve-based generator, the MVG baseline
and the comparison metrics.
"""

import numpy as np
import pytest
from scipy import stats
from scipy.spatial.transform import Rotation

from profile_sphere.curve import PrincipalCurve
from profile_sphere.embedding import EmbeddingModel
from profile_sphere.errors import InsufficientDataError, ParameterError
from profile_sphere.generative import (
    DEFAULT_S_GRID,
    DegenerateDirectionError,
    GeneratorModel,
    MvgModel,
    UndefinedMomentError,
    VmfParams,
    curve_profiles,
    fit_mvg,
    fit_mvg_by_cluster,
    fit_vmf,
    generate_profiles,
    ks_distance,
    mean_resultant_length,
    per_step_ks,
    rmse_profiles,
    sample_mvg,
    sample_uniform_sphere,
    sample_vmf,
    spawn_generators,
    summary_stats,
)
from profile_sphere.sphere import SphereFit


@pytest.fixture
def identity_embedding():
    """Six time steps, eigenprofiles along the coordinate axes, zero means."""
    return EmbeddingModel(
        column_means=np.zeros(6),
        eigenvalues=np.array([0.5, 0.3, 0.1, 0.05, 0.03, 0.02]),
        eigenvectors=np.eye(6),
        retained=3,
        sample_count=100,
    )


@pytest.fixture
def quarter_arc():
    """Quarter circle on the unit sphere from z1 to z2."""
    angles = np.linspace(0.0, np.pi / 2, 50)
    return PrincipalCurve.from_polyline(np.column_stack([np.cos(angles), np.sin(angles), np.zeros(50)]))


@pytest.fixture
def generator(identity_embedding, quarter_arc):
    return GeneratorModel(
        curve=quarter_arc,
        kappa=50.0,
        sphere=SphereFit(center=np.zeros(3), radius=1.0),
        embedding=identity_embedding,
    )


class TestVmf:
    """Test VMF sampling and estimation."""

    def test_mean_resultant_length(self):
        """Test A3 at small, moderate and large kappa."""
        assert mean_resultant_length(1e-4) == pytest.approx(1e-4 / 3.0)
        assert mean_resultant_length(2e-3) == pytest.approx(2e-3 / 3.0, rel=1e-5)
        assert mean_resultant_length(5.0) == pytest.approx(1.0 / np.tanh(5.0) - 0.2)
        assert mean_resultant_length(1e6) == pytest.approx(1.0, abs=1e-5)

    def test_samples_are_unit_vectors(self):
        """Test that VMF draws lie on the unit sphere."""
        draws = sample_vmf(VmfParams.toward([1.0, 2.0, 2.0], 10.0), 1000, seed=1)
        np.testing.assert_allclose(np.linalg.norm(draws, axis=1), 1.0, atol=1e-12)

    @pytest.mark.parametrize("kappa", [1.0, 5.0, 50.0])
    def test_resultant_matches_kappa(self, kappa):
        """Test that the mean cosine to mu equals A3(kappa) within 2%."""
        params = VmfParams.toward([0.0, 0.6, 0.8], kappa)
        draws = sample_vmf(params, 100_000, seed=2)
        mean_cosine = float(np.mean(draws @ params.mean_direction))
        assert mean_cosine == pytest.approx(mean_resultant_length(kappa), rel=0.02)

    @pytest.mark.parametrize("kappa", [0.5, 2.0, 7.1, 20.0])
    def test_cosine_matches_analytic_cdf(self, kappa):
        """Test the cosine to mu against the CDF of a density proportional to exp(kappa w)."""
        params = VmfParams.toward([0.3, -0.4, 0.5], kappa)
        w = sample_vmf(params, 5000, seed=12) @ params.mean_direction

        def cdf(x):
            return np.expm1(kappa * (np.clip(x, -1.0, 1.0) + 1.0)) / np.expm1(2.0 * kappa)

        assert stats.kstest(w, cdf).pvalue > 0.01

    def test_rotation_equivariance(self):
        """Test that rotating mu rotates the fitted direction and keeps the cosine draws."""
        rotation = Rotation.random(random_state=13).as_matrix()
        mu = np.array([0.0, 0.6, 0.8])
        params = VmfParams.toward(mu, 6.0)
        turned = VmfParams.toward(rotation @ mu, 6.0)
        draws = sample_vmf(params, 20_000, seed=14)
        turned_draws = sample_vmf(turned, 20_000, seed=14)
        np.testing.assert_allclose(turned_draws @ turned.mean_direction, draws @ params.mean_direction,
                                   atol=1e-12)
        fitted, turned_fit = fit_vmf(draws), fit_vmf(turned_draws)
        assert float(turned_fit.mean_direction @ (rotation @ fitted.mean_direction)) > 0.999
        assert turned_fit.kappa == pytest.approx(fitted.kappa, rel=0.05)

    def test_fit_round_trip(self):
        """Test that fit_vmf recovers the sampling parameters."""
        params = VmfParams.toward([1.0, -1.0, 0.5], 8.0)
        fitted = fit_vmf(sample_vmf(params, 100_000, seed=3))
        assert fitted.kappa == pytest.approx(8.0, rel=0.05)
        assert float(fitted.mean_direction @ params.mean_direction) > 0.999

    def test_seed_reproducible(self):
        """Test that a seed fixes the draws and another seed changes them."""
        params = VmfParams.toward([0.0, 0.0, 1.0], 3.0)
        np.testing.assert_array_equal(sample_vmf(params, 10, seed=4), sample_vmf(params, 10, seed=4))
        assert not np.array_equal(sample_vmf(params, 10, seed=4), sample_vmf(params, 10, seed=5))

    def test_uniform_sphere(self):
        """Test that uniform draws have a near-zero resultant."""
        draws = sample_uniform_sphere(50_000, seed=6)
        assert np.linalg.norm(draws.mean(axis=0)) < 0.02

    def test_invalid_parameters(self):
        """Test parameter validation."""
        with pytest.raises(ParameterError):
            VmfParams(mean_direction=np.array([1.0, 1.0, 0.0]), kappa=1.0)
        with pytest.raises(ParameterError):
            VmfParams(mean_direction=np.array([1.0, 0.0, 0.0]), kappa=0.0)
        with pytest.raises(DegenerateDirectionError):
            VmfParams.toward(np.zeros(3), 1.0)

    def test_spawned_streams_differ(self):
        """Test that child streams are independent of each other."""
        first, second = spawn_generators(7, 2)
        assert first.random() != second.random()


class TestGenerateProfiles:
    """Test sampling profiles along the curve."""

    def test_default_protocol_size(self, generator):
        """Test 25 positions x 10 samples = 250 profiles."""
        batch = generate_profiles(generator)
        assert len(batch) == 250
        assert batch.profiles.shape == (250, 6)
        np.testing.assert_array_equal(batch.source_s[:10], np.full(10, DEFAULT_S_GRID[0]))
        assert batch.resolution_minutes == 240
        assert batch.meter_ids()[0] == 'syn0001'

    def test_seed_reproducible(self, generator):
        """Test that a fixed seed gives identical batches."""
        a = generate_profiles(generator, seed=11)
        b = generate_profiles(generator, seed=11)
        np.testing.assert_array_equal(a.profiles, b.profiles)

    def test_concentrated_samples_on_curve(self, identity_embedding, quarter_arc):
        """Test that a very concentrated VMF reproduces the on-curve profile."""
        model = GeneratorModel(curve=quarter_arc, kappa=1e6, sphere=SphereFit(center=np.zeros(3), radius=1.0),
                               embedding=identity_embedding)
        batch = generate_profiles(model, s_values=[0.0], per_point=5, seed=0)
        expected = curve_profiles(quarter_arc, identity_embedding, [0.0])
        np.testing.assert_allclose(batch.profiles, np.repeat(expected, 5, axis=0), atol=1e-2)

    def test_invalid_arguments(self, generator):
        """Test s values outside [0, 1] and per_point < 1."""
        with pytest.raises(ParameterError):
            generate_profiles(generator, s_values=[1.2])
        with pytest.raises(ParameterError):
            generate_profiles(generator, per_point=0)

    def test_curve_through_centre(self, identity_embedding):
        """Test that a curve point at the sphere centre has no direction."""
        line = PrincipalCurve.from_polyline([[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
        model = GeneratorModel(curve=line, kappa=5.0, sphere=SphereFit(center=np.zeros(3), radius=1.0),
                               embedding=identity_embedding)
        with pytest.raises(DegenerateDirectionError):
            generate_profiles(model, s_values=[0.5])

    def test_model_requires_positive_kappa(self, identity_embedding, quarter_arc):
        """Test that kappa = 0 is refused by the generator."""
        with pytest.raises(ParameterError):
            GeneratorModel(curve=quarter_arc, kappa=0.0, sphere=SphereFit(center=np.zeros(3), radius=1.0),
                           embedding=identity_embedding)


class TestMvg:
    """Test the multivariate Gaussian baseline."""

    def test_moment_recovery(self):
        """Test that samples reproduce the fitted mean and covariance."""
        rng = np.random.default_rng(8)
        mixing = rng.normal(size=(4, 4))
        data = rng.normal(size=(5000, 4)) @ mixing + np.array([1.0, -1.0, 0.5, 0.0])
        model = fit_mvg(data)
        assert not model.regularized
        draws = sample_mvg(model, 50_000, seed=9)
        np.testing.assert_allclose(draws.mean(axis=0), model.mean, atol=0.05)
        np.testing.assert_allclose(np.cov(draws, rowvar=False), model.covariance, atol=0.15)

    def test_rank_deficient_is_regularized(self):
        """Test diagonal loading of a rank-deficient covariance."""
        data = np.random.default_rng(10).normal(size=(3, 6))
        model = fit_mvg(data)
        assert model.regularized
        assert np.all(np.linalg.eigvalsh(model.covariance) > 0)
        assert sample_mvg(model, 4, seed=1).shape == (4, 6)

    def test_zero_covariance_returns_mean(self):
        """Test that a degenerate Gaussian only ever draws its mean."""
        mean = np.array([0.5, -1.0, 2.0, 0.0])
        draws = sample_mvg(MvgModel(mean=mean, covariance=np.zeros((4, 4))), 20, seed=3)
        np.testing.assert_array_equal(draws, np.tile(mean, (20, 1)))
        fitted = fit_mvg(np.tile(mean, (5, 1)))
        assert not fitted.regularized
        np.testing.assert_array_equal(sample_mvg(fitted, 3, seed=4), np.tile(mean, (3, 1)))

    def test_by_cluster_skips_singletons(self):
        """Test per-cluster fits with a one-member cluster."""
        data = np.random.default_rng(11).normal(size=(7, 3))
        models = fit_mvg_by_cluster(data, ['C1'] * 6 + ['C2'])
        assert set(models) == {'C1'}

    def test_too_few_profiles(self):
        """Test that one profile cannot be fitted."""
        with pytest.raises(InsufficientDataError):
            fit_mvg(np.ones((1, 3)))


class TestMetrics:
    """Test KS, RMSE and summary statistics."""

    def test_ks_extremes(self):
        """Test KS of identical and of disjoint sets."""
        a = np.arange(20.0).reshape(4, 5)
        assert ks_distance(a, a) == 0.0
        assert ks_distance(a, a + 100.0) == 1.0

    def test_per_step_ks(self):
        """Test one statistic per time step."""
        a = np.random.default_rng(12).normal(size=(50, 4))
        assert per_step_ks(a, a).shape == (4,)

    def test_rmse_of_shift(self):
        """Test that a constant shift gives that shift as RMSE."""
        a = np.random.default_rng(13).normal(size=(30, 8))
        assert rmse_profiles(a, a) == 0.0
        assert rmse_profiles(a, a + 0.5) == pytest.approx(0.5)

    def test_summary_stats(self):
        """Test moments of a large normal sample."""
        sample = np.random.default_rng(14).normal(3.0, 2.0, size=200_000)
        moments = summary_stats(sample)
        assert moments['mean'] == pytest.approx(3.0, abs=0.02)
        assert moments['std'] == pytest.approx(2.0, abs=0.02)
        assert abs(moments['skewness']) < 0.02
        assert abs(moments['kurtosis']) < 0.05

    def test_summary_stats_undefined(self):
        """Test constant and too-short samples."""
        with pytest.raises(UndefinedMomentError):
            summary_stats(np.ones(10))
        with pytest.raises(InsufficientDataError):
            summary_stats([1.0, 2.0])
