import numpy as np
import pytest
from scipy import integrate

from core.exceptions import DimensionMismatch, EmptyDataset, InvalidParameter, MissingClass
from core.seeding import Stream, derive_rng
from environments.factories import ModelSpecFactory
from environments.generation import (
    analytic_moments,
    flip_test_environment,
    reference_model_spec,
    sample_dataset,
    sample_environment,
)
from environments.types import Dataset

from .evaluation import (
    LinearClassifier,
    empirical_accuracy,
    estimate_moments,
    latent_blocks,
    monte_carlo_accuracy,
    standard_normal_cdf,
    zero_one_accuracy,
    zero_one_risk,
)


@pytest.fixture
def reference():
    spec = reference_model_spec(seed=0)
    return spec, sample_environment(spec, 0)


class TestStandardNormalCdf:
    def test_center(self):
        assert standard_normal_cdf(0.0) == 0.5

    def test_symmetry(self):
        grid = np.linspace(-8, 8, 81)
        assert np.allclose(standard_normal_cdf(grid) + standard_normal_cdf(-grid), 1.0, atol=1e-15, rtol=0)

    def test_against_quadrature(self):
        density = lambda x: np.exp(-x * x / 2) / np.sqrt(2 * np.pi)  # noqa: E731
        value, _ = integrate.quad(density, -np.inf, 1.0, epsabs=1e-14, epsrel=1e-14)
        assert standard_normal_cdf(1.0) == pytest.approx(value, abs=1e-12)
        assert standard_normal_cdf(1.0) == pytest.approx(0.841344746, abs=1e-9)


class TestZeroOneAccuracy:
    def test_invariant_direction(self, reference):
        spec, env = reference
        v = np.concatenate([np.ones(3), np.zeros(32)])
        expected = standard_normal_cdf(np.sqrt(3))
        assert zero_one_accuracy(LinearClassifier(v), spec, env) == pytest.approx(expected, abs=1e-14)

    def test_invariant_classifier_unchanged_on_test(self, reference):
        spec, env = reference
        v = np.concatenate([np.ones(3), np.zeros(32)])
        assert zero_one_accuracy(v, spec, env) == zero_one_accuracy(v, spec, flip_test_environment(env))

    def test_zero_vector_is_chance(self, reference):
        spec, env = reference
        assert zero_one_accuracy(np.zeros(35), spec, env) == 0.5

    def test_positive_scale_invariance(self, reference):
        spec, env = reference
        rng = np.random.default_rng(0)
        v = rng.standard_normal(35)
        base = zero_one_accuracy(v, spec, env)
        for c in rng.uniform(1e-3, 1e3, size=20):
            assert zero_one_accuracy(c * v, spec, env) == pytest.approx(base, abs=1e-12)

    def test_monotone_in_invariant_signal(self):
        spec = ModelSpecFactory(r=1, d_s=2, seed=0)
        env = sample_environment(spec, 0)
        previous = 0.0
        for mu in (0.1, 0.5, 1.0, 2.0):
            scaled = ModelSpecFactory(r=1, d_s=2, seed=0, mu1=np.array([mu]))
            acc = zero_one_accuracy(np.array([1.0, 0.0, 0.0]), scaled, env)
            assert acc > previous
            previous = acc

    def test_general_mixing_uses_latent_blocks(self):
        spec = reference_model_spec(r=2, d_s=3, mix="random-orthogonal", seed=1)
        env = sample_environment(spec, 0)
        v = spec.S @ np.array([1.0, 1.0, 0.0, 0.0, 0.0])
        beta1, beta2 = latent_blocks(v, spec)
        assert np.allclose(beta1, [1.0, 1.0])
        assert np.allclose(beta2, 0.0, atol=1e-12)
        assert zero_one_accuracy(v, spec, env) == pytest.approx(standard_normal_cdf(np.sqrt(2)), abs=1e-12)

    def test_risk_complements_accuracy(self, reference):
        spec, env = reference
        v = np.ones(35)
        assert zero_one_risk(v, spec, env) == pytest.approx(1 - zero_one_accuracy(v, spec, env))

    def test_length_mismatch(self, reference):
        spec, env = reference
        with pytest.raises(DimensionMismatch):
            zero_one_accuracy(np.ones(3), spec, env)

    def test_monte_carlo_agreement(self):
        rng = np.random.default_rng(3)
        n = 100_000
        for trial in range(10):
            spec = reference_model_spec(r=2, d_s=4, mix="random-orthogonal", seed=trial)
            env = sample_environment(spec, 0, mu2_scale=1.0)
            if trial % 2:
                env = flip_test_environment(env)
            v = rng.standard_normal(6)
            exact = zero_one_accuracy(v, spec, env)
            estimate = monte_carlo_accuracy(v, spec, env, n, rng=derive_rng(trial, Stream.SAMPLES, 99))
            assert abs(estimate - exact) <= 4 * np.sqrt(0.25 / n)


class TestLinearClassifier:
    def test_unit_normalizes(self):
        classifier = LinearClassifier.unit([3.0, 4.0])
        assert np.linalg.norm(classifier.v) == pytest.approx(1.0, abs=1e-15)
        assert classifier.normalized

    def test_normalized_flag_checked(self):
        with pytest.raises(InvalidParameter):
            LinearClassifier(np.array([3.0, 4.0]), normalized=True)


class TestEmpiricalAccuracy:
    def test_separated_toy_set(self):
        data = Dataset(X=np.array([[1.0, 0.0], [2.0, 1.0], [-1.0, 0.5], [-3.0, 0.0]]), y=np.array([1, 1, -1, -1]))
        assert empirical_accuracy(np.array([1.0, 0.0]), data) == 1.0

    def test_zero_vector_counts_as_wrong(self):
        data = Dataset(X=np.eye(2), y=np.array([1, -1]))
        assert empirical_accuracy(np.zeros(2), data) == 0.0

    def test_empty(self):
        with pytest.raises(EmptyDataset):
            empirical_accuracy(np.ones(2), Dataset(X=np.zeros((0, 2)), y=np.zeros(0)))


class TestEstimateMoments:
    def test_mirrored_points(self):
        point = np.array([1.0, 2.0])
        moments = estimate_moments(Dataset(X=np.vstack([point, -point]), y=np.array([1, -1])))
        assert np.allclose(moments.mean_pos, point)
        assert np.allclose(moments.second_pos, moments.second_neg)
        assert moments.source == "estimated"
        assert moments.n == 2

    def test_single_class(self):
        with pytest.raises(MissingClass):
            estimate_moments(Dataset(X=np.eye(2), y=np.array([1, 1])))

    def test_large_sample_close_to_analytic(self):
        spec = ModelSpecFactory(r=2, d_s=2, seed=1)
        env = sample_environment(spec, 0, mu2_scale=1.0)
        exact = analytic_moments(spec, env)
        estimate = estimate_moments(sample_dataset(spec, env, 200_000))
        scale = np.linalg.norm(exact.second_pos, "fro")
        assert np.linalg.norm(estimate.second_pos - exact.second_pos, "fro") < 0.05 * scale
