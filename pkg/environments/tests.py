import numpy as np
import pytest

from core.exceptions import (
    AlreadyFlipped,
    BoundViolation,
    CorruptedEnvironment,
    DimensionMismatch,
    EmptyDataset,
    InvalidParameter,
    NotSPD,
    NotSymmetric,
    RankDeficient,
)
from core.seeding import Stream, derive_rng
from risk.evaluation import estimate_moments

from .factories import EnvParamsFactory, ModelSpecFactory
from .generation import (
    analytic_moments,
    flip_all,
    flip_test_environment,
    isotropic_bias,
    make_model_spec,
    reference_model_spec,
    sample_dataset,
    sample_environment,
    sample_environments,
)
from .serializers import dump_dataset_csv, dump_environment_set, load_dataset_csv, load_environment_set
from .types import Dataset, LabeledSample


class TestMakeModelSpec:
    def test_reference_instance(self):
        spec = make_model_spec(3, 32, np.ones(3), np.eye(3), S=np.eye(35))
        assert spec.d == 35
        assert np.array_equal(spec.S, np.eye(35))

    def test_default_mixing_is_identity(self):
        spec = make_model_spec(2, 3, [1.0, 2.0], np.eye(2))
        assert np.array_equal(spec.S, np.eye(5))

    def test_zero_signal_mean_is_valid(self):
        spec = make_model_spec(1, 1, [0.0], [[1.0]])
        assert spec.d == 2
        assert spec.mu1[0] == 0.0

    def test_zero_covariance_rejected(self):
        with pytest.raises(NotSPD):
            make_model_spec(1, 1, [1.0], [[0.0]])

    def test_asymmetric_covariance_rejected(self):
        with pytest.raises(NotSymmetric):
            make_model_spec(2, 1, [1.0, 1.0], [[1.0, 0.5], [0.0, 1.0]])

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            make_model_spec(2, 2, [1.0, 1.0, 1.0], np.eye(2))
        with pytest.raises(DimensionMismatch):
            make_model_spec(2, 2, [1.0, 1.0], np.eye(2), S=np.eye(3))

    def test_rank_deficient_invariant_block(self):
        S = np.eye(3)
        S[:, 1] = S[:, 0]
        with pytest.raises(RankDeficient):
            make_model_spec(2, 1, [1.0, 1.0], np.eye(2), S=S)

    def test_spurious_block_may_be_singular(self):
        S = np.eye(3)
        S[:, 2] = S[:, 0]
        spec = make_model_spec(2, 1, [1.0, 1.0], np.eye(2), S=S)
        assert spec.invariant_block.shape == (3, 2)

    def test_arrays_are_read_only(self):
        spec = ModelSpecFactory()
        with pytest.raises(ValueError):
            spec.mu1[0] = 5.0

    def test_random_orthogonal_mixing(self):
        spec = reference_model_spec(r=2, d_s=3, mix="random-orthogonal", seed=4)
        assert np.allclose(spec.S @ spec.S.T, np.eye(5), atol=1e-12)
        again = reference_model_spec(r=2, d_s=3, mix="random-orthogonal", seed=4)
        assert np.array_equal(spec.S, again.S)

    def test_unknown_mixing_regime(self):
        with pytest.raises(InvalidParameter):
            reference_model_spec(mix="shear")


class TestSampleEnvironment:
    def test_zero_bias_gives_gram_covariance(self):
        spec = reference_model_spec()
        env = sample_environment(spec, 0, mu2_scale=10.0)
        assert np.allclose(env.sigma2, env.G @ env.G.T, atol=1e-12)
        assert np.all(env.sigma2_bar == 0.0)
        assert not env.flipped

    def test_deterministic_for_fixed_seed(self):
        spec = ModelSpecFactory(d_s=2, seed=7)
        first = sample_environment(spec, 3)
        second = sample_environment(spec, 3)
        for name in ("mu2", "G", "sigma2"):
            assert np.array_equal(getattr(first, name), getattr(second, name))

    def test_explicit_rng_is_used(self):
        spec = ModelSpecFactory(d_s=2)
        a = sample_environment(spec, 0, rng=derive_rng(1, Stream.ENVIRONMENT, 0))
        b = sample_environment(spec, 0, rng=derive_rng(2, Stream.ENVIRONMENT, 0))
        assert not np.array_equal(a.mu2, b.mu2)

    def test_adding_environments_keeps_earlier_ones(self):
        spec = ModelSpecFactory(seed=11)
        three = sample_environments(spec, 3)
        five = sample_environments(spec, 5)
        for a, b in zip(three, five):
            assert np.array_equal(a.mu2, b.mu2)
            assert np.array_equal(a.sigma2, b.sigma2)

    def test_isotropic_bias_within_bound(self):
        spec = ModelSpecFactory(d_s=3, D=4.0)
        env = sample_environment(spec, 0, sigma2_bar_source=isotropic_bias(np.sqrt(2.0), 3))
        assert np.allclose(env.sigma2_bar, 2.0 * np.eye(3))
        assert np.allclose(env.sigma2, 2.0 * np.eye(3) + env.G @ env.G.T)

    def test_bias_above_bound_rejected(self):
        spec = ModelSpecFactory(d_s=3, D=3.9)
        with pytest.raises(BoundViolation):
            sample_environment(spec, 0, sigma2_bar_source=isotropic_bias(np.sqrt(2.0), 3))

    def test_callable_bias_source(self):
        spec = ModelSpecFactory(d_s=2, D=1.0)
        calls = []

        def source(index, rng):
            calls.append(index)
            return np.diag([0.5, 0.25])

        env = sample_environment(spec, 4, sigma2_bar_source=source)
        assert calls == [4]
        assert np.allclose(env.sigma2_bar, np.diag([0.5, 0.25]))

    def test_asymmetric_bias_rejected(self):
        spec = ModelSpecFactory(d_s=2, D=10.0)
        with pytest.raises(NotSymmetric):
            sample_environment(spec, 0, sigma2_bar_source=np.array([[1.0, 0.3], [0.0, 1.0]]))

    def test_non_positive_scale_rejected(self):
        with pytest.raises(InvalidParameter):
            sample_environment(ModelSpecFactory(), 0, mu2_scale=0.0)

    def test_mu2_norm_rescales(self):
        env = sample_environment(ModelSpecFactory(d_s=5), 0, mu2_norm=3.0)
        assert np.linalg.norm(env.mu2) == pytest.approx(3.0)

    def test_covariance_positive_definite(self):
        spec = reference_model_spec()
        for env in sample_environments(spec, 6):
            assert np.linalg.eigvalsh(env.sigma2)[0] > 0


class TestFlip:
    def test_flip_negates_spurious_mean_only(self):
        spec = ModelSpecFactory()
        env = EnvParamsFactory(spec=spec)
        test = flip_test_environment(env)
        assert test.flipped
        assert test.sigma2 is env.sigma2
        train_moments = analytic_moments(spec, env)
        test_moments = analytic_moments(spec, test)
        assert np.allclose(test_moments.mean_pos[: spec.r], train_moments.mean_pos[: spec.r])
        assert np.allclose(test_moments.mean_pos[spec.r :], -train_moments.mean_pos[spec.r :])
        assert np.allclose(test_moments.cov_pos, train_moments.cov_pos)

    def test_zero_mean_flip_is_identical_in_distribution(self):
        spec = ModelSpecFactory(d_s=2)
        env = sample_environment(spec, 0)
        env = env.__class__(
            index=0, mu2=np.zeros(2), sigma2_bar=env.sigma2_bar, G=env.G, sigma2=env.sigma2
        )
        flipped = flip_test_environment(env)
        assert np.allclose(analytic_moments(spec, env).mean_pos, analytic_moments(spec, flipped).mean_pos)

    def test_double_flip_rejected(self):
        env = flip_test_environment(EnvParamsFactory())
        with pytest.raises(AlreadyFlipped):
            flip_test_environment(env)

    def test_flip_all(self):
        envs = flip_all(sample_environments(ModelSpecFactory(), 3))
        assert all(env.flipped for env in envs)


class TestAnalyticMoments:
    def test_identity_mixing_stacks_means(self):
        spec = ModelSpecFactory(r=3, d_s=2)
        env = EnvParamsFactory(spec=spec)
        moments = analytic_moments(spec, env)
        assert np.allclose(moments.mean_pos, np.concatenate([np.ones(3), env.mu2]))
        assert np.allclose(moments.mean_neg, -moments.mean_pos)
        assert np.array_equal(moments.second_neg, moments.second_pos)
        assert moments.is_analytic

    def test_covariance_is_psd(self):
        spec = reference_model_spec(mix="random-orthogonal", seed=3)
        moments = analytic_moments(spec, sample_environment(spec, 0))
        assert np.linalg.eigvalsh(moments.cov_pos)[0] > 0

    def test_mismatched_environment(self):
        env = EnvParamsFactory(spec=ModelSpecFactory(d_s=3))
        with pytest.raises(DimensionMismatch):
            analytic_moments(ModelSpecFactory(d_s=4), env)

    def test_estimated_moments_converge(self):
        spec = reference_model_spec(r=2, d_s=3, mix="random-orthogonal", seed=5)
        env = sample_environment(spec, 0, mu2_scale=1.0)
        exact = analytic_moments(spec, env)
        errors = []
        for n in (10**4, 4 * 10**5):
            estimate = estimate_moments(sample_dataset(spec, env, n, rng=derive_rng(0, Stream.SAMPLES, n)))
            errors.append(np.linalg.norm(estimate.second_pos - exact.second_pos, "fro"))
        scale = np.linalg.norm(exact.second_pos, "fro")
        assert errors[1] < errors[0]
        assert errors[1] < 5.0 * scale / np.sqrt(4 * 10**5) * 5


class TestSampleDataset:
    def test_shapes_and_labels(self):
        spec = reference_model_spec()
        env = sample_environment(spec, 0)
        data = sample_dataset(spec, env, 1000)
        assert data.X.shape == (1000, 35)
        assert set(np.unique(data.y)) <= {-1.0, 1.0}
        assert data.env_index == 0

    def test_single_sample_is_deterministic(self):
        spec = ModelSpecFactory(seed=2)
        env = sample_environment(spec, 0)
        a = sample_dataset(spec, env, 1)
        b = sample_dataset(spec, env, 1)
        assert np.array_equal(a.X, b.X)
        sample = next(iter(a))
        assert isinstance(sample, LabeledSample)
        assert sample.y in (-1, 1)

    def test_empty_rejected(self):
        spec = ModelSpecFactory()
        with pytest.raises(EmptyDataset):
            sample_dataset(spec, sample_environment(spec, 0), 0)

    def test_class_mean_within_clt_bound(self):
        spec = ModelSpecFactory(r=2, d_s=2)
        env = sample_environment(spec, 0, mu2_scale=1.0)
        n = 200_000
        data = sample_dataset(spec, env, n)
        positives = data.X[data.y > 0]
        exact = analytic_moments(spec, env)
        sd = np.sqrt(np.diag(exact.cov_pos))
        assert np.all(np.abs(positives.mean(axis=0) - exact.mean_pos) < 5 * sd / np.sqrt(len(positives)))

    def test_flipped_samples_flip_spurious_coupling(self):
        spec = ModelSpecFactory(r=1, d_s=1, seed=0)
        env = sample_environment(spec, 0, mu2_norm=3.0)
        data = sample_dataset(spec, flip_test_environment(env), 50_000)
        spurious = data.X[:, 1]
        correlation = np.mean(spurious * data.y)
        assert np.sign(correlation) == -np.sign(env.mu2[0])

    def test_corrupted_environment(self):
        spec = ModelSpecFactory(d_s=2)
        env = sample_environment(spec, 0)
        broken = env.__class__(index=0, mu2=env.mu2, sigma2_bar=env.sigma2_bar, G=env.G, sigma2=-np.eye(2))
        with pytest.raises(CorruptedEnvironment):
            sample_dataset(spec, broken, 5)


class TestSerializers:
    def test_environment_set_round_trip(self, tmp_path):
        spec = reference_model_spec(r=2, d_s=3, mix="random-orthogonal", seed=9)
        envs = sample_environments(spec, 3)
        path = dump_environment_set(spec, envs, tmp_path / "envs.json", mix="random-orthogonal")
        loaded_spec, loaded_envs = load_environment_set(path)
        assert np.array_equal(loaded_spec.S, spec.S)
        assert [env.index for env in loaded_envs] == [0, 1, 2]
        assert np.array_equal(loaded_envs[2].sigma2, envs[2].sigma2)

    def test_dataset_csv_columns(self, tmp_path):
        spec = ModelSpecFactory(r=1, d_s=2)
        data = sample_dataset(spec, sample_environment(spec, 0), 10)
        path = dump_dataset_csv(data, tmp_path / "env0.csv")
        header = path.read_text().splitlines()[0]
        assert header == "x_0,x_1,x_2,y"
        loaded = load_dataset_csv(path)
        assert isinstance(loaded, Dataset)
        assert np.array_equal(loaded.X, data.X)
