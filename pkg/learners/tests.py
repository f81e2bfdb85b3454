import numpy as np
import pytest

from core.exceptions import (
    DegenerateDifference,
    EnvironmentsExhausted,
    IncompatibleWidths,
    InvalidParameter,
    TooFewEnvironments,
)
from core.linalg import angular_distance, orthonormality_error
from environments.factories import ModelSpecFactory
from environments.generation import (
    analytic_moments,
    flip_test_environment,
    make_model_spec,
    reference_model_spec,
    sample_dataset,
    sample_environments,
)
from environments.types import Dataset
from matching.types import MatcherConfig
from risk.evaluation import estimate_moments, standard_normal_cdf, zero_one_accuracy

from .baselines import coral_fit, default_coral_widths, erm_fit, irm_fit
from .closed_form import oracle_w_star, simple_algo
from .factories import GaussianDatasetFactory, gaussian_dataset
from .ifm import ifm_run
from .serializers import dump_predictor, load_predictor
from .types import CoralConfig, OptimizerConfig, Partition, TrainedPredictor


def analytic_setup(E=4, seed=0, r=3, d_s=32, mix="identity"):
    spec = reference_model_spec(r=r, d_s=d_s, mix=mix, seed=seed)
    envs = sample_environments(spec, E)
    return spec, envs, [analytic_moments(spec, env) for env in envs]


class TestPartition:
    def test_consecutive_pairs(self):
        assert Partition.consecutive(6, 2).groups == ((0, 1), (2, 3), (4, 5))

    def test_trailing_singleton_merges(self):
        assert Partition.consecutive(5, 2).groups == ((0, 1), (2, 3, 4))
        assert Partition.consecutive(3, 2).groups == ((0, 1, 2),)

    def test_round_robin(self):
        assert Partition.round_robin(6, 3).groups == ((0, 3), (1, 4), (2, 5))

    def test_overlap_rejected(self):
        with pytest.raises(InvalidParameter):
            Partition(groups=((0, 1), (1, 2)), n_envs=3)

    def test_small_group_rejected(self):
        with pytest.raises(InvalidParameter):
            Partition(groups=((0, 1), (2,)), n_envs=3)


class TestIFM:
    def test_recovers_oracle_on_reference_instance(self):
        spec, envs, moments = analytic_setup()
        predictor = ifm_run(moments, 3, spec=spec)
        oracle = oracle_w_star(spec)
        assert predictor.stack.dims[-1] == 3
        assert predictor.diagnostics["spurious_leak"][-1] <= 1e-6
        assert angular_distance(predictor.v, oracle.v) <= 1e-4
        for env in envs:
            test = flip_test_environment(env)
            assert zero_one_accuracy(predictor, spec, test) == pytest.approx(
                zero_one_accuracy(oracle, spec, test), abs=1e-3
            )

    def test_output_independent_of_spurious_draws(self):
        spec_a, _, moments_a = analytic_setup(seed=1, mix="random-orthogonal")
        spec_b = make_model_spec(3, 32, spec_a.mu1, spec_a.sigma1, S=spec_a.S, seed=2)
        moments_b = [analytic_moments(spec_b, env) for env in sample_environments(spec_b, 4)]
        a = ifm_run(moments_a, 3)
        b = ifm_run(moments_b, 3)
        assert angular_distance(a.v, b.v) <= 1e-4

    def test_rounds_consume_disjoint_groups(self):
        _, _, moments = analytic_setup(E=6)
        predictor = ifm_run(moments, 3)
        rounds = predictor.diagnostics["rounds"]
        flat = [i for group in rounds for i in group]
        assert len(flat) == len(set(flat))

    def test_shrink_rate(self):
        _, _, moments = analytic_setup(E=6, seed=3)
        dims = ifm_run(moments, 3).stack.dims
        for previous, current in zip(dims, dims[1:]):
            assert current - 3 < (previous - 3 + 1) / 2

    def test_no_spurious_dimensions_means_no_rounds(self):
        _, _, moments = analytic_setup(E=2, r=2, d_s=3)
        predictor = ifm_run(moments, 5)
        assert predictor.stack.steps == ()
        assert predictor.diagnostics["dims"] == [5]

    def test_exhausted_groups(self):
        _, _, moments = analytic_setup(E=2, r=2, d_s=3)
        with pytest.raises(EnvironmentsExhausted):
            ifm_run([moments[0], moments[0]], 2)

    def test_requires_r(self):
        _, _, moments = analytic_setup(E=2, r=2, d_s=3)
        with pytest.raises(InvalidParameter):
            ifm_run(moments)

    def test_estimate_r_stops_when_stable(self):
        _, _, moments = analytic_setup(E=4, r=2, d_s=6)
        predictor = ifm_run(moments, None, estimate_r=True)
        assert predictor.stack.dims[-1] == 2

    def test_stack_is_orthonormal(self):
        _, _, moments = analytic_setup(E=4, seed=5, mix="random-orthogonal")
        stack = ifm_run(moments, 3).stack
        assert orthonormality_error(stack.composed) <= 1e-6

    def test_sampled_mode_fixed_width(self):
        spec = reference_model_spec(r=2, d_s=4, seed=0)
        envs = sample_environments(spec, 4)
        datasets = [sample_dataset(spec, env, 5000) for env in envs]
        config = MatcherConfig(tol_rel=5e-2)
        predictor = ifm_run(
            datasets=datasets, r=2, widths=[2], match="all", matcher_config=config, rng=np.random.default_rng(0)
        )
        assert predictor.diagnostics["final_fit"] == "logistic"
        oracle_acc = zero_one_accuracy(oracle_w_star(spec), spec, envs[0])
        assert zero_one_accuracy(predictor, spec, flip_test_environment(envs[0])) > oracle_acc - 0.05

    def test_disjoint_fixed_widths(self):
        _, _, moments = analytic_setup(E=4, r=2, d_s=4)
        predictor = ifm_run(moments, 2, widths=[4, 2], match="disjoint", rng=np.random.default_rng(1))
        assert predictor.stack.dims == [6, 4, 2]
        assert predictor.diagnostics["rounds"] == [[0, 2], [1, 3]]

    def test_widths_must_end_at_r(self):
        _, _, moments = analytic_setup(E=4, r=2, d_s=4)
        with pytest.raises(IncompatibleWidths):
            ifm_run(moments, 2, widths=[4, 3])


class TestERM:
    def test_isotropic_direction(self):
        mean = np.array([1.0, 0.5, 0.0])
        predictor = erm_fit([gaussian_dataset(mean, 100_000, seed=0)])
        assert angular_distance(predictor.v, mean) <= 0.05
        assert np.linalg.norm(predictor.v) == pytest.approx(1.0, abs=1e-12)

    def test_duplicated_environment(self):
        data = GaussianDatasetFactory(seed=1)
        doubled = Dataset(X=np.vstack([data.X, data.X]), y=np.concatenate([data.y, data.y]))
        config = OptimizerConfig(max_iters=300)
        assert np.allclose(erm_fit([data, data], config).v, erm_fit([doubled], config).v, atol=1e-8)

    def test_deterministic(self):
        data = GaussianDatasetFactory(seed=2)
        assert np.array_equal(erm_fit([data]).v, erm_fit([data]).v)


class TestIRM:
    def test_zero_penalty_equals_erm(self):
        datasets = [GaussianDatasetFactory(seed=3), GaussianDatasetFactory(seed=4)]
        config = OptimizerConfig(max_iters=300)
        assert np.allclose(irm_fit(datasets, 0.0, config).v, erm_fit(datasets, config).v, atol=1e-12)

    def test_identical_environments_match_erm(self):
        data = GaussianDatasetFactory(seed=5)
        irm = irm_fit([data, data], penalty_weight=10.0, opt_config=OptimizerConfig(max_iters=5000))
        erm = erm_fit([data, data])
        assert angular_distance(irm.v, erm.v) < 0.05

    def test_needs_two_environments(self):
        with pytest.raises(TooFewEnvironments):
            irm_fit([GaussianDatasetFactory()], 1.0)

    @pytest.mark.slow
    def test_fails_on_flipped_environments_when_E_below_d_s(self):
        for seed in range(3):
            spec = reference_model_spec(r=3, d_s=32, seed=seed)
            envs = sample_environments(spec, 5)
            datasets = [sample_dataset(spec, env, 1000) for env in envs]
            predictor = irm_fit(datasets, 1.0)
            flipped = np.mean([zero_one_accuracy(predictor, spec, flip_test_environment(env)) for env in envs])
            assert flipped <= 0.6


class TestCoral:
    def test_single_layer_without_matching_is_erm(self):
        data = GaussianDatasetFactory(n=5000, seed=6)
        config = CoralConfig(widths=[3], lambda_coral=0.0, step_size=0.5, max_iters=3000)
        coral = coral_fit([data], config=config, rng=np.random.default_rng(0))
        assert angular_distance(coral.v, erm_fit([data]).v) < 0.1

    def test_default_widths(self):
        assert default_coral_widths("match_all", 3, 35) == [3]
        assert default_coral_widths("match_disjoint", 3, 35) == [17, 8, 3]

    def test_disjoint_needs_enough_environments(self):
        datasets = [GaussianDatasetFactory(seed=k) for k in range(2)]
        with pytest.raises(TooFewEnvironments):
            coral_fit(datasets, mode="match_disjoint", widths=[3, 2, 1])

    def test_disjoint_layers_get_a_pair_each(self):
        datasets = [GaussianDatasetFactory(seed=k) for k in range(5)]
        with pytest.raises(TooFewEnvironments):
            coral_fit(datasets, mode="match_disjoint", widths=[3, 2, 1])

    def test_incompatible_widths(self):
        with pytest.raises(IncompatibleWidths):
            coral_fit([GaussianDatasetFactory()], widths=[5])
        with pytest.raises(IncompatibleWidths):
            coral_fit([GaussianDatasetFactory()])

    def test_disjoint_layers_use_separate_groups(self):
        spec = ModelSpecFactory(r=1, d_s=3, seed=0)
        datasets = [sample_dataset(spec, env, 300) for env in sample_environments(spec, 6)]
        config = CoralConfig(max_iters=50, lambda_on=1.0)
        predictor = coral_fit(datasets, mode="match_disjoint", widths=[3, 2, 1], config=config)
        assert predictor.diagnostics["layer_envs"] == [[0, 1], [2, 3], [4, 5]]
        assert predictor.algorithm == "coral_disjoint"

    def test_deterministic(self):
        datasets = [GaussianDatasetFactory(seed=7), GaussianDatasetFactory(seed=8)]
        config = CoralConfig(widths=[2], max_iters=100)
        a = coral_fit(datasets, config=config, rng=np.random.default_rng(3))
        b = coral_fit(datasets, config=config, rng=np.random.default_rng(3))
        assert np.array_equal(a.v, b.v)


class TestSimpleAlgo:
    def test_analytic_moments_give_oracle(self):
        for seed in range(5):
            spec, _, moments = analytic_setup(E=2, seed=seed, r=3, d_s=8, mix="random-orthogonal")
            predictor = simple_algo(moments[0], moments[1], spec.d_s)
            assert angular_distance(predictor.v, oracle_w_star(spec).v) <= 1e-8

    def test_identical_environments(self):
        _, _, moments = analytic_setup(E=1, r=2, d_s=3)
        with pytest.raises(DegenerateDifference):
            simple_algo(moments[0], moments[0], 3)

    def test_sampled_moments(self):
        spec = reference_model_spec(r=2, d_s=8, seed=0)
        envs = sample_environments(spec, 2, mu2_scale=1.0)
        moments = [estimate_moments(sample_dataset(spec, env, 100_000)) for env in envs]
        predictor = simple_algo(moments[0], moments[1], 8)
        assert angular_distance(predictor.v, oracle_w_star(spec).v) <= 0.1


class TestOracle:
    def test_identity_mixing(self):
        spec = make_model_spec(2, 3, [1.0, 2.0], np.diag([1.0, 4.0]))
        expected = np.array([1.0, 0.5, 0.0, 0.0, 0.0])
        assert np.allclose(oracle_w_star(spec).v, expected / np.linalg.norm(expected), atol=1e-15)

    def test_orthogonal_to_spurious_columns(self):
        spec = reference_model_spec(r=3, d_s=6, mix="random-orthogonal", seed=4)
        assert np.allclose(spec.spurious_block.T @ oracle_w_star(spec).v, 0.0, atol=1e-12)

    def test_accuracy_matches_closed_form(self):
        spec = reference_model_spec(r=3, d_s=6, mix="random-orthogonal", seed=5)
        oracle = oracle_w_star(spec)
        expected = standard_normal_cdf(np.sqrt(3.0))
        for env in sample_environments(spec, 3):
            assert zero_one_accuracy(oracle, spec, env) == pytest.approx(expected, abs=1e-12)
            assert zero_one_accuracy(oracle, spec, flip_test_environment(env)) == pytest.approx(expected, abs=1e-12)


class TestSerializers:
    def test_predictor_json(self, tmp_path):
        _, _, moments = analytic_setup(E=2, r=2, d_s=3)
        predictor = ifm_run(moments, 2)
        path = dump_predictor(predictor, tmp_path / "ifm.json")
        loaded = load_predictor(path)
        assert isinstance(loaded, TrainedPredictor)
        assert loaded.algorithm == "ifm"
        assert np.allclose(loaded.v, predictor.v, atol=1e-15)
        assert loaded.diagnostics["dims"] == [5, 2]
