import numpy as np
import pytest

from core.exceptions import DimensionMismatch, InvalidParameter, RankDeficient, TheoremNotApplicable
from core.seeding import Stream, derive_rng
from environments.generation import (
    analytic_moments,
    isotropic_bias,
    make_model_spec,
    reference_model_spec,
    sample_dataset,
    sample_environments,
)
from environments.types import EnvParams
from learners.baselines import erm_fit
from learners.closed_form import oracle_w_star
from learners.ifm import ifm_run

from .checks import erm_lower_bound_check, ifm_shrink_check, max_rounds_allowed, spurious_leak
from .ellipsoids import (
    EllipsoidSystem,
    RootSearchConfig,
    ellipsoid_point,
    invariant_coefficients,
    irm_spurious_solution_find,
    random_system,
)


def isotropic_env(index, mu2, sigma2=1.0):
    d_s = len(mu2)
    cov = sigma2**2 * np.eye(d_s)
    return EnvParams(index=index, mu2=np.asarray(mu2, float), sigma2_bar=cov, G=np.zeros((d_s, d_s)), sigma2=cov)


@pytest.fixture
def small_bound_instance():
    spec = make_model_spec(1, 2, [0.1], [[1.0]], D=1.0)
    envs = [isotropic_env(0, [5.0, 0.0]), isotropic_env(1, [0.0, 5.0])]
    return spec, envs


class TestErmLowerBound:
    def test_spurious_classifier_fails_on_flipped_environments(self, small_bound_instance):
        spec, envs = small_bound_instance
        verdict = erm_lower_bound_check(np.array([1.0, 1.0, 1.0]), spec, envs)
        assert verdict.applicable
        assert not verdict.violated
        assert max(verdict.test_accuracies) < 0.5

    def test_invariant_classifier_is_consistent(self, small_bound_instance):
        spec, envs = small_bound_instance
        verdict = erm_lower_bound_check(oracle_w_star(spec), spec, envs)
        assert not verdict.applicable
        assert not verdict.violated
        assert verdict.train_accuracies == pytest.approx(verdict.test_accuracies)

    def test_erm_fits_never_violate(self):
        for seed in range(3):
            spec = make_model_spec(3, 32, 0.3 * np.ones(3) / np.sqrt(3), np.eye(3), D=1.0, seed=seed)
            envs = sample_environments(spec, 5, sigma2_bar_source=isotropic_bias(1.0, 32), mu2_norm=3.0)
            datasets = [sample_dataset(spec, env, 2000) for env in envs]
            verdict = erm_lower_bound_check(erm_fit(datasets), spec, envs)
            assert not verdict.violated

    def test_non_isotropic_covariance(self, small_bound_instance):
        _, envs = small_bound_instance
        spec = make_model_spec(2, 2, [0.1, 0.0], np.diag([1.0, 2.0]), D=1.0)
        with pytest.raises(TheoremNotApplicable):
            erm_lower_bound_check(np.ones(4), spec, envs)

    def test_zero_bias_requires_perfect_training_accuracy(self):
        spec = reference_model_spec(r=1, d_s=2)
        envs = sample_environments(spec, 2)
        verdict = erm_lower_bound_check(np.ones(3), spec, envs)
        assert verdict.threshold == 1.0
        assert not verdict.violated

    def test_too_many_environments(self):
        spec = make_model_spec(1, 1, [0.1], [[1.0]], D=1.0)
        envs = [isotropic_env(0, [1.0]), isotropic_env(1, [2.0])]
        with pytest.raises(TheoremNotApplicable):
            erm_lower_bound_check(np.ones(2), spec, envs)

    def test_unequal_biases(self):
        spec = make_model_spec(1, 2, [0.1], [[1.0]], D=10.0)
        envs = [isotropic_env(0, [1.0, 0.0], 1.0), isotropic_env(1, [0.0, 1.0], 1.5)]
        with pytest.raises(TheoremNotApplicable):
            erm_lower_bound_check(np.ones(3), spec, envs)


class TestEllipsoidSystem:
    def test_dependent_means_rejected(self):
        b = np.array([1.0, 2.0])
        with pytest.raises(RankDeficient):
            EllipsoidSystem(A_list=(np.eye(2), 2 * np.eye(2)), b_list=(b, 2 * b))

    def test_too_many_equations(self):
        with pytest.raises(TheoremNotApplicable):
            EllipsoidSystem(A_list=(np.eye(1), np.eye(1)), b_list=([1.0], [2.0]))

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatch):
            EllipsoidSystem(A_list=(np.eye(2), np.eye(3)), b_list=([1.0, 0.0], [0.0, 1.0, 0.0]))

    def test_parametrization_lies_on_ellipsoid(self):
        rng = np.random.default_rng(0)
        system = random_system(3, rng)
        A, b = system.A_list[0], system.b_list[0]
        for _ in range(10):
            c = rng.standard_normal(3)
            x = ellipsoid_point(A, b, c / np.linalg.norm(c))
            assert x @ A @ x - b @ x == pytest.approx(0.0, abs=1e-9 * max(1.0, x @ A @ x))

    def test_from_environments(self):
        spec = reference_model_spec(r=1, d_s=3, seed=1)
        system = EllipsoidSystem.from_environments(sample_environments(spec, 3))
        assert system.count == 3
        assert system.dim == 3


class TestRootSearch:
    def test_two_dimensional_success_rate(self):
        successes = 0
        for i in range(100):
            system = random_system(2, derive_rng(0, Stream.INSTANCE, 2, i))
            root = irm_spurious_solution_find(system, RootSearchConfig(), derive_rng(0, Stream.RESTART, i))
            successes += root.success
        assert successes >= 97

    def test_root_gives_invariant_coefficients(self):
        system = random_system(3, np.random.default_rng(4))
        root = irm_spurious_solution_find(system, rng=np.random.default_rng(5))
        assert root.success
        assert root.norm >= 1e-4
        assert root.isolated
        coefficients = invariant_coefficients(system, root.u)
        assert np.ptp(coefficients) <= 1e-6

    def test_dimension_limit(self):
        system = random_system(9, np.random.default_rng(0))
        with pytest.raises(InvalidParameter):
            irm_spurious_solution_find(system)


class TestShrinkCheck:
    def test_single_round(self):
        verdict = ifm_shrink_check([35, 3], r=3)
        assert verdict.passed
        assert verdict.rounds == 1

    def test_halving_schedule(self):
        verdict = ifm_shrink_check([35, 18, 10, 3], r=3, c=2.0)
        assert verdict.passed
        assert verdict.max_rounds == 7

    def test_stalled_round_reported(self):
        verdict = ifm_shrink_check([35, 10, 10, 3], r=3)
        assert not verdict.passed
        assert verdict.first_violation == 2

    def test_round_budget(self):
        assert max_rounds_allowed(32, 2.0) == 7
        assert max_rounds_allowed(1, 2.0) == 2

    def test_invalid_rate(self):
        with pytest.raises(InvalidParameter):
            ifm_shrink_check([5, 3], r=3, c=1.0)

    def test_ifm_stack(self):
        spec = reference_model_spec(seed=2)
        moments = [analytic_moments(spec, env) for env in sample_environments(spec, 6)]
        predictor = ifm_run(moments, 3)
        assert ifm_shrink_check(predictor, r=3).passed
        assert ifm_shrink_check(predictor.stack, r=3).reached_r


class TestSpuriousLeak:
    def test_oracle_has_no_leak(self):
        spec = reference_model_spec(r=3, d_s=8, mix="random-orthogonal", seed=0)
        assert spurious_leak(oracle_w_star(spec), spec) <= 1e-12

    def test_random_vectors(self):
        spec = reference_model_spec()
        rng = np.random.default_rng(0)
        leaks = [spurious_leak(rng.standard_normal(35), spec) for _ in range(400)]
        assert np.mean(leaks) == pytest.approx(np.sqrt(32 / 35), abs=0.02)

    def test_ifm_featurizer(self):
        spec = reference_model_spec(mix="random-orthogonal", seed=3)
        moments = [analytic_moments(spec, env) for env in sample_environments(spec, 4)]
        predictor = ifm_run(moments, 3)
        assert spurious_leak(predictor.stack, spec) <= 1e-6
        assert spurious_leak(predictor, spec) <= 1e-6

    def test_vector_leak_is_share_of_latent_weights(self):
        spec = make_model_spec(1, 2, [1.0], [[1.0]], S=np.diag([2.0, 1.0, 1.0]))
        v = np.array([1.0, 1.0, 0.0])
        assert spurious_leak(v, spec) == pytest.approx(1.0 / np.sqrt(5.0), abs=1e-12)
        assert spurious_leak(3.0 * v, spec) == pytest.approx(spurious_leak(v, spec), abs=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            spurious_leak(np.eye(3, 5), reference_model_spec())
