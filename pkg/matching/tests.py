import numpy as np
import pytest

from core.exceptions import DimensionMismatch, InfeasibleFloor, TooFewEnvironments
from core.linalg import max_principal_angle, orthonormality_error
from environments.factories import ModelSpecFactory
from environments.generation import analytic_moments, reference_model_spec, sample_dataset, sample_environments
from risk.evaluation import estimate_moments

from .solvers import (
    max_dim_match,
    moment_differences,
    moment_pairs,
    penalty_match,
    projected_residual,
    spectral_match,
)
from .types import MatcherConfig, ProjectionStep


def analytic_instance(r=3, d_s=32, count=2, seed=0, mix="identity"):
    spec = reference_model_spec(r=r, d_s=d_s, mix=mix, seed=seed)
    return spec, [analytic_moments(spec, env) for env in sample_environments(spec, count)]


def invariant_rows(spec):
    """Orthonormal basis (rows) of the invariant subspace in observation space"""
    q, _ = np.linalg.qr(spec.invariant_block)
    return q.T


class TestMomentDifferences:
    def test_identical_sets_give_zero(self):
        _, moments = analytic_instance(count=1)
        diffs = moment_differences([moments[0], moments[0]])
        assert all(np.all(diff == 0) for diff in diffs)

    def test_supported_on_spurious_block(self):
        spec, moments = analytic_instance(r=2, d_s=3)
        for diff in moment_differences(moments):
            assert np.allclose(diff[: spec.r, :], 0.0, atol=1e-12)
            assert np.allclose(diff[:, : spec.r], 0.0, atol=1e-12)

    def test_invariant_coordinates_in_null_space_despite_class_means(self):
        spec, moments = analytic_instance()
        assert np.linalg.norm(spec.mu1) > 0
        diffs = moment_differences(moments)
        for diff in diffs:
            assert np.abs(diff @ np.eye(35)[:, :3]).max() <= 1e-12
        assert spectral_match(diffs).r_out == 3

    def test_chain_and_disjoint_pairs(self):
        assert moment_pairs(3, "chain") == [(0, 1), (1, 2)]
        assert moment_pairs(4, "disjoint") == [(0, 1), (2, 3)]
        assert moment_pairs(3, "disjoint") == [(0, 1)]

    def test_pairings_share_null_space(self):
        for seed in range(3):
            _, moments = analytic_instance(r=2, d_s=6, count=4, seed=seed, mix="random-orthogonal")
            chain = spectral_match(moment_differences(moments, "chain"))
            disjoint = spectral_match(moment_differences(moments, "disjoint"))
            assert chain.r_out == disjoint.r_out == 2
            assert max_principal_angle(chain.U, disjoint.U) < 1e-6

    def test_dimension_mismatch(self):
        _, small = analytic_instance(r=2, d_s=3)
        _, large = analytic_instance(r=2, d_s=4)
        with pytest.raises(DimensionMismatch):
            moment_differences([small[0], large[0]])

    def test_too_few(self):
        _, moments = analytic_instance(count=1)
        with pytest.raises(TooFewEnvironments):
            moment_differences(moments)


class TestSpectralMatch:
    def test_recovers_invariant_coordinates(self):
        spec, moments = analytic_instance()
        step = spectral_match(moment_differences(moments))
        assert step.r_out == 3
        assert step.residual <= 1e-10 * max(1.0, step.scale)
        assert max_principal_angle(step.U, np.eye(35)[:3]) < 1e-8
        assert orthonormality_error(step.U) <= 1e-8

    def test_identical_environments_identity(self):
        _, moments = analytic_instance(r=2, d_s=3, count=1)
        step = spectral_match(moment_differences([moments[0], moments[0]]))
        assert step.r_out == step.r_in == 5
        assert np.array_equal(step.U, np.eye(5))

    def test_sampled_moments_hit_floor(self):
        spec = reference_model_spec()
        envs = sample_environments(spec, 2)
        moments = [estimate_moments(sample_dataset(spec, env, 1000)) for env in envs]
        step = spectral_match(moment_differences(moments), MatcherConfig(floor_dim=3))
        assert step.r_out == 3
        assert step.flagged

    def test_random_mixing(self):
        spec, moments = analytic_instance(r=3, d_s=8, seed=2, mix="random-orthogonal")
        step = spectral_match(moment_differences(moments))
        assert step.r_out == 3
        assert max_principal_angle(step.U, invariant_rows(spec)) < 1e-8


class TestPenaltyMatch:
    def test_agrees_with_spectral_on_reference_instance(self):
        _, moments = analytic_instance()
        spectral = spectral_match(moment_differences(moments))
        penalty = penalty_match(moments, 3, MatcherConfig(), np.random.default_rng(0))
        assert penalty.residual <= 1e-6
        assert max_principal_angle(penalty.U, spectral.U) < 1e-4
        assert orthonormality_error(penalty.U) <= 1e-8

    def test_full_dimension_keeps_raw_mismatch(self):
        _, moments = analytic_instance(r=2, d_s=3)
        step = penalty_match(moments, 5, MatcherConfig(max_iters=50), np.random.default_rng(1))
        assert step.residual == pytest.approx(step.scale, rel=1e-8)
        assert not step.feasible

    def test_zero_coral_weight_reports_residual(self):
        _, moments = analytic_instance(r=2, d_s=3)
        config = MatcherConfig(lambda_coral=0.0, warm_start=False, max_iters=50)
        step = penalty_match(moments, 2, config, np.random.default_rng(2))
        assert orthonormality_error(step.U) <= 1e-8
        assert step.residual == pytest.approx(projected_residual(step.U, moment_differences(moments)))

    def test_random_starts_find_small_instance(self):
        spec, moments = analytic_instance(r=1, d_s=2, seed=3)
        config = MatcherConfig(warm_start=False, restarts=8, max_iters=3000, step_size=0.05)
        step = penalty_match(moments, 1, config, np.random.default_rng(3))
        assert max_principal_angle(step.U, invariant_rows(spec)) < 5e-2

    @pytest.mark.slow
    def test_agrees_with_spectral_on_twenty_instances(self):
        for seed in range(20):
            r, d_s = 1 + seed % 4, 4 + 3 * (seed % 5)
            _, moments = analytic_instance(r=r, d_s=d_s, seed=seed, mix="random-orthogonal")
            spectral = spectral_match(moment_differences(moments))
            assert spectral.r_out == r
            penalty = penalty_match(moments, r, MatcherConfig(), np.random.default_rng(seed))
            assert max_principal_angle(spectral.U, penalty.U) < 1e-3

    def test_deterministic(self):
        _, moments = analytic_instance(r=2, d_s=3)
        config = MatcherConfig(max_iters=100)
        a = penalty_match(moments, 2, config, np.random.default_rng(9))
        b = penalty_match(moments, 2, config, np.random.default_rng(9))
        assert np.array_equal(a.U, b.U)


class TestMaxDimMatch:
    def test_reference_instance_keeps_invariant_dimension(self):
        spec, moments = analytic_instance()
        step = max_dim_match(moments)
        assert isinstance(step, ProjectionStep)
        assert step.r_out == 3
        assert np.linalg.norm(step.U[:, spec.r :]) < 1e-8
        assert step.common_moment.shape == (3, 3)
        assert step.envs == (0, 1)

    def test_duplicated_environment_matches_everything(self):
        _, moments = analytic_instance(r=2, d_s=3, count=1)
        step = max_dim_match([moments[0], moments[0]])
        assert step.r_out == step.r_in

    def test_duplicated_environment_penalty_path(self):
        _, moments = analytic_instance(r=1, d_s=2, count=1)
        config = MatcherConfig(method="penalty", max_iters=20)
        step = max_dim_match([moments[0], moments[0]], config, np.random.default_rng(0))
        assert step.r_out == 3

    def test_tiny_tolerance_on_samples_is_infeasible(self):
        spec = ModelSpecFactory(r=2, d_s=3, seed=0)
        envs = sample_environments(spec, 2)
        moments = [estimate_moments(sample_dataset(spec, env, 200)) for env in envs]
        config = MatcherConfig(tol_rel=1e-15, floor_dim=2, max_iters=50)
        with pytest.raises(InfeasibleFloor):
            max_dim_match(moments, config, np.random.default_rng(0))

    def test_binary_and_linear_search_agree(self):
        _, moments = analytic_instance(r=2, d_s=3, count=4, seed=4)
        config = MatcherConfig(method="penalty", floor_dim=1, tol_rel=1e-6)
        binary = max_dim_match(moments, config, np.random.default_rng(0))
        linear = max_dim_match(moments, config.model_copy(update={"search": "linear"}), np.random.default_rng(0))
        assert binary.r_out == linear.r_out == 2

    def test_feasibility_is_monotone(self):
        _, moments = analytic_instance(r=3, d_s=6, seed=5)
        step = max_dim_match(moments)
        diffs = moment_differences(moments)
        for k in range(1, step.r_out):
            assert projected_residual(step.U[:k], diffs) <= 1e-8 * max(1.0, step.scale)

    def test_invariant_rank_preserved(self):
        spec, moments = analytic_instance(r=3, d_s=8, seed=6, mix="random-orthogonal")
        step = max_dim_match(moments)
        assert np.linalg.matrix_rank(step.U @ spec.invariant_block, tol=1e-8) == spec.r

    def test_random_instances_solvers_agree(self):
        for seed in range(4):
            _, moments = analytic_instance(r=2, d_s=6, seed=seed, mix="random-orthogonal")
            spectral = max_dim_match(moments)
            penalty = penalty_match(moments, spectral.r_out, MatcherConfig(), np.random.default_rng(seed))
            assert max_principal_angle(spectral.U, penalty.U) < 1e-3

    def test_diagnostics_are_serializable(self):
        _, moments = analytic_instance(r=2, d_s=3)
        info = max_dim_match(moments).diagnostics()
        assert info["r_out"] == 2
        assert len(info["spectrum"]) == 5
        assert len(info["pair_residuals"]) == 1
