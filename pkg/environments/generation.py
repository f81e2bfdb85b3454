"""
Instance generation for the smoothed-covariance Gaussian model.

Randomness is drawn from counter-based streams (core.seeding) keyed by the spec seed and the
environment index, so environment e is the same whether 3 or 15 environments are requested.
"""

import dataclasses
import logging
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.linalg
from scipy.stats import ortho_group

from core.exceptions import (
    AlreadyFlipped,
    BoundViolation,
    CorruptedEnvironment,
    DimensionMismatch,
    EmptyDataset,
    InvalidParameter,
    NotSPD,
    RankDeficient,
)
from core.linalg import frozen, min_eigenvalue, require_psd, require_shape, require_spd, symmetrize
from core.seeding import Stream, derive_rng

from .types import Dataset, EnvParams, ModelSpec, MomentSet, MomentSource

logger = logging.getLogger(__name__)

BiasSource = Union[None, np.ndarray, Callable[[int, np.random.Generator], np.ndarray]]


class MixingRegime:
    IDENTITY = "identity"
    RANDOM_ORTHOGONAL = "random-orthogonal"

    choices = (IDENTITY, RANDOM_ORTHOGONAL)


def random_orthogonal(d: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed orthogonal d x d matrix"""
    if d == 1:
        return np.array([[1.0]])
    return ortho_group.rvs(dim=d, random_state=rng)


def mixing_matrix(d: int, regime: str, seed: int) -> np.ndarray:
    if regime == MixingRegime.IDENTITY:
        return np.eye(d)
    if regime == MixingRegime.RANDOM_ORTHOGONAL:
        return random_orthogonal(d, derive_rng(seed, Stream.MIXING))
    raise InvalidParameter(f"unknown mixing regime {regime!r}, expected one of {MixingRegime.choices}")


def make_model_spec(
    r: int,
    d_s: int,
    mu1,
    sigma1,
    S=None,
    D: float = 0.0,
    seed: int = 0,
) -> ModelSpec:
    """
    Build and validate a ModelSpec.

    S defaults to the identity. D bounds the squared spectral norm of every
    environment's spurious covariance bias.
    """
    if int(r) < 1 or int(d_s) < 1:
        raise InvalidParameter(f"r and d_s must be positive, got r={r}, d_s={d_s}")
    r, d_s = int(r), int(d_s)
    d = r + d_s

    mu1 = np.asarray(mu1, dtype=np.float64).reshape(-1)
    sigma1 = np.atleast_2d(np.asarray(sigma1, dtype=np.float64))
    require_shape(mu1, (r,), "mu1")
    require_shape(sigma1, (r, r), "sigma1")
    require_spd(sigma1, "sigma1")

    S = np.eye(d) if S is None else np.atleast_2d(np.asarray(S, dtype=np.float64))
    require_shape(S, (d, d), "S")
    if np.linalg.matrix_rank(S[:, :r]) < r:
        raise RankDeficient(f"left {r} columns of S are rank-deficient")

    if not D >= 0.0:
        raise InvalidParameter(f"D must be non-negative, got {D}")
    if int(seed) < 0:
        raise InvalidParameter(f"seed must be non-negative, got {seed}")

    return ModelSpec(
        r=r,
        d_s=d_s,
        mu1=frozen(mu1),
        sigma1=frozen(symmetrize(sigma1)),
        S=frozen(S),
        D=float(D),
        seed=int(seed),
    )


def reference_model_spec(
    r: int = 3,
    d_s: int = 32,
    mix: str = MixingRegime.IDENTITY,
    D: float = 0.0,
    seed: int = 0,
) -> ModelSpec:
    """Instance used by the environment-complexity experiment: mu1 = 1, Sigma1 = I"""
    return make_model_spec(
        r=r,
        d_s=d_s,
        mu1=np.ones(r),
        sigma1=np.eye(r),
        S=mixing_matrix(r + d_s, mix, seed),
        D=D,
        seed=seed,
    )


def isotropic_bias(sigma2: float, d_s: int) -> np.ndarray:
    """Bias sigma2^2 I, the setting of the ERM lower bound"""
    return (float(sigma2) ** 2) * np.eye(int(d_s))


def _resolve_bias(spec: ModelSpec, index: int, source: BiasSource, rng: np.random.Generator) -> np.ndarray:
    if source is None:
        return np.zeros((spec.d_s, spec.d_s))
    if callable(source):
        bias = source(index, rng)
    else:
        bias = source
    bias = np.atleast_2d(np.asarray(bias, dtype=np.float64))
    require_shape(bias, (spec.d_s, spec.d_s), "sigma2_bar")
    require_psd(bias, "sigma2_bar")
    squared_norm = float(np.linalg.norm(bias, 2)) ** 2
    if squared_norm > spec.D * (1.0 + 1e-12):
        raise BoundViolation(f"||sigma2_bar||_2^2 = {squared_norm:.6g} exceeds D = {spec.D:.6g}")
    return symmetrize(bias)


def sample_environment(
    spec: ModelSpec,
    index: int,
    mu2_scale: float = 10.0,
    sigma2_bar_source: BiasSource = None,
    rng: Optional[np.random.Generator] = None,
    mu2_norm: Optional[float] = None,
) -> EnvParams:
    """
    Draw one training environment.

    mu2 ~ N(0, mu2_scale I) (rescaled to length mu2_norm when given), G has iid N(0, 1)
    entries and Sigma2 = sigma2_bar + G G^T.
    """
    if not mu2_scale > 0:
        raise InvalidParameter(f"mu2_scale must be positive, got {mu2_scale}")
    if rng is None:
        rng = derive_rng(spec.seed, Stream.ENVIRONMENT, index)

    mu2 = rng.normal(0.0, np.sqrt(mu2_scale), size=spec.d_s)
    G = rng.standard_normal((spec.d_s, spec.d_s))
    if mu2_norm is not None:
        length = np.linalg.norm(mu2)
        mu2 = mu2 * (float(mu2_norm) / length) if length > 0 else mu2
    sigma2_bar = _resolve_bias(spec, index, sigma2_bar_source, rng)

    sigma2 = symmetrize(sigma2_bar + G @ G.T)
    if min_eigenvalue(sigma2) <= 0.0:
        raise CorruptedEnvironment(f"environment {index}: Sigma2 is not positive definite")

    return EnvParams(
        index=int(index),
        mu2=frozen(mu2),
        sigma2_bar=frozen(sigma2_bar),
        G=frozen(G),
        sigma2=frozen(sigma2),
        flipped=False,
    )


def sample_environments(
    spec: ModelSpec,
    count: int,
    mu2_scale: float = 10.0,
    sigma2_bar_source: BiasSource = None,
    mu2_norm: Optional[float] = None,
) -> list:
    """Environments 0..count-1, each from its own derived stream"""
    envs = [
        sample_environment(spec, index, mu2_scale, sigma2_bar_source, mu2_norm=mu2_norm)
        for index in range(count)
    ]
    logger.debug(f"Sampled {count} environments for seed {spec.seed}")
    return envs


def flip_test_environment(env: EnvParams) -> EnvParams:
    """Test counterpart: Z2 | Y ~ N(-Y mu2, Sigma2), same covariance object"""
    if env.flipped:
        raise AlreadyFlipped(f"environment {env.index} is already a test environment")
    return dataclasses.replace(env, flipped=True)


def flip_all(envs: Sequence[EnvParams]) -> list:
    return [flip_test_environment(env) for env in envs]


def latent_mean(spec: ModelSpec, env: EnvParams) -> np.ndarray:
    return np.concatenate([spec.mu1, env.spurious_sign * env.mu2])


def latent_covariance(spec: ModelSpec, env: EnvParams) -> np.ndarray:
    return scipy.linalg.block_diag(spec.sigma1, env.sigma2)


def _check_dims(spec: ModelSpec, env: EnvParams) -> None:
    if env.mu2.shape != (spec.d_s,):
        raise DimensionMismatch(f"environment {env.index} has d_s={env.mu2.shape[0]}, spec has {spec.d_s}")


def analytic_moments(spec: ModelSpec, env: EnvParams) -> MomentSet:
    """Exact class-conditional moments of X = S Z"""
    _check_dims(spec, env)
    mean_pos = spec.S @ latent_mean(spec, env)
    cov = symmetrize(spec.S @ latent_covariance(spec, env) @ spec.S.T)
    second = symmetrize(cov + np.outer(mean_pos, mean_pos))
    return MomentSet(
        mean_pos=frozen(mean_pos),
        second_pos=frozen(second),
        mean_neg=frozen(-mean_pos),
        second_neg=frozen(second),
        source=MomentSource.ANALYTIC,
        n=None,
        env_index=env.index,
    )


def sample_dataset(
    spec: ModelSpec,
    env: EnvParams,
    n: int,
    rng: Optional[np.random.Generator] = None,
) -> Dataset:
    """n iid draws with y uniform on {+1, -1}"""
    if int(n) < 1:
        raise EmptyDataset(f"n must be at least 1, got {n}")
    _check_dims(spec, env)
    if rng is None:
        rng = derive_rng(spec.seed, Stream.SAMPLES, env.index, int(env.flipped))

    try:
        chol1 = scipy.linalg.cholesky(spec.sigma1, lower=True)
        chol2 = scipy.linalg.cholesky(env.sigma2, lower=True)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as e:
        raise CorruptedEnvironment(f"environment {env.index}: Cholesky failed ({e})") from e

    n = int(n)
    y = 2.0 * rng.integers(0, 2, size=n) - 1.0
    z1 = y[:, None] * spec.mu1 + rng.standard_normal((n, spec.r)) @ chol1.T
    z2 = (env.spurious_sign * y)[:, None] * env.mu2 + rng.standard_normal((n, spec.d_s)) @ chol2.T
    X = np.hstack([z1, z2]) @ spec.S.T
    return Dataset(X=X, y=y, env_index=env.index, flipped=env.flipped)


def require_spd_environment(env: EnvParams) -> None:
    try:
        require_spd(env.sigma2, f"sigma2 of environment {env.index}")
    except NotSPD as e:
        raise CorruptedEnvironment(str(e)) from e
