"""
Executable versions of the lower-bound and shrink-rate statements.

- erm_lower_bound_check: a predictor that is accurate enough on every training
  environment must fall to chance or worse once spurious means flip
- ifm_shrink_check: each IFM round removes at least a 1 - 1/c fraction of the
  remaining spurious dimensions, within log_c(d_s) + 2 rounds
- spurious_leak: how much of a featurizer or predictor sits on spurious coordinates
"""

import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from core.exceptions import DimensionMismatch, InvalidParameter, TheoremNotApplicable
from core.monitoring import track_theory_check
from environments.generation import flip_test_environment
from environments.types import EnvParams, ModelSpec
from risk.evaluation import latent_blocks, standard_normal_cdf, weight_vector, zero_one_accuracy

VIOLATION_SLACK = 1e-9
ISOTROPY_RTOL = 1e-10


@dataclass
class ErmBoundVerdict:
    applicable: bool
    violated: bool
    gamma_min: float
    threshold: float
    train_accuracies: List[float] = field(default_factory=list)
    test_accuracies: List[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ShrinkVerdict:
    passed: bool
    dims: List[int]
    r: int
    c: float
    rounds: int
    max_rounds: int
    first_violation: Optional[int] = None
    reached_r: bool = True

    def to_dict(self) -> dict:
        return asdict(self)


def _isotropic_scale(matrix: np.ndarray) -> Optional[float]:
    """sigma with matrix = sigma^2 I, or None"""
    n = matrix.shape[0]
    variance = float(np.trace(matrix)) / n
    tol = ISOTROPY_RTOL * max(1.0, abs(variance))
    if not np.allclose(matrix, variance * np.eye(n), rtol=0.0, atol=tol) or variance < -tol:
        return None
    return math.sqrt(max(variance, 0.0))


def erm_lower_bound_check(
    classifier,
    spec: ModelSpec,
    envs: Sequence[EnvParams],
    accuracy=zero_one_accuracy,
) -> ErmBoundVerdict:
    """
    Falsification attempt of the ERM lower bound.

    Requires Sigma1 = sigma1^2 I, every bias Sigma2_bar = sigma2^2 I with a common sigma2, and
    E <= d_s. The bound applies when the smallest training accuracy reaches
    Phi(2 ||mu1|| / min(sigma1, sigma2)); it is violated when it applies and some flipped
    test environment is still classified better than chance.
    """
    envs = list(envs)
    if not envs:
        raise InvalidParameter("the ERM bound check needs at least one environment")
    if any(env.flipped for env in envs):
        raise InvalidParameter("pass training environments; test environments are derived by flipping")
    if len(envs) > spec.d_s:
        raise TheoremNotApplicable(f"E={len(envs)} exceeds d_s={spec.d_s}")
    sigma1 = _isotropic_scale(spec.sigma1)
    if sigma1 is None:
        raise TheoremNotApplicable("Sigma1 is not isotropic")
    sigma2_values = [_isotropic_scale(env.sigma2_bar) for env in envs]
    if any(s is None for s in sigma2_values):
        raise TheoremNotApplicable("a spurious bias is not isotropic")
    if max(sigma2_values) - min(sigma2_values) > ISOTROPY_RTOL * max(1.0, max(sigma2_values)):
        raise TheoremNotApplicable("spurious biases differ across environments")

    sigma_min = min(sigma1, sigma2_values[0])
    mu1_norm = float(np.linalg.norm(spec.mu1))
    if mu1_norm == 0.0:
        threshold = 0.5
    elif sigma_min == 0.0:
        threshold = 1.0
    else:
        threshold = standard_normal_cdf(2.0 * mu1_norm / sigma_min)

    train = [float(accuracy(classifier, spec, env)) for env in envs]
    test = [float(accuracy(classifier, spec, flip_test_environment(env))) for env in envs]
    gamma_min = min(train)
    applicable = gamma_min >= threshold
    violated = applicable and max(test) > 0.5 + VIOLATION_SLACK
    track_theory_check("erm", "violated" if violated else ("applicable" if applicable else "not_applicable"))
    return ErmBoundVerdict(
        applicable=bool(applicable),
        violated=bool(violated),
        gamma_min=gamma_min,
        threshold=float(threshold),
        train_accuracies=train,
        test_accuracies=test,
    )


def _dims_of(stack_or_dims) -> List[int]:
    if hasattr(stack_or_dims, "stack") and stack_or_dims.stack is not None:
        stack_or_dims = stack_or_dims.stack
    if hasattr(stack_or_dims, "dims"):
        return list(stack_or_dims.dims)
    return [int(k) for k in stack_or_dims]


def max_rounds_allowed(d_s: int, c: float) -> int:
    if d_s <= 1:
        return 2
    return math.ceil(math.log(d_s) / math.log(c) - 1e-12) + 2


def ifm_shrink_check(stack_or_dims, r: int, c: float = 2.0) -> ShrinkVerdict:
    """
    Checks r_t - r < (r_{t-1} - r + 1) / c for every round and the round budget.

    Accepts a FeaturizerStack, a TrainedPredictor carrying one, or the list of
    dimensions [d, r_1, ..., r_T].
    """
    if not c > 1:
        raise InvalidParameter(f"c must exceed 1, got {c}")
    if r < 1:
        raise InvalidParameter(f"r must be positive, got {r}")
    dims = _dims_of(stack_or_dims)
    if not dims:
        raise InvalidParameter("no dimensions recorded")

    first_violation = None
    for t in range(1, len(dims)):
        if not dims[t] - r < (dims[t - 1] - r + 1) / c:
            first_violation = t
            break
    rounds = len(dims) - 1
    max_rounds = max_rounds_allowed(dims[0] - r, c)
    passed = first_violation is None and rounds <= max_rounds
    track_theory_check("shrink", "passed" if passed else "violated")
    return ShrinkVerdict(
        passed=passed,
        dims=dims,
        r=r,
        c=c,
        rounds=rounds,
        max_rounds=max_rounds,
        first_violation=first_violation,
        reached_r=dims[-1] == r,
    )


def spurious_leak(stack_or_vector, spec: ModelSpec) -> float:
    """
    Frobenius norm of the spurious columns of (composed featurizer) S.

    For a predictor v the leak is the share ||beta2|| / ||beta|| of beta = S^T v, so it is
    invariant to rescaling v and lies in [0, 1]. With orthogonal S and unit v this equals
    ||beta2||; a non-orthogonal S changes ||beta|| and the two differ.
    """
    obj = stack_or_vector
    if hasattr(obj, "composed"):
        obj = obj.composed
    if isinstance(obj, np.ndarray) and obj.ndim == 2:
        if obj.shape[1] != spec.d:
            raise DimensionMismatch(f"featurizer has input dimension {obj.shape[1]}, model has d={spec.d}")
        return float(np.linalg.norm((obj @ spec.S)[:, spec.r :], "fro"))

    beta1, beta2 = latent_blocks(weight_vector(obj), spec)
    total = math.hypot(float(np.linalg.norm(beta1)), float(np.linalg.norm(beta2)))
    if total == 0.0:
        return 0.0
    return float(np.linalg.norm(beta2)) / total
