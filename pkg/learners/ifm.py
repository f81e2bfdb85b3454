"""
Iterative Feature Matching

Each round takes the next environment group, projects its moments through the
featurizer built so far, and keeps the largest subspace on which the group's
class-conditional moments agree. Rounds continue until the invariant dimension r
is reached; a linear classifier is then fit on the projected features of all
training environments.
"""

import logging
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from core.exceptions import (
    EnvironmentsExhausted,
    IncompatibleWidths,
    InvalidParameter,
    TooFewEnvironments,
)
from core.linalg import symmetrize
from core.monitoring import monitor_fit
from core.seeding import Stream, derive_rng, seed_from_rng
from environments.types import Dataset, ModelSpec, MomentSet
from matching.solvers import max_dim_match, penalty_match
from matching.types import MatcherConfig
from risk.evaluation import LinearClassifier, estimate_moments

from .optim import fit_logistic
from .types import Algorithm, FeaturizerStack, OptimizerConfig, Partition, TrainedPredictor

logger = logging.getLogger(__name__)


class MatchScope:
    ALL = "all"
    DISJOINT = "disjoint"

    choices = (ALL, DISJOINT)


def spurious_leak_of(matrix: np.ndarray, spec: ModelSpec) -> float:
    return float(np.linalg.norm((matrix @ spec.S)[:, spec.r :], "fro"))


def _final_classifier(
    V: np.ndarray,
    moments: Sequence[MomentSet],
    datasets: Optional[Sequence[Dataset]],
    opt_config: OptimizerConfig,
) -> tuple:
    """Closed-form Gaussian direction for exact moments, pooled logistic regression otherwise"""
    if datasets is None or all(m.is_analytic for m in moments):
        projected = [m.project(V) for m in moments]
        mean = np.mean([m.mean_pos for m in projected], axis=0)
        cov = symmetrize(np.mean([m.cov_pos for m in projected], axis=0))
        w = scipy.linalg.solve(cov, mean, assume_a="pos")
        return w, "gaussian"
    projected = [Dataset(X=ds.X @ V.T, y=ds.y, env_index=ds.env_index) for ds in datasets]
    w, _ = fit_logistic(projected, opt_config, label="ifm-final")
    return w, "logistic"


def _next_round(rounds, t: int, limit: int, estimate_r: bool):
    if t < limit:
        return rounds[t]
    if estimate_r:
        return None
    raise EnvironmentsExhausted(f"partition ran out after {limit} rounds before reaching the invariant dimension")


@monitor_fit(Algorithm.IFM)
def ifm_run(
    moments: Optional[Sequence[MomentSet]] = None,
    r: Optional[int] = None,
    *,
    datasets: Optional[Sequence[Dataset]] = None,
    partition: Optional[Partition] = None,
    group_size: int = 2,
    matcher_config: MatcherConfig = MatcherConfig(),
    rng: Optional[np.random.Generator] = None,
    spec: Optional[ModelSpec] = None,
    widths: Optional[Sequence[int]] = None,
    match: str = MatchScope.DISJOINT,
    opt_config: OptimizerConfig = OptimizerConfig(),
    estimate_r: bool = False,
) -> TrainedPredictor:
    """
    Run IFM on per-environment moments (or on datasets, whose moments are estimated).

    Without `widths` the adaptive schedule runs: one max-dimension match per partition
    group until the dimension reaches r. With `widths` every round t projects to
    widths[t] by the penalty solver, matching either its own group (match="disjoint")
    or all training environments (match="all"). `spec` is used for diagnostics only.
    """
    if moments is None:
        if datasets is None:
            raise InvalidParameter("ifm_run needs moments or datasets")
        moments = [estimate_moments(ds) for ds in datasets]
    moments = list(moments)
    if len(moments) < 2:
        raise TooFewEnvironments(f"IFM needs at least 2 environments, got {len(moments)}")
    if r is None and not estimate_r:
        raise InvalidParameter("the invariant dimension r is required unless estimate_r is set")
    d = moments[0].dim
    if r is not None and not 1 <= r <= d:
        raise InvalidParameter(f"r must lie in [1, {d}], got {r}")
    if match not in MatchScope.choices:
        raise InvalidParameter(f"unknown match scope {match!r}")

    rng = rng if rng is not None else np.random.default_rng(0)
    base_seed = seed_from_rng(rng)
    floor = r if r is not None else matcher_config.floor_dim
    config = matcher_config.model_copy(update={"floor_dim": floor})

    V = np.eye(d)
    steps, consumed, leaks = [], [], []

    if widths is not None:
        widths = [int(w) for w in widths]
        if not widths or widths[-1] != r or any(b > a for a, b in zip([d] + widths, widths)):
            raise IncompatibleWidths(f"widths {widths} must be non-increasing from {d} and end at r={r}")
        if match == MatchScope.DISJOINT:
            partition = partition or Partition.round_robin(len(moments), len(widths))
        for t, width in enumerate(widths):
            if match == MatchScope.ALL:
                group = tuple(range(len(moments)))
            else:
                group = _next_round(partition.groups, t, len(partition), False)
            projected = [moments[i].project(V) for i in group]
            step = penalty_match(projected, width, config, derive_rng(base_seed, Stream.ROUND, t))
            if not step.feasible:
                logger.warning(f"IFM round {t + 1}: width {width} matched with residual {step.residual:.3e}")
            common = symmetrize(np.mean([step.U @ m.second_pos @ step.U.T for m in projected], axis=0))
            steps.append(step.with_context(common, group))
            consumed.append(group)
            V = step.U @ V
            if spec is not None:
                leaks.append(spurious_leak_of(V, spec))
    else:
        partition = partition or Partition.consecutive(len(moments), group_size)
        r_t = d
        t = 0
        while r is None or r_t > r:
            group = _next_round(partition.groups, t, len(partition), estimate_r)
            if group is None:
                break
            projected = [moments[i].project(V) for i in group]
            step = max_dim_match(projected, config, derive_rng(base_seed, Stream.ROUND, t))
            steps.append(step.with_context(step.common_moment, group))
            consumed.append(group)
            V = step.U @ V
            logger.info(f"IFM round {t + 1}: {r_t} -> {step.r_out} on environments {list(group)}")
            if spec is not None:
                leaks.append(spurious_leak_of(V, spec))
            if estimate_r and step.r_out == r_t:
                break
            r_t = step.r_out
            t += 1

    flat = [i for group in consumed for i in group]
    if match == MatchScope.DISJOINT or widths is None:
        assert len(flat) == len(set(flat)), "an environment was consumed by two matching rounds"

    w, final_fit = _final_classifier(V, moments, datasets, opt_config)
    stack = FeaturizerStack(input_dim=d, steps=tuple(steps), classifier=LinearClassifier(w))
    diagnostics = {
        "dims": stack.dims,
        "residuals": [step.residual for step in steps],
        "methods": [step.method for step in steps],
        "flagged": [step.flagged for step in steps],
        "rounds": [list(group) for group in consumed],
        "final_fit": final_fit,
    }
    if spec is not None:
        diagnostics["spurious_leak"] = leaks
    return TrainedPredictor.from_vector(stack.effective_vector, Algorithm.IFM, diagnostics=diagnostics, stack=stack)
