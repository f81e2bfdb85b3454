"""
Gradient-trained baselines: ERM, IRMv1 and linear CORAL stacks.
"""

import logging
from typing import List, Optional, Sequence

import numpy as np
import torch

from core.exceptions import IncompatibleWidths, InvalidParameter, TooFewEnvironments
from core.monitoring import monitor_fit
from core.seeding import Stream, derive_seed, seed_from_rng
from environments.types import Dataset

from .optim import as_tensors, check_datasets, fit_logistic, logistic_loss, pooled_second_moment_top, run_descent
from .types import Algorithm, CoralConfig, CoralMode, OptimizerConfig, TrainedPredictor

logger = logging.getLogger(__name__)


@monitor_fit(Algorithm.ERM)
def erm_fit(datasets: Sequence[Dataset], opt_config: OptimizerConfig = OptimizerConfig()) -> TrainedPredictor:
    """Average logistic loss over all training environments"""
    w, history = fit_logistic(datasets, opt_config, label="erm")
    return TrainedPredictor.from_vector(w, Algorithm.ERM, diagnostics={"losses": history})


@monitor_fit(Algorithm.IRM)
def irm_fit(
    datasets: Sequence[Dataset],
    penalty_weight: float = 1.0,
    opt_config: OptimizerConfig = OptimizerConfig(),
) -> TrainedPredictor:
    """
    IRMv1: average risk plus penalty_weight times the summed squared gradient of each
    environment's risk with respect to a dummy scalar multiplier at 1.
    """
    if len(datasets) < 2:
        raise TooFewEnvironments(f"IRM needs at least 2 environments, got {len(datasets)}")
    if penalty_weight < 0:
        raise InvalidParameter(f"penalty_weight must be non-negative, got {penalty_weight}")
    w, history = fit_logistic(datasets, opt_config, penalty_weight=penalty_weight, label="irm")
    return TrainedPredictor.from_vector(
        w, Algorithm.IRM, diagnostics={"losses": history, "penalty_weight": penalty_weight}
    )


# =============================================================================
# CORAL
# =============================================================================


def default_coral_widths(mode: str, r: int, d: int) -> List[int]:
    if mode == CoralMode.MATCH_DISJOINT:
        return [max(r, d // 2), max(r, d // 4), r]
    return [r]


def _validate_widths(widths: Sequence[int], d: int) -> List[int]:
    widths = [int(w) for w in widths]
    if not widths:
        raise IncompatibleWidths("CORAL stack needs at least one layer")
    if any(w < 1 or w > d for w in widths):
        raise IncompatibleWidths(f"layer widths {widths} must lie in [1, {d}]")
    return widths


def _class_statistics(features: torch.Tensor, y: torch.Tensor) -> list:
    """[(mean, covariance)] for labels +1 and -1"""
    stats = []
    for label in (1.0, -1.0):
        h = features[y == label]
        mean = h.mean(dim=0)
        centered = h - mean
        stats.append((mean, centered.T @ centered / max(h.shape[0] - 1, 1)))
    return stats


def _matching_loss(per_env_features: list, labels: list, env_ids: Sequence[int]) -> torch.Tensor:
    """Average squared distance of class means and covariances over adjacent environments"""
    loss = torch.zeros((), dtype=torch.float64)
    pairs = list(zip(env_ids[:-1], env_ids[1:]))
    if not pairs:
        return loss
    stats = {e: _class_statistics(per_env_features[e], labels[e]) for e in env_ids}
    for a, b in pairs:
        for (mean_a, cov_a), (mean_b, cov_b) in zip(stats[a], stats[b]):
            loss = loss + torch.sum((mean_a - mean_b) ** 2) + torch.sum((cov_a - cov_b) ** 2)
    return loss / (2 * len(pairs))


@monitor_fit(Algorithm.CORAL)
def coral_fit(
    datasets: Sequence[Dataset],
    mode: str = CoralMode.MATCH_ALL,
    widths: Optional[Sequence[int]] = None,
    config: CoralConfig = CoralConfig(),
    rng: Optional[np.random.Generator] = None,
    r: Optional[int] = None,
) -> TrainedPredictor:
    """
    Linear stack W_L ... W_1 followed by w, trained on logistic loss plus
    lambda_coral * L_coral (every layer) and lambda_on * sum ||W W^T - I||_F^2.

    match_all compares adjacent training environments at every layer; match_disjoint
    gives layer l its own group of at least two environments (np.array_split order).
    """
    if mode not in CoralMode.choices:
        raise InvalidParameter(f"unknown CORAL mode {mode!r}")
    d = check_datasets(datasets)
    widths = widths if widths is not None else config.widths
    if widths is None:
        if r is None:
            raise IncompatibleWidths("coral_fit needs explicit widths or the invariant dimension r")
        widths = default_coral_widths(mode, r, d)
    widths = _validate_widths(widths, d)
    depth = len(widths)
    if mode == CoralMode.MATCH_DISJOINT and len(datasets) < 2 * depth:
        # every layer group needs a pair to compare
        raise TooFewEnvironments(
            f"match_disjoint with {depth} layers needs at least {2 * depth} environments, got {len(datasets)}"
        )

    if mode == CoralMode.MATCH_DISJOINT:
        layer_envs = [list(map(int, group)) for group in np.array_split(np.arange(len(datasets)), depth)]
    else:
        layer_envs = [list(range(len(datasets)))] * depth

    rng = rng if rng is not None else np.random.default_rng(0)
    generator = torch.Generator().manual_seed(derive_seed(seed_from_rng(rng), Stream.ALGORITHM))
    scale = 1.0 / np.sqrt(pooled_second_moment_top(datasets))
    tensors = as_tensors(datasets, scale)
    labels = [y for _, y in tensors]

    layers = []
    previous = d
    for width in widths:
        W = torch.randn(width, previous, dtype=torch.float64, generator=generator) / np.sqrt(previous)
        layers.append(W.requires_grad_())
        previous = width
    w = (0.01 * torch.randn(previous, dtype=torch.float64, generator=generator)).requires_grad_()

    def closure():
        features = [X for X, _ in tensors]
        coral = torch.zeros((), dtype=torch.float64)
        orthonormality = torch.zeros((), dtype=torch.float64)
        for W, env_ids in zip(layers, layer_envs):
            features = [h @ W.T for h in features]
            if config.lambda_coral > 0:
                coral = coral + _matching_loss(features, labels, env_ids)
            if config.lambda_on > 0:
                eye = torch.eye(W.shape[0], dtype=torch.float64)
                orthonormality = orthonormality + torch.sum((W @ W.T - eye) ** 2)
        supervised = torch.stack([logistic_loss(h @ w, y) for h, y in zip(features, labels)]).mean()
        return supervised + config.lambda_coral * coral + config.lambda_on * orthonormality

    label = Algorithm.CORAL if mode == CoralMode.MATCH_ALL else Algorithm.CORAL_DISJOINT
    history = run_descent(layers + [w], closure, config.step_size, config.max_iters, config.patience, label)

    composed = w.detach().numpy()
    for W in reversed(layers):
        composed = W.detach().numpy().T @ composed
    return TrainedPredictor.from_vector(
        composed,
        label,
        diagnostics={"losses": history, "widths": widths, "layer_envs": layer_envs, "mode": mode},
    )
