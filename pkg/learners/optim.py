"""
Shared full-batch gradient descent and logistic-loss helpers.
"""

import logging
import math
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.linalg
import torch
import torch.nn.functional as F

from core.exceptions import Divergence, EmptyDataset, InvalidParameter, TooFewEnvironments
from environments.types import Dataset

from .types import OptimizerConfig

logger = logging.getLogger(__name__)

INCREASE_RTOL = 1e-12


def check_datasets(datasets: Sequence[Dataset], minimum: int = 1) -> int:
    """Validates a list of environment datasets and returns their common dimension"""
    if len(datasets) < minimum:
        raise TooFewEnvironments(f"need at least {minimum} environments, got {len(datasets)}")
    dims = {ds.dim for ds in datasets}
    if len(dims) != 1:
        raise InvalidParameter(f"datasets have different dimensions {sorted(dims)}")
    if any(len(ds) == 0 for ds in datasets):
        raise EmptyDataset("one of the environments has no samples")
    return dims.pop()


def as_tensors(datasets: Sequence[Dataset], scale: float = 1.0) -> list:
    return [
        (torch.tensor(ds.X * scale, dtype=torch.float64), torch.tensor(ds.y, dtype=torch.float64))
        for ds in datasets
    ]


def pooled_second_moment_top(datasets: Sequence[Dataset]) -> float:
    """Largest eigenvalue of the environment-averaged E[X X^T]"""
    second = np.mean([ds.X.T @ ds.X / len(ds) for ds in datasets], axis=0)
    top = float(scipy.linalg.eigvalsh(second)[-1])
    return top if top > 0 else 1.0


def logistic_loss(scores: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """mean log(1 + exp(-y s))"""
    return F.softplus(-y * scores).mean()


def run_descent(
    parameters: Iterable[torch.Tensor],
    closure: Callable[[], torch.Tensor],
    lr: float,
    max_iters: int,
    patience: int,
    label: str,
) -> dict:
    """
    Fixed-length gradient descent; raises Divergence when the loss is non-finite or
    increases for `patience` consecutive iterations.
    """
    parameters = list(parameters)
    optimizer = torch.optim.SGD(parameters, lr=lr)
    previous = math.inf
    first = None
    increases = 0
    value = math.nan
    for iteration in range(max_iters):
        optimizer.zero_grad()
        loss = closure()
        value = float(loss.item())
        if first is None:
            first = value
        if not math.isfinite(value):
            raise Divergence(f"{label}: loss became non-finite at iteration {iteration}")
        increases = increases + 1 if value > previous + INCREASE_RTOL * abs(previous) else 0
        if increases >= patience:
            raise Divergence(f"{label}: loss increased for {patience} consecutive iterations")
        previous = value
        loss.backward()
        optimizer.step()
    logger.debug(f"{label}: loss {first:.6g} -> {value:.6g} in {max_iters} iterations")
    return {"initial_loss": first, "final_loss": value, "iterations": max_iters}


def fit_logistic(
    datasets: Sequence[Dataset],
    config: OptimizerConfig = OptimizerConfig(),
    penalty_weight: float = 0.0,
    label: str = "logistic",
) -> tuple:
    """
    Linear logistic regression averaged over environments, optionally with the
    squared-gradient invariance penalty on a dummy scale.

    Returns (weights, history).
    """
    dim = check_datasets(datasets)
    tensors = as_tensors(datasets)
    curvature = 0.25 * pooled_second_moment_top(datasets)
    lr = config.step_size / curvature
    normalizer = max(1.0, penalty_weight)
    w = torch.zeros(dim, dtype=torch.float64, requires_grad=True)

    def closure():
        risks = []
        penalty = torch.zeros((), dtype=torch.float64)
        for X, y in tensors:
            scores = X @ w
            if penalty_weight > 0:
                dummy = torch.tensor(1.0, dtype=torch.float64, requires_grad=True)
                risk = logistic_loss(scores * dummy, y)
                grad = torch.autograd.grad(risk, [dummy], create_graph=True)[0]
                penalty = penalty + grad.pow(2)
            else:
                risk = logistic_loss(scores, y)
            risks.append(risk)
        return (torch.stack(risks).mean() + penalty_weight * penalty) / normalizer

    history = run_descent([w], closure, lr, config.max_iters, config.patience, label)
    return w.detach().numpy().copy(), history
