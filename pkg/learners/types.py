"""
Learner outputs and training configuration.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from core.exceptions import DegeneratePredictor, IncompatibleWidths, InvalidParameter
from core.linalg import frozen, orthonormality_error
from matching.types import ProjectionStep
from risk.evaluation import LinearClassifier

COMPOSED_ORTHONORMAL_TOL = 1e-6


class Algorithm:
    IFM = "ifm"
    ERM = "erm"
    IRM = "irm"
    CORAL = "coral"
    CORAL_DISJOINT = "coral_disjoint"
    SIMPLE = "simple"
    ORACLE = "oracle"

    choices = (IFM, ERM, IRM, CORAL, CORAL_DISJOINT, SIMPLE, ORACLE)


class CoralMode:
    MATCH_ALL = "match_all"
    MATCH_DISJOINT = "match_disjoint"

    choices = (MATCH_ALL, MATCH_DISJOINT)


class OptimizerConfig(BaseModel):
    """
    Plain full-batch gradient descent.

    step_size is relative to the curvature bound of the logistic loss
    (0.25 * largest eigenvalue of the pooled second moment).
    """

    model_config = ConfigDict(frozen=True)

    step_size: float = Field(default=1.0, gt=0)
    max_iters: int = Field(default=2000, ge=1)
    patience: int = Field(default=50, ge=1)


class CoralConfig(BaseModel):
    """Linear CORAL stack; step_size applies to inputs rescaled to unit top eigenvalue"""

    model_config = ConfigDict(frozen=True)

    widths: Optional[List[int]] = None
    lambda_coral: float = Field(default=1.0, ge=0)
    lambda_on: float = Field(default=0.0, ge=0)
    step_size: float = Field(default=0.1, gt=0)
    max_iters: int = Field(default=1000, ge=1)
    patience: int = Field(default=50, ge=1)


@dataclass(frozen=True, eq=False)
class Partition:
    """Disjoint environment groups, each of size at least 2, covering 0..n_envs-1"""

    groups: Tuple[Tuple[int, ...], ...]
    n_envs: int

    def __post_init__(self):
        groups = tuple(tuple(int(i) for i in group) for group in self.groups)
        object.__setattr__(self, "groups", groups)
        flat = [i for group in groups for i in group]
        if len(flat) != len(set(flat)):
            raise InvalidParameter("partition groups overlap")
        if sorted(flat) != list(range(self.n_envs)):
            raise InvalidParameter(f"partition does not cover environments 0..{self.n_envs - 1}")
        if any(len(group) < 2 for group in groups):
            raise InvalidParameter("every partition group needs at least 2 environments")

    def __len__(self) -> int:
        return len(self.groups)

    @classmethod
    def consecutive(cls, n_envs: int, group_size: int = 2) -> "Partition":
        """Groups of group_size consecutive indices; a trailing group below 2 joins the previous one"""
        if group_size < 2:
            raise InvalidParameter(f"group_size must be at least 2, got {group_size}")
        if n_envs < 2:
            raise InvalidParameter(f"need at least 2 environments, got {n_envs}")
        groups = [list(range(start, min(start + group_size, n_envs))) for start in range(0, n_envs, group_size)]
        if len(groups) > 1 and len(groups[-1]) < 2:
            groups[-2].extend(groups.pop())
        return cls(groups=tuple(tuple(g) for g in groups), n_envs=n_envs)

    @classmethod
    def round_robin(cls, n_envs: int, group_count: int) -> "Partition":
        group_count = max(1, min(int(group_count), n_envs // 2))
        groups = tuple(tuple(range(g, n_envs, group_count)) for g in range(group_count))
        return cls(groups=groups, n_envs=n_envs)


@dataclass(frozen=True, eq=False)
class FeaturizerStack:
    input_dim: int
    steps: Tuple[ProjectionStep, ...]
    classifier: LinearClassifier

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        expected = self.input_dim
        for t, step in enumerate(self.steps):
            if step.r_in != expected:
                raise IncompatibleWidths(f"step {t} expects input {step.r_in}, previous output is {expected}")
            expected = step.r_out
        if self.classifier.dim != expected:
            raise IncompatibleWidths(f"classifier has length {self.classifier.dim}, features have {expected}")
        if orthonormality_error(self.composed) > COMPOSED_ORTHONORMAL_TOL:
            raise InvalidParameter("composed featurizer lost row orthonormality")

    @property
    def composed(self) -> np.ndarray:
        """U_T ... U_1"""
        V = np.eye(self.input_dim)
        for step in self.steps:
            V = step.U @ V
        return V

    @property
    def dims(self) -> List[int]:
        return [self.input_dim] + [step.r_out for step in self.steps]

    @property
    def effective_vector(self) -> np.ndarray:
        return self.composed.T @ self.classifier.v


@dataclass(frozen=True, eq=False)
class TrainedPredictor:
    v: np.ndarray
    algorithm: str
    diagnostics: dict = field(default_factory=dict)
    stack: Optional[FeaturizerStack] = None

    def __post_init__(self):
        v = np.asarray(self.v, dtype=np.float64).reshape(-1)
        if abs(np.linalg.norm(v) - 1.0) > 1e-12:
            raise InvalidParameter(f"{self.algorithm} predictor is not unit-norm")
        object.__setattr__(self, "v", frozen(v))

    @classmethod
    def from_vector(
        cls,
        v,
        algorithm: str,
        diagnostics: Optional[dict] = None,
        stack: Optional[FeaturizerStack] = None,
    ) -> "TrainedPredictor":
        v = np.asarray(v, dtype=np.float64).reshape(-1)
        length = np.linalg.norm(v)
        if not np.isfinite(length) or length == 0.0:
            raise DegeneratePredictor(f"{algorithm} produced a zero or non-finite weight vector")
        return cls(v=v / length, algorithm=algorithm, diagnostics=diagnostics or {}, stack=stack)

    @property
    def classifier(self) -> LinearClassifier:
        return LinearClassifier(self.v, normalized=True)


def stack_dims(steps: Sequence[ProjectionStep], input_dim: int) -> List[int]:
    return [input_dim] + [step.r_out for step in steps]
