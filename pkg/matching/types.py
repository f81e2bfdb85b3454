import dataclasses
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from core.linalg import frozen


class SolverMethod:
    SPECTRAL = "spectral"
    PENALTY = "penalty"
    AUTO = "auto"

    choices = (SPECTRAL, PENALTY, AUTO)


class Pairing:
    CHAIN = "chain"
    DISJOINT = "disjoint"

    choices = (CHAIN, DISJOINT)


class SearchStrategy:
    BINARY = "binary"
    LINEAR = "linear"

    choices = (BINARY, LINEAR)


class MatcherConfig(BaseModel):
    """Tolerances and penalty-solver hyperparameters for subspace matching"""

    model_config = ConfigDict(frozen=True)

    tol_rel: float = Field(default=1e-8, gt=0)
    max_iters: int = Field(default=500, ge=1)
    step_size: float = Field(default=0.05, gt=0)
    lambda_coral: float = Field(default=1.0, ge=0)
    lambda_on: float = Field(default=1.0, ge=0)
    restarts: int = Field(default=4, ge=1)
    floor_dim: int = Field(default=1, ge=1)
    method: str = Field(default=SolverMethod.AUTO, pattern="^(spectral|penalty|auto)$")
    pairing: str = Field(default=Pairing.CHAIN, pattern="^(chain|disjoint)$")
    search: str = Field(default=SearchStrategy.BINARY, pattern="^(binary|linear)$")
    include_means: bool = True
    warm_start: bool = True
    grad_clip: float = Field(default=10.0, gt=0)


@dataclass(frozen=True, eq=False)
class ProjectionStep:
    """
    One IFM round: orthonormal U (r_out x r_in) with matching diagnostics.

    `feasible` is False when the residual exceeds tol_rel times the largest raw
    difference; `flagged` marks a floor-forced spectral step.
    """

    U: np.ndarray
    r_in: int
    r_out: int
    residual: float
    method: str
    feasible: bool = True
    flagged: bool = False
    scale: float = 0.0
    spectrum: Optional[np.ndarray] = None
    pair_residuals: tuple = ()
    common_moment: Optional[np.ndarray] = None
    envs: tuple = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "U", frozen(self.U))

    def with_context(self, common_moment: np.ndarray, envs) -> "ProjectionStep":
        return dataclasses.replace(self, common_moment=frozen(common_moment), envs=tuple(envs))

    def diagnostics(self) -> dict:
        return {
            "r_in": self.r_in,
            "r_out": self.r_out,
            "method": self.method,
            "residual": self.residual,
            "feasible": self.feasible,
            "flagged": self.flagged,
            "scale": self.scale,
            "envs": list(self.envs),
            "spectrum": None if self.spectrum is None else self.spectrum.tolist(),
            "pair_residuals": list(self.pair_residuals),
        }
