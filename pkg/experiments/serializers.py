"""
Run configuration and result documents.

Configs are pydantic models so that JSON files given to the management commands are
validated in one place. Results are tabular and go through pandas.
"""

import math
import re
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from core.exceptions import InvalidParameter
from environments.generation import MixingRegime
from learners.types import Algorithm, CoralConfig, OptimizerConfig
from matching.types import MatcherConfig

Matrix = List[List[float]]

ANALYTIC = "analytic"
SAMPLED = "sampled"
MODE_PATTERN = re.compile(r"^(analytic|sampled(?::(\d+))?)$")

RESULT_COLUMNS = [
    "algorithm",
    "E",
    "seed",
    "train_acc_min",
    "train_acc_mean",
    "test_acc_min",
    "test_acc_mean",
    "spurious_leak",
    "rounds",
    "wall_time_ms",
]
FLOAT_FORMAT = "%.17g"


def parse_mode(mode: str, default_samples: int = 1000) -> Tuple[str, Optional[int]]:
    """'analytic' -> ('analytic', None); 'sampled:500' -> ('sampled', 500)"""
    match = MODE_PATTERN.match(mode.strip())
    if not match:
        raise InvalidParameter(f"mode must be 'analytic' or 'sampled:<n>', got {mode!r}")
    if match.group(1) == ANALYTIC:
        return ANALYTIC, None
    n = int(match.group(2)) if match.group(2) else default_samples
    if n < 1:
        raise InvalidParameter(f"sampled mode needs n >= 1, got {n}")
    return SAMPLED, n


class SweepConfig(BaseModel):
    """Environment-complexity sweep: every algorithm on every (E, trial) cell"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    r: int = Field(default=3, ge=1)
    d_s: int = Field(default=32, ge=1)
    mu1: Optional[List[float]] = None
    sigma1: Optional[Matrix] = None
    mu2_scale: float = Field(default=10.0, gt=0)
    sigma2: Optional[float] = Field(default=None, ge=0)
    D: float = Field(default=0.0, ge=0)
    mix: str = MixingRegime.IDENTITY
    E_values: List[int] = Field(default_factory=lambda: list(range(3, 16)))
    algorithms: List[str] = Field(default_factory=lambda: list(Algorithm.choices))
    trials: int = Field(default=5, ge=1)
    seed: int = Field(default=0, ge=0)
    mode: str = ANALYTIC
    fit_samples: int = Field(default=1000, ge=2)
    group_size: int = Field(default=2, ge=2)
    ifm_widths: Optional[List[int]] = None
    irm_penalty: float = Field(default=1.0, ge=0)
    matcher: MatcherConfig = MatcherConfig()
    sampled_tol_rel: float = Field(default=5e-2, gt=0)
    optimizer: OptimizerConfig = OptimizerConfig()
    coral: CoralConfig = CoralConfig()
    timing: bool = False
    output_dir: Optional[str] = None

    @field_validator("E_values")
    @classmethod
    def check_e_values(cls, values):
        if not values or any(e < 2 for e in values):
            raise ValueError("E_values must be a nonempty list of counts >= 2")
        return sorted(set(values))

    @field_validator("algorithms")
    @classmethod
    def check_algorithms(cls, values):
        unknown = [a for a in values if a not in Algorithm.choices]
        if unknown or not values:
            raise ValueError(f"unknown or empty algorithms {unknown}, expected a subset of {Algorithm.choices}")
        return list(dict.fromkeys(values))

    @field_validator("mode")
    @classmethod
    def check_mode(cls, value):
        if not MODE_PATTERN.match(value.strip()):
            raise ValueError("mode must be 'analytic' or 'sampled:<n>'")
        return value.strip()

    @field_validator("mix")
    @classmethod
    def check_mix(cls, value):
        if value not in MixingRegime.choices:
            raise ValueError(f"mix must be one of {MixingRegime.choices}")
        return value

    @model_validator(mode="after")
    def check_bias_bound(self):
        if self.sigma2 is not None and self.sigma2**4 > self.D * (1.0 + 1e-12):
            raise ValueError(f"isotropic bias sigma2={self.sigma2} needs D >= sigma2^4")
        return self

    @property
    def parsed_mode(self) -> Tuple[str, Optional[int]]:
        return parse_mode(self.mode)

    @property
    def mu1_vector(self) -> np.ndarray:
        return np.ones(self.r) if self.mu1 is None else np.asarray(self.mu1, dtype=np.float64)

    @property
    def sigma1_matrix(self) -> np.ndarray:
        return np.eye(self.r) if self.sigma1 is None else np.asarray(self.sigma1, dtype=np.float64)

    def cell_count(self) -> int:
        return len(self.algorithms) * len(self.E_values) * self.trials


class ErmBattery(BaseModel):
    """Isotropic instances where accurate ERM fits must fail on flipped environments"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    seeds: int = Field(default=100, ge=1)
    r: int = Field(default=3, ge=1)
    d_s: int = Field(default=32, ge=1)
    E: int = Field(default=5, ge=1)
    mu1_norm: float = Field(default=0.3, ge=0)
    mu2_norm: float = Field(default=3.0, gt=0)
    sigma1: float = Field(default=1.0, gt=0)
    sigma2: float = Field(default=1.0, ge=0)
    n: int = Field(default=10_000, ge=2)
    optimizer: OptimizerConfig = OptimizerConfig()


class IrmBattery(BaseModel):
    """Random ellipsoid systems with E = d_s"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    dims: List[int] = Field(default_factory=lambda: [2, 3])
    instances: int = Field(default=1000, ge=1)
    multistarts: int = Field(default=64, ge=1)
    min_success_rate: float = Field(default=0.99, ge=0, le=1)
    coefficient_tol: float = Field(default=1e-6, gt=0)

    @field_validator("dims")
    @classmethod
    def check_dims(cls, values):
        if not values or any(not 1 <= k <= 8 for k in values):
            raise ValueError("dims must lie in 1..8")
        return values


class ShrinkBattery(BaseModel):
    """Analytic IFM runs whose recorded dimensions are checked round by round"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    seeds: int = Field(default=100, ge=1)
    r: int = Field(default=3, ge=1)
    d_s: int = Field(default=32, ge=1)
    E: int = Field(default=6, ge=2)
    group_size: int = Field(default=2, ge=2)
    c: float = Field(default=2.0, gt=1)
    mix: str = MixingRegime.RANDOM_ORTHOGONAL
    max_leak: float = Field(default=1e-6, gt=0)
    accuracy_tol: float = Field(default=1e-3, gt=0)


class CheckConfig(BaseModel):
    """Which batteries to run; a battery set to null is skipped"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    seed: int = Field(default=0, ge=0)
    erm: Optional[ErmBattery] = ErmBattery()
    irm: Optional[IrmBattery] = IrmBattery()
    shrink: Optional[ShrinkBattery] = ShrinkBattery()

    def selected(self) -> List[str]:
        return [name for name in ("erm", "irm", "shrink") if getattr(self, name) is not None]


class PlotStyle(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    title: str = "Test accuracy vs. number of training environments"
    xlabel: str = "number of training environments E"
    ylabel: str = "mean test accuracy"
    width: float = Field(default=7.0, gt=0)
    height: float = Field(default=4.5, gt=0)
    band_alpha: float = Field(default=0.2, ge=0, le=1)
    metric: str = "test_acc_mean"


class SweepRow(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    algorithm: str
    E: int
    seed: int
    train_acc_min: float = math.nan
    train_acc_mean: float = math.nan
    test_acc_min: float = math.nan
    test_acc_mean: float = math.nan
    spurious_leak: float = math.nan
    rounds: float = math.nan
    wall_time_ms: float = 0.0
    trial: int = 0
    error: Optional[str] = None
    message: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.error is not None


class SweepResult(BaseModel):
    """Rows in canonical (algorithm, E, trial) order"""

    model_config = ConfigDict(ser_json_inf_nan="constants")

    rows: List[SweepRow] = Field(default_factory=list)

    @property
    def errors(self) -> List[SweepRow]:
        return [row for row in self.rows if row.failed]

    def frame(self) -> pd.DataFrame:
        frame = pd.DataFrame([row.model_dump() for row in self.rows], columns=list(SweepRow.model_fields))
        return frame[RESULT_COLUMNS]

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.frame().to_csv(path, index=False, float_format=FLOAT_FORMAT, na_rep="nan", lineterminator="\n")
        return path

    def error_summary(self) -> dict:
        return {
            "rows": len(self.rows),
            "failed": len(self.errors),
            "errors": [
                {"algorithm": row.algorithm, "E": row.E, "seed": row.seed, "error": row.error, "message": row.message}
                for row in self.errors
            ],
        }


def load_results_csv(path) -> pd.DataFrame:
    frame = pd.read_csv(path, float_precision="round_trip")
    missing = [column for column in RESULT_COLUMNS if column not in frame.columns]
    if missing:
        raise InvalidParameter(f"{path} is missing result columns {missing}")
    return frame
