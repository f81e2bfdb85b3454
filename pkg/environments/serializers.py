"""
JSON and CSV serialization of model specs, environment sets and datasets.

Matrices are stored row-major as nested lists. Loading re-validates everything
through make_model_spec and the environment invariants.
"""

import logging
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from core.exceptions import BoundViolation, DimensionMismatch
from core.linalg import frozen, require_psd

from .generation import make_model_spec, require_spd_environment
from .types import Dataset, EnvParams, ModelSpec

logger = logging.getLogger(__name__)

Matrix = List[List[float]]


class ModelSpecSchema(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    r: int = Field(ge=1)
    d_s: int = Field(ge=1)
    mu1: List[float]
    sigma1: Matrix
    S: Matrix
    D: float = Field(ge=0)
    seed: int = Field(ge=0)

    @classmethod
    def from_spec(cls, spec: ModelSpec) -> "ModelSpecSchema":
        return cls(
            r=spec.r,
            d_s=spec.d_s,
            mu1=spec.mu1.tolist(),
            sigma1=spec.sigma1.tolist(),
            S=spec.S.tolist(),
            D=spec.D,
            seed=spec.seed,
        )

    def to_spec(self) -> ModelSpec:
        return make_model_spec(
            r=self.r, d_s=self.d_s, mu1=self.mu1, sigma1=self.sigma1, S=self.S, D=self.D, seed=self.seed
        )


class EnvParamsSchema(BaseModel):
    index: int = Field(ge=0)
    mu2: List[float]
    sigma2_bar: Matrix
    G: Matrix
    sigma2: Matrix
    flipped: bool = False

    @classmethod
    def from_env(cls, env: EnvParams) -> "EnvParamsSchema":
        return cls(
            index=env.index,
            mu2=env.mu2.tolist(),
            sigma2_bar=env.sigma2_bar.tolist(),
            G=env.G.tolist(),
            sigma2=env.sigma2.tolist(),
            flipped=env.flipped,
        )

    def to_env(self, spec: ModelSpec) -> EnvParams:
        shape = (spec.d_s, spec.d_s)
        arrays = {
            "mu2": np.asarray(self.mu2, dtype=np.float64),
            "sigma2_bar": np.asarray(self.sigma2_bar, dtype=np.float64),
            "G": np.asarray(self.G, dtype=np.float64),
            "sigma2": np.asarray(self.sigma2, dtype=np.float64),
        }
        if arrays["mu2"].shape != (spec.d_s,) or any(arrays[k].shape != shape for k in ("sigma2_bar", "G", "sigma2")):
            raise DimensionMismatch(f"environment {self.index} does not match d_s={spec.d_s}")
        require_psd(arrays["sigma2_bar"], "sigma2_bar")
        if float(np.linalg.norm(arrays["sigma2_bar"], 2)) ** 2 > spec.D * (1.0 + 1e-12):
            raise BoundViolation(f"environment {self.index}: sigma2_bar exceeds D")
        env = EnvParams(
            index=self.index,
            flipped=self.flipped,
            **{name: frozen(value) for name, value in arrays.items()},
        )
        require_spd_environment(env)
        return env


class EnvironmentSetDocument(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    spec: ModelSpecSchema
    environments: List[EnvParamsSchema]
    mix: Optional[str] = None
    mu2_scale: Optional[float] = None


def environment_set_document(spec: ModelSpec, envs, **extra) -> EnvironmentSetDocument:
    return EnvironmentSetDocument(
        spec=ModelSpecSchema.from_spec(spec),
        environments=[EnvParamsSchema.from_env(env) for env in envs],
        **extra,
    )


def dump_environment_set(spec: ModelSpec, envs, path, **extra) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = environment_set_document(spec, envs, **extra)
    path.write_text(document.model_dump_json(indent=2))
    logger.info(f"Wrote {len(document.environments)} environments to {path}")
    return path


def load_environment_set(path) -> tuple:
    """Returns (spec, envs) after full validation"""
    document = EnvironmentSetDocument.model_validate_json(Path(path).read_text())
    spec = document.spec.to_spec()
    envs = [schema.to_env(spec) for schema in document.environments]
    return spec, envs


def dataset_frame(dataset: Dataset) -> pd.DataFrame:
    frame = pd.DataFrame(dataset.X, columns=[f"x_{i}" for i in range(dataset.dim)])
    frame["y"] = dataset.y.astype(int)
    return frame


def dump_dataset_csv(dataset: Dataset, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    dataset_frame(dataset).to_csv(path, index=False, float_format="%.17g")
    return path


def load_dataset_csv(path, env_index: int = -1, flipped: bool = False) -> Dataset:
    frame = pd.read_csv(path, float_precision="round_trip")
    y = frame.pop("y").to_numpy(dtype=np.float64)
    return Dataset(X=frame.to_numpy(dtype=np.float64), y=y, env_index=env_index, flipped=flipped)
