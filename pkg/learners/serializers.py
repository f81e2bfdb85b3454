from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict

from .types import TrainedPredictor


class ProjectionStepSchema(BaseModel):
    U: List[List[float]]
    r_in: int
    r_out: int
    residual: float
    method: str
    feasible: bool
    envs: List[int]


class TrainedPredictorSchema(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    algorithm: str
    v: List[float]
    diagnostics: Dict[str, Any] = {}
    steps: Optional[List[ProjectionStepSchema]] = None

    @classmethod
    def from_predictor(cls, predictor: TrainedPredictor) -> "TrainedPredictorSchema":
        steps = None
        if predictor.stack is not None:
            steps = [
                ProjectionStepSchema(
                    U=step.U.tolist(),
                    r_in=step.r_in,
                    r_out=step.r_out,
                    residual=step.residual,
                    method=step.method,
                    feasible=step.feasible,
                    envs=list(step.envs),
                )
                for step in predictor.stack.steps
            ]
        return cls(
            algorithm=predictor.algorithm, v=predictor.v.tolist(), diagnostics=predictor.diagnostics, steps=steps
        )

    def to_predictor(self) -> TrainedPredictor:
        return TrainedPredictor.from_vector(np.asarray(self.v), self.algorithm, diagnostics=dict(self.diagnostics))


def dump_predictor(predictor: TrainedPredictor, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(TrainedPredictorSchema.from_predictor(predictor).model_dump_json(indent=2))
    return path


def load_predictor(path) -> TrainedPredictor:
    return TrainedPredictorSchema.model_validate_json(Path(path).read_text()).to_predictor()
