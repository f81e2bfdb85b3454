"""
Environment-complexity sweeps.

A sweep is a grid of independent cells (algorithm, E, trial). Every cell rebuilds its
model and environments from the master seed and the trial index alone, so cells can
run in any order or process and a sub-grid reproduces the matching rows of the full
grid. Environment i of a trial is the same for every E, which makes the curves nested.
"""

import logging
import time
from contextlib import contextmanager
from multiprocessing import Pool
from typing import Callable, Dict, Iterable, List, Optional, Tuple

import numpy as np
import torch

from core.exceptions import IFMLabError
from core.monitoring import track_sweep_cell
from core.seeding import Stream, derive_rng, derive_seed, name_key
from environments.generation import (
    analytic_moments,
    flip_all,
    isotropic_bias,
    make_model_spec,
    mixing_matrix,
    sample_dataset,
    sample_environments,
)
from environments.types import ModelSpec
from learners.baselines import coral_fit, erm_fit, irm_fit
from learners.closed_form import oracle_w_star, simple_algo
from learners.ifm import MatchScope, ifm_run
from learners.types import Algorithm, CoralMode, TrainedPredictor
from risk.evaluation import estimate_moments, zero_one_accuracy
from theory.checks import spurious_leak

from .serializers import ANALYTIC, SweepConfig, SweepResult, SweepRow

logger = logging.getLogger(__name__)

Cell = Tuple[str, int, int]


class CellInputs:
    """Model, environments, moments and datasets shared by the algorithms of one cell"""

    def __init__(self, config: SweepConfig, spec: ModelSpec, envs: list, trial: int = 0):
        self.config = config
        self.spec = spec
        self.seed = spec.seed
        self.envs = list(envs)
        self.E = len(self.envs)
        self.trial = trial
        self.tests = flip_all(self.envs)
        self.mode, n = config.parsed_mode
        self.samples = n if n is not None else config.fit_samples
        self._datasets = None
        self._moments = None

    @classmethod
    def for_cell(cls, config: SweepConfig, E: int, trial: int) -> "CellInputs":
        spec = build_spec(config, trial_seed(config, trial))
        return cls(config, spec, generate_environments(config, spec, E), trial)

    @property
    def datasets(self) -> list:
        if self._datasets is None:
            self._datasets = [sample_dataset(self.spec, env, self.samples) for env in self.envs]
        return self._datasets

    @property
    def moments(self) -> list:
        if self._moments is None:
            if self.mode == ANALYTIC:
                self._moments = [analytic_moments(self.spec, env) for env in self.envs]
            else:
                self._moments = [estimate_moments(ds) for ds in self.datasets]
        return self._moments

    def rng(self, algorithm: str) -> np.random.Generator:
        return derive_rng(self.seed, Stream.ALGORITHM, name_key(algorithm), self.E)


def trial_seed(config: SweepConfig, trial: int) -> int:
    return derive_seed(config.seed, Stream.TRIAL, trial)


def build_spec(config: SweepConfig, seed: int) -> ModelSpec:
    return make_model_spec(
        r=config.r,
        d_s=config.d_s,
        mu1=config.mu1_vector,
        sigma1=config.sigma1_matrix,
        S=mixing_matrix(config.r + config.d_s, config.mix, seed),
        D=config.D,
        seed=seed,
    )


def generate_environments(config: SweepConfig, spec: ModelSpec, E: int) -> list:
    bias = isotropic_bias(config.sigma2, config.d_s) if config.sigma2 is not None else None
    return sample_environments(spec, E, config.mu2_scale, sigma2_bar_source=bias)


def _fit_ifm(inputs: CellInputs) -> TrainedPredictor:
    config = inputs.config
    if inputs.mode == ANALYTIC:
        return ifm_run(
            inputs.moments,
            config.r,
            group_size=config.group_size,
            matcher_config=config.matcher,
            rng=inputs.rng(Algorithm.IFM),
            spec=inputs.spec,
            widths=config.ifm_widths,
        )
    return ifm_run(
        inputs.moments,
        config.r,
        datasets=inputs.datasets,
        matcher_config=config.matcher.model_copy(update={"tol_rel": config.sampled_tol_rel}),
        rng=inputs.rng(Algorithm.IFM),
        spec=inputs.spec,
        widths=config.ifm_widths or [config.r],
        match=MatchScope.ALL,
        opt_config=config.optimizer,
    )


def _fit_coral(mode: str) -> Callable[[CellInputs], TrainedPredictor]:
    def fit(inputs: CellInputs) -> TrainedPredictor:
        config = inputs.config
        name = Algorithm.CORAL if mode == CoralMode.MATCH_ALL else Algorithm.CORAL_DISJOINT
        return coral_fit(inputs.datasets, mode, config.coral.widths, config.coral, inputs.rng(name), config.r)

    return fit


ALGORITHMS: Dict[str, Callable[[CellInputs], TrainedPredictor]] = {
    Algorithm.IFM: _fit_ifm,
    Algorithm.ERM: lambda inputs: erm_fit(inputs.datasets, inputs.config.optimizer),
    Algorithm.IRM: lambda inputs: irm_fit(inputs.datasets, inputs.config.irm_penalty, inputs.config.optimizer),
    Algorithm.CORAL: _fit_coral(CoralMode.MATCH_ALL),
    Algorithm.CORAL_DISJOINT: _fit_coral(CoralMode.MATCH_DISJOINT),
    Algorithm.SIMPLE: lambda inputs: simple_algo(inputs.moments[0], inputs.moments[1], inputs.config.d_s),
    Algorithm.ORACLE: lambda inputs: oracle_w_star(inputs.spec),
}


def fit_algorithm(algorithm: str, inputs: CellInputs) -> TrainedPredictor:
    return ALGORITHMS[algorithm](inputs)


def evaluate(predictor: TrainedPredictor, inputs: CellInputs) -> dict:
    """Analytic accuracies on every training environment and its flipped counterpart"""
    train = [zero_one_accuracy(predictor, inputs.spec, env) for env in inputs.envs]
    test = [zero_one_accuracy(predictor, inputs.spec, env) for env in inputs.tests]
    return {
        "train_acc_min": float(np.min(train)),
        "train_acc_mean": float(np.mean(train)),
        "test_acc_min": float(np.min(test)),
        "test_acc_mean": float(np.mean(test)),
        "spurious_leak": spurious_leak(predictor, inputs.spec),
        "rounds": float(len(predictor.stack.steps)) if predictor.stack is not None else 0.0,
    }


def run_cell(config: SweepConfig, algorithm: str, E: int, trial: int) -> SweepRow:
    """One row; IFMLabError and FloatingPointError become a NaN row tagged with the error class"""
    seed = trial_seed(config, trial)
    start_time = time.perf_counter()
    try:
        inputs = CellInputs.for_cell(config, E, trial)
        predictor = fit_algorithm(algorithm, inputs)
        values = evaluate(predictor, inputs)
    except (IFMLabError, FloatingPointError) as e:
        logger.warning(f"Cell {algorithm} E={E} trial={trial} failed: {type(e).__name__}: {e}")
        track_sweep_cell("failed")
        return SweepRow(algorithm=algorithm, E=E, seed=seed, trial=trial, error=type(e).__name__, message=str(e))

    elapsed = (time.perf_counter() - start_time) * 1000.0 if config.timing else 0.0
    track_sweep_cell("ok")
    logger.debug(f"Cell {algorithm} E={E} trial={trial}: test_acc_mean={values['test_acc_mean']:.4f}")
    return SweepRow(algorithm=algorithm, E=E, seed=seed, trial=trial, wall_time_ms=elapsed, **values)


def _run_cell_args(args) -> SweepRow:
    return run_cell(*args)


def sweep_cells(config: SweepConfig) -> List[Cell]:
    return sorted(
        (algorithm, E, trial)
        for algorithm in config.algorithms
        for E in config.E_values
        for trial in range(config.trials)
    )


def _init_worker():
    torch.set_num_threads(1)


@contextmanager
def single_threaded_torch():
    previous = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        yield
    finally:
        torch.set_num_threads(previous)


def run_sweep(config: SweepConfig, jobs: int = 1, cells: Optional[Iterable[Cell]] = None) -> SweepResult:
    """
    Runs every cell and returns rows in canonical (algorithm, E, trial) order.

    Torch runs single-threaded in every cell, so the output does not depend on `jobs`.
    """
    cells = sorted(cells) if cells is not None else sweep_cells(config)
    jobs = max(1, int(jobs))
    logger.info(f"Sweep: {len(cells)} cells, mode={config.mode}, jobs={jobs}")

    arguments = [(config, algorithm, E, trial) for algorithm, E, trial in cells]
    if jobs == 1 or len(arguments) <= 1:
        with single_threaded_torch():
            rows = [_run_cell_args(args) for args in arguments]
    else:
        with Pool(processes=jobs, initializer=_init_worker) as pool:
            rows = pool.map(_run_cell_args, arguments, chunksize=1)

    rows.sort(key=lambda row: (row.algorithm, row.E, row.trial))
    result = SweepResult(rows=rows)
    failed = len(result.errors)
    if failed:
        logger.warning(f"Sweep finished with {failed} failed cells out of {len(rows)}")
    else:
        logger.info(f"Sweep finished: {len(rows)} cells")
    return result
