"""
Theory check batteries.

Each battery repeats one executable statement over many seeded instances and reports
aggregate rates. The report fails when any ERM verdict is violated, when any IFM
round breaks the shrink rate, or when too few ellipsoid systems yield a root.
"""

import logging
from typing import Callable, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from core.exceptions import IFMLabError, NoChecksSelected
from core.seeding import Stream, derive_rng, derive_seed
from environments.generation import (
    analytic_moments,
    flip_all,
    isotropic_bias,
    make_model_spec,
    reference_model_spec,
    sample_dataset,
    sample_environments,
)
from learners.baselines import erm_fit
from learners.ifm import ifm_run
from risk.evaluation import standard_normal_cdf, zero_one_accuracy
from theory.checks import erm_lower_bound_check, ifm_shrink_check, spurious_leak
from theory.ellipsoids import (
    RootSearchConfig,
    invariant_coefficients,
    irm_spurious_solution_find,
    random_system,
)

from .serializers import CheckConfig, ErmBattery, IrmBattery, ShrinkBattery

logger = logging.getLogger(__name__)

AccuracyFn = Callable
ErmFitter = Callable


class BatteryReport(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    name: str
    passed: bool
    instances: int
    summary: dict = Field(default_factory=dict)
    records: List[dict] = Field(default_factory=list)


class CheckReport(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    passed: bool
    seed: int
    batteries: List[BatteryReport]

    def battery(self, name: str) -> Optional[BatteryReport]:
        return next((b for b in self.batteries if b.name == name), None)

    def summary(self) -> dict:
        return {
            "passed": self.passed,
            "seed": self.seed,
            "batteries": {b.name: {"passed": b.passed, "instances": b.instances, **b.summary} for b in self.batteries},
        }


def _erm_instance(battery: ErmBattery, seed: int):
    direction = np.ones(battery.r) / np.sqrt(battery.r)
    spec = make_model_spec(
        r=battery.r,
        d_s=battery.d_s,
        mu1=battery.mu1_norm * direction,
        sigma1=battery.sigma1**2 * np.eye(battery.r),
        D=battery.sigma2**4,
        seed=seed,
    )
    envs = sample_environments(
        spec, battery.E, sigma2_bar_source=isotropic_bias(battery.sigma2, battery.d_s), mu2_norm=battery.mu2_norm
    )
    return spec, envs


def run_erm_battery(
    battery: ErmBattery,
    seed: int,
    accuracy: AccuracyFn = zero_one_accuracy,
    erm_fitter: ErmFitter = None,
) -> BatteryReport:
    erm_fitter = erm_fitter or (lambda datasets: erm_fit(datasets, battery.optimizer))
    records = []
    for k in range(battery.seeds):
        spec, envs = _erm_instance(battery, derive_seed(seed, Stream.INSTANCE, 0, k))
        datasets = [sample_dataset(spec, env, battery.n) for env in envs]
        verdict = erm_lower_bound_check(erm_fitter(datasets), spec, envs, accuracy=accuracy)
        records.append({"instance": k, "seed": spec.seed, **verdict.to_dict()})
        if verdict.violated:
            logger.error(f"ERM bound violated on instance {k}: test accuracies {verdict.test_accuracies}")

    violated = sum(record["violated"] for record in records)
    applicable = sum(record["applicable"] for record in records)
    return BatteryReport(
        name="erm",
        passed=violated == 0,
        instances=len(records),
        summary={"violated": violated, "applicable": applicable, "applicable_rate": applicable / len(records)},
        records=records,
    )


def run_irm_battery(battery: IrmBattery, seed: int) -> BatteryReport:
    config = RootSearchConfig(multistarts=battery.multistarts)
    records, rates = [], {}
    for dim in battery.dims:
        found = 0
        for k in range(battery.instances):
            system = random_system(dim, derive_rng(seed, Stream.INSTANCE, 1, dim, k))
            root = irm_spurious_solution_find(system, config, derive_rng(seed, Stream.RESTART, dim, k))
            coefficient_spread = None
            if root.success:
                coefficients = invariant_coefficients(system, root.u)
                coefficient_spread = float(np.ptp(coefficients))
                found += coefficient_spread <= battery.coefficient_tol
            records.append({"dim": dim, "instance": k, "coefficient_spread": coefficient_spread, **root.to_dict()})
        rates[str(dim)] = found / battery.instances
        logger.info(f"Ellipsoid battery d={dim}: success rate {rates[str(dim)]:.4f}")

    passed = all(rate >= battery.min_success_rate for rate in rates.values())
    return BatteryReport(
        name="irm",
        passed=passed,
        instances=len(records),
        summary={"success_rate": rates, "min_success_rate": battery.min_success_rate},
        records=records,
    )


def run_shrink_battery(battery: ShrinkBattery, seed: int) -> BatteryReport:
    """Fits analytic IFM on freshly generated reference instances rather than reading sweep output"""
    records = []
    for k in range(battery.seeds):
        spec = reference_model_spec(
            r=battery.r, d_s=battery.d_s, mix=battery.mix, seed=derive_seed(seed, Stream.INSTANCE, 2, k)
        )
        envs = sample_environments(spec, battery.E)
        try:
            predictor = ifm_run(
                [analytic_moments(spec, env) for env in envs],
                battery.r,
                group_size=battery.group_size,
                spec=spec,
            )
        except IFMLabError as e:
            logger.warning(f"IFM failed on shrink instance {k}: {e}")
            records.append({"instance": k, "passed": False, "error": type(e).__name__, "recovered": False})
            continue
        verdict = ifm_shrink_check(predictor, battery.r, battery.c)
        leak = spurious_leak(predictor.stack, spec)
        oracle_accuracy = float(standard_normal_cdf(np.sqrt(spec.mu1 @ np.linalg.solve(spec.sigma1, spec.mu1))))
        test_accuracy = float(np.mean([zero_one_accuracy(predictor, spec, env) for env in flip_all(envs)]))
        recovered = leak <= battery.max_leak and abs(test_accuracy - oracle_accuracy) <= battery.accuracy_tol
        records.append({"instance": k, "leak": leak, "recovered": recovered, **verdict.to_dict()})

    violations = sum(not record["passed"] for record in records)
    recovered = sum(record["recovered"] for record in records)
    return BatteryReport(
        name="shrink",
        passed=violations == 0,
        instances=len(records),
        summary={"violations": violations, "recovery_rate": recovered / len(records), "instance_source": "generated"},
        records=records,
    )


def run_checks(
    config: CheckConfig,
    accuracy: AccuracyFn = zero_one_accuracy,
    erm_fitter: ErmFitter = None,
) -> CheckReport:
    """
    Runs the selected batteries. `accuracy` and `erm_fitter` replace the analytic
    evaluator and the ERM learner of the ERM battery.
    """
    selected = config.selected()
    if not selected:
        raise NoChecksSelected("no check battery selected")

    batteries = []
    if config.erm is not None:
        batteries.append(run_erm_battery(config.erm, config.seed, accuracy, erm_fitter))
    if config.irm is not None:
        batteries.append(run_irm_battery(config.irm, config.seed))
    if config.shrink is not None:
        batteries.append(run_shrink_battery(config.shrink, config.seed))

    report = CheckReport(passed=all(b.passed for b in batteries), seed=config.seed, batteries=batteries)
    logger.info(f"Checks {selected}: {'passed' if report.passed else 'FAILED'}")
    return report
