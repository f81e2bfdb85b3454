from datetime import timedelta

import factory
from django.utils import timezone

from .models import ExperimentRun, RunKind, RunStatus
from .serializers import SweepConfig


def small_sweep_config(**overrides) -> SweepConfig:
    """Desk-size sweep: r=2, d_s=4, two environment counts, two trials"""
    values = {"r": 2, "d_s": 4, "E_values": [3, 4], "trials": 2, "algorithms": ["ifm", "oracle"], "fit_samples": 200}
    values.update(overrides)
    return SweepConfig(**values)


class ExperimentRunFactory(factory.django.DjangoModelFactory):
    class Meta:
        model = ExperimentRun

    kind = RunKind.SWEEP
    status = RunStatus.RUNNING
    seed = factory.Sequence(lambda n: n)
    config = factory.LazyFunction(lambda: small_sweep_config().model_dump(mode="json"))
    output_dir = factory.LazyAttribute(lambda o: f"results/run-{o.seed}")
    started_at = factory.LazyFunction(timezone.now)

    class Params:
        succeeded = factory.Trait(
            status=RunStatus.SUCCEEDED,
            finished_at=factory.LazyAttribute(lambda o: o.started_at + timedelta(seconds=3)),
            row_count=8,
        )
        failed = factory.Trait(
            status=RunStatus.FAILED,
            error="TooFewEnvironments: IFM needs at least 2 environments, got 1",
            finished_at=factory.LazyAttribute(lambda o: o.started_at + timedelta(seconds=1)),
        )
