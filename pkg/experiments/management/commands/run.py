"""
Fit one algorithm on one environment set and report analytic accuracies.

    python manage.py run --algorithm ifm --envs results/environments.json
    python manage.py run --algorithm erm --E 5 --mode sampled:1000
"""

import json

from environments.serializers import load_environment_set
from experiments.management.base import CommandOutcome, LabCommand, sweep_defaults
from experiments.models import RunKind
from experiments.runners import CellInputs, build_spec, evaluate, fit_algorithm, generate_environments
from experiments.serializers import SweepConfig
from learners.serializers import dump_predictor
from learners.types import Algorithm


class Command(LabCommand):
    help = 'Run a single algorithm on a generated or freshly sampled environment set'
    kind = RunKind.RUN
    config_class = SweepConfig

    def add_command_arguments(self, parser):
        parser.add_argument('--algorithm', required=True, choices=Algorithm.choices)
        parser.add_argument('--envs', help='Environment set written by `gen` (default: sample a new one)')
        parser.add_argument('--E', type=int, default=6, help='Environments to sample without --envs (default: 6)')
        self.add_mode_argument(parser)

    def get_config(self, options):
        return self.build_config(options, {'mode': options.get('mode')}, defaults=sweep_defaults(self.lab_settings))

    def perform(self, config, output_dir, options):
        algorithm = options['algorithm']
        if options.get('envs'):
            spec, envs = load_environment_set(options['envs'])
            config = config.model_copy(update={'r': spec.r, 'd_s': spec.d_s})
        else:
            spec = build_spec(config, config.seed)
            envs = generate_environments(config, spec, options['E'])

        inputs = CellInputs(config, spec, envs)
        predictor = fit_algorithm(algorithm, inputs)
        values = evaluate(predictor, inputs)

        predictor_path = dump_predictor(predictor, output_dir / f'run_{algorithm}.json')
        report_path = output_dir / f'run_{algorithm}_report.json'
        report = {'algorithm': algorithm, 'E': len(envs), 'seed': spec.seed, 'mode': config.mode, **values}
        report_path.write_text(json.dumps(report, indent=2))

        return CommandOutcome(
            artifacts=[predictor_path, report_path],
            row_count=1,
            summary=report,
            message=(
                f"{algorithm}: train accuracy {values['train_acc_mean']:.4f}, "
                f"test accuracy {values['test_acc_mean']:.4f}, spurious leak {values['spurious_leak']:.2e}"
            ),
        )
