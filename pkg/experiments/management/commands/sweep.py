"""
Environment-complexity sweep: CSV of per-cell accuracies, a JSON summary and an SVG plot.

    python manage.py sweep --config sweep.json --jobs 4
    python manage.py sweep --E-values 3 6 9 --trials 2 --algorithms ifm erm oracle
"""

import json

from experiments.management.base import CommandOutcome, LabCommand, sweep_defaults
from experiments.models import RunKind
from experiments.plots import emit_plot
from experiments.runners import run_sweep
from experiments.serializers import SweepConfig
from learners.types import Algorithm


class Command(LabCommand):
    help = 'Run every algorithm over a grid of environment counts and trials'
    kind = RunKind.SWEEP
    config_class = SweepConfig

    def add_command_arguments(self, parser):
        self.add_mode_argument(parser)
        self.add_jobs_argument(parser)
        parser.add_argument('--E-values', type=int, nargs='+', dest='E_values', help='Environment counts')
        parser.add_argument('--trials', type=int, help='Seeds per cell')
        parser.add_argument('--algorithms', nargs='+', choices=Algorithm.choices)
        parser.add_argument('--mix', help='identity or random-orthogonal')
        parser.add_argument('--timing', action='store_true', default=None, help='Record wall time per cell')
        parser.add_argument('--no-plot', action='store_true', help='Skip the SVG plot')

    def get_config(self, options):
        overrides = {key: options.get(key) for key in ('mode', 'E_values', 'trials', 'algorithms', 'mix', 'timing')}
        return self.build_config(options, overrides, defaults=sweep_defaults(self.lab_settings))

    def perform(self, config, output_dir, options):
        jobs = self.jobs(options)
        self.stdout.write(f'Sweeping {config.cell_count()} cells with {jobs} job(s)...')
        result = run_sweep(config, jobs=jobs)

        artifacts = [result.to_csv(output_dir / 'sweep.csv')]
        summary = {'config': config.model_dump(mode='json'), **result.error_summary()}
        summary_path = output_dir / 'sweep_summary.json'
        summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True))
        artifacts.append(summary_path)
        if not options.get('no_plot'):
            artifacts.extend(emit_plot(result, output_dir / 'sweep.svg'))

        failed = len(result.errors)
        if failed:
            self.stdout.write(self.style.WARNING(f'{failed} cells failed; see {summary_path}'))
        return CommandOutcome(
            artifacts=artifacts,
            row_count=len(result.rows),
            summary=result.error_summary(),
            message=f'Sweep finished: {len(result.rows)} rows',
        )
