"""
Render a sweep CSV as an SVG plot with its companion points CSV.

    python manage.py plot --input results/sweep.csv --out results/plots
"""

from pathlib import Path

from experiments.management.base import CommandOutcome, LabCommand
from experiments.models import RunKind
from experiments.plots import emit_plot
from experiments.serializers import PlotStyle, load_results_csv


class Command(LabCommand):
    help = 'Plot mean accuracy against the number of training environments'
    kind = RunKind.PLOT
    config_class = PlotStyle

    def add_command_arguments(self, parser):
        parser.add_argument('--input', required=True, help='Sweep CSV')
        parser.add_argument('--title')
        parser.add_argument('--metric', help='Result column to plot (default: test_acc_mean)')

    def get_config(self, options):
        return self.build_config(options, {'title': options.get('title'), 'metric': options.get('metric')})

    def perform(self, config, output_dir, options):
        source = Path(options['input'])
        frame = load_results_csv(source)
        svg_path, points_path = emit_plot(frame, output_dir / f'{source.stem}.svg', config)
        return CommandOutcome(
            artifacts=[svg_path, points_path],
            row_count=len(frame),
            message=f'Plotted {len(frame)} rows from {source}',
        )
