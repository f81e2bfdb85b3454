"""
Theory check batteries: ERM lower bound, spurious IRM roots and the IFM shrink rate.

Exits with status 1 when a battery fails.

    python manage.py check_theory
    python manage.py check_theory --only irm shrink --instances 100
"""

import json

from experiments.checks import run_checks
from experiments.management.base import CommandOutcome, LabCommand
from experiments.models import RunKind
from experiments.serializers import CheckConfig

BATTERIES = ('erm', 'irm', 'shrink')


class Command(LabCommand):
    help = 'Run the theory check batteries and write a JSON report'
    kind = RunKind.CHECK
    config_class = CheckConfig

    def add_command_arguments(self, parser):
        parser.add_argument('--only', nargs='+', choices=BATTERIES, help='Run only these batteries')
        parser.add_argument('--instances', type=int, help='Instances (seeds) per battery')

    def get_config(self, options):
        data = self.read_config_file(options)
        only = options.get('only')
        multistarts = self.lab_settings['NEWTON_MULTISTARTS']
        defaults = {'erm': {}, 'irm': {'multistarts': multistarts}, 'shrink': {}}
        for name in BATTERIES:
            if name in data and data[name] is None:
                defaults[name] = None
            elif data.get(name) is not None:
                defaults[name] = {**defaults[name], **data[name]}
            if only is not None and name not in only:
                defaults[name] = None
        instances = options.get('instances')
        if instances is not None:
            for name, key in (('erm', 'seeds'), ('irm', 'instances'), ('shrink', 'seeds')):
                if defaults[name] is not None:
                    defaults[name][key] = instances
        merged = {key: value for key, value in data.items() if key not in BATTERIES}
        merged.update(defaults)
        return self.build_config({**options, 'config': None}, defaults=merged)

    def perform(self, config, output_dir, options):
        self.stdout.write(f'Running batteries: {", ".join(config.selected()) or "none"}')
        report = run_checks(config)

        report_path = output_dir / 'checks_report.json'
        report_path.write_text(json.dumps(report.summary(), indent=2, sort_keys=True))
        verdicts_path = output_dir / 'checks_verdicts.jsonl'
        with open(verdicts_path, 'w') as handle:
            for battery in report.batteries:
                for record in battery.records:
                    handle.write(json.dumps({'battery': battery.name, **record}, sort_keys=True) + '\n')

        for battery in report.batteries:
            style = self.style.SUCCESS if battery.passed else self.style.ERROR
            self.stdout.write(style(f'{battery.name}: {"passed" if battery.passed else "FAILED"} {battery.summary}'))

        return CommandOutcome(
            artifacts=[report_path, verdicts_path],
            row_count=sum(b.instances for b in report.batteries),
            summary=report.summary(),
            failed=not report.passed,
            message='All checks passed' if report.passed else 'Theory checks failed',
        )
