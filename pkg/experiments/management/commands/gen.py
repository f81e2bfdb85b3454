"""
Generate a model spec and E training environments as a JSON document.

    python manage.py gen --E 6 --mix random-orthogonal --out results/gen
    python manage.py gen --E 4 --dump-samples 1000
"""

from django.core.management.base import CommandError

from environments.generation import MixingRegime, flip_test_environment, sample_dataset
from environments.serializers import dump_dataset_csv, dump_environment_set
from experiments.management.base import CommandOutcome, LabCommand, sweep_defaults
from experiments.models import RunKind
from experiments.runners import build_spec, generate_environments
from experiments.serializers import SweepConfig


class Command(LabCommand):
    help = 'Generate a model spec and training environments (JSON), optionally with sample CSVs'
    kind = RunKind.GEN
    config_class = SweepConfig

    def add_command_arguments(self, parser):
        parser.add_argument('--E', type=int, default=6, help='Number of training environments (default: 6)')
        parser.add_argument('--r', type=int, help='Invariant dimension')
        parser.add_argument('--d-s', type=int, dest='d_s', help='Spurious dimension')
        parser.add_argument('--mix', choices=MixingRegime.choices, help='Mixing matrix S')
        parser.add_argument('--mu2-scale', type=float, dest='mu2_scale', help='Variance of spurious means')
        parser.add_argument('--sigma2', type=float, help='Isotropic spurious bias sigma2^2 I')
        parser.add_argument('--D', type=float, help='Bound on the squared norm of the spurious bias')
        parser.add_argument(
            '--dump-samples',
            type=int,
            dest='dump_samples',
            help='Also write n samples per training and flipped test environment as CSV',
        )

    def get_config(self, options):
        overrides = {key: options.get(key) for key in ('r', 'd_s', 'mix', 'mu2_scale', 'sigma2', 'D')}
        return self.build_config(options, overrides, defaults=sweep_defaults(self.lab_settings))

    def perform(self, config, output_dir, options):
        if options['E'] < 1:
            raise CommandError('--E must be at least 1')
        spec = build_spec(config, config.seed)
        envs = generate_environments(config, spec, options['E'])
        document = dump_environment_set(
            spec, envs, output_dir / 'environments.json', mix=config.mix, mu2_scale=config.mu2_scale
        )
        artifacts = [document]

        n = options.get('dump_samples')
        if n:
            for env in envs:
                for variant in (env, flip_test_environment(env)):
                    name = f"{'test' if variant.flipped else 'train'}_{variant.index}.csv"
                    artifacts.append(dump_dataset_csv(sample_dataset(spec, variant, n), output_dir / name))

        return CommandOutcome(
            artifacts=artifacts,
            row_count=len(envs),
            summary={'E': len(envs), 'd': spec.d, 'samples_per_env': n or 0},
            message=f'Generated {len(envs)} environments (d={spec.d}, seed={spec.seed})',
        )
