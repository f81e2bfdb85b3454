"""
Shared plumbing for the lab's management commands: common flags, config loading,
seed precedence, run bookkeeping and metrics export.
"""

import json
import logging
from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError
from django.db import DatabaseError
from pydantic import ValidationError

from core.exceptions import IFMLabError
from core.monitoring import export_metrics
from experiments.models import ExperimentRun
from experiments.serializers import parse_mode

logger = logging.getLogger(__name__)


def json_safe(value):
    """Non-finite floats become null; JSON columns only accept strict JSON"""
    return json.loads(json.dumps(value, default=str), parse_constant=lambda constant: None)


class CommandOutcome:
    """What a command reports back for its ExperimentRun row"""

    def __init__(self, artifacts=(), row_count=0, summary=None, failed=False, message=''):
        self.artifacts = list(artifacts)
        self.row_count = row_count
        self.summary = summary or {}
        self.failed = failed
        self.message = message


class LabCommand(BaseCommand):
    kind = None
    config_class = None

    def add_arguments(self, parser):
        parser.add_argument('--config', help='JSON file validated against the command configuration')
        parser.add_argument('--seed', type=int, help='Master seed (overrides IFM_LAB_SEED and the config file)')
        parser.add_argument('--out', help='Output directory (default: IFM_LAB_OUTPUT_DIR)')
        parser.add_argument('--no-record', action='store_true', help='Do not store an ExperimentRun row')
        self.add_command_arguments(parser)

    def add_command_arguments(self, parser):
        pass

    def add_mode_argument(self, parser):
        parser.add_argument('--mode', help="'analytic' or 'sampled:<n>'")

    def add_jobs_argument(self, parser):
        parser.add_argument('--jobs', type=int, help='Worker processes (default: IFM_LAB_JOBS)')

    @property
    def lab_settings(self):
        return settings.IFM_LAB_SETTINGS

    def resolve_seed(self, options, config_seed=None):
        """--seed, then IFM_LAB_SEED, then the config file, then DEFAULT_SEED"""
        for candidate in (options.get('seed'), self.lab_settings.get('SEED_OVERRIDE'), config_seed):
            if candidate is not None:
                if candidate < 0:
                    raise CommandError(f'Seed must be non-negative, got {candidate}')
                return int(candidate)
        return int(self.lab_settings['DEFAULT_SEED'])

    def read_config_file(self, options) -> dict:
        path = options.get('config')
        if not path:
            return {}
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise CommandError(f'Cannot read config {path}: {e}')
        if not isinstance(data, dict):
            raise CommandError(f'Config {path} must hold a JSON object')
        return data

    def build_config(self, options, overrides=None, defaults=None):
        """Validates defaults < config file < command-line overrides; the seed follows resolve_seed"""
        data = dict(defaults or {})
        data.update(self.read_config_file(options))
        data.update({key: value for key, value in (overrides or {}).items() if value is not None})
        if 'mode' in data:
            try:
                parse_mode(str(data['mode']))
            except IFMLabError as e:
                raise CommandError(str(e))
        if 'seed' in self.config_class.model_fields:
            data['seed'] = self.resolve_seed(options, data.get('seed'))
        try:
            return self.config_class.model_validate(data)
        except ValidationError as e:
            raise CommandError(f'Invalid configuration:\n{e}')

    def output_dir(self, options, config=None) -> Path:
        path = Path(options.get('out') or getattr(config, 'output_dir', None) or self.lab_settings['OUTPUT_DIR'])
        path.mkdir(parents=True, exist_ok=True)
        return path

    def jobs(self, options) -> int:
        jobs = options.get('jobs') or self.lab_settings['JOBS']
        if jobs < 1:
            raise CommandError(f'--jobs must be at least 1, got {jobs}')
        return jobs

    def _start_record(self, options, seed, config, output_dir):
        if options.get('no_record'):
            return None
        try:
            return ExperimentRun.start(self.kind, seed=seed, config=json_safe(config), output_dir=output_dir)
        except DatabaseError as e:
            logger.warning(f'Run not recorded ({e}); run `manage.py migrate` to enable bookkeeping')
            return None

    def _finish_record(self, run, outcome=None, error=None):
        if run is None:
            return
        try:
            if error is not None:
                run.mark_failed(error)
            elif outcome.failed:
                run.mark_failed(outcome.message, summary=json_safe(outcome.summary))
            else:
                run.mark_succeeded(
                    outcome.artifacts, row_count=outcome.row_count, summary=json_safe(outcome.summary)
                )
        except DatabaseError as e:
            logger.error(f'Could not update run {run.pk}: {e}')

    def handle(self, *args, **options):
        config = self.get_config(options)
        output_dir = self.output_dir(options, config)
        seed = getattr(config, 'seed', None)
        run = self._start_record(options, seed, config.model_dump(mode='json') if config else {}, output_dir)
        try:
            outcome = self.perform(config, output_dir, options)
        except IFMLabError as e:
            logger.error(f'{self.kind} failed: {type(e).__name__}: {e}')
            self._finish_record(run, error=f'{type(e).__name__}: {e}')
            raise CommandError(f'{type(e).__name__}: {e}')
        except CommandError as e:
            self._finish_record(run, error=str(e))
            raise
        finally:
            export_metrics(self.lab_settings.get('METRICS_TEXTFILE'))

        self._finish_record(run, outcome)
        for path in outcome.artifacts:
            self.stdout.write(f'  {path}')
        if outcome.failed:
            self.stdout.write(self.style.ERROR(outcome.message))
            raise CommandError(outcome.message, returncode=1)
        self.stdout.write(self.style.SUCCESS(outcome.message or f'{self.kind} finished'))

    def get_config(self, options):
        raise NotImplementedError

    def perform(self, config, output_dir: Path, options) -> CommandOutcome:
        raise NotImplementedError


def sweep_defaults(lab_settings) -> dict:
    """SweepConfig values taken from IFM_LAB_SETTINGS when the config file is silent"""
    return {
        'mu2_scale': lab_settings['MU2_SCALE'],
        'fit_samples': lab_settings['SAMPLES_PER_ENV'],
        'group_size': lab_settings['GROUP_SIZE'],
        'sampled_tol_rel': lab_settings['MATCHER_TOL_SAMPLED'],
        'matcher': {'tol_rel': lab_settings['MATCHER_TOL_ANALYTIC']},
    }
