"""
Run bookkeeping: one ExperimentRun row per management command invocation.

Artifacts (CSV, JSON, SVG) stay on disk; the row indexes them.
"""

from django.db import models
from django.utils import timezone


class RunKind(models.TextChoices):
    GEN = 'gen', 'Generate environments'
    RUN = 'run', 'Single algorithm run'
    SWEEP = 'sweep', 'Sweep'
    CHECK = 'check', 'Theory checks'
    PLOT = 'plot', 'Plot'


class RunStatus(models.TextChoices):
    RUNNING = 'running', 'Running'
    SUCCEEDED = 'succeeded', 'Succeeded'
    FAILED = 'failed', 'Failed'


class ExperimentRunQuerySet(models.QuerySet):
    """Custom queryset for ExperimentRun"""

    def succeeded(self):
        return self.filter(status=RunStatus.SUCCEEDED)

    def failed(self):
        return self.filter(status=RunStatus.FAILED)

    def running(self):
        return self.filter(status=RunStatus.RUNNING)

    def of_kind(self, kind):
        return self.filter(kind=kind)

    def for_seed(self, seed):
        return self.filter(seed=seed)


class ExperimentRunManager(models.Manager):
    def get_queryset(self):
        return ExperimentRunQuerySet(self.model, using=self._db)

    def succeeded(self):
        return self.get_queryset().succeeded()

    def failed(self):
        return self.get_queryset().failed()

    def of_kind(self, kind):
        return self.get_queryset().of_kind(kind)

    def start(self, kind, seed=None, config=None, output_dir=''):
        """Create a row in the running state"""
        return self.create(
            kind=kind,
            seed=seed,
            config=config or {},
            output_dir=str(output_dir or ''),
        )


class ExperimentRun(models.Model):
    kind = models.CharField(
        max_length=10,
        choices=RunKind.choices,
        help_text="Command that produced the run"
    )
    status = models.CharField(
        max_length=10,
        choices=RunStatus.choices,
        default=RunStatus.RUNNING,
    )
    seed = models.BigIntegerField(
        null=True,
        blank=True,
        help_text="Master seed after precedence resolution"
    )
    config = models.JSONField(default=dict, blank=True)
    output_dir = models.CharField(max_length=500, blank=True)
    artifacts = models.JSONField(
        default=list,
        blank=True,
        help_text="Paths of the files written by the run"
    )
    row_count = models.PositiveIntegerField(default=0)
    summary = models.JSONField(default=dict, blank=True)
    error = models.TextField(blank=True)

    started_at = models.DateTimeField(default=timezone.now)
    finished_at = models.DateTimeField(null=True, blank=True)

    objects = ExperimentRunManager()

    class Meta:
        ordering = ['-started_at']
        verbose_name = 'Experiment Run'
        verbose_name_plural = 'Experiment Runs'
        indexes = [
            models.Index(fields=['kind', 'status'], name='experiment_kind_status_idx'),
            models.Index(fields=['started_at'], name='experiment_started_at_idx'),
        ]

    def __str__(self):
        return f"{self.get_kind_display()} #{self.pk} ({self.status})"

    @classmethod
    def start(cls, kind, seed=None, config=None, output_dir=''):
        return cls.objects.start(kind, seed=seed, config=config, output_dir=output_dir)

    def mark_succeeded(self, artifacts=(), row_count=0, summary=None):
        self.status = RunStatus.SUCCEEDED
        self.artifacts = [str(path) for path in artifacts]
        self.row_count = row_count
        self.summary = summary or {}
        self.finished_at = timezone.now()
        self.save(update_fields=['status', 'artifacts', 'row_count', 'summary', 'finished_at'])

    def mark_failed(self, error, summary=None):
        self.status = RunStatus.FAILED
        self.error = str(error)
        self.summary = summary or self.summary
        self.finished_at = timezone.now()
        self.save(update_fields=['status', 'error', 'summary', 'finished_at'])

    @property
    def duration(self):
        """Elapsed time as a timedelta, None while running"""
        if self.finished_at is None:
            return None
        return self.finished_at - self.started_at

    @property
    def is_finished(self):
        return self.status != RunStatus.RUNNING
