# Generated by Django 5.2.2 on 2026-10-19 10:12

import django.utils.timezone
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name="ExperimentRun",
            fields=[
                (
                    "id",
                    models.BigAutoField(
                        auto_created=True,
                        primary_key=True,
                        serialize=False,
                        verbose_name="ID",
                    ),
                ),
                (
                    "kind",
                    models.CharField(
                        choices=[
                            ("gen", "Generate environments"),
                            ("run", "Single algorithm run"),
                            ("sweep", "Sweep"),
                            ("check", "Theory checks"),
                            ("plot", "Plot"),
                        ],
                        help_text="Command that produced the run",
                        max_length=10,
                    ),
                ),
                (
                    "status",
                    models.CharField(
                        choices=[
                            ("running", "Running"),
                            ("succeeded", "Succeeded"),
                            ("failed", "Failed"),
                        ],
                        default="running",
                        max_length=10,
                    ),
                ),
                (
                    "seed",
                    models.BigIntegerField(
                        blank=True,
                        help_text="Master seed after precedence resolution",
                        null=True,
                    ),
                ),
                ("config", models.JSONField(blank=True, default=dict)),
                ("output_dir", models.CharField(blank=True, max_length=500)),
                (
                    "artifacts",
                    models.JSONField(
                        blank=True,
                        default=list,
                        help_text="Paths of the files written by the run",
                    ),
                ),
                ("row_count", models.PositiveIntegerField(default=0)),
                ("summary", models.JSONField(blank=True, default=dict)),
                ("error", models.TextField(blank=True)),
                ("started_at", models.DateTimeField(default=django.utils.timezone.now)),
                ("finished_at", models.DateTimeField(blank=True, null=True)),
            ],
            options={
                "verbose_name": "Experiment Run",
                "verbose_name_plural": "Experiment Runs",
                "ordering": ["-started_at"],
                "indexes": [
                    models.Index(fields=["kind", "status"], name="experiment_kind_status_idx"),
                    models.Index(fields=["started_at"], name="experiment_started_at_idx"),
                ],
            },
        ),
    ]
