import json
import math
from io import StringIO

import numpy as np
import pandas as pd
import pytest
from django.core.management import call_command
from django.core.management.base import CommandError
from pydantic import ValidationError

from core.exceptions import EmptyResults, InvalidParameter, NoChecksSelected
from environments.serializers import load_environment_set
from learners.types import OptimizerConfig
from risk.evaluation import standard_normal_cdf

from .checks import BatteryReport, CheckReport, run_checks
from .factories import ExperimentRunFactory, small_sweep_config
from .models import ExperimentRun, RunKind, RunStatus
from .plots import emit_plot, legend_order, plot_points
from .runners import run_cell, run_sweep, sweep_cells
from .serializers import (
    RESULT_COLUMNS,
    CheckConfig,
    ErmBattery,
    IrmBattery,
    PlotStyle,
    ShrinkBattery,
    SweepConfig,
    parse_mode,
)


def result_frame(rows):
    return pd.DataFrame(
        [
            {
                "algorithm": algorithm,
                "E": E,
                "seed": seed,
                "train_acc_min": acc,
                "train_acc_mean": acc,
                "test_acc_min": acc,
                "test_acc_mean": acc,
                "spurious_leak": 0.0,
                "rounds": 0,
                "wall_time_ms": 0.0,
            }
            for algorithm, E, seed, acc in rows
        ]
    )


class TestParseMode:
    def test_analytic(self):
        assert parse_mode("analytic") == ("analytic", None)

    def test_sampled(self):
        assert parse_mode("sampled:500") == ("sampled", 500)
        assert parse_mode("sampled") == ("sampled", 1000)

    @pytest.mark.parametrize("mode", ["sampled:", "sampled:0", "population", "sampled:-3"])
    def test_invalid(self, mode):
        with pytest.raises(InvalidParameter):
            parse_mode(mode)


class TestSweepConfig:
    def test_defaults_cover_the_full_grid(self):
        config = SweepConfig()
        assert config.E_values == list(range(3, 16))
        assert config.cell_count() == 7 * 13 * 5

    def test_environment_counts_must_be_at_least_two(self):
        with pytest.raises(ValidationError):
            SweepConfig(E_values=[1, 3])

    def test_unknown_algorithm(self):
        with pytest.raises(ValidationError):
            SweepConfig(algorithms=["ifm", "dro"])

    def test_isotropic_bias_needs_room_in_d(self):
        with pytest.raises(ValidationError):
            SweepConfig(sigma2=1.0, D=0.5)
        assert SweepConfig(sigma2=1.0, D=1.0).sigma2 == 1.0

    def test_unknown_keys_rejected(self):
        with pytest.raises(ValidationError):
            SweepConfig.model_validate({"trails": 3})


class TestRunSweep:
    def test_one_row_per_cell_in_canonical_order(self):
        config = small_sweep_config()
        result = run_sweep(config)
        keys = [(row.algorithm, row.E, row.trial) for row in result.rows]
        assert keys == sweep_cells(config)
        assert len(keys) == 2 * 2 * 2
        assert not result.errors

    def test_oracle_accuracy_does_not_depend_on_environments(self):
        result = run_sweep(small_sweep_config(algorithms=["oracle"], E_values=[2, 3, 5]))
        expected = standard_normal_cdf(np.sqrt(2.0))
        for row in result.rows:
            assert row.test_acc_mean == pytest.approx(expected, abs=1e-12)
            assert row.train_acc_mean == pytest.approx(expected, abs=1e-12)
            assert row.spurious_leak <= 1e-12

    def test_analytic_ifm_recovers_the_oracle(self):
        result = run_sweep(small_sweep_config(algorithms=["ifm"]))
        expected = standard_normal_cdf(np.sqrt(2.0))
        for row in result.rows:
            assert row.spurious_leak <= 1e-6
            assert abs(row.test_acc_mean - expected) <= 1e-3
            assert row.rounds >= 1

    def test_failed_cell_becomes_nan_row(self, tmp_path):
        result = run_sweep(small_sweep_config(algorithms=["coral_disjoint"], E_values=[2], trials=1))
        (row,) = result.rows
        assert row.error == "TooFewEnvironments"
        assert math.isnan(row.test_acc_mean)
        text = result.to_csv(tmp_path / "sweep.csv").read_text()
        assert text.splitlines()[0] == ",".join(RESULT_COLUMNS)
        assert "nan" in text.splitlines()[1]
        assert result.error_summary()["failed"] == 1

    def test_rerun_is_byte_identical(self, tmp_path):
        config = small_sweep_config(algorithms=["ifm", "erm", "oracle"], E_values=[3], fit_samples=100)
        first = run_sweep(config).to_csv(tmp_path / "a.csv").read_bytes()
        second = run_sweep(config).to_csv(tmp_path / "b.csv").read_bytes()
        assert first == second

    def test_sub_grid_matches_full_grid(self):
        config = small_sweep_config()
        full = {(row.algorithm, row.E, row.trial): row for row in run_sweep(config).rows}
        sub = run_sweep(config, cells=[("oracle", 4, 1), ("ifm", 3, 1)])
        for row in sub.rows:
            assert row == full[(row.algorithm, row.E, row.trial)]

    def test_single_cell(self):
        row = run_cell(small_sweep_config(), "oracle", 3, 0)
        assert row.E == 3
        assert row.wall_time_ms == 0.0

    def test_timing_is_opt_in(self):
        row = run_cell(small_sweep_config(timing=True), "oracle", 3, 0)
        assert row.wall_time_ms > 0.0

    def test_sampled_mode(self):
        config = small_sweep_config(algorithms=["ifm", "simple"], E_values=[4], trials=1, mode="sampled:2000")
        result = run_sweep(config)
        assert len(result.rows) == 2
        for row in result.rows:
            if not row.failed:
                assert 0.0 <= row.test_acc_mean <= 1.0

    @pytest.mark.slow
    def test_parallel_run_matches_serial(self, tmp_path):
        config = small_sweep_config(algorithms=["ifm", "erm", "oracle"], E_values=[3], fit_samples=100)
        serial = run_sweep(config, jobs=1).to_csv(tmp_path / "serial.csv").read_bytes()
        parallel = run_sweep(config, jobs=2).to_csv(tmp_path / "parallel.csv").read_bytes()
        assert serial == parallel

    @pytest.mark.slow
    def test_matching_methods_beat_erm_and_irm(self):
        config = SweepConfig(
            r=3, d_s=16, E_values=[9], trials=2, algorithms=["ifm", "coral", "erm", "irm", "oracle"]
        )
        result = run_sweep(config)
        assert not result.errors
        means = result.frame().groupby("algorithm")["test_acc_mean"].mean()
        assert means["ifm"] >= 0.9 * means["oracle"]
        assert means["coral"] >= 0.9 * means["oracle"]
        assert means["erm"] <= 0.65
        assert means["irm"] <= 0.65
        assert means["ifm"] >= means["coral"] >= max(means["erm"], means["irm"])

    @pytest.mark.slow
    def test_disjoint_coral_close_to_match_all(self):
        config = SweepConfig(r=3, d_s=16, E_values=[6], trials=2, algorithms=["coral", "coral_disjoint"])
        result = run_sweep(config)
        assert not result.errors
        means = result.frame().groupby("algorithm")["test_acc_mean"].mean()
        assert abs(means["coral"] - means["coral_disjoint"]) <= 0.05

    def test_disjoint_coral_with_too_few_environments_per_layer(self):
        result = run_sweep(small_sweep_config(algorithms=["coral_disjoint"], E_values=[4], trials=1))
        (row,) = result.rows
        assert row.error == "TooFewEnvironments"


class TestEmitPlot:
    def test_writes_svg_and_points(self, tmp_path):
        frame = result_frame([("ifm", 3, 1, 0.9), ("ifm", 3, 2, 0.8), ("erm", 3, 1, 0.4), ("erm", 3, 2, 0.3)])
        svg_path, csv_path = emit_plot(frame, tmp_path / "sweep.svg")
        svg = svg_path.read_text()
        assert svg.lstrip().startswith("<?xml") and "<svg" in svg
        assert ">ifm<" in svg and ">erm<" in svg
        points = pd.read_csv(csv_path)
        assert list(points["algorithm"]) == ["ifm", "erm"]
        assert points.loc[0, "mean"] == pytest.approx(0.85)
        assert points.loc[0, "std"] == pytest.approx(0.05)

    def test_output_is_reproducible(self, tmp_path):
        frame = result_frame([("ifm", 3, 1, 0.9), ("ifm", 4, 1, 0.95), ("oracle", 3, 1, 0.92), ("oracle", 4, 1, 0.92)])
        first, _ = emit_plot(frame, tmp_path / "a.svg")
        second, _ = emit_plot(frame, tmp_path / "b.svg")
        assert first.read_bytes() == second.read_bytes()

    def test_single_point(self, tmp_path):
        svg_path, csv_path = emit_plot(result_frame([("oracle", 5, 1, 0.92)]), tmp_path / "one.svg")
        assert len(pd.read_csv(csv_path)) == 1
        assert svg_path.exists()

    def test_nan_trial_leaves_a_gap(self):
        frame = result_frame([("irm", 3, 1, 0.5), ("irm", 4, 1, float("nan")), ("irm", 4, 2, 0.6), ("irm", 5, 1, 0.55)])
        points = plot_points(frame)
        assert math.isnan(points.loc[points["E"] == 4, "mean"].item())
        assert points.loc[points["E"] == 5, "mean"].item() == pytest.approx(0.55)

    def test_legend_ordered_by_final_accuracy(self):
        frame = result_frame(
            [
                ("erm", 3, 1, 0.6),
                ("erm", 9, 1, 0.3),
                ("ifm", 3, 1, 0.5),
                ("ifm", 9, 1, 0.92),
                ("coral", 3, 1, 0.7),
                ("coral", 9, 1, 0.85),
                ("irm", 9, 1, float("nan")),
            ]
        )
        assert legend_order(plot_points(frame)) == ["ifm", "coral", "erm", "irm"]

    def test_empty_results(self, tmp_path):
        with pytest.raises(EmptyResults):
            emit_plot(result_frame([]), tmp_path / "empty.svg")

    def test_unknown_metric(self, tmp_path):
        with pytest.raises(InvalidParameter):
            emit_plot(result_frame([("ifm", 3, 1, 0.9)]), tmp_path / "x.svg", PlotStyle(metric="auc"))


@pytest.fixture
def small_checks():
    return CheckConfig(
        erm=ErmBattery(seeds=2, r=2, d_s=6, E=3, n=500, optimizer=OptimizerConfig(max_iters=300)),
        irm=IrmBattery(dims=[2], instances=10, min_success_rate=0.5),
        shrink=ShrinkBattery(seeds=2, r=2, d_s=6, E=4),
    )


class TestRunChecks:
    def test_small_batteries_pass(self, small_checks):
        report = run_checks(small_checks)
        assert report.passed
        assert [b.name for b in report.batteries] == ["erm", "irm", "shrink"]
        assert report.battery("erm").summary["violated"] == 0
        assert report.battery("irm").summary["success_rate"]["2"] >= 0.5
        assert report.battery("shrink").summary["violations"] == 0
        assert report.battery("shrink").summary["instance_source"] == "generated"

    def test_buggy_evaluator_fails_the_erm_battery(self, small_checks):
        config = small_checks.model_copy(update={"irm": None, "shrink": None})

        def leaky_accuracy(classifier, spec, env):
            return 0.9 if env.flipped else 0.99

        report = run_checks(config, accuracy=leaky_accuracy, erm_fitter=lambda datasets: np.ones(datasets[0].dim))
        assert not report.passed
        assert report.battery("erm").summary["violated"] == 2

    def test_nothing_selected(self):
        with pytest.raises(NoChecksSelected):
            run_checks(CheckConfig(erm=None, irm=None, shrink=None))

    def test_report_serializes(self, small_checks):
        config = small_checks.model_copy(update={"erm": None, "shrink": None})
        summary = run_checks(config).summary()
        assert json.loads(json.dumps(summary))["batteries"]["irm"]["instances"] == 10


@pytest.mark.django_db
class TestExperimentRun:
    def test_lifecycle(self):
        run = ExperimentRun.start(RunKind.SWEEP, seed=3, config={"trials": 1}, output_dir="results")
        assert run.status == RunStatus.RUNNING
        assert run.duration is None
        run.mark_succeeded(["results/sweep.csv"], row_count=4, summary={"failed": 0})
        run.refresh_from_db()
        assert run.status == RunStatus.SUCCEEDED
        assert run.artifacts == ["results/sweep.csv"]
        assert run.duration.total_seconds() >= 0
        assert run.is_finished

    def test_mark_failed(self):
        run = ExperimentRunFactory()
        run.mark_failed("Divergence: loss became non-finite")
        run.refresh_from_db()
        assert run.status == RunStatus.FAILED
        assert run.error.startswith("Divergence")

    def test_queryset_filters(self):
        ExperimentRunFactory.create_batch(2, succeeded=True)
        ExperimentRunFactory(failed=True, kind=RunKind.CHECK)
        ExperimentRunFactory(kind=RunKind.GEN)
        assert ExperimentRun.objects.succeeded().count() == 2
        assert ExperimentRun.objects.failed().of_kind(RunKind.CHECK).count() == 1
        assert ExperimentRun.objects.of_kind(RunKind.GEN).count() == 1
        assert ExperimentRun.objects.all().running().count() == 1

    def test_str(self):
        run = ExperimentRunFactory(kind=RunKind.PLOT)
        assert str(run).startswith("Plot #")


def run_command(name, *args):
    out = StringIO()
    call_command(name, *args, stdout=out, stderr=StringIO())
    return out.getvalue()


def latest_run():
    return ExperimentRun.objects.order_by("-pk").first()


@pytest.mark.django_db
class TestCommands:
    def test_gen_writes_environments_and_samples(self, tmp_path):
        run_command("gen", "--out", str(tmp_path), "--E", "3", "--r", "1", "--d-s", "3", "--dump-samples", "5")
        spec, envs = load_environment_set(tmp_path / "environments.json")
        assert (spec.r, spec.d_s, len(envs)) == (1, 3, 3)
        for i in range(3):
            assert len(pd.read_csv(tmp_path / f"train_{i}.csv")) == 5
            assert (tmp_path / f"test_{i}.csv").exists()
        run = latest_run()
        assert run.kind == RunKind.GEN
        assert run.status == RunStatus.SUCCEEDED
        assert len(run.artifacts) == 7

    def test_seed_precedence(self, tmp_path, settings):
        config_path = tmp_path / "gen.json"
        config_path.write_text(json.dumps({"r": 1, "d_s": 2, "seed": 3}))

        def generated_seed(*extra):
            run_command("gen", "--out", str(tmp_path), "--config", str(config_path), "--E", "2", *extra)
            return load_environment_set(tmp_path / "environments.json")[0].seed

        assert generated_seed() == 3
        settings.IFM_LAB_SETTINGS = {**settings.IFM_LAB_SETTINGS, "SEED_OVERRIDE": 7}
        assert generated_seed() == 7
        assert generated_seed("--seed", "5") == 5
        assert latest_run().seed == 5

    def test_run_on_generated_environments(self, tmp_path):
        run_command("gen", "--out", str(tmp_path), "--E", "2", "--r", "1", "--d-s", "2")
        out = run_command(
            "run", "--algorithm", "oracle", "--envs", str(tmp_path / "environments.json"), "--out", str(tmp_path)
        )
        assert "oracle" in out
        report = json.loads((tmp_path / "run_oracle_report.json").read_text())
        assert report["test_acc_mean"] == pytest.approx(standard_normal_cdf(1.0), abs=1e-12)
        assert (tmp_path / "run_oracle.json").exists()

    def test_sweep_then_plot(self, tmp_path):
        config_path = tmp_path / "sweep.json"
        config_path.write_text(
            json.dumps({"r": 2, "d_s": 4, "E_values": [3], "trials": 1, "algorithms": ["oracle", "simple"]})
        )
        run_command("sweep", "--config", str(config_path), "--out", str(tmp_path))
        frame = pd.read_csv(tmp_path / "sweep.csv")
        assert list(frame.columns) == RESULT_COLUMNS
        assert sorted(frame["algorithm"]) == ["oracle", "simple"]
        assert (tmp_path / "sweep.svg").exists()
        summary = json.loads((tmp_path / "sweep_summary.json").read_text())
        assert summary["failed"] == 0
        assert latest_run().row_count == 2

        plots = tmp_path / "plots"
        run_command("plot", "--input", str(tmp_path / "sweep.csv"), "--out", str(plots), "--title", "Desk sweep")
        assert "Desk sweep" in (plots / "sweep.svg").read_text()
        assert latest_run().kind == RunKind.PLOT

    def test_sweep_rejects_invalid_config(self, tmp_path):
        config_path = tmp_path / "bad.json"
        config_path.write_text(json.dumps({"E_values": [1]}))
        with pytest.raises(CommandError):
            run_command("sweep", "--config", str(config_path), "--out", str(tmp_path))

    def test_sweep_rejects_invalid_mode(self, tmp_path):
        with pytest.raises(CommandError):
            run_command("sweep", "--mode", "sampled:x", "--out", str(tmp_path))

    def test_check_theory_report(self, tmp_path):
        config_path = tmp_path / "checks.json"
        irm = {"dims": [2], "instances": 5, "min_success_rate": 0.0}
        config_path.write_text(json.dumps({"erm": None, "shrink": None, "irm": irm}))
        run_command("check_theory", "--config", str(config_path), "--out", str(tmp_path), "--only", "irm")
        report = json.loads((tmp_path / "checks_report.json").read_text())
        assert list(report["batteries"]) == ["irm"]
        lines = (tmp_path / "checks_verdicts.jsonl").read_text().splitlines()
        assert len(lines) == 5
        assert json.loads(lines[0])["battery"] == "irm"

    def test_check_theory_without_batteries(self, tmp_path):
        config_path = tmp_path / "none.json"
        config_path.write_text(json.dumps({"erm": None, "irm": None, "shrink": None}))
        with pytest.raises(CommandError):
            run_command("check_theory", "--config", str(config_path), "--out", str(tmp_path))
        assert latest_run().status == RunStatus.FAILED

    def test_failed_battery_exits_nonzero(self, tmp_path, monkeypatch):
        failing = CheckReport(
            passed=False, seed=0, batteries=[BatteryReport(name="erm", passed=False, instances=1)]
        )
        monkeypatch.setattr(
            "experiments.management.commands.check_theory.run_checks", lambda config: failing
        )
        with pytest.raises(CommandError) as excinfo:
            run_command("check_theory", "--only", "erm", "--out", str(tmp_path))
        assert excinfo.value.returncode == 1
        assert latest_run().status == RunStatus.FAILED

    def test_metrics_textfile(self, tmp_path, settings):
        textfile = tmp_path / "ifm_lab.prom"
        settings.IFM_LAB_SETTINGS = {**settings.IFM_LAB_SETTINGS, "METRICS_TEXTFILE": str(textfile)}
        run_command("run", "--algorithm", "oracle", "--E", "2", "--out", str(tmp_path))
        assert "ifm_lab_fits_total" in textfile.read_text()

    def test_no_record(self, tmp_path):
        run_command("gen", "--out", str(tmp_path), "--E", "2", "--r", "1", "--d-s", "2", "--no-record")
        assert not ExperimentRun.objects.exists()
