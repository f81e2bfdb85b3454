"""
Prometheus metrics for the IFM lab

This module defines the counters and histograms the lab records while it runs:
- Learner fit counts and durations
- Matcher feasibility probes
- Sweep cell outcomes
- Theory check outcomes

Metrics live in a dedicated registry and can be written to a node-exporter
textfile after a management command finishes.
"""

import functools
import logging
import time

from prometheus_client import CollectorRegistry, Counter, Histogram, write_to_textfile

logger = logging.getLogger(__name__)

REGISTRY = CollectorRegistry(auto_describe=True)

# =============================================================================
# LEARNER METRICS
# =============================================================================

fits_total = Counter(
    "ifm_lab_fits_total",
    "Number of learner fits",
    ["algorithm", "status"],
    registry=REGISTRY,
)

fit_duration = Histogram(
    "ifm_lab_fit_duration_seconds",
    "Wall time of learner fits",
    ["algorithm"],
    buckets=[0.001, 0.01, 0.05, 0.1, 0.5, 1.0, 5.0, 30.0, 120.0],
    registry=REGISTRY,
)

# =============================================================================
# MATCHER METRICS
# =============================================================================

matcher_probes_total = Counter(
    "ifm_lab_matcher_probes_total",
    "Feasibility probes made by the max-dimension matcher",
    ["method", "outcome"],
    registry=REGISTRY,
)

# =============================================================================
# EXPERIMENT METRICS
# =============================================================================

sweep_cells_total = Counter(
    "ifm_lab_sweep_cells_total",
    "Sweep cells by outcome",
    ["status"],
    registry=REGISTRY,
)

theory_checks_total = Counter(
    "ifm_lab_theory_checks_total",
    "Theory check instances by outcome",
    ["check", "outcome"],
    registry=REGISTRY,
)


def monitor_fit(algorithm: str):
    """
    Count and time a learner fit.

    Failures are counted with status "error" and re-raised.
    """

    def decorator(func):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            start_time = time.perf_counter()
            try:
                result = func(*args, **kwargs)
            except Exception as e:
                fits_total.labels(algorithm=algorithm, status="error").inc()
                logger.warning(f"{algorithm} fit failed: {e}")
                raise
            finally:
                fit_duration.labels(algorithm=algorithm).observe(time.perf_counter() - start_time)
            fits_total.labels(algorithm=algorithm, status="ok").inc()
            return result

        return wrapper

    return decorator


def track_matcher_probe(method: str, feasible: bool) -> None:
    matcher_probes_total.labels(method=method, outcome="feasible" if feasible else "infeasible").inc()


def track_sweep_cell(status: str) -> None:
    sweep_cells_total.labels(status=status).inc()


def track_theory_check(check: str, outcome: str) -> None:
    theory_checks_total.labels(check=check, outcome=outcome).inc()


def export_metrics(path) -> None:
    """Write the registry in text exposition format; no-op without a path"""
    if not path:
        return
    try:
        write_to_textfile(str(path), REGISTRY)
        logger.info(f"Metrics written to {path}")
    except OSError as e:
        logger.error(f"Could not write metrics to {path}: {e}")
