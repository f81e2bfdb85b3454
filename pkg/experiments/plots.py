"""
Static SVG plots of sweep results: one curve per algorithm, mean over trials with a
+-1 std band. Output is reproducible byte for byte (no timestamps, fixed hash salt).
"""

import logging
from pathlib import Path
from typing import Tuple, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from core.exceptions import EmptyResults, InvalidParameter  # noqa: E402

from .serializers import FLOAT_FORMAT, PlotStyle, SweepResult  # noqa: E402

logger = logging.getLogger(__name__)

SVG_RC = {
    "svg.fonttype": "none",
    "svg.hashsalt": "ifm-lab",
    "path.simplify": False,
}


def _nan_mean(series: pd.Series) -> float:
    return series.mean(skipna=False)


def _nan_std(series: pd.Series) -> float:
    return series.std(ddof=0, skipna=False)


def plot_points(frame: pd.DataFrame, metric: str = "test_acc_mean") -> pd.DataFrame:
    """
    Mean and std of `metric` per (algorithm, E). A NaN trial makes the point NaN so the
    curve shows a gap.
    """
    if metric not in frame.columns:
        raise InvalidParameter(f"unknown metric column {metric!r}")
    grouped = frame.groupby(["algorithm", "E"], sort=True)[metric]
    points = grouped.agg(mean=_nan_mean, std=_nan_std, trials="size").reset_index()
    return points


def legend_order(points: pd.DataFrame) -> list:
    """Algorithms sorted by their mean at the largest E, best first; NaN sorts last"""
    final = points.sort_values("E").groupby("algorithm", sort=True).tail(1)
    keyed = [(-(m if np.isfinite(m) else -np.inf), a) for a, m in zip(final["algorithm"], final["mean"])]
    return [algorithm for _, algorithm in sorted(keyed)]


def emit_plot(
    results: Union[SweepResult, pd.DataFrame],
    path,
    style: PlotStyle = PlotStyle(),
) -> Tuple[Path, Path]:
    """Writes <path> (SVG) and <path stem>_points.csv; returns both paths"""
    frame = results.frame() if isinstance(results, SweepResult) else results
    if frame is None or len(frame) == 0:
        raise EmptyResults("no result rows to plot")

    points = plot_points(frame, style.metric)
    order = legend_order(points)

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    csv_path = path.with_name(f"{path.stem}_points.csv")

    with plt.rc_context(SVG_RC):
        fig, ax = plt.subplots(figsize=(style.width, style.height))
        for algorithm in order:
            curve = points[points["algorithm"] == algorithm]
            x = curve["E"].to_numpy(dtype=float)
            mean = curve["mean"].to_numpy(dtype=float)
            std = curve["std"].to_numpy(dtype=float)
            (line,) = ax.plot(x, mean, marker="o", label=algorithm)
            ax.fill_between(x, mean - std, mean + std, color=line.get_color(), alpha=style.band_alpha, linewidth=0)
        ax.set_title(style.title)
        ax.set_xlabel(style.xlabel)
        ax.set_ylabel(style.ylabel)
        ax.grid(True, alpha=0.3)
        ax.legend(loc="best")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)

    points["algorithm"] = pd.Categorical(points["algorithm"], categories=order, ordered=True)
    points.sort_values(["algorithm", "E"]).to_csv(
        csv_path, index=False, float_format=FLOAT_FORMAT, na_rep="nan", lineterminator="\n"
    )
    logger.info(f"Plot with {len(order)} curves written to {path}")
    return path, csv_path
