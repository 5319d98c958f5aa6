"""
    Static SVG figures of training runs and the calibration study.
"""

import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = [
    "moving_average",
    "plot_return_phi",
    "plot_comparison",
    "plot_calibration",
    "save_svg",
]

logger = logging.getLogger(__name__)

RETURN_COLOR = "tab:blue"
PHI_COLOR = "tab:orange"


def moving_average(values, window=10):
    """Trailing mean over up to ``window`` preceding entries."""
    values = np.asarray(values, dtype=np.float64)
    csum = np.concatenate([[0.0], np.cumsum(values)])
    idx = np.arange(1, len(values) + 1)
    lo = np.maximum(idx - window, 0)
    return (csum[idx] - csum[lo]) / (idx - lo)


def save_svg(fig, out_file):
    """Write ``fig`` as a self-contained, reproducible SVG and close it."""
    out_file = Path(out_file)
    out_file.parent.mkdir(parents=True, exist_ok=True)
    with matplotlib.rc_context({"svg.hashsalt": "riiu", "svg.fonttype": "path"}):
        fig.savefig(out_file, format="svg", metadata={"Date": None})
    plt.close(fig)
    logger.info("wrote %s", out_file)
    return out_file


def plot_return_phi(result, damage_step=None, window=10, ax=None, out_file=None):
    """Episode return and Auto-Phi against environment steps.

    Both series are drawn raw (thin) and as a ``window``-episode moving
    average; a dashed vertical line marks the actuator failure.

    Parameters
    ----------
    result : riiu.agents.training.TrainResult
    damage_step : int, optional
    window : int, default 10
    ax : matplotlib.axes.Axes, optional
    out_file : str or pathlib.Path, optional
        When given, the figure is written there as SVG.
    """
    if ax is None:
        fig, ax = plt.subplots(figsize=(7, 3.5))
    else:
        fig = ax.figure
    steps = [e.global_step_end for e in result.episodes]
    returns = [e.mean_return for e in result.episodes]
    phis = [e.phi_rel_percent for e in result.episodes]

    ax.plot(steps, returns, color=RETURN_COLOR, alpha=0.3, linewidth=0.8)
    ax.plot(steps, moving_average(returns, window), color=RETURN_COLOR, label="return")
    ax.set_xlabel("environment step")
    ax.set_ylabel("mean return", color=RETURN_COLOR)

    twin = ax.twinx()
    twin.plot(steps, phis, color=PHI_COLOR, alpha=0.3, linewidth=0.8)
    twin.plot(steps, moving_average(phis, window), color=PHI_COLOR, label="Auto-Phi (%)")
    twin.set_ylabel("Auto-Phi (%)", color=PHI_COLOR)

    if damage_step is not None:
        ax.axvline(damage_step, color="k", linestyle="--", linewidth=1.0, label="actuator failure")
    ax.set_title("%s, seed %d" % (result.variant, result.seed))
    fig.tight_layout()
    if out_file is not None:
        save_svg(fig, out_file)
    return ax


def plot_comparison(groups, damage_step=None, window=10, out_file=None):
    """Two panels comparing return and Auto-Phi across labelled groups of runs.

    Parameters
    ----------
    groups : dict of str to list of TrainResult
        Runs of each label are averaged episode by episode.
    """
    fig, (ax_ret, ax_phi) = plt.subplots(1, 2, figsize=(10, 3.5))
    for label, results in groups.items():
        n = min(len(r.episodes) for r in results)
        steps = np.mean([[e.global_step_end for e in r.episodes[:n]] for r in results], axis=0)
        returns = np.mean([[e.mean_return for e in r.episodes[:n]] for r in results], axis=0)
        phis = np.mean([[e.phi_rel_percent for e in r.episodes[:n]] for r in results], axis=0)
        ax_ret.plot(steps, moving_average(returns, window), label=label)
        ax_phi.plot(steps, moving_average(phis, window), label=label)
    for ax, ylabel in ((ax_ret, "mean return"), (ax_phi, "Auto-Phi (%)")):
        if damage_step is not None:
            ax.axvline(damage_step, color="k", linestyle="--", linewidth=1.0)
        ax.set_xlabel("environment step")
        ax.set_ylabel(ylabel)
        ax.legend()
    fig.tight_layout()
    if out_file is not None:
        save_svg(fig, out_file)
    return fig


def plot_calibration(rows, spearman=None, ax=None, out_file=None):
    """Scatter of oracle integration against Auto-Phi, one point per system."""
    if ax is None:
        fig, ax = plt.subplots(figsize=(4.5, 4))
    else:
        fig = ax.figure
    oracle = [r[2] for r in rows]
    auto = [r[3] for r in rows]
    ax.scatter(oracle, auto, s=12)
    ax.set_xlabel("Gaussian minimum-information bipartition")
    ax.set_ylabel("Auto-Phi")
    if spearman is not None:
        ax.set_title("Spearman %.3f" % spearman)
    fig.tight_layout()
    if out_file is not None:
        save_svg(fig, out_file)
    return ax
