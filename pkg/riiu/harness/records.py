"""
    CSV and JSON outputs of the experiment commands.

    Floats are written with ``repr`` so files are locale independent and
    reproduce bit for bit.
"""

import csv
import json
import logging
from pathlib import Path

import numpy as np

__all__ = [
    "EPISODE_FIELDS",
    "STEP_FIELDS",
    "write_csv",
    "write_episodes",
    "write_steps",
    "write_json",
    "late_phase_phi",
    "final_return",
    "median",
]

logger = logging.getLogger(__name__)

EPISODE_FIELDS = ("variant", "seed", "episode", "mean_return", "phi_rel_percent")
STEP_FIELDS = ("variant", "seed", "global_step", "mean_reward", "phi_rel_percent", "damaged")


def _cell(value):
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if value is None:
        return ""
    return str(value)


def write_csv(path, header, rows):
    """Write ``rows`` under ``header``; returns the path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            if len(row) != len(header):
                raise ValueError("row %r does not match header %r" % (row, header))
            writer.writerow([_cell(v) for v in row])
    logger.info("wrote %s", path)
    return path


def write_episodes(path, results, tag=None):
    """One row per episode of every :class:`riiu.agents.training.TrainResult`."""
    rows = []
    for r in results:
        for e in r.episodes:
            rows.append((tag or r.variant, r.seed, e.episode, e.mean_return, e.phi_rel_percent))
    return write_csv(path, EPISODE_FIELDS, rows)


def write_steps(path, results, tag=None):
    rows = []
    for r in results:
        for s in r.steps:
            rows.append((tag or r.variant, r.seed, s.global_step, s.mean_reward, s.phi_rel_percent, s.damaged))
    return write_csv(path, STEP_FIELDS, rows)


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    logger.info("wrote %s", path)
    return path


def late_phase_phi(result, late_fraction=1.0 / 3.0):
    """Mean Auto-Phi percentage over the final third of the episodes."""
    rows = result.episodes
    n_late = max(1, int(round(late_fraction * len(rows))))
    return float(np.mean([e.phi_rel_percent for e in rows[-n_late:]]))


def final_return(result):
    return float(result.episodes[-1].mean_return)


def median(values):
    values = [v for v in values if v is not None]
    return float(np.median(values)) if values else None
