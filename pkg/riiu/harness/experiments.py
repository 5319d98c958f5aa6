"""
    Experiment commands. Each writes its resolved configuration, CSV
    tables and SVG figures into one output directory and returns a summary
    mapping.
"""

import dataclasses
import logging
from pathlib import Path

from joblib import Parallel, delayed

from ..agents.training import repair_latency, train
from ..errors import NotApplicableError
from ..oracle import calibrate
from . import plotting, records
from .config import to_dict
from .verify import format_report, run_verification

__all__ = [
    "run_seeds",
    "cmd_train",
    "cmd_ablate_buffer",
    "cmd_ablate_meta",
    "cmd_sweep_bonus",
    "cmd_verify",
    "cmd_calibrate",
    "LATENCY_WINDOW",
]

logger = logging.getLogger(__name__)

LATENCY_WINDOW = 5


def _prepare(cfg, out=None):
    out = Path(out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    records.write_json(out / "config.json", to_dict(cfg))
    return out


def _train_one(train_cfg, stack_cfg, env_cfg, variant, seed, checkpoint):
    return train(dataclasses.replace(train_cfg, seed=seed), stack_cfg, env_cfg, variant, checkpoint)


def run_seeds(cfg, variant, stack_cfg=None, train_cfg=None, out=None):
    """Train ``variant`` once per seed, in parallel over ``cfg.n_jobs`` workers.

    Returns
    -------
    list of TrainResult
        In seed order.
    """
    stack_cfg = stack_cfg or cfg.stack
    train_cfg = train_cfg or cfg.train
    jobs = []
    for seed in cfg.seeds:
        checkpoint = None if out is None else Path(out) / ("checkpoint_%s_seed%d.npz" % (variant, seed))
        jobs.append(delayed(_train_one)(train_cfg, stack_cfg, cfg.env, variant, seed, checkpoint))
    return Parallel(n_jobs=cfg.n_jobs)(jobs)


def _latency(result, window=LATENCY_WINDOW):
    # per-step mean reward, smoothed over the last ``window`` environment steps
    steps = [s.global_step for s in result.steps]
    rewards = [s.mean_reward for s in result.steps]
    try:
        return repair_latency(steps, rewards, result.damage_step, window=window)
    except NotApplicableError:
        return None


def cmd_train(cfg, out=None):
    """Train ``cfg.variant`` on every seed.

    Writes ``episodes.csv``, ``steps.csv``, one checkpoint and one
    ``return_phi_seed<N>.svg`` per seed, plus ``return_phi.svg`` for the
    first seed.
    """
    out = _prepare(cfg, out)
    results = run_seeds(cfg, cfg.variant, out=out)
    records.write_episodes(out / "episodes.csv", results)
    records.write_steps(out / "steps.csv", results)
    for i, r in enumerate(results):
        plotting.plot_return_phi(r, cfg.env.damage_step, out_file=out / ("return_phi_seed%d.svg" % r.seed))
        if i == 0:
            plotting.plot_return_phi(r, cfg.env.damage_step, out_file=out / "return_phi.svg")
    summary = {
        "variant": cfg.variant,
        "median_final_return": records.median([records.final_return(r) for r in results]),
        "median_late_phi_percent": records.median([records.late_phase_phi(r) for r in results]),
        "median_repair_latency": records.median([_latency(r) for r in results]),
    }
    records.write_json(out / "summary.json", summary)
    return summary


def _compare(cfg, out, label_of, runs, filename, figure):
    rows, groups = [], {}
    for key, results in runs.items():
        groups[label_of(key)] = results
        for r in results:
            rows.append((key, r.seed, records.final_return(r), records.late_phase_phi(r), _latency(r), LATENCY_WINDOW))
    records.write_csv(
        out / filename,
        ("setting", "seed", "final_return", "late_phi_percent", "repair_latency", "smoothing_window"),
        rows,
    )
    plotting.plot_comparison(groups, cfg.env.damage_step, out_file=out / figure)
    return {
        label_of(key): {
            "median_final_return": records.median([records.final_return(r) for r in results]),
            "median_late_phi_percent": records.median([records.late_phase_phi(r) for r in results]),
            "median_repair_latency": records.median([_latency(r) for r in results]),
        }
        for key, results in runs.items()
    }


def cmd_ablate_buffer(cfg, out=None):
    """Train the RIIU stack for every window length in ``cfg.buffers``."""
    out = _prepare(cfg, out)
    runs = {}
    for buf_len in cfg.buffers:
        stack = dataclasses.replace(cfg.stack, cell=dataclasses.replace(cfg.stack.cell, buf_len=buf_len))
        runs[buf_len] = run_seeds(cfg, "riiu", stack_cfg=stack)
        records.write_episodes(out / ("episodes_buf%d.csv" % buf_len), runs[buf_len], tag="riiu_buf%d" % buf_len)
    summary = _compare(cfg, out, lambda b: "buffer %d" % b, runs, "buffer_ablation.csv", "buffer_ablation.svg")
    records.write_json(out / "summary.json", summary)
    return summary


def cmd_ablate_meta(cfg, out=None):
    """Paired runs of the full unit and the unit without its reflexive network."""
    out = _prepare(cfg, out)
    runs = {variant: run_seeds(cfg, variant) for variant in ("riiu", "no_meta")}
    for variant, results in runs.items():
        records.write_episodes(out / ("episodes_%s.csv" % variant), results)

    latency_rows = []
    for full, ablated in zip(runs["riiu"], runs["no_meta"]):
        lat_full, lat_ablated = _latency(full), _latency(ablated)
        phi_full, phi_ablated = records.late_phase_phi(full), records.late_phase_phi(ablated)
        latency_rows.append(
            (
                full.seed,
                lat_full,
                lat_ablated,
                lat_ablated / lat_full if lat_full and lat_ablated is not None else None,
                phi_full,
                phi_ablated,
                phi_full / phi_ablated if phi_ablated > 0 else None,
                LATENCY_WINDOW,
            )
        )
    records.write_csv(
        out / "latency.csv",
        (
            "seed",
            "latency_full",
            "latency_no_meta",
            "latency_ratio",
            "late_phi_full",
            "late_phi_no_meta",
            "phi_ratio",
            "smoothing_window",
        ),
        latency_rows,
    )
    summary = _compare(cfg, out, str, runs, "meta_ablation.csv", "meta_ablation.svg")
    summary["median_latency_ratio"] = records.median([row[3] for row in latency_rows])
    summary["median_phi_ratio"] = records.median([row[6] for row in latency_rows])
    records.write_json(out / "summary.json", summary)
    return summary


def cmd_sweep_bonus(cfg, out=None):
    """Train the RIIU stack for every weight in ``cfg.bonus_weights``."""
    out = _prepare(cfg, out)
    runs = {}
    for weight in cfg.bonus_weights:
        train_cfg = dataclasses.replace(cfg.train, phi_bonus_weight=weight)
        runs[weight] = run_seeds(cfg, "riiu", train_cfg=train_cfg)
    summary = _compare(cfg, out, lambda w: "bonus %g" % w, runs, "bonus_sweep.csv", "bonus_sweep.svg")
    records.write_json(out / "summary.json", summary)
    return summary


def cmd_verify(cfg, out=None, grad_rule=None):
    """Run the property suites; returns the list of suite results."""
    out = _prepare(cfg, out)
    results = run_verification(cfg.verify, grad_rule=grad_rule)
    report = format_report(results)
    (out / "verify_report.txt").write_text(report)
    records.write_csv(
        out / "verify.csv",
        ("suite", "passed", "checked", "failed", "tolerance", "worst", "required_rate"),
        [(r.name, r.passed, r.checked, r.failed, r.tolerance, r.worst, r.required_rate) for r in results],
    )
    logger.info("verification report:\n%s", report)
    return results


def cmd_calibrate(cfg, out=None):
    """Correlate Auto-Phi with the Gaussian oracle; writes ``scatter.csv``."""
    out = _prepare(cfg, out)
    calib = dataclasses.replace(cfg.calibrate, n_jobs=cfg.n_jobs)
    report = calibrate(calib)
    records.write_csv(
        out / "scatter.csv",
        ("system_id", "oracle_phi", "auto_phi_rel", "dim"),
        [(system_id, oracle, auto, dim) for system_id, dim, oracle, auto in report.rows],
    )
    plotting.plot_calibration(report.rows, report.spearman, out_file=out / "calibration.svg")
    summary = {
        "n_systems": len(report.rows),
        "spearman": report.spearman,
        "pvalue": report.pvalue,
        "oracle": "gaussian minimum-information bipartition (normalised by smaller side)",
    }
    records.write_json(out / "summary.json", summary)
    return summary
