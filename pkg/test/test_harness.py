import csv
import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from riiu.agents.training import EpisodeLog, StepLog, TrainResult
from riiu import autophi
from riiu.autophi import grad_auto_phi
from riiu.errors import DivergenceError
from riiu.harness import experiments, records
from riiu.harness.cli import EXIT_DIVERGENCE, EXIT_OK, EXIT_PROPERTY, EXIT_USAGE, main
from riiu.harness.config import RunConfig, from_dict, load_run_config, to_dict
from riiu.harness.plotting import moving_average, plot_calibration, plot_return_phi
from riiu.harness.verify import (
    VerifyConfig,
    check_end_to_end,
    check_primitives,
    format_report,
    run_verification,
    suite_compositionality,
    suite_differentiability,
    suite_plasticity,
    suite_reduction,
)

SMALL_VERIFY = {
    "episode_weights": 3,
    "compose_pairs": 10,
    "ascent_trials": 20,
    "ascent_dim": 12,
    "ascent_samples": 32,
    "ascent_rank": 4,
    "reduction_steps": 5,
}

SMALL_RUN = {
    "seeds": [1],
    "env": {"max_len": 4, "damage_step": 6, "n_envs": 2},
    "stack": {"layers": 2, "topk": 4, "cell": {"h_dim": 8, "mu_dim": 4, "buf_len": 8, "phi": {"rank": 2}}},
    "train": {"episodes": 3, "n_envs": 2},
    "calibrate": {"n_systems": 30, "min_dim": 4, "max_dim": 5},
    "verify": SMALL_VERIFY,
    "buffers": [4, 8],
    "bonus_weights": [0.0, 0.05],
}


def negated_rule(samples, current_index, cfg):
    return -grad_auto_phi(samples, current_index, cfg)


def _read_csv(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


def _result(phis, returns=None, variant="riiu", seed=1):
    returns = returns or [0.5] * len(phis)
    episodes = [
        EpisodeLog(i + 1, r, p, 4 * i, 4 * (i + 1), False) for i, (r, p) in enumerate(zip(returns, phis))
    ]
    return TrainResult(variant, seed, episodes, [], {}, 50)


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps(SMALL_RUN))
    return path


class TestRunConfig:
    def test_defaults(self):
        cfg = RunConfig()
        assert cfg.seeds == (1, 2, 3, 4, 5)
        assert cfg.buffers == (8, 32, 64)
        assert cfg.train.episodes == 150
        assert cfg.env.damage_step == 50
        assert cfg.stack.layers == 4

    def test_partial(self):
        cfg = from_dict({"train": {"episodes": 7}, "stack": {"cell": {"buf_len": 8}}})
        assert cfg.train.episodes == 7
        assert cfg.train.lr == 5e-4
        assert cfg.stack.cell.buf_len == 8
        assert cfg.stack.cell.h_dim == 32

    def test_round_trip(self):
        cfg = from_dict(SMALL_RUN)
        assert from_dict(to_dict(cfg)) == cfg
        json.dumps(to_dict(cfg))

    def test_unknown_keys(self):
        with pytest.raises(ValueError, match="bogus"):
            from_dict({"bogus": 1})
        with pytest.raises(ValueError, match="stack.cell"):
            from_dict({"stack": {"cell": {"width": 3}}})

    def test_invalid_values(self):
        with pytest.raises(ValueError):
            from_dict({"variant": "lstm"})
        with pytest.raises(ValueError):
            from_dict({"seeds": []})
        with pytest.raises(ValueError):
            from_dict({"train": {"gamma": 2.0}})

    def test_load_with_overrides(self, config_file):
        cfg = load_run_config(config_file, seeds=(4, 5), out="elsewhere", episodes=2, n_jobs=None)
        assert cfg.seeds == (4, 5)
        assert cfg.out == "elsewhere"
        assert cfg.train.episodes == 2
        assert cfg.n_jobs == 1
        assert cfg.stack.cell.h_dim == 8

    def test_bad_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ValueError):
            load_run_config(path)


class TestRecords:
    def test_write_csv(self, tmp_path):
        path = records.write_csv(tmp_path / "x.csv", ("a", "b", "c", "d"), [(1, 0.1, True, None)])
        assert path.read_text() == "a,b,c,d\n1,0.1,1,\n"

    def test_row_mismatch(self, tmp_path):
        with pytest.raises(ValueError):
            records.write_csv(tmp_path / "x.csv", ("a", "b"), [(1,)])

    def test_episodes_schema(self, tmp_path):
        path = records.write_episodes(tmp_path / "episodes.csv", [_result([1.0, 2.0])])
        rows = _read_csv(path)
        assert rows[0] == ["variant", "seed", "episode", "mean_return", "phi_rel_percent"]
        assert rows[1] == ["riiu", "1", "1", "0.5", "1.0"]
        assert len(rows) == 3

    def test_json(self, tmp_path):
        path = records.write_json(tmp_path / "s.json", {"b": 1, "a": None})
        assert json.loads(path.read_text()) == {"a": None, "b": 1}

    def test_summaries(self):
        result = _result([0.0, 0.0, 3.0, 0.0, 6.0, 9.0], returns=[0.1, 0.2, 0.3, 0.4, 0.5, 0.7])
        assert records.late_phase_phi(result) == pytest.approx(7.5)
        assert records.final_return(result) == pytest.approx(0.7)
        assert records.median([3.0, None, 1.0, 2.0]) == 2.0
        assert records.median([None]) is None


class TestPlotting:
    def test_moving_average(self):
        np.testing.assert_allclose(moving_average([1.0, 2.0, 3.0, 4.0], 2), [1.0, 1.5, 2.5, 3.5])
        np.testing.assert_allclose(moving_average([2.0, 4.0], 10), [2.0, 3.0])

    def test_return_phi_svg(self, tmp_path):
        out = tmp_path / "fig.svg"
        plot_return_phi(_result([0.1, 0.2, 0.3]), damage_step=6, out_file=out)
        assert ET.parse(out).getroot().tag.endswith("svg")

    def test_calibration_svg(self, tmp_path):
        out = tmp_path / "cal.svg"
        plot_calibration([(0, 4, 0.1, 0.2), (1, 4, 0.3, 0.1)], spearman=-1.0, out_file=out)
        assert ET.parse(out).getroot().tag.endswith("svg")


class TestVerify:
    def setup_method(self):
        self.cfg = VerifyConfig(**SMALL_VERIFY)

    def test_primitives(self):
        errors = check_primitives(self.cfg)
        assert set(errors) >= {"matmul", "linear", "gelu", "concat", "log_prob", "auto_phi"}
        assert max(errors.values()) < 1e-6

    def test_end_to_end(self):
        error, checks = check_end_to_end(self.cfg)
        assert len(checks) == 3
        assert error < 1e-3
        assert error == max(c[4] for c in checks)
        assert any(abs(c[2]) > 0 for c in checks)
        for name, index, tape, fd, err in checks:
            assert err == abs(tape - fd) / max(abs(tape), abs(fd), self.cfg.episode_floor)

    def test_end_to_end_floor(self):
        _, coarse = check_end_to_end(VerifyConfig(**dict(SMALL_VERIFY, episode_floor=1e3)))
        _, fine = check_end_to_end(self.cfg)
        for c, f in zip(coarse, fine):
            assert c[:4] == f[:4]
            assert c[4] <= f[4]

    def test_negated_rule_is_caught(self):
        assert check_primitives(self.cfg, grad_rule=negated_rule)["auto_phi"] > 1.0
        result = suite_differentiability(self.cfg, grad_rule=negated_rule)
        assert not result.passed
        assert any("auto_phi" in c for c in result.counterexamples)

    def test_compositionality(self):
        result = suite_compositionality(self.cfg)
        assert result.checked == 40
        assert result.worst < 1e-9
        assert result.passed, result.counterexamples

    def test_compositionality_catches_consistent_block_error(self, monkeypatch):
        # inflating every block residual keeps shares and partitioned value consistent
        original = autophi._spectral_residual

        def inflated(sigma, rank, method):
            residual, norm, gap, lam = original(sigma, rank, method)
            return residual, 1.01 * norm, gap, lam

        monkeypatch.setattr(autophi, "_spectral_residual", inflated)
        result = suite_compositionality(self.cfg)
        assert not result.passed
        assert any("joint eigenbasis" in c for c in result.counterexamples)
        assert not any("sum_of_norms shares" in c for c in result.counterexamples)

    def test_plasticity(self):
        result = suite_plasticity(self.cfg)
        assert result.checked > 0
        assert result.passed, result.counterexamples

    def test_reduction(self):
        result = suite_reduction(self.cfg)
        assert result.checked == 5
        assert result.passed

    def test_report(self):
        report = format_report(run_verification(self.cfg))
        for name in ("differentiability", "compositionality", "plasticity", "reduction"):
            assert name in report
        assert "checked=" in report
        assert "FAIL" not in report

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            VerifyConfig(ascent_rank=48, ascent_dim=48)


class TestExperiments:
    def test_latency_uses_step_log(self):
        rewards = {10: 0.125, 20: 0.125, 30: 0.125, 40: 0.125, 63: 0.125, 70: 0.5}
        steps = [StepLog(t, rewards.get(t, 0.0), 0.0, t >= 50) for t in range(1, 81)]
        result = TrainResult("riiu", 1, [], steps, {}, 50)
        assert experiments._latency(result) == 13
        assert experiments._latency(result, window=1) == 13
        assert experiments._latency(TrainResult("riiu", 1, [], steps[:40], {}, 50)) is None

    def test_train(self, tmp_path):
        cfg = from_dict(dict(SMALL_RUN, seeds=[1, 2]))
        summary = experiments.cmd_train(cfg, out=tmp_path)
        rows = _read_csv(tmp_path / "episodes.csv")
        assert len(rows) == 1 + 2 * 3
        assert _read_csv(tmp_path / "steps.csv")[0] == list(records.STEP_FIELDS)
        assert (tmp_path / "checkpoint_riiu_seed1.npz").exists()
        assert ET.parse(tmp_path / "return_phi.svg").getroot().tag.endswith("svg")
        assert json.loads((tmp_path / "config.json").read_text()) == to_dict(cfg)
        assert summary["variant"] == "riiu"

    def test_train_reproducible(self, tmp_path):
        cfg = from_dict(SMALL_RUN)
        experiments.cmd_train(cfg, out=tmp_path / "a")
        experiments.cmd_train(cfg, out=tmp_path / "b")
        for name in ("episodes.csv", "steps.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_ablate_meta(self, tmp_path):
        summary = experiments.cmd_ablate_meta(from_dict(SMALL_RUN), out=tmp_path)
        header = _read_csv(tmp_path / "latency.csv")[0]
        assert "smoothing_window" in header
        assert "latency_ratio" in header
        assert {"riiu", "no_meta", "median_latency_ratio", "median_phi_ratio"} <= set(summary)
        assert (tmp_path / "meta_ablation.svg").exists()

    def test_ablate_buffer(self, tmp_path):
        summary = experiments.cmd_ablate_buffer(from_dict(SMALL_RUN), out=tmp_path)
        assert set(summary) == {"buffer 4", "buffer 8"}
        assert len(_read_csv(tmp_path / "buffer_ablation.csv")) == 3
        assert (tmp_path / "episodes_buf8.csv").exists()

    def test_sweep_bonus(self, tmp_path):
        summary = experiments.cmd_sweep_bonus(from_dict(SMALL_RUN), out=tmp_path)
        assert set(summary) == {"bonus 0", "bonus 0.05"}

    def test_calibrate(self, tmp_path):
        summary = experiments.cmd_calibrate(from_dict(SMALL_RUN), out=tmp_path)
        rows = _read_csv(tmp_path / "scatter.csv")
        assert rows[0][:3] == ["system_id", "oracle_phi", "auto_phi_rel"]
        assert len(rows) == 1 + 30
        assert summary["n_systems"] == 30
        again = experiments.cmd_calibrate(from_dict(SMALL_RUN), out=tmp_path / "again")
        assert again["spearman"] == summary["spearman"]


class TestCli:
    def test_verify(self, tmp_path, config_file):
        assert main(["verify", "--config", str(config_file), "--out", str(tmp_path), "-q"]) == EXIT_OK
        assert "PASS" in (tmp_path / "verify_report.txt").read_text()
        assert (tmp_path / "config.json").exists()

    def test_verify_failure_exit_code(self, tmp_path, config_file, monkeypatch):
        real = experiments.run_verification
        monkeypatch.setattr(
            experiments, "run_verification", lambda cfg, grad_rule=None: real(cfg, grad_rule=negated_rule)
        )
        assert main(["verify", "--config", str(config_file), "--out", str(tmp_path), "-q"]) == EXIT_PROPERTY
        assert "FAIL" in (tmp_path / "verify_report.txt").read_text()

    def test_train(self, tmp_path, config_file):
        code = main(["train", "--config", str(config_file), "--out", str(tmp_path), "--seed", "2", "--episodes", "2"])
        assert code == EXIT_OK
        rows = _read_csv(tmp_path / "episodes.csv")
        assert len(rows) == 3
        assert {r[1] for r in rows[1:]} == {"2"}
        resolved = json.loads((tmp_path / "config.json").read_text())
        assert resolved["seeds"] == [2]
        assert resolved["train"]["episodes"] == 2

    def test_usage_errors(self, tmp_path):
        assert main([]) == EXIT_USAGE
        assert main(["bogus"]) == EXIT_USAGE
        assert main(["train", "--seed", "one"]) == EXIT_USAGE

    def test_config_errors(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"unknown": 1}))
        assert main(["train", "--config", str(bad)]) == EXIT_USAGE
        assert main(["train", "--config", str(tmp_path / "missing.json")]) == EXIT_USAGE

    def test_divergence_exit_code(self, tmp_path, config_file, monkeypatch):
        def diverge(cfg):
            raise DivergenceError("loss became nan")

        monkeypatch.setattr(experiments, "cmd_train", diverge)
        assert main(["train", "--config", str(config_file), "--out", str(tmp_path)]) == EXIT_DIVERGENCE
