import numpy as np
import pytest

from riiu import autodiff as ad
from riiu.agents import (
    GruAgent,
    MlpAgent,
    RiiuStackAgent,
    StackConfig,
    TrainConfig,
    Trajectory,
    discounted_returns,
    evaluate_greedy,
    loss,
    make_agent,
    repair_latency,
    rollout,
    stack_forward,
    train,
    workspace_update,
)
from riiu.agents import training
from riiu.autophi import PhiConfig
from riiu.cells import CellConfig, load_checkpoint, save_checkpoint
from riiu.errors import DivergenceError, NotApplicableError
from riiu.gridworld import EnvConfig, VecEnv
from riiu.linalg import RngStream


@pytest.fixture
def stack_cfg():
    cell = CellConfig(in_dim=18, h_dim=8, mu_dim=4, buf_len=8, phi=PhiConfig(rank=2))
    return StackConfig(layers=2, cell=cell, topk=4)


@pytest.fixture
def env_cfg():
    return EnvConfig(max_len=4, damage_step=6, n_envs=2)


@pytest.fixture
def train_cfg():
    return TrainConfig(episodes=3, n_envs=2, log_every=1)


class TestStackConfig:
    def test_reference_count(self):
        assert StackConfig().param_count() == 30852

    def test_layer_inputs(self):
        cfg = StackConfig()
        assert cfg.layer_config(0).in_dim == 18
        assert cfg.layer_config(3).in_dim == 32

    def test_invalid(self):
        with pytest.raises(ValueError):
            StackConfig(topk=33)
        with pytest.raises(ValueError):
            StackConfig(layers=0)


class TestWorkspace:
    def test_mean_then_topk(self):
        broadcasts = [np.array([[1.0, -3.0, 2.0, 0.0]]), np.array([[1.0, 1.0, 0.0, 0.0]])]
        np.testing.assert_array_equal(workspace_update(broadcasts, topk=2), [[1.0, -1.0, 0.0, 0.0]])

    def test_topk_zero(self):
        out = workspace_update([np.ones((2, 3))], topk=0)
        np.testing.assert_array_equal(out, np.zeros((2, 3)))

    def test_topk_all(self):
        b = np.array([[1.0, -2.0, 3.0]])
        np.testing.assert_array_equal(workspace_update([b], topk=3), b)

    def test_empty(self):
        with pytest.raises(ValueError):
            workspace_update([])

    def test_mask_recorded(self):
        ledger = ad.StopGradientLedger()
        workspace_update([np.array([[3.0, 1.0]])], topk=1, ledger=ledger)
        np.testing.assert_array_equal(ledger.entries[0], [[1.0, 0.0]])


class TestRiiuStackAgent:
    def test_param_count(self, stack_cfg):
        agent = RiiuStackAgent(stack_cfg)
        params = agent.init_params(RngStream(0))
        assert agent.param_count(params) == stack_cfg.param_count()
        assert "layer1.W_x" in params
        assert params["layer1.W_x"].shape == (8, 8)

    def test_forward_shapes(self, stack_cfg):
        agent = RiiuStackAgent(stack_cfg)
        params = agent.init_params(RngStream(0))
        memory = agent.initial_memory(3)
        logits, states, phis = stack_forward(params, memory.states, np.zeros((3, 18)), memory.workspace, stack_cfg)
        assert logits.shape == (3, 4)
        assert len(states) == len(phis) == 2
        assert phis[0].shape == (3,)

    def test_step_updates_workspace(self, stack_cfg):
        agent = RiiuStackAgent(stack_cfg)
        params = agent.init_params(RngStream(1))
        memory = agent.initial_memory(2)
        obs = VecEnv(EnvConfig(n_envs=2)).reset()
        _, memory, phis = agent.step(params, memory, obs)
        assert memory.workspace.shape == (2, 8)
        assert np.count_nonzero(memory.workspace[0]) <= 4
        assert agent.measures_phi
        assert len(phis) == 2

    def test_begin_episode_clears_workspace_only(self, stack_cfg):
        agent = RiiuStackAgent(stack_cfg)
        params = agent.init_params(RngStream(2))
        memory = agent.initial_memory(2)
        _, memory, _ = agent.step(params, memory, VecEnv(EnvConfig(n_envs=2)).reset())
        fresh = agent.begin_episode(memory)
        assert not np.any(fresh.workspace)
        assert len(fresh.states[0].buffers[0]) == 1

    def test_checkpoint_restores_forward_pass(self, tmp_path, stack_cfg):
        agent = RiiuStackAgent(stack_cfg)
        params = agent.init_params(RngStream(3))
        path = tmp_path / "stack.npz"
        save_checkpoint(path, params, {"variant": "riiu"})
        loaded, _ = load_checkpoint(path, template=params)
        observations = [VecEnv(EnvConfig(n_envs=2, start=(i, i))).reset() for i in range(3)]
        outputs = []
        for p in (params, loaded):
            memory, logits = agent.initial_memory(2), []
            for obs in observations:
                out, memory, phis = agent.step(p, memory, obs)
                logits.append(out)
            outputs.append((logits, phis, memory.workspace))
        for a, b in zip(outputs[0][0], outputs[1][0]):
            np.testing.assert_array_equal(a, b)
        for a, b in zip(outputs[0][1], outputs[1][1]):
            np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(outputs[0][2], outputs[1][2])

    def test_variant(self, stack_cfg):
        assert make_agent("riiu", stack_cfg).variant == "riiu"
        no_meta = make_agent("no_meta", stack_cfg)
        assert no_meta.variant == "no_meta"
        assert not no_meta.cfg.cell.meta_enabled


class TestBaselineAgents:
    def test_reference_sizes(self):
        assert make_agent("gru").hidden == 92
        assert make_agent("mlp").sizes == [18, 164, 164, 4]

    def test_matched_to_stack(self, stack_cfg):
        target = stack_cfg.param_count()
        for variant in ("gru", "mlp"):
            agent = make_agent(variant, stack_cfg)
            count = agent.param_count(agent.init_params(RngStream(0)))
            assert abs(count - target) <= 0.05 * target

    def test_gru_step(self):
        agent = GruAgent(2000)
        params = agent.init_params(RngStream(3))
        memory = agent.initial_memory(2)
        logits, memory, phis = agent.step(params, memory, np.zeros((2, 18)))
        assert logits.shape == (2, 4)
        assert memory.shape == (2, agent.hidden)
        assert phis == []
        assert not agent.measures_phi

    def test_mlp_step(self):
        agent = MlpAgent(2000)
        params = agent.init_params(RngStream(4))
        logits, memory, phis = agent.step(params, None, np.zeros((3, 18)))
        assert logits.shape == (3, 4)
        assert memory is None

    def test_unknown_variant(self):
        with pytest.raises(ValueError):
            make_agent("transformer")


class TestTrainConfig:
    def test_defaults(self):
        cfg = TrainConfig()
        assert (cfg.episodes, cfg.gamma, cfg.lr, cfg.clip, cfg.phi_bonus_weight) == (150, 0.99, 5e-4, 1.0, 0.02)
        assert cfg.policy_floor == 0.1

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"episodes": 0},
            {"gamma": 1.5},
            {"lr": 0.0},
            {"phi_bonus_weight": -1.0},
            {"phi_in_loss": "max"},
            {"policy_floor": 1.0},
            {"policy_floor": -0.1},
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            TrainConfig(**kwargs)


class TestReturns:
    def test_discounted(self):
        out = discounted_returns([[0.0], [0.0], [1.0]], np.ones((3, 1)), 0.5)
        np.testing.assert_allclose(out[:, 0], [0.25, 0.5, 1.0])

    def test_masked_rewards_ignored(self):
        out = discounted_returns([[1.0], [1.0]], [[1.0], [0.0]], 1.0)
        np.testing.assert_allclose(out[:, 0], [1.0, 0.0])


class TestRollout:
    def test_trajectory(self, stack_cfg):
        agent = RiiuStackAgent(stack_cfg)
        params = agent.init_params(RngStream(5))
        env = VecEnv(EnvConfig(max_len=4, n_envs=2, damage_step=100))
        traj, _ = rollout(agent, params, env, agent.initial_memory(2), RngStream(6))
        assert 1 <= len(traj) <= 4
        np.testing.assert_array_equal(traj.mask_matrix[0], [1.0, 1.0])
        assert traj.phi_values().shape == (len(traj), 2, 2)
        assert np.all(traj.episode_returns() <= 1.0)
        assert traj.global_steps == list(range(1, len(traj) + 1))

    def test_rollout_reproducible(self, stack_cfg):
        agent = RiiuStackAgent(stack_cfg)
        params = agent.init_params(RngStream(7))
        runs = []
        for _ in range(2):
            env = VecEnv(EnvConfig(max_len=4, n_envs=2))
            traj, _ = rollout(agent, params, env, agent.initial_memory(2), RngStream(8))
            runs.append(np.array(traj.actions))
        np.testing.assert_array_equal(runs[0], runs[1])

    def test_loss_formula(self, stack_cfg):
        agent = RiiuStackAgent(stack_cfg)
        params = agent.init_params(RngStream(9))
        env = VecEnv(EnvConfig(goal=(1, 0), max_len=4, n_envs=2, damage_step=100))
        traj, _ = rollout(agent, params, env, agent.initial_memory(2), RngStream(10))
        cfg = TrainConfig(gamma=0.9, phi_bonus_weight=0.05)

        masks = traj.mask_matrix
        adv = discounted_returns(traj.reward_matrix, masks, 0.9) * masks
        logp = np.array([ad.value_of(lp) for lp in traj.log_probs])
        phi = traj.phi_values()
        weights = np.broadcast_to(masks[:, None, :], phi.shape)
        expected = -(logp * adv).sum() / 2 - 0.05 * (phi * weights).sum() / weights.sum()
        assert float(loss(traj, cfg)) == pytest.approx(expected, rel=1e-10)

    @pytest.mark.parametrize("floor", [0.0, 0.1])
    def test_policy_normalised(self, stack_cfg, floor):
        agent = RiiuStackAgent(stack_cfg)
        params = agent.init_params(RngStream(12))
        env = VecEnv(EnvConfig(max_len=6, n_envs=2, damage_step=3))
        traj, _ = rollout(agent, params, env, agent.initial_memory(2), RngStream(13), floor=floor)
        rows = np.arange(2)
        for probs, logp, actions in zip(traj.probs, traj.log_probs, traj.actions):
            np.testing.assert_allclose(probs.sum(axis=1), [1.0, 1.0], rtol=0, atol=1e-12)
            assert probs.min() >= floor / 4 - 1e-15
            np.testing.assert_allclose(ad.value_of(logp), np.log(probs[rows, actions]), rtol=1e-12)

    def test_floor_keeps_confident_policy_exploring(self, stack_cfg):
        agent = RiiuStackAgent(stack_cfg)
        params = agent.init_params(RngStream(14))
        params["head.b"] = np.array([50.0, 0.0, 0.0, 0.0])
        taken = {}
        for floor in (0.0, 0.2):
            env = VecEnv(EnvConfig(max_len=16, n_envs=2, damage_step=1000))
            memory, rng, actions = agent.initial_memory(2), RngStream(15), []
            for _ in range(3):
                traj, memory = rollout(agent, params, env, memory, rng, floor=floor)
                actions.extend(traj.actions)
            taken[floor] = np.concatenate(actions)
        np.testing.assert_array_equal(taken[0.0], 0)
        assert np.any(taken[0.2] != 0)

    def test_bonus_gradient_scales_with_weight(self, stack_cfg):
        agent = RiiuStackAgent(stack_cfg)
        params = agent.init_params(RngStream(16))
        env = VecEnv(EnvConfig(goal=(1, 1), max_len=4, n_envs=2, damage_step=100))
        memory, rng = agent.initial_memory(2), RngStream(17)
        for _ in range(2):
            _, memory = rollout(agent, params, env, memory, rng)
            memory = agent.detach(memory)

        tape = ad.Tape()
        watched = tape.watch(params)
        traj, _ = rollout(agent, watched, env, memory, rng)
        grads = {w: tape.gradient(loss(traj, TrainConfig(phi_bonus_weight=w)), watched) for w in (0.0, 0.02, 1.0)}

        mean_phi, count = 0.0, 0.0
        for step_phis, mask in zip(traj.phis, traj.mask_matrix):
            for phi in step_phis:
                mean_phi = ad.add(mean_phi, ad.reduce_sum(ad.mul(phi, mask)))
                count += mask.sum()
        phi_grads = tape.gradient(ad.scale(mean_phi, 1.0 / count), watched)

        assert any(np.any(g) for g in phi_grads.values())
        for name in params:
            bonus = grads[1.0][name] - grads[0.0][name]
            np.testing.assert_allclose(bonus, -phi_grads[name], rtol=1e-6, atol=1e-12)
            np.testing.assert_allclose(grads[0.02][name] - grads[0.0][name], 0.02 * bonus, rtol=1e-6, atol=1e-12)

    def test_loss_empty(self):
        with pytest.raises(ValueError):
            loss(Trajectory(), TrainConfig())

    def test_greedy(self, stack_cfg):
        agent = RiiuStackAgent(stack_cfg)
        params = agent.init_params(RngStream(11))
        value, memory = evaluate_greedy(agent, params, VecEnv(EnvConfig(max_len=4, n_envs=2)))
        assert 0.0 <= value <= 1.0
        assert isinstance(memory.workspace, np.ndarray)


class TestTrain:
    def test_runs_and_logs(self, stack_cfg, env_cfg, train_cfg):
        result = train(train_cfg, stack_cfg, env_cfg, "riiu")
        assert [e.episode for e in result.episodes] == [1, 2, 3]
        assert all(np.isfinite(e.mean_return) for e in result.episodes)
        assert all(0.0 <= e.phi_rel_percent <= 100.0 for e in result.episodes)
        assert result.episodes[-1].damaged
        assert len(result.steps) == result.episodes[-1].global_step_end
        assert result.damage_step == 6

    def test_reproducible(self, stack_cfg, env_cfg, train_cfg):
        a = train(train_cfg, stack_cfg, env_cfg, "riiu")
        b = train(train_cfg, stack_cfg, env_cfg, "riiu")
        assert [e.mean_return for e in a.episodes] == [e.mean_return for e in b.episodes]
        assert [e.phi_rel_percent for e in a.episodes] == [e.phi_rel_percent for e in b.episodes]
        for name in a.params:
            np.testing.assert_array_equal(a.params[name], b.params[name])

    def test_params_change(self, stack_cfg, env_cfg, train_cfg):
        agent = make_agent("riiu", stack_cfg)
        initial = agent.init_params(RngStream(train_cfg.seed).spawn("init"))
        result = train(train_cfg, stack_cfg, env_cfg, "riiu")
        assert any(not np.array_equal(initial[k], result.params[k]) for k in initial)

    @pytest.mark.parametrize("variant", ["no_meta", "gru", "mlp"])
    def test_other_variants(self, stack_cfg, env_cfg, train_cfg, variant):
        result = train(train_cfg, stack_cfg, env_cfg, variant)
        assert result.variant == variant
        if variant != "no_meta":
            assert all(e.phi_rel_percent == 0.0 for e in result.episodes)

    def test_checkpoint(self, tmp_path, stack_cfg, env_cfg, train_cfg):
        path = tmp_path / "ckpt.npz"
        result = train(train_cfg, stack_cfg, env_cfg, "riiu", checkpoint=path)
        params, meta = load_checkpoint(path, template=result.params)
        assert meta["variant"] == "riiu"
        assert meta["seed"] == train_cfg.seed

    def test_divergence(self, monkeypatch, stack_cfg, env_cfg, train_cfg):
        monkeypatch.setattr(training, "loss", lambda *args, **kwargs: np.array(np.nan))
        with pytest.raises(DivergenceError):
            train(train_cfg, stack_cfg, env_cfg, "riiu")

    def test_late_phase_phi_stays_positive(self):
        # rank 6 of a 12-dim state: a policy cycling through a few states would measure 0
        cell = CellConfig(in_dim=18, h_dim=8, mu_dim=4, buf_len=16, phi=PhiConfig(rank=6))
        stack_cfg = StackConfig(layers=2, cell=cell, topk=4)
        env_cfg = EnvConfig(max_len=8, damage_step=20)
        cfg = TrainConfig(episodes=12, n_envs=2, lr=5e-3, policy_floor=0.1)
        result = train(cfg, stack_cfg, env_cfg, "riiu")
        late = result.episodes[-4:]
        assert all(e.damaged for e in late)
        assert all(e.phi_rel_percent > 0.0 for e in late)
        assert all(s.phi_rel_percent > 0.0 for s in result.steps[-8:])

    def test_with_baseline(self, stack_cfg, env_cfg):
        cfg = TrainConfig(episodes=2, n_envs=2, use_baseline=True, phi_in_loss="last")
        result = train(cfg, stack_cfg, env_cfg, "riiu")
        assert len(result.episodes) == 2


class TestRepairLatency:
    steps = [10, 20, 30, 40, 50, 60, 70]
    values = [1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0]

    def test_smoothed(self):
        assert repair_latency(self.steps, self.values, 35, window=2) == 35

    def test_unsmoothed(self):
        assert repair_latency(self.steps, self.values, 35, window=1) == 25

    def test_never_recovers(self):
        assert repair_latency(self.steps[:5], self.values[:5], 35) is None

    def test_no_damage_in_log(self):
        with pytest.raises(NotApplicableError):
            repair_latency(self.steps, self.values, 500)
        with pytest.raises(NotApplicableError):
            repair_latency(self.steps, self.values, 0)

    def test_misaligned(self):
        with pytest.raises(ValueError):
            repair_latency([1, 2], [1.0], 1)
