"""
    Episodic REINFORCE with an Auto-Phi bonus.

    Each episode is rolled out on a fresh tape, differentiated once,
    clipped and applied with a single Adam step. Recurrent memory (hidden
    and meta states, sliding buffers) carries over between episodes.
"""

import copy
import logging
from dataclasses import dataclass, field, replace
from typing import List

import numpy as np

from .. import autodiff as ad
from ..cells import save_checkpoint
from ..errors import DivergenceError, NotApplicableError
from ..gridworld import EnvConfig, VecEnv
from ..linalg import RngStream
from ..optim import AdamState, adam_update, clip_global_norm, global_norm
from .baselines import make_agent
from .stack import StackConfig

__all__ = [
    "TrainConfig",
    "Trajectory",
    "EpisodeLog",
    "StepLog",
    "TrainResult",
    "discounted_returns",
    "rollout",
    "loss",
    "episode_objective",
    "train",
    "evaluate_greedy",
    "repair_latency",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    """Optimisation settings.

    Parameters
    ----------
    episodes : int, default 150
    gamma : float, default 0.99
    lr : float, default 5e-4
    clip : float, default 1.0
        Global gradient-norm ceiling.
    phi_bonus_weight : float, default 0.02
    n_envs : int, default 8
        Overrides ``EnvConfig.n_envs``.
    seed : int, default 1
    phi_in_loss : {'mean', 'last'}
        Average the bonus over all layers or use the last layer only.
    policy_floor : float, default 0.1
        Share of every sampled policy given to the uniform distribution,
        ``pi = (1 - floor) * softmax(logits) + floor / A``, so no action drops
        below ``floor / A``. The loss uses the log-probabilities of this
        mixture. 0 samples the plain softmax.
    use_baseline : bool, default False
        Subtract a running mean of episode returns from the returns-to-go.
    baseline_momentum : float, default 0.9
    log_every : int, default 10
    """

    episodes: int = 150
    gamma: float = 0.99
    lr: float = 5e-4
    clip: float = 1.0
    phi_bonus_weight: float = 0.02
    n_envs: int = 8
    seed: int = 1
    phi_in_loss: str = "mean"
    policy_floor: float = 0.1
    use_baseline: bool = False
    baseline_momentum: float = 0.9
    log_every: int = 10

    def __post_init__(self):
        if self.episodes < 1:
            raise ValueError("episodes must be positive")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        for name in ("lr", "clip"):
            if not getattr(self, name) > 0:
                raise ValueError("%s must be positive" % name)
        if self.phi_bonus_weight < 0:
            raise ValueError("phi_bonus_weight must be non-negative")
        if self.n_envs < 1:
            raise ValueError("n_envs must be positive")
        if self.phi_in_loss not in ("mean", "last"):
            raise ValueError("phi_in_loss must be 'mean' or 'last'")
        if not 0.0 <= self.policy_floor < 1.0:
            raise ValueError("policy_floor must lie in [0, 1)")
        if not 0.0 <= self.baseline_momentum < 1.0:
            raise ValueError("baseline_momentum must lie in [0, 1)")
        if self.log_every < 1:
            raise ValueError("log_every must be positive")


@dataclass
class Trajectory:
    """One episode of a vectorised rollout.

    Per-step lists are aligned; ``masks[t, b]`` is 1 while instance ``b``
    is still inside its episode at step ``t``.
    """

    log_probs: list = field(default_factory=list)
    probs: list = field(default_factory=list)
    phis: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    masks: list = field(default_factory=list)
    global_steps: list = field(default_factory=list)
    damaged: list = field(default_factory=list)

    def __len__(self):
        return len(self.log_probs)

    @property
    def reward_matrix(self):
        return np.array(self.rewards).reshape(len(self), -1)

    @property
    def mask_matrix(self):
        return np.array(self.masks, dtype=np.float64).reshape(len(self), -1)

    def phi_values(self):
        """(T, layers, B) array of measured Auto-Phi; empty layers axis for baselines."""
        if not self.phis or not self.phis[0]:
            return np.zeros((len(self), 0, self.mask_matrix.shape[1]))
        return np.array([[ad.value_of(p) for p in step] for step in self.phis])

    def episode_returns(self):
        return (self.reward_matrix * self.mask_matrix).sum(axis=0)


@dataclass
class EpisodeLog:
    episode: int
    mean_return: float
    phi_rel_percent: float
    global_step_start: int
    global_step_end: int
    damaged: bool


@dataclass
class StepLog:
    global_step: int
    mean_reward: float
    phi_rel_percent: float
    damaged: bool


@dataclass
class TrainResult:
    variant: str
    seed: int
    episodes: List[EpisodeLog]
    steps: List[StepLog]
    params: dict
    damage_step: int


def discounted_returns(rewards, masks, gamma):
    """Return-to-go ``G_t = r_t + gamma * G_{t+1}`` of masked (T, B) rewards."""
    rewards = np.asarray(rewards, dtype=np.float64) * np.asarray(masks, dtype=np.float64)
    out = np.zeros_like(rewards)
    running = np.zeros(rewards.shape[1:])
    for t in range(rewards.shape[0] - 1, -1, -1):
        running = rewards[t] + gamma * running
        out[t] = running
    return out


def rollout(agent, params, env, memory, rng, ledger=None, greedy=False, floor=0.0):
    """Run one episode in every instance of ``env``.

    Parameters
    ----------
    agent : Agent
    params : dict of str to array or Variable
    env : VecEnv
    memory : object
        Agent memory carried from the previous episode.
    rng : RngStream
        Action sampling stream.
    ledger : StopGradientLedger, optional
        Records (or replays) sampled actions and the agent's graph constants.
    greedy : bool, default False
        Take the most probable action instead of sampling.
    floor : float, default 0.0
        Uniform share mixed into the sampling policy, see
        :class:`TrainConfig`.

    Returns
    -------
    trajectory : Trajectory
    memory : object
        Memory after the final step, still attached to the tape.
    """
    ledger = ledger or ad.StopGradientLedger()
    obs = env.reset()
    memory = agent.begin_episode(memory)
    alive = np.ones(len(env.envs), dtype=bool)
    traj = Trajectory()

    for _ in range(env.cfg.max_len):
        logits, memory, phis = agent.step(params, memory, obs, ledger=ledger)
        logp_all = ad.log_mix_uniform(ad.log_softmax(logits), floor)
        probs = np.exp(ad.value_of(logp_all))
        if greedy:
            actions = ledger.hold(lambda: np.argmax(probs, axis=1))
        else:
            actions = ledger.hold(lambda: rng.categorical(probs))

        obs, rewards, dones = env.step(actions)
        traj.log_probs.append(ad.take_along(logp_all, actions))
        traj.probs.append(probs)
        traj.phis.append(list(phis))
        traj.actions.append(np.asarray(actions))
        traj.rewards.append(rewards * alive)
        traj.masks.append(alive.copy())
        traj.global_steps.append(env.global_step)
        traj.damaged.append(env.damaged)
        alive = alive & ~dones
        if not alive.any():
            break
    return traj, memory


def loss(traj, cfg, baseline=0.0):
    """REINFORCE loss minus the Auto-Phi bonus.

    ``-1/B * sum_t sum_b log pi(a_t|s_t) * (G_t - baseline)`` over steps
    inside the episode, minus ``phi_bonus_weight`` times the mean Auto-Phi
    over those steps and the selected layers.

    Returns
    -------
    Variable or numpy.ndarray
        Scalar.
    """
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    masks = traj.mask_matrix
    n_envs = masks.shape[1]
    advantages = (discounted_returns(traj.reward_matrix, masks, cfg.gamma) - baseline) * masks

    total = 0.0
    for logp, adv in zip(traj.log_probs, advantages):
        total = ad.add(total, ad.reduce_sum(ad.mul(logp, adv)))
    total = ad.scale(total, -1.0 / n_envs)

    if cfg.phi_bonus_weight > 0 and traj.phis and traj.phis[0]:
        bonus, count = 0.0, 0.0
        for step_phis, mask in zip(traj.phis, masks):
            layers = step_phis if cfg.phi_in_loss == "mean" else step_phis[-1:]
            for phi in layers:
                bonus = ad.add(bonus, ad.reduce_sum(ad.mul(phi, mask)))
                count += mask.sum()
        if count > 0:
            total = ad.sub(total, ad.scale(bonus, cfg.phi_bonus_weight / count))
    return total


def episode_objective(agent, params, env, memory, rng, cfg, ledger=None, baseline=0.0):
    """Loss of one episode started from copies of ``env`` and ``memory``.

    With a replaying ledger the episode repeats the recorded actions and
    graph constants, which makes it a deterministic function of ``params``
    suitable for finite differences.
    """
    traj, _ = rollout(
        agent, params, copy.deepcopy(env), agent.copy_memory(memory), rng, ledger=ledger, floor=cfg.policy_floor
    )
    return loss(traj, cfg, baseline)


def _episode_phi_percent(traj, cfg):
    phi = traj.phi_values()
    if phi.shape[1] == 0:
        return 0.0
    if cfg.phi_in_loss == "last":
        phi = phi[:, -1:, :]
    weights = np.broadcast_to(traj.mask_matrix[:, None, :], phi.shape)
    return 100.0 * float((phi * weights).sum() / max(weights.sum(), 1.0))


def train(cfg=None, stack_cfg=None, env_cfg=None, variant="riiu", checkpoint=None):
    """Train one agent.

    Parameters
    ----------
    cfg : TrainConfig, optional
    stack_cfg : StackConfig, optional
    env_cfg : EnvConfig, optional
    variant : {'riiu', 'no_meta', 'gru', 'mlp'}
    checkpoint : str or pathlib.Path, optional
        Where to write the final parameters.

    Returns
    -------
    TrainResult

    Raises
    ------
    DivergenceError
        When the loss or its gradient stops being finite.
    """
    cfg = cfg or TrainConfig()
    stack_cfg = stack_cfg or StackConfig()
    env_cfg = replace(env_cfg or EnvConfig(), n_envs=cfg.n_envs)
    agent = make_agent(variant, stack_cfg)
    root = RngStream(cfg.seed)
    params = agent.init_params(root.spawn("init"))
    action_rng = root.spawn("actions")
    env = VecEnv(env_cfg)
    memory = agent.initial_memory(cfg.n_envs)
    adam = AdamState.zeros_like(params)
    bonus_cfg = cfg if agent.measures_phi else replace(cfg, phi_bonus_weight=0.0)
    baseline = 0.0

    logger.info(
        "training %s (%d parameters) for %d episodes, seed %d",
        agent.variant, agent.param_count(params), cfg.episodes, cfg.seed,
    )
    episodes, steps = [], []
    for episode in range(1, cfg.episodes + 1):
        start = env.global_step
        tape = ad.Tape()
        watched = tape.watch(params)
        traj, memory = rollout(agent, watched, env, memory, action_rng, floor=cfg.policy_floor)
        objective = loss(traj, bonus_cfg, baseline if cfg.use_baseline else 0.0)
        if not np.isfinite(ad.value_of(objective)):
            raise DivergenceError("loss became %r at episode %d (seed %d)" % (ad.value_of(objective), episode, cfg.seed))
        grads = tape.gradient(objective, watched)
        norm = global_norm(grads)
        if not np.isfinite(norm):
            raise DivergenceError("gradient norm became %r at episode %d (seed %d)" % (norm, episode, cfg.seed))
        params, adam = adam_update(params, clip_global_norm(grads, cfg.clip), adam, cfg.lr)
        memory = agent.detach(memory)

        returns = traj.episode_returns()
        if cfg.use_baseline:
            g0 = discounted_returns(traj.reward_matrix, traj.mask_matrix, cfg.gamma)[0].mean()
            baseline = cfg.baseline_momentum * baseline + (1.0 - cfg.baseline_momentum) * g0
        row = EpisodeLog(
            episode=episode,
            mean_return=float(returns.mean()),
            phi_rel_percent=_episode_phi_percent(traj, cfg),
            global_step_start=start,
            global_step_end=env.global_step,
            damaged=env.damaged,
        )
        episodes.append(row)

        phi = traj.phi_values()
        for t, step in enumerate(traj.global_steps):
            mask = traj.mask_matrix[t]
            step_phi = 100.0 * float((phi[t] * mask).sum() / max(mask.sum() * phi.shape[1], 1.0)) if phi.shape[1] else 0.0
            steps.append(
                StepLog(
                    global_step=step,
                    mean_reward=float(traj.reward_matrix[t].mean()),
                    phi_rel_percent=step_phi,
                    damaged=bool(traj.damaged[t]),
                )
            )

        logger.debug(
            "episode %d: return %.3f, phi %.3f%%, loss %.4f, grad norm %.3f",
            episode, row.mean_return, row.phi_rel_percent, float(ad.value_of(objective)), norm,
        )
        if episode % cfg.log_every == 0:
            logger.info("episode %d: return %.3f, phi %.3f%%", episode, row.mean_return, row.phi_rel_percent)

    if checkpoint is not None:
        save_checkpoint(
            checkpoint,
            params,
            {"variant": agent.variant, "seed": cfg.seed, "episodes": cfg.episodes},
        )
        logger.info("wrote %s", checkpoint)
    return TrainResult(agent.variant, cfg.seed, episodes, steps, params, env_cfg.damage_step)


def evaluate_greedy(agent, params, env, memory=None):
    """Mean return of one greedy episode.

    Parameters
    ----------
    agent : Agent
    params : dict of str to numpy.ndarray
    env : VecEnv
        Stepped in place.
    memory : object, optional
        Defaults to the agent's initial memory.

    Returns
    -------
    mean_return : float
    memory : object
    """
    if memory is None:
        memory = agent.initial_memory(len(env.envs))
    traj, memory = rollout(agent, params, env, memory, rng=None, greedy=True)
    return float(traj.episode_returns().mean()), agent.detach(memory)


def repair_latency(steps, values, damage_step, window=5, threshold=0.9):
    """Environment steps from the failure until performance recovers.

    Parameters
    ----------
    steps : sequence of int
        Global step stamp of each log entry, increasing.
    values : sequence of float
        Return (or reward) of each entry.
    damage_step : int
    window : int, default 5
        Trailing smoothing window in log entries.
    threshold : float, default 0.9
        Fraction of the mean pre-failure value to regain.

    Returns
    -------
    int or None
        ``max(0, s - damage_step)`` for the first entry ``s`` whose smoothed
        value reaches the threshold; None when it never does.

    Raises
    ------
    NotApplicableError
        When the log does not span the failure.
    """
    if window < 1:
        raise ValueError("window must be positive")
    steps = np.asarray(steps)
    values = np.asarray(values, dtype=np.float64)
    if steps.shape != values.shape:
        raise ValueError("steps and values must align")
    before = steps < damage_step
    if not before.any() or before.all():
        raise NotApplicableError("log does not span the failure at step %d" % damage_step)
    target = threshold * values[before].mean()
    post_steps, post_values = steps[~before], values[~before]
    for j in range(len(post_values)):
        smoothed = post_values[max(0, j - window + 1) : j + 1].mean()
        if smoothed >= target:
            return int(max(0, post_steps[j] - damage_step))
    return None
