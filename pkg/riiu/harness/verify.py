"""
    Executable property suites for the unit's guarantees:

    - ``differentiability``: every primitive and one whole episode of a
      two-layer stack agree with central finite differences.
    - ``compositionality``: Auto-Phi of a block-diagonal covariance
      composes from its blocks.
    - ``plasticity``: a gradient-ascent step of size ``1/L`` on one sample
      raises Auto-Phi.
    - ``reduction``: with the meta-state frozen at zero the unit is the
      plain GELU recurrence, bit for bit.
"""

import logging
from dataclasses import dataclass, field
from typing import List

import numpy as np
from scipy.linalg import block_diag

from .. import autodiff as ad
from ..agents.stack import RiiuStackAgent, StackConfig
from ..agents.training import TrainConfig, episode_objective, rollout
from ..autophi import (
    PhiConfig,
    auto_phi_cov,
    auto_phi_partitioned,
    auto_phi_with_grad,
    block_shares,
    ascent_step_check,
    lipschitz_bound,
)
from ..cells import CellConfig, init_params, initial_state, riiu_step
from ..gridworld import EnvConfig, VecEnv
from ..linalg import RngStream, covariance, frobenius_norm, gelu, sym_eig

__all__ = [
    "VerifyConfig",
    "SuiteResult",
    "check_primitives",
    "check_end_to_end",
    "suite_differentiability",
    "suite_compositionality",
    "suite_plasticity",
    "suite_reduction",
    "run_verification",
    "format_report",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class VerifyConfig:
    """Sizes and tolerances of the property suites."""

    seed: int = 0
    primitive_tol: float = 1e-6
    episode_tol: float = 1e-3
    episode_weights: int = 10
    episode_floor: float = 1e-6
    episode_steps: int = 5
    fd_step: float = 1e-5
    compose_pairs: int = 100
    compose_tol: float = 1e-9
    ascent_trials: int = 1000
    ascent_pass_rate: float = 0.99
    ascent_dim: int = 48
    ascent_samples: int = 64
    ascent_rank: int = 16
    reduction_steps: int = 100

    def __post_init__(self):
        for name in ("primitive_tol", "episode_tol", "episode_floor", "fd_step", "compose_tol"):
            if not getattr(self, name) > 0:
                raise ValueError("%s must be positive" % name)
        for name in ("episode_weights", "episode_steps", "compose_pairs", "ascent_trials", "reduction_steps"):
            if getattr(self, name) < 1:
                raise ValueError("%s must be positive" % name)
        if not 0 < self.ascent_pass_rate <= 1:
            raise ValueError("ascent_pass_rate must lie in (0, 1]")
        if not 1 <= self.ascent_rank < self.ascent_dim:
            raise ValueError("ascent_rank must lie in [1, ascent_dim)")


@dataclass
class SuiteResult:
    name: str
    checked: int
    failed: int
    tolerance: float
    worst: float
    counterexamples: List[str] = field(default_factory=list)
    required_rate: float = 1.0

    @property
    def passed(self):
        if self.checked == 0:
            return False
        return (self.checked - self.failed) / self.checked >= self.required_rate


def _primitive_error(fn, inputs, rng, h):
    out = ad.value_of(fn(*inputs))
    weights = rng.normal(size=out.shape)
    worst = 0.0
    for k, x in enumerate(inputs):
        tape = ad.Tape()
        var = tape.variable(x)
        args = [var if j == k else a for j, a in enumerate(inputs)]
        objective = ad.reduce_sum(ad.mul(fn(*args), weights))
        analytic = tape.gradient(objective, {"x": var})["x"]

        def perturbed(v, k=k):
            args = [v if j == k else a for j, a in enumerate(inputs)]
            return float(np.sum(ad.value_of(fn(*args)) * weights))

        worst = max(worst, ad.relative_error(analytic, ad.numerical_gradient(perturbed, x, h)))
    return worst


def check_primitives(cfg=None, grad_rule=None):
    """Finite-difference check of every differentiable primitive.

    Parameters
    ----------
    cfg : VerifyConfig, optional
    grad_rule : callable, optional
        Backward rule handed to the Auto-Phi primitive.

    Returns
    -------
    dict of str to float
        Worst relative error per primitive.
    """
    cfg = cfg or VerifyConfig()
    rng = RngStream(cfg.seed).spawn("primitives")
    histories = [rng.normal(size=(12, 6)) * rng.uniform(0.5, 2.0, size=6) for _ in range(2)]
    phi_cfg = PhiConfig(rank=2)
    actions = np.array([2, 0])
    cases = {
        "matmul": (ad.matmul, [rng.normal(size=(3, 4)), rng.normal(size=(4, 2))]),
        "linear": (ad.linear, [rng.normal(size=(3, 5)), rng.normal(size=(4, 5)), rng.normal(size=4)]),
        "add": (ad.add, [rng.normal(size=(3, 4)), rng.normal(size=4)]),
        "mul": (ad.mul, [rng.normal(size=(3, 4)), rng.normal(size=(3, 4))]),
        "gelu": (ad.gelu, [rng.normal(size=(3, 4))]),
        "tanh": (ad.tanh, [rng.normal(size=(3, 4))]),
        "sigmoid": (ad.sigmoid, [rng.normal(size=(3, 4))]),
        "concat": (lambda a, b: ad.concat([a, b]), [rng.normal(size=(2, 3)), rng.normal(size=(2, 2))]),
        "log_prob": (lambda x: ad.take_along(ad.log_softmax(x), actions), [rng.normal(size=(2, 4))]),
        "log_prob_floored": (
            lambda x: ad.take_along(ad.log_mix_uniform(ad.log_softmax(x), 0.1), actions),
            [rng.normal(size=(2, 4))],
        ),
        "auto_phi": (
            lambda z: ad.auto_phi(z, histories, phi_cfg, grad_rule=grad_rule),
            [rng.normal(size=(2, 6))],
        ),
    }
    return {name: _primitive_error(fn, inputs, rng, cfg.fd_step) for name, (fn, inputs) in cases.items()}


def check_end_to_end(cfg=None, grad_rule=None):
    """Tape gradient of one episode loss against finite differences.

    A two-layer stack is warmed up for two episodes so its sliding buffers
    hold history, then one recorded episode is differentiated. Finite
    differences replay the recorded actions and graph constants.

    Every sampled weight is scored on its own,
    ``|tape - fd| / max(|tape|, |fd|, episode_floor)``, so one large
    gradient cannot hide a wrong small one.

    Returns
    -------
    error : float
        Worst per-weight error.
    checks : list of (str, int, float, float, float)
        ``(name, flat index, tape gradient, finite difference, error)``.
    """
    cfg = cfg or VerifyConfig()
    root = RngStream(cfg.seed).spawn("episode")
    cell = CellConfig(in_dim=18, h_dim=8, mu_dim=4, buf_len=16, phi=PhiConfig(rank=4))
    agent = RiiuStackAgent(StackConfig(layers=2, cell=cell, topk=4), grad_rule=grad_rule)
    env = VecEnv(EnvConfig(goal=(1, 1), max_len=cfg.episode_steps, damage_step=10 ** 9, n_envs=2))
    train_cfg = TrainConfig(phi_bonus_weight=0.02, n_envs=2)
    params = agent.init_params(root.spawn("init"))
    memory = agent.initial_memory(2)
    warmup = root.spawn("warmup")
    for _ in range(2):
        _, memory = rollout(agent, params, env, memory, warmup)
        memory = agent.detach(memory)

    tape = ad.Tape()
    watched = tape.watch(params)
    ledger = ad.StopGradientLedger()
    objective = episode_objective(agent, watched, env, memory, root.spawn("actions"), train_cfg, ledger, baseline=0.5)
    grads = tape.gradient(objective, watched)

    names = sorted(params)
    picker = root.spawn("weights")
    checks = []
    for _ in range(cfg.episode_weights):
        name = names[int(picker.integers(len(names)))]
        index = int(picker.integers(params[name].size))

        def objective_at(value, name=name, index=index):
            trial = dict(params)
            flat = params[name].copy().reshape(-1)
            flat[index] = value[0]
            trial[name] = flat.reshape(params[name].shape)
            out = episode_objective(agent, trial, env, memory, None, train_cfg, ledger.replay(), baseline=0.5)
            return float(ad.value_of(out))

        start = np.array([params[name].reshape(-1)[index]])
        numeric = float(ad.numerical_gradient(objective_at, start, cfg.fd_step)[0])
        analytic = float(grads[name].reshape(-1)[index])
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), cfg.episode_floor)
        checks.append((name, index, analytic, numeric, err))

    return max(c[4] for c in checks), checks


def suite_differentiability(cfg=None, grad_rule=None):
    cfg = cfg or VerifyConfig()
    result = SuiteResult("differentiability", 0, 0, cfg.primitive_tol, 0.0)
    for name, err in check_primitives(cfg, grad_rule).items():
        result.checked += 1
        result.worst = max(result.worst, err)
        if not err < cfg.primitive_tol:
            result.failed += 1
            result.counterexamples.append("primitive %s: relative error %.3e" % (name, err))

    err, checks = check_end_to_end(cfg, grad_rule)
    result.checked += 1
    if not err < cfg.episode_tol:
        result.failed += 1
        result.counterexamples.append(
            "episode loss: worst error %.3e over %s"
            % (err, ", ".join("%s[%d] tape=%.6e fd=%.6e err=%.2e" % c for c in checks))
        )
    return result


def _spiked_block(rng, dim, rank):
    q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    spectrum = np.concatenate([rng.uniform(10.0, 20.0, size=rank), rng.uniform(0.1, 1.0, size=dim - rank)])
    block = (q * spectrum) @ q.T
    return 0.5 * (block + block.T)


def _joint_block_residuals(sigma, dims, ranks):
    # eigenvectors of a block-diagonal matrix with a simple spectrum live on
    # one block each; assign them by where their mass sits
    _, vecs = sym_eig(sigma, method="lapack")
    bounds = np.cumsum([0] + list(dims))
    owner = np.array(
        [np.argmax([np.sum(v[lo:hi] ** 2) for lo, hi in zip(bounds[:-1], bounds[1:])]) for v in vecs.T]
    )
    residuals = []
    for i, (lo, hi, r) in enumerate(zip(bounds[:-1], bounds[1:], ranks)):
        u = vecs[lo:hi, owner == i][:, :r]
        block = sigma[lo:hi, lo:hi]
        residuals.append(frobenius_norm(block - u @ (u.T @ block)))
    return residuals


def suite_compositionality(cfg=None):
    """Block-diagonal composition laws of Auto-Phi.

    Each pair of blocks is checked four ways:

    - shares under the shared sum-of-norms denominator add up to the joint
      value;
    - the sum-of-norms value matches block residuals rebuilt from the
      eigendecomposition of the whole matrix, where every block keeps its
      own leading joint eigenvectors;
    - the standard normalisation composes as a root-sum-square of block
      residuals;
    - because every block's top directions dominate the other block's tail,
      the plain joint Auto-Phi at rank ``r1 + r2`` equals the block value.
    """
    cfg = cfg or VerifyConfig()
    rng = RngStream(cfg.seed).spawn("composition")
    eps = PhiConfig().epsilon
    std = PhiConfig(rank=1, epsilon=eps, normalization="standard")
    summed = PhiConfig(rank=1, epsilon=eps, normalization="sum_of_norms")
    result = SuiteResult("compositionality", 0, 0, cfg.compose_tol, 0.0)

    for trial in range(cfg.compose_pairs):
        dims = [int(d) for d in rng.integers(3, 9, size=2)]
        ranks = [int(rng.integers(1, d)) for d in dims]
        blocks = [_spiked_block(rng, d, r) for d, r in zip(dims, ranks)]
        sigma = block_diag(*blocks)
        norms = [frobenius_norm(b) for b in blocks]
        residuals = [
            auto_phi_cov(b, PhiConfig(rank=r, epsilon=eps)) * (n + eps) for b, r, n in zip(blocks, ranks, norms)
        ]
        vecs = [sym_eig(b, method="lapack")[1][:, :r] for b, r in zip(blocks, ranks)]
        basis = block_diag(*vecs)
        joint_residual = frobenius_norm(sigma - basis @ (basis.T @ sigma))

        summed_value = auto_phi_partitioned(sigma, dims, ranks, summed)
        std_value = auto_phi_partitioned(sigma, dims, ranks, std)
        shares = abs(summed_value - sum(block_shares(sigma, dims, ranks, summed)))
        from_joint = _joint_block_residuals(sigma, dims, ranks)
        eigenbasis = abs(sum(from_joint) / (sum(norms) + eps) - summed_value)
        rss = abs(std_value - np.sqrt(sum(r * r for r in residuals)) / (np.sqrt(sum(n * n for n in norms)) + eps))
        rss = max(rss, abs(joint_residual / (frobenius_norm(sigma) + eps) - std_value))
        joint = abs(auto_phi_cov(sigma, PhiConfig(rank=sum(ranks), epsilon=eps)) - std_value)
        laws = (
            ("sum_of_norms shares", shares),
            ("joint eigenbasis", eigenbasis),
            ("root-sum-square", rss),
            ("joint spectrum", joint),
        )
        for law, err in laws:
            result.checked += 1
            result.worst = max(result.worst, err)
            if not err <= cfg.compose_tol:
                result.failed += 1
                result.counterexamples.append(
                    "pair %d %s: error %.3e (dims %s, ranks %s)" % (trial, law, err, dims, ranks)
                )
    return result


def suite_plasticity(cfg=None):
    """Ascent steps of size ``1/L`` on random windows raise Auto-Phi."""
    cfg = cfg or VerifyConfig()
    rng = RngStream(cfg.seed).spawn("plasticity")
    phi_cfg = PhiConfig(rank=cfg.ascent_rank)
    result = SuiteResult("plasticity", 0, 0, 0.0, 0.0, required_rate=cfg.ascent_pass_rate)
    for trial in range(cfg.ascent_trials):
        scales = rng.uniform(0.2, 2.0, size=cfg.ascent_dim)
        samples = rng.normal(size=(cfg.ascent_samples, cfg.ascent_dim)) * scales
        _, grad, _ = auto_phi_with_grad(samples, -1, phi_cfg)
        if np.linalg.norm(grad) <= 1e-6:
            continue
        eta = 1.0 / lipschitz_bound(covariance(samples), phi_cfg.epsilon)
        before, after = ascent_step_check(samples, -1, phi_cfg, eta)
        result.checked += 1
        result.worst = max(result.worst, before - after)
        if not after > before:
            result.failed += 1
            if len(result.counterexamples) < 10:
                result.counterexamples.append("trial %d: %.12f -> %.12f" % (trial, before, after))
    return result


def suite_reduction(cfg=None):
    """Meta-free unit against the plain recurrence ``gelu(W_x x + W_h h + W_b w)``."""
    cfg = cfg or VerifyConfig()
    rng = RngStream(cfg.seed).spawn("reduction")
    cell = CellConfig(meta_enabled=False, phi_bonus_enabled=False)
    params = init_params(rng.spawn("params"), cell)
    state = initial_state(cell)
    h = np.zeros((1, cell.h_dim))
    result = SuiteResult("reduction", 0, 0, 0.0, 0.0)
    for step in range(cfg.reduction_steps):
        x = rng.normal(size=(1, cell.in_dim))
        w = rng.normal(size=(1, cell.h_dim))
        state = riiu_step(params, state, x, w, cell)
        h = gelu(x @ params.W_x.T + h @ params.W_h.T + w @ params.W_b.T)
        result.checked += 1
        if not (np.array_equal(state.h, h) and not np.any(state.mu)):
            result.failed += 1
            result.worst = max(result.worst, float(np.max(np.abs(state.h - h))))
            result.counterexamples.append("step %d: max |dh| = %.3e" % (step, np.max(np.abs(state.h - h))))
    return result


def run_verification(cfg=None, grad_rule=None):
    """Run every suite; ``grad_rule`` replaces the Auto-Phi backward rule."""
    cfg = cfg or VerifyConfig()
    results = [
        suite_differentiability(cfg, grad_rule),
        suite_compositionality(cfg),
        suite_plasticity(cfg),
        suite_reduction(cfg),
    ]
    for r in results:
        logger.info("%s: %d/%d passed", r.name, r.checked - r.failed, r.checked)
    return results


def format_report(results):
    lines = []
    for r in results:
        lines.append(
            "%-18s %s  checked=%d failed=%d tolerance=%.1e worst=%.3e required_rate=%.2f"
            % (r.name, "PASS" if r.passed else "FAIL", r.checked, r.failed, r.tolerance, r.worst, r.required_rate)
        )
        lines.extend("    " + c for c in r.counterexamples)
    return "\n".join(lines) + "\n"
