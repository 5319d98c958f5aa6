"""
    Parameter-matched comparison policies: a GRU with a linear head and a
    feed-forward MLP. Neither measures Auto-Phi.
"""

from dataclasses import replace

import numpy as np

from .. import autodiff as ad
from ..cells import (
    GruParams,
    MlpParams,
    gru_step,
    init_gru_params,
    init_mlp_params,
    matched_gru_config,
    matched_mlp_config,
    mlp_forward,
)
from .base import Agent
from .stack import RiiuStackAgent, StackConfig

__all__ = ["GruAgent", "MlpAgent", "make_agent"]


class GruAgent(Agent):
    """GRU policy sized to about ``target_count`` parameters.

    Parameters
    ----------
    target_count : int
    in_dim : int, default 18
    n_actions : int, default 4
    """

    variant = "gru"

    def __init__(self, target_count, in_dim=18, n_actions=4):
        super().__init__(n_actions)
        self.in_dim = in_dim
        self.hidden = matched_gru_config(target_count, in_dim, n_actions)

    def init_params(self, rng):
        params = init_gru_params(rng.spawn("gru"), self.in_dim, self.hidden).to_dict(prefix="gru.")
        bound = 1.0 / np.sqrt(self.hidden)
        params["head.W"] = rng.spawn("head").uniform(-bound, bound, size=(self.n_actions, self.hidden))
        params["head.b"] = np.zeros(self.n_actions)
        return params

    def initial_memory(self, batch_size):
        return np.zeros((batch_size, self.hidden))

    def step(self, params, memory, obs, ledger=None):
        h = gru_step(GruParams.from_dict(params, prefix="gru."), memory, obs)
        return ad.linear(h, params["head.W"], params["head.b"]), h, []

    def detach(self, memory):
        return ad.value_of(memory).copy()


class MlpAgent(Agent):
    """Memoryless MLP policy sized to about ``target_count`` parameters."""

    variant = "mlp"

    def __init__(self, target_count, in_dim=18, n_actions=4, depth=2):
        super().__init__(n_actions)
        self.sizes = matched_mlp_config(target_count, in_dim, n_actions, depth)

    def init_params(self, rng):
        return init_mlp_params(rng.spawn("mlp"), self.sizes).to_dict(prefix="mlp.")

    def initial_memory(self, batch_size):
        return None

    def step(self, params, memory, obs, ledger=None):
        return mlp_forward(MlpParams.from_dict(params, prefix="mlp."), obs), None, []

    def detach(self, memory):
        return None


def make_agent(variant, stack_cfg=None):
    """Build the agent for ``variant`` in {'riiu', 'no_meta', 'gru', 'mlp'}.

    The baselines are matched to the parameter count of the RIIU stack
    described by ``stack_cfg``.
    """
    stack_cfg = stack_cfg or StackConfig()
    if variant == "riiu":
        return RiiuStackAgent(replace(stack_cfg, cell=replace(stack_cfg.cell, meta_enabled=True)))
    if variant == "no_meta":
        return RiiuStackAgent(replace(stack_cfg, cell=replace(stack_cfg.cell, meta_enabled=False)))
    target = stack_cfg.param_count()
    if variant == "gru":
        return GruAgent(target, stack_cfg.cell.in_dim, stack_cfg.n_actions)
    if variant == "mlp":
        return MlpAgent(target, stack_cfg.cell.in_dim, stack_cfg.n_actions)
    raise ValueError("unknown variant %r; expected riiu, no_meta, gru or mlp" % (variant,))
