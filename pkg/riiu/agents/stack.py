"""
    Four chained RIIU layers around a shared global workspace.

    Layer 1 reads the observation, every later layer reads its
    predecessor's broadcast, and all layers receive the same workspace
    message: the mean of the layer broadcasts with everything but the
    ``topk`` largest-magnitude entries zeroed. The policy head reads the
    last layer's broadcast.
"""

from dataclasses import dataclass, field, replace
from typing import List

import numpy as np

from .. import autodiff as ad
from ..cells import CellConfig, RiiuParams, RiiuState, init_params, initial_state, riiu_param_count, riiu_step
from .base import Agent

__all__ = ["StackConfig", "StackMemory", "RiiuStackAgent", "stack_forward", "workspace_update"]


@dataclass(frozen=True)
class StackConfig:
    """Shape of the layered agent.

    Parameters
    ----------
    layers : int, default 4
    cell : CellConfig
        First-layer cell; later layers use the same settings with
        ``in_dim = h_dim``.
    topk : int, default 8
        Workspace entries kept after sparsification.
    n_actions : int, default 4
    workspace_include_layer1 : bool, default True
    """

    layers: int = 4
    cell: CellConfig = field(default_factory=CellConfig)
    topk: int = 8
    n_actions: int = 4
    workspace_include_layer1: bool = True

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError("layers must be positive")
        if not 0 <= self.topk <= self.cell.h_dim:
            raise ValueError("topk must lie in [0, h_dim=%d], got %d" % (self.cell.h_dim, self.topk))
        if self.n_actions < 1:
            raise ValueError("n_actions must be positive")
        if self.layers == 1 and not self.workspace_include_layer1:
            raise ValueError("a single-layer stack must feed layer 1 to the workspace")

    def layer_config(self, i):
        if i == 0:
            return self.cell
        return replace(self.cell, in_dim=self.cell.h_dim)

    def param_count(self):
        """Exact number of scalars including the policy head."""
        h = self.cell.h_dim
        units = sum(riiu_param_count(self.layer_config(i)) for i in range(self.layers))
        return units + self.n_actions * h + self.n_actions


@dataclass
class StackMemory:
    states: List[RiiuState]
    workspace: object


def workspace_update(broadcasts, topk=8, ledger=None):
    """Sparse workspace message from the layer broadcasts.

    Parameters
    ----------
    broadcasts : list of (B, h_dim) array or Variable
    topk : int, default 8
    ledger : StopGradientLedger, optional
        Records the selection mask, which is a constant of the graph.

    Returns
    -------
    (B, h_dim) array or Variable
        Row-wise mean of ``broadcasts`` with all but the ``topk`` entries of
        largest magnitude zeroed; ties go to the lower index.
    """
    if not broadcasts:
        raise ValueError("need at least one broadcast")
    mean = broadcasts[0]
    for b in broadcasts[1:]:
        mean = ad.add(mean, b)
    mean = ad.scale(mean, 1.0 / len(broadcasts))
    values = np.atleast_2d(ad.value_of(mean))

    def select():
        mask = np.zeros_like(values)
        order = np.argsort(-np.abs(values), axis=1, kind="stable")[:, :topk]
        np.put_along_axis(mask, order, 1.0, axis=1)
        return mask

    mask = ledger.hold(select) if ledger is not None else select()
    return ad.mul(mean, mask.reshape(ad.value_of(mean).shape))


def stack_forward(params, states, obs, workspace, cfg=None, ledger=None, grad_rule=None):
    """One timestep of the layered agent.

    Parameters
    ----------
    params : dict of str to array or Variable
        Flat map with ``layer{i}.`` and ``head.`` prefixes.
    states : list of RiiuState
    obs : (B, in_dim) array
    workspace : (B, h_dim) array or Variable
    cfg : StackConfig, optional
    ledger : StopGradientLedger, optional
    grad_rule : callable, optional

    Returns
    -------
    logits : (B, n_actions)
    new_states : list of RiiuState
    phi_per_layer : list of (B,)
    """
    cfg = cfg or StackConfig()
    if len(states) != cfg.layers:
        raise ValueError("expected %d layer states, got %d" % (cfg.layers, len(states)))
    new_states, phis = [], []
    x = obs
    for i, state in enumerate(states):
        unit = RiiuParams.from_dict(params, prefix="layer%d." % i)
        new = riiu_step(unit, state, x, workspace, cfg.layer_config(i), ledger=ledger, grad_rule=grad_rule)
        new_states.append(new)
        phis.append(new.phi)
        x = new.broadcast
    logits = ad.linear(x, params["head.W"], params["head.b"])
    return logits, new_states, phis


class RiiuStackAgent(Agent):
    """Layered RIIU policy.

    Parameters
    ----------
    cfg : StackConfig, optional
    grad_rule : callable, optional
        Replacement backward rule for the Auto-Phi primitive, see
        :func:`riiu.autodiff.auto_phi`.
    """

    def __init__(self, cfg=None, grad_rule=None):
        self.cfg = cfg or StackConfig()
        self.grad_rule = grad_rule
        super().__init__(self.cfg.n_actions)
        self.variant = "riiu" if self.cfg.cell.meta_enabled else "no_meta"

    @property
    def measures_phi(self):
        return True

    def init_params(self, rng):
        params = {}
        for i in range(self.cfg.layers):
            unit = init_params(rng.spawn("layer%d" % i), self.cfg.layer_config(i))
            params.update(unit.to_dict(prefix="layer%d." % i))
        h = self.cfg.cell.h_dim
        bound = 1.0 / np.sqrt(h)
        params["head.W"] = rng.spawn("head").uniform(-bound, bound, size=(self.cfg.n_actions, h))
        params["head.b"] = np.zeros(self.cfg.n_actions)
        return params

    def initial_memory(self, batch_size):
        states = [initial_state(self.cfg.layer_config(i), batch_size) for i in range(self.cfg.layers)]
        return StackMemory(states, np.zeros((batch_size, self.cfg.cell.h_dim)))

    def begin_episode(self, memory):
        return StackMemory(memory.states, np.zeros_like(ad.value_of(memory.workspace)))

    def step(self, params, memory, obs, ledger=None):
        logits, states, phis = stack_forward(
            params, memory.states, obs, memory.workspace, self.cfg, ledger=ledger, grad_rule=self.grad_rule
        )
        feeding = states if self.cfg.workspace_include_layer1 else states[1:]
        workspace = workspace_update([s.broadcast for s in feeding], self.cfg.topk, ledger=ledger)
        return logits, StackMemory(states, workspace), phis

    def detach(self, memory):
        return StackMemory([s.detached() for s in memory.states], ad.value_of(memory.workspace).copy())

    def copy_memory(self, memory):
        return StackMemory([s.copy() for s in memory.states], ad.value_of(memory.workspace).copy())
