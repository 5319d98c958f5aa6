"""
    Base agent class shared by the RIIU stack and the baselines.
"""

from abc import ABC, abstractmethod

import numpy as np

from .. import autodiff as ad

__all__ = ["Agent"]


class Agent(ABC):
    """
    The base agent class.

    An agent maps observations of a vectorised environment to action
    logits while carrying recurrent memory between calls. Parameters live
    outside the agent as a flat ``{name: array}`` map so the same object can
    run with plain arrays or with tape variables. This class should not be
    instantiated directly.

    Parameters
    ----------
    n_actions : int
        Width of the logits.
    """

    variant = None

    def __init__(self, n_actions=4):
        if n_actions < 1:
            raise ValueError("n_actions must be positive")
        self.n_actions = n_actions

    def __repr__(self):
        return "%s(variant=%r)" % (type(self).__name__, self.variant)

    @property
    def measures_phi(self):
        """Whether :meth:`step` reports Auto-Phi per layer."""
        return False

    @abstractmethod
    def init_params(self, rng):
        """Draw a fresh flat parameter map from ``rng``."""

    @abstractmethod
    def initial_memory(self, batch_size):
        """Memory at the very start of a run."""

    def begin_episode(self, memory):
        """Memory at the start of an episode; carried over by default."""
        return memory

    @abstractmethod
    def step(self, params, memory, obs, ledger=None):
        """Advance one timestep.

        Parameters
        ----------
        params : dict of str to array or Variable
        memory : object
            As returned by :meth:`initial_memory` or a previous step.
        obs : (B, obs_dim) numpy.ndarray
        ledger : StopGradientLedger, optional

        Returns
        -------
        logits : (B, n_actions) array or Variable
        memory : object
        phi : list of (B,) array or Variable
            One entry per measured layer; empty when nothing is measured.
        """

    @abstractmethod
    def detach(self, memory):
        """Memory with every tape variable replaced by its value."""

    def copy_memory(self, memory):
        """Independent copy of ``memory``."""
        return self.detach(memory)

    def param_count(self, params):
        return int(sum(np.size(ad.value_of(v)) for v in params.values()))
