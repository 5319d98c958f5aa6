"""
    Adam with bias correction and global-norm gradient clipping over flat
    ``{name: array}`` parameter maps.
"""

from dataclasses import dataclass, field

import numpy as np

__all__ = ["AdamState", "adam_update", "global_norm", "clip_global_norm"]


@dataclass
class AdamState:
    """First and second moment accumulators plus the step counter."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            step=0,
        )


def _check_keys(params, grads):
    if set(params) != set(grads):
        missing = sorted(set(params) ^ set(grads))
        raise ValueError("parameter and gradient names differ: %s" % missing)
    for name in params:
        if np.shape(params[name]) != np.shape(grads[name]):
            raise ValueError(
                "shape mismatch for %s: parameter %s, gradient %s"
                % (name, np.shape(params[name]), np.shape(grads[name]))
            )


def adam_update(params, grads, state, lr=5e-4, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam step.

    Parameters
    ----------
    params, grads : dict of str to numpy.ndarray
        Same names and shapes.
    state : AdamState
    lr : float, default 5e-4

    Returns
    -------
    new_params : dict of str to numpy.ndarray
    new_state : AdamState
        Inputs are left untouched.
    """
    if lr <= 0:
        raise ValueError("lr must be positive")
    _check_keys(params, grads)
    if not state.m:
        state = AdamState.zeros_like(params)
    step = state.step + 1
    bias1 = 1.0 - beta1 ** step
    bias2 = 1.0 - beta2 ** step

    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        m = beta1 * state.m[name] + (1.0 - beta1) * g
        v = beta2 * state.v[name] + (1.0 - beta2) * g * g
        new_params[name] = p - lr * (m / bias1) / (np.sqrt(v / bias2) + eps)
        new_m[name] = m
        new_v[name] = v
    return new_params, AdamState(new_m, new_v, step)


def global_norm(grads):
    """L2 norm over every entry of every gradient."""
    return float(np.sqrt(sum(np.sum(np.square(g)) for g in grads.values())))


def clip_global_norm(grads, max_norm=1.0):
    """Rescale all gradients together so their global norm is at most ``max_norm``."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    norm = global_norm(grads)
    if norm <= max_norm:
        return dict(grads)
    factor = max_norm / norm
    return {name: g * factor for name, g in grads.items()}
