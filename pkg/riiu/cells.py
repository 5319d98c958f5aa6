"""
    Recurrent cells: the reflexive integrated-information unit and the
    Elman, GRU and MLP baselines it is compared against, with parameter
    initialisation, parameter matching and checkpoints.

    Every cell works on batched (B, dim) rows. Parameters are dataclasses of
    arrays; ``to_dict``/``from_dict`` convert them to the flat
    ``{name: array}`` maps the optimizer, the tape and checkpoints use.
"""

import json
from dataclasses import dataclass, field, fields, replace
from typing import List

import numpy as np

from . import autodiff as ad
from .autophi import PhiConfig, SlidingBuffer, grad_auto_phi
from .errors import NoMatchError

__all__ = [
    "CellConfig",
    "RiiuParams",
    "RiiuState",
    "GruParams",
    "MlpParams",
    "init_params",
    "init_gru_params",
    "init_mlp_params",
    "initial_state",
    "riiu_step",
    "riiu_step_no_meta",
    "elman_step",
    "gru_step",
    "mlp_forward",
    "param_count",
    "riiu_param_count",
    "matched_mlp_config",
    "matched_gru_config",
    "save_checkpoint",
    "load_checkpoint",
]

MATCH_TOLERANCE = 0.05


@dataclass(frozen=True)
class CellConfig:
    """Shape and behaviour of one unit.

    Parameters
    ----------
    in_dim : int, default 18
    h_dim : int, default 32
    mu_dim : int, default 16
    buf_len : int, default 64
        Sliding window length for Auto-Phi.
    phi : PhiConfig
    meta_enabled : bool, default True
        When False the reflexive network is skipped and the meta-state is
        carried unchanged.
    phi_bonus_enabled : bool, default True
    """

    in_dim: int = 18
    h_dim: int = 32
    mu_dim: int = 16
    buf_len: int = 64
    phi: PhiConfig = field(default_factory=PhiConfig)
    meta_enabled: bool = True
    phi_bonus_enabled: bool = True

    def __post_init__(self):
        for name in ("in_dim", "h_dim", "mu_dim"):
            if getattr(self, name) < 1:
                raise ValueError("%s must be positive" % name)
        if self.buf_len < 2:
            raise ValueError("buf_len must be at least 2, got %d" % self.buf_len)
        if self.phi.rank > self.state_dim:
            raise ValueError(
                "phi rank %d exceeds the joint state dimension %d" % (self.phi.rank, self.state_dim)
            )

    @property
    def state_dim(self):
        return self.h_dim + self.mu_dim


class _Params:
    """Flat-map conversion shared by the parameter dataclasses."""

    def to_dict(self, prefix=""):
        return {prefix + f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, flat, prefix=""):
        return cls(**{f.name: flat[prefix + f.name] for f in fields(cls)})

    def count(self):
        return int(sum(np.size(ad.value_of(v)) for v in self.to_dict().values()))


@dataclass
class RiiuParams(_Params):
    """Learnable weights of one unit.

    ``g_*`` is the two-layer reflexive network reading
    ``[h'; mu; grad_h Phi]`` and ``W_o``/``b_o`` the broadcast projection of
    ``[h'; mu'; Phi]``.
    """

    W_x: np.ndarray
    W_h: np.ndarray
    W_b: np.ndarray
    g_w1: np.ndarray
    g_b1: np.ndarray
    g_w2: np.ndarray
    g_b2: np.ndarray
    W_o: np.ndarray
    b_o: np.ndarray

    @staticmethod
    def shapes(cfg):
        h, mu = cfg.h_dim, cfg.mu_dim
        return {
            "W_x": (h, cfg.in_dim),
            "W_h": (h, h),
            "W_b": (h, h),
            "g_w1": (2 * mu, h + mu + h),
            "g_b1": (2 * mu,),
            "g_w2": (mu, 2 * mu),
            "g_b2": (mu,),
            "W_o": (h, h + mu + 1),
            "b_o": (h,),
        }

    @classmethod
    def zeros(cls, cfg):
        return cls(**{k: np.zeros(s) for k, s in cls.shapes(cfg).items()})


@dataclass
class GruParams(_Params):
    W_z: np.ndarray
    U_z: np.ndarray
    b_z: np.ndarray
    W_r: np.ndarray
    U_r: np.ndarray
    b_r: np.ndarray
    W_h: np.ndarray
    U_h: np.ndarray
    b_h: np.ndarray

    @staticmethod
    def shapes(in_dim, hidden):
        shapes = {}
        for gate in ("z", "r", "h"):
            shapes["W_" + gate] = (hidden, in_dim)
            shapes["U_" + gate] = (hidden, hidden)
            shapes["b_" + gate] = (hidden,)
        return shapes


@dataclass
class MlpParams:
    """Weights and biases of a feed-forward network, input layer first."""

    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def to_dict(self, prefix=""):
        flat = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            flat["%sW%d" % (prefix, i)] = w
            flat["%sb%d" % (prefix, i)] = b
        return flat

    @classmethod
    def from_dict(cls, flat, prefix=""):
        n = sum(1 for k in flat if k.startswith(prefix + "W"))
        return cls(
            weights=[flat["%sW%d" % (prefix, i)] for i in range(n)],
            biases=[flat["%sb%d" % (prefix, i)] for i in range(n)],
        )

    def count(self):
        return int(sum(np.size(ad.value_of(v)) for v in self.to_dict().values()))


def _uniform_init(rng, shapes):
    # weights uniform in +-1/sqrt(fan_in), 1-D biases zero
    out = {}
    for name, shape in shapes.items():
        if len(shape) == 1:
            out[name] = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(shape[1])
            out[name] = rng.spawn(name).uniform(-bound, bound, size=shape)
    return out


def init_params(rng, cfg=None):
    """Draw the weights of one unit.

    Parameters
    ----------
    rng : RngStream
    cfg : CellConfig, optional

    Returns
    -------
    RiiuParams
    """
    cfg = cfg or CellConfig()
    return RiiuParams(**_uniform_init(rng, RiiuParams.shapes(cfg)))


def init_gru_params(rng, in_dim, hidden):
    return GruParams(**_uniform_init(rng, GruParams.shapes(in_dim, hidden)))


def init_mlp_params(rng, sizes):
    """Feed-forward weights for layer widths ``sizes`` (input first)."""
    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.spawn("W%d" % i).uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


@dataclass
class RiiuState:
    """Per-unit recurrent state ``(h, mu, phi, broadcast)`` for a batch.

    ``h``, ``mu`` and ``broadcast`` are (B, dim) rows and ``phi`` is (B,);
    during a recorded rollout they may be :class:`riiu.autodiff.Variable`.
    ``buffers`` holds one sliding window per batch row.
    """

    h: object
    mu: object
    phi: object
    broadcast: object
    buffers: List[SlidingBuffer]

    @property
    def batch_size(self):
        return len(self.buffers)

    def detached(self):
        """Same state with plain arrays; buffers are shared."""
        return RiiuState(
            h=ad.value_of(self.h).copy(),
            mu=ad.value_of(self.mu).copy(),
            phi=ad.value_of(self.phi).copy(),
            broadcast=ad.value_of(self.broadcast).copy(),
            buffers=self.buffers,
        )

    def copy(self):
        state = self.detached()
        state.buffers = [b.copy() for b in self.buffers]
        return state


def initial_state(cfg=None, batch_size=1):
    """Zero state with empty buffers."""
    cfg = cfg or CellConfig()
    return RiiuState(
        h=np.zeros((batch_size, cfg.h_dim)),
        mu=np.zeros((batch_size, cfg.mu_dim)),
        phi=np.zeros(batch_size),
        broadcast=np.zeros((batch_size, cfg.h_dim)),
        buffers=[SlidingBuffer(cfg.buf_len, cfg.state_dim) for _ in range(batch_size)],
    )


def _rows(x, batch_size, dim, name):
    xv = ad.value_of(x)
    if xv.ndim == 1:
        if batch_size != 1:
            raise ValueError("%s is a single row but the state holds %d rows" % (name, batch_size))
        return ad.reshape(x, (1, xv.shape[0])) if isinstance(x, ad.Variable) else xv[None, :]
    if xv.shape != (batch_size, dim):
        raise ValueError("%s must have shape %s, got %s" % (name, (batch_size, dim), xv.shape))
    return x


def _config_from(params, state):
    """Cell config implied by parameter shapes and the state's buffers.

    The Auto-Phi rank is the default 16, cut down to the joint state
    dimension for smaller cells.
    """
    h_dim = ad.value_of(params.W_h).shape[0]
    mu_dim = ad.value_of(params.g_b2).shape[0]
    return CellConfig(
        in_dim=ad.value_of(params.W_x).shape[1],
        h_dim=h_dim,
        mu_dim=mu_dim,
        buf_len=state.buffers[0].capacity,
        phi=PhiConfig(rank=min(PhiConfig().rank, h_dim + mu_dim)),
    )


def _meta_gradients(buffers, h_new, mu, phi_cfg, h_dim):
    # h-block of grad Phi at the window [history; (h', mu)], one row per buffer
    joint = np.hstack([h_new, mu])
    return np.vstack(
        [grad_auto_phi(buf.peek_push(z), -1, phi_cfg)[:h_dim] for buf, z in zip(buffers, joint)]
    )


def riiu_step(params, state, x, w, cfg=None, ledger=None, grad_rule=None):
    """Advance one unit by a step: integrate, reflect, measure, broadcast.

    Parameters
    ----------
    params : RiiuParams
        Arrays or tape variables.
    state : RiiuState
    x : (B, in_dim) or (in_dim,) array
        Fresh input.
    w : (B, h_dim) or (h_dim,) array
        Workspace message; zeros when there is none.
    cfg : CellConfig, optional
        Supplies the Auto-Phi settings and the meta switch; dimensions are
        taken from ``params``. Without it the rank is
        ``min(16, h_dim + mu_dim)`` and the meta network is on.
    ledger : StopGradientLedger, optional
        Records (or replays) the buffer histories and the Auto-Phi gradient
        the step treats as constants.
    grad_rule : callable, optional
        Passed to :func:`riiu.autodiff.auto_phi`.

    Returns
    -------
    RiiuState
        New state; ``state`` and its buffers are not modified.
    """
    cfg = cfg or _config_from(params, state)
    ledger = ledger or ad.StopGradientLedger()
    batch = state.batch_size
    h_dim = ad.value_of(params.W_h).shape[0]
    x = _rows(x, batch, ad.value_of(params.W_x).shape[1], "x")
    w = _rows(w, batch, h_dim, "w")

    h_new = ad.gelu(ad.linear(x, params.W_x) + ad.linear(state.h, params.W_h) + ad.linear(w, params.W_b))

    if cfg.meta_enabled:
        hv, muv = ad.value_of(h_new), ad.value_of(state.mu)
        grad_h = ledger.hold(lambda: _meta_gradients(state.buffers, hv, muv, cfg.phi, h_dim))
        hidden = ad.gelu(ad.linear(ad.concat([h_new, state.mu, grad_h]), params.g_w1, params.g_b1))
        mu_new = ad.linear(hidden, params.g_w2, params.g_b2)
    else:
        mu_new = state.mu

    z = ad.concat([h_new, mu_new])
    histories = ledger.hold(lambda: [buf.history() for buf in state.buffers])
    phi = ad.auto_phi(z, histories, cfg.phi, grad_rule=grad_rule)
    broadcast = ad.linear(ad.concat([h_new, mu_new, ad.reshape(phi, (batch, 1))]), params.W_o, params.b_o)

    zv = ad.value_of(z)
    buffers = [buf.copy().push(row) for buf, row in zip(state.buffers, zv)]
    return RiiuState(h=h_new, mu=mu_new, phi=phi, broadcast=broadcast, buffers=buffers)


def riiu_step_no_meta(params, state, x, w, cfg=None, ledger=None, grad_rule=None):
    """:func:`riiu_step` with the reflexive network removed; ``mu`` is carried unchanged."""
    cfg = replace(cfg or _config_from(params, state), meta_enabled=False)
    return riiu_step(params, state, x, w, cfg, ledger=ledger, grad_rule=grad_rule)


def elman_step(W_x, W_h, h, x):
    """``tanh(W_x x + W_h h)`` for single rows or (B, dim) batches."""
    W_x, W_h = np.asarray(W_x, dtype=np.float64), np.asarray(W_h, dtype=np.float64)
    h, x = np.asarray(h, dtype=np.float64), np.asarray(x, dtype=np.float64)
    if W_x.shape[1] != x.shape[-1] or W_h.shape != (W_x.shape[0], h.shape[-1]):
        raise ValueError(
            "elman_step: W_x %s, W_h %s do not fit x %s, h %s" % (W_x.shape, W_h.shape, x.shape, h.shape)
        )
    return np.tanh(x @ W_x.T + h @ W_h.T)


def gru_step(params, h, x):
    """Gated recurrent update.

    ::

        z  = sigmoid(W_z x + U_z h + b_z)
        r  = sigmoid(W_r x + U_r h + b_r)
        h~ = tanh(W_h x + U_h (r * h) + b_h)
        h' = (1 - z) * h + z * h~

    Parameters
    ----------
    params : GruParams
    h : (B, hidden) array or Variable
    x : (B, in_dim) array or Variable
    """
    hv, xv = ad.value_of(h), ad.value_of(x)
    hidden, in_dim = ad.value_of(params.W_z).shape
    if hv.ndim != 2 or xv.ndim != 2 or hv.shape[1] != hidden or xv.shape[1] != in_dim:
        raise ValueError("gru_step: h %s and x %s do not fit hidden=%d, in=%d" % (hv.shape, xv.shape, hidden, in_dim))
    z = ad.sigmoid(ad.linear(x, params.W_z, params.b_z) + ad.linear(h, params.U_z))
    r = ad.sigmoid(ad.linear(x, params.W_r, params.b_r) + ad.linear(h, params.U_r))
    candidate = ad.tanh(ad.linear(x, params.W_h, params.b_h) + ad.linear(ad.mul(r, h), params.U_h))
    return ad.mul(1.0 - z, h) + ad.mul(z, candidate)


def mlp_forward(params, x):
    """GELU hidden layers followed by a linear output layer."""
    out = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        out = ad.linear(out, w, b)
        if i < last:
            out = ad.gelu(out)
    return out


def param_count(params):
    """Number of scalars in a parameter dataclass or flat map."""
    if isinstance(params, dict):
        return int(sum(np.size(ad.value_of(v)) for v in params.values()))
    return params.count()


def riiu_param_count(cfg):
    return int(sum(np.prod(s) for s in RiiuParams.shapes(cfg).values()))


def _check_match(count, target, what):
    if abs(count - target) > MATCH_TOLERANCE * target:
        raise NoMatchError(
            "no %s within %d%% of %d parameters (closest has %d)" % (what, 100 * MATCH_TOLERANCE, target, count)
        )


def matched_mlp_config(target_count, in_dim=18, n_actions=4, depth=2):
    """Layer widths of an MLP policy with about ``target_count`` parameters.

    Parameters
    ----------
    target_count : int
    in_dim, n_actions : int
    depth : int, default 2
        Number of equal-width hidden layers.

    Returns
    -------
    list of int
        ``[in_dim, width, ..., width, n_actions]``.

    Raises
    ------
    NoMatchError
        When no width lands within 5% of the target.
    """
    if target_count <= 0:
        raise ValueError("target_count must be positive")

    def count(width):
        sizes = [in_dim] + [width] * depth + [n_actions]
        return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))

    width = 1
    while count(width + 1) <= target_count:
        width += 1
    best = min((width, width + 1), key=lambda w: abs(count(w) - target_count))
    _check_match(count(best), target_count, "MLP")
    return [in_dim] + [best] * depth + [n_actions]


def matched_gru_config(target_count, in_dim=18, n_actions=4):
    """Hidden size of a GRU policy (cell plus linear head) near ``target_count``.

    Raises
    ------
    NoMatchError
        When no hidden size lands within 5% of the target.
    """
    if target_count <= 0:
        raise ValueError("target_count must be positive")

    def count(hidden):
        return 3 * (hidden * in_dim + hidden * hidden + hidden) + n_actions * hidden + n_actions

    hidden = 1
    while count(hidden + 1) <= target_count:
        hidden += 1
    best = min((hidden, hidden + 1), key=lambda h: abs(count(h) - target_count))
    _check_match(count(best), target_count, "GRU")
    return best


def save_checkpoint(path, params, metadata=None):
    """Write a flat parameter map and JSON metadata to an ``.npz`` file."""
    arrays = {name: np.asarray(ad.value_of(v)) for name, v in params.items()}
    if "__metadata__" in arrays:
        raise ValueError("'__metadata__' is reserved")
    np.savez(path, __metadata__=np.array(json.dumps(metadata or {}, sort_keys=True)), **arrays)


def load_checkpoint(path, template=None):
    """Read a checkpoint written by :func:`save_checkpoint`.

    Parameters
    ----------
    path : str or pathlib.Path
    template : dict of str to numpy.ndarray, optional
        When given, names and shapes must match it exactly.

    Returns
    -------
    params : dict of str to numpy.ndarray
    metadata : dict
    """
    with np.load(path, allow_pickle=False) as data:
        metadata = json.loads(str(data["__metadata__"]))
        params = {name: data[name].copy() for name in data.files if name != "__metadata__"}
    if template is not None:
        if set(template) != set(params):
            raise ValueError("checkpoint names differ from template: %s" % sorted(set(template) ^ set(params)))
        for name, value in template.items():
            if np.shape(value) != params[name].shape:
                raise ValueError(
                    "checkpoint shape for %s is %s, expected %s" % (name, params[name].shape, np.shape(value))
                )
    return params, metadata
