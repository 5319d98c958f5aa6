"""
    Reverse-mode differentiation over one episode.

    A :class:`Tape` records array-valued primitives as they run. The
    primitives in this module accept either plain arrays or
    :class:`Variable` objects: with no variable among the operands they
    return a plain ``numpy.ndarray``, so the same model code serves
    gradient-free evaluation and recorded rollouts.
"""

import numpy as np
from scipy.special import expit

from .autophi import PhiConfig, auto_phi_with_grad
from .linalg import gelu as _gelu
from .linalg import gelu_grad as _gelu_grad

__all__ = [
    "Tape",
    "Variable",
    "StopGradientLedger",
    "value_of",
    "add",
    "sub",
    "mul",
    "neg",
    "scale",
    "matmul",
    "linear",
    "gelu",
    "tanh",
    "sigmoid",
    "reshape",
    "concat",
    "reduce_sum",
    "reduce_mean",
    "log_softmax",
    "log_mix_uniform",
    "take_along",
    "auto_phi",
    "numerical_gradient",
    "relative_error",
]


class Tape:
    """Append-only record of differentiable primitives.

    Nodes are appended in evaluation order, so reverse index order is a
    valid topological order for the backward sweep.

    Examples
    --------
    ::

        >>> tape = Tape()
        >>> w = tape.variable(np.ones((1, 3)))
        >>> loss = reduce_sum(matmul(w, np.arange(3.0)[:, None]))
        >>> tape.gradient(loss, {"w": w})["w"]
        array([[0., 1., 2.]])
    """

    def __init__(self):
        self._nodes = []

    def __len__(self):
        return len(self._nodes)

    def __repr__(self):
        return "Tape(nodes=%d)" % len(self._nodes)

    def variable(self, value):
        """Register a leaf, typically a parameter array."""
        return self._push(np.array(value, dtype=np.float64), ())

    def watch(self, params):
        """Register every array of a flat ``{name: array}`` map as a leaf."""
        return {name: self.variable(value) for name, value in params.items()}

    def _push(self, value, parents):
        self._nodes.append(tuple(parents))
        return Variable(value, self, len(self._nodes) - 1)

    def gradient(self, loss, wrt):
        """Back-propagate a scalar loss.

        Parameters
        ----------
        loss : Variable
            Scalar recorded on this tape.
        wrt : dict of str to Variable
            Leaves to differentiate against.

        Returns
        -------
        dict of str to numpy.ndarray
            One gradient per entry of ``wrt``; leaves the loss does not
            depend on get zeros.
        """
        if not isinstance(loss, Variable) or loss.tape is not self:
            raise TypeError("loss must be a Variable recorded on this tape")
        if loss.value.size != 1:
            raise ValueError("loss must be scalar, got shape %s" % (loss.value.shape,))

        grads = {loss.index: np.ones_like(loss.value)}
        for index in range(loss.index, -1, -1):
            g = grads.pop(index, None)
            if g is None:
                continue
            for parent, vjp in self._nodes[index]:
                contribution = vjp(g)
                if parent in grads:
                    grads[parent] = grads[parent] + contribution
                else:
                    grads[parent] = contribution
            if not self._nodes[index]:
                grads[-index - 1] = g

        out = {}
        for name, var in wrt.items():
            g = grads.get(-var.index - 1)
            out[name] = np.zeros_like(var.value) if g is None else np.array(g, dtype=np.float64)
        return out


class Variable:
    """An array value together with its position on a tape."""

    __array_ufunc__ = None

    def __init__(self, value, tape, index):
        self.value = value
        self.tape = tape
        self.index = index

    def __repr__(self):
        return "Variable(shape=%s, index=%d)" % (self.value.shape, self.index)

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)


class StopGradientLedger:
    """Records, then replays, the values a forward pass treats as constants.

    Sliding-buffer histories, the Auto-Phi gradient fed to the reflexive
    network, workspace masks and sampled actions are all held fixed by the
    tape. Replaying them lets a finite-difference check re-run the forward
    pass under exactly the same stop-gradient semantics.

    Parameters
    ----------
    entries : list, optional
        Values recorded by an earlier pass; when given the ledger replays.
    """

    def __init__(self, entries=None):
        self.replaying = entries is not None
        self.entries = [] if entries is None else list(entries)
        self._cursor = 0

    def hold(self, compute):
        """Return ``compute()`` while recording, the next stored value while replaying."""
        if not self.replaying:
            value = compute()
            self.entries.append(value)
            return value
        if self._cursor >= len(self.entries):
            raise RuntimeError("ledger exhausted after %d entries" % len(self.entries))
        value = self.entries[self._cursor]
        self._cursor += 1
        return value

    def replay(self):
        """A fresh ledger replaying this one's entries."""
        return StopGradientLedger(self.entries)


def value_of(x):
    """The array behind ``x`` (identity for arrays and scalars)."""
    if isinstance(x, Variable):
        return x.value
    return np.asarray(x, dtype=np.float64)


def _tape_of(operands):
    tape = None
    for x in operands:
        if isinstance(x, Variable):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise ValueError("operands are recorded on different tapes")
    return tape


def _apply(value, operands, vjps):
    tape = _tape_of(operands)
    if tape is None:
        return value
    parents = [(x.index, vjp) for x, vjp in zip(operands, vjps) if isinstance(x, Variable)]
    return tape._push(value, parents)


def _unbroadcast(grad, shape):
    grad = np.asarray(grad)
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def add(a, b):
    av, bv = value_of(a), value_of(b)
    return _apply(
        av + bv,
        (a, b),
        (lambda g: _unbroadcast(g, av.shape), lambda g: _unbroadcast(g, bv.shape)),
    )


def sub(a, b):
    av, bv = value_of(a), value_of(b)
    return _apply(
        av - bv,
        (a, b),
        (lambda g: _unbroadcast(g, av.shape), lambda g: -_unbroadcast(g, bv.shape)),
    )


def mul(a, b):
    av, bv = value_of(a), value_of(b)
    return _apply(
        av * bv,
        (a, b),
        (lambda g: _unbroadcast(g * bv, av.shape), lambda g: _unbroadcast(g * av, bv.shape)),
    )


def neg(a):
    return _apply(-value_of(a), (a,), (lambda g: -g,))


def scale(a, c):
    """Multiply by the constant ``c``."""
    c = float(c)
    return _apply(c * value_of(a), (a,), (lambda g: c * g,))


def matmul(a, b):
    """Matrix product of two 2-D operands."""
    av, bv = value_of(a), value_of(b)
    if av.ndim != 2 or bv.ndim != 2:
        raise ValueError("matmul expects 2-D operands, got %s and %s" % (av.shape, bv.shape))
    if av.shape[1] != bv.shape[0]:
        raise ValueError("shape mismatch: %s cannot multiply %s" % (av.shape, bv.shape))
    return _apply(av @ bv, (a, b), (lambda g: g @ bv.T, lambda g: av.T @ g))


def linear(x, weight, bias=None):
    """Batched affine map ``x @ weight.T + bias``.

    Parameters
    ----------
    x : (B, in) array or Variable
    weight : (out, in) array or Variable
    bias : (out,) array or Variable, optional
    """
    xv, wv = value_of(x), value_of(weight)
    if xv.ndim != 2 or wv.ndim != 2 or xv.shape[1] != wv.shape[1]:
        raise ValueError("linear: input %s does not match weight %s" % (xv.shape, wv.shape))
    out = xv @ wv.T
    operands = [x, weight]
    vjps = [lambda g: g @ wv, lambda g: g.T @ xv]
    if bias is not None:
        out = out + value_of(bias)
        operands.append(bias)
        vjps.append(lambda g: g.sum(axis=0))
    return _apply(out, operands, vjps)


def gelu(x):
    xv = value_of(x)
    return _apply(_gelu(xv), (x,), (lambda g: g * _gelu_grad(xv),))


def tanh(x):
    out = np.tanh(value_of(x))
    return _apply(out, (x,), (lambda g: g * (1.0 - out * out),))


def sigmoid(x):
    out = expit(value_of(x))
    return _apply(out, (x,), (lambda g: g * out * (1.0 - out),))


def reshape(x, shape):
    xv = value_of(x)
    return _apply(xv.reshape(shape), (x,), (lambda g: np.reshape(g, xv.shape),))


def concat(parts, axis=-1):
    """Concatenate along ``axis``; the gradient is split back into the parts."""
    values = [value_of(p) for p in parts]
    out = np.concatenate(values, axis=axis)
    bounds = np.cumsum([0] + [v.shape[axis] for v in values])

    def slicer(lo, hi):
        def vjp(g):
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, hi)
            return g[tuple(index)]

        return vjp

    return _apply(out, parts, [slicer(lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:])])


def reduce_sum(x, axis=None):
    xv = value_of(x)
    out = np.sum(xv, axis=axis)

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, xv.shape).copy()

    return _apply(np.asarray(out, dtype=np.float64), (x,), (vjp,))


def reduce_mean(x, axis=None):
    xv = value_of(x)
    count = xv.size if axis is None else xv.shape[axis]
    return scale(reduce_sum(x, axis=axis), 1.0 / count)


def log_softmax(logits):
    """Log-probabilities along the last axis."""
    lv = value_of(logits)
    shifted = lv - lv.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    probs = np.exp(out)
    return _apply(out, (logits,), (lambda g: g - probs * g.sum(axis=-1, keepdims=True),))


def log_mix_uniform(logp, floor):
    """Log of ``(1 - floor) * exp(logp) + floor / A`` along the last axis.

    Mixing a distribution over A choices with the uniform one keeps every
    choice at probability ``floor / A`` or more. ``floor=0`` returns
    ``logp`` itself.
    """
    if not 0.0 <= floor < 1.0:
        raise ValueError("floor must lie in [0, 1), got %r" % (floor,))
    if floor == 0.0:
        return logp
    lv = value_of(logp)
    kept = np.log1p(-floor) + lv
    out = np.logaddexp(kept, np.log(floor / lv.shape[-1]))
    weight = np.exp(kept - out)
    return _apply(out, (logp,), (lambda g: g * weight,))


def take_along(x, indices):
    """Pick ``x[i, indices[i]]`` for every row."""
    xv = value_of(x)
    indices = np.asarray(indices, dtype=np.intp)
    rows = np.arange(xv.shape[0])

    def vjp(g):
        out = np.zeros_like(xv)
        out[rows, indices] = g
        return out

    return _apply(xv[rows, indices], (x,), (vjp,))


def auto_phi(z, histories, cfg=None, grad_rule=None):
    """Row-wise Auto-Phi with the newest sample as the only differentiable entry.

    Row ``i`` measures the window ``histories[i]`` followed by ``z[i]``.
    The backward pass applies the fixed-subspace gradient with respect to
    ``z[i]``; ``histories`` are constants.

    Parameters
    ----------
    z : (B, d) array or Variable
    histories : sequence of (n_i, d) numpy.ndarray
    cfg : PhiConfig, optional
    grad_rule : callable, optional
        ``grad_rule(samples, current_index, cfg) -> (d,) array`` replacing
        the analytic rule in the backward pass.

    Returns
    -------
    (B,) array or Variable
    """
    cfg = cfg or PhiConfig()
    zv = value_of(z)
    if zv.ndim != 2 or len(histories) != zv.shape[0]:
        raise ValueError("need one history per row of z")
    values = np.zeros(zv.shape[0])
    grads = np.zeros_like(zv)
    for i, history in enumerate(histories):
        samples = np.vstack([np.reshape(history, (-1, zv.shape[1])), zv[i][None, :]])
        values[i], grads[i], _ = auto_phi_with_grad(samples, -1, cfg)
        if grad_rule is not None:
            grads[i] = grad_rule(samples, -1, cfg)
    return _apply(values, (z,), (lambda g: np.asarray(g)[:, None] * grads,))


def numerical_gradient(fn, x, h=1e-5):
    """Central-difference gradient of a scalar function.

    Parameters
    ----------
    fn : callable
        Maps an array shaped like ``x`` to a float.
    x : numpy.ndarray
    h : float, default 1e-5

    Returns
    -------
    numpy.ndarray
        Same shape as ``x``.
    """
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        plus = float(fn(x))
        flat[i] = keep - h
        minus = float(fn(x))
        flat[i] = keep
        out[i] = (plus - minus) / (2.0 * h)
    return grad


def relative_error(a, b, floor=1e-12):
    """``||a - b|| / max(||a||, ||b||, floor)``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale_ = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / scale_)
