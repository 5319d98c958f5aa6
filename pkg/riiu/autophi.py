"""
    Relative Auto-Phi: the residual covariance energy left after projecting
    away the top-r principal directions of a sliding window of states,

        phi = ||Sigma - U_r U_r^T Sigma||_F / (||Sigma||_F + eps),

    together with its fixed-subspace gradient, the Lipschitz bound used for
    safe ascent steps, and the block-partitioned variants used to compose
    units.
"""

import warnings
from collections import namedtuple
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import DegenerateSpectrumWarning
from .linalg import as_vector, covariance, frobenius_norm, sym_eig

__all__ = [
    "PhiConfig",
    "SlidingBuffer",
    "PhiDiagnostics",
    "auto_phi_rel",
    "auto_phi_cov",
    "auto_phi_with_grad",
    "grad_auto_phi",
    "lipschitz_bound",
    "ascent_step_check",
    "auto_phi_partitioned",
    "block_shares",
    "AutoPhiMeter",
]

NORMALIZATIONS = ("standard", "sum_of_norms")
DEGENERATE_GAP = 1e-12

PhiDiagnostics = namedtuple("PhiDiagnostics", ["value", "eigengap", "degenerate"])


@dataclass(frozen=True)
class PhiConfig:
    """Auto-Phi settings.

    Parameters
    ----------
    rank : int, default 16
        Number of leading principal directions projected away.
    epsilon : float, default 1e-9
        Denominator regulariser.
    normalization : {'standard', 'sum_of_norms'}
        Only read by :func:`auto_phi_partitioned` and :func:`block_shares`.
        'standard' divides by the Frobenius norm of the whole covariance;
        'sum_of_norms' divides by the sum of the block norms. A window or
        covariance without a partition is a single block, where the two
        agree, so :func:`auto_phi_rel` and :func:`auto_phi_cov` ignore it.
    eig_method : {'lapack', 'jacobi'}
        Eigensolver passed to :func:`riiu.linalg.sym_eig`.
    """

    rank: int = 16
    epsilon: float = 1e-9
    normalization: str = "standard"
    eig_method: str = "lapack"

    def __post_init__(self):
        if not isinstance(self.rank, (int, np.integer)) or self.rank < 1:
            raise ValueError("rank must be a positive integer, got %r" % (self.rank,))
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive, got %r" % (self.epsilon,))
        if self.normalization not in NORMALIZATIONS:
            raise ValueError("normalization must be one of %s" % (NORMALIZATIONS,))
        if self.eig_method not in ("lapack", "jacobi"):
            raise ValueError("eig_method must be 'lapack' or 'jacobi'")


class SlidingBuffer:
    """Ring buffer of concatenated states feeding the Auto-Phi covariance.

    Parameters
    ----------
    capacity : int
        Window length; the oldest entry is overwritten once full.
    dim : int
        Dimension of every entry.
    """

    def __init__(self, capacity, dim):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        if dim < 1:
            raise ValueError("dim must be positive")
        self.capacity = int(capacity)
        self.dim = int(dim)
        self._data = np.zeros((self.capacity, self.dim))
        self.write_ptr = 0
        self.count = 0

    def __repr__(self):
        return "SlidingBuffer(capacity=%d, dim=%d, count=%d)" % (self.capacity, self.dim, self.count)

    def __len__(self):
        return self.count

    def push(self, z):
        """Append ``z``, evicting the oldest entry when full. Returns self."""
        z = as_vector(z, self.dim, name="z")
        self._data[self.write_ptr] = z
        self.write_ptr = (self.write_ptr + 1) % self.capacity
        self.count = min(self.count + 1, self.capacity)
        return self

    def window(self):
        """Stored entries, oldest first, as a (count, dim) copy."""
        if self.count < self.capacity:
            return self._data[: self.count].copy()
        return np.roll(self._data, -self.write_ptr, axis=0)

    def history(self):
        """Entries that survive the next push, oldest first."""
        w = self.window()
        return w[1:] if self.count == self.capacity else w

    def peek_push(self, z):
        """Window as it would read after pushing ``z``; the buffer is untouched."""
        z = as_vector(z, self.dim, name="z")
        return np.vstack([self.history(), z[None, :]])

    def copy(self):
        other = SlidingBuffer(self.capacity, self.dim)
        other._data = self._data.copy()
        other.write_ptr = self.write_ptr
        other.count = self.count
        return other


def _spectral_residual(sigma, rank, method):
    """Residual ``Sigma - U_r U_r^T Sigma``, its norm and the eigengap at ``rank``."""
    d = sigma.shape[0]
    if rank >= d:
        return np.zeros_like(sigma), 0.0, np.inf, 0.0
    vals, vecs = sym_eig(sigma, method=method)
    u = vecs[:, :rank]
    residual = sigma - u @ (u.T @ sigma)
    residual = 0.5 * (residual + residual.T)
    return residual, frobenius_norm(residual), vals[rank - 1] - vals[rank], vals[rank - 1]


def auto_phi_cov(sigma, cfg=None):
    """Relative Auto-Phi of a covariance matrix.

    Parameters
    ----------
    sigma : (d, d) numpy.ndarray
        Symmetric positive semidefinite covariance.
    cfg : PhiConfig, optional

    Returns
    -------
    float
        Value in [0, 1]; 0 when ``sigma`` vanishes or ``cfg.rank >= d``.
    """
    cfg = cfg or PhiConfig()
    sigma = np.asarray(sigma, dtype=np.float64)
    norm = frobenius_norm(sigma)
    if norm == 0.0:
        return 0.0
    _, res, _, _ = _spectral_residual(sigma, cfg.rank, cfg.eig_method)
    return res / (norm + cfg.epsilon)


def auto_phi_rel(samples, cfg=None):
    """Relative Auto-Phi of a window of states.

    Parameters
    ----------
    samples : (N, d) array-like
        Window of concatenated states ``z = [h; mu]``. Fewer than two
        samples is the warm-up regime and gives 0.
    cfg : PhiConfig, optional

    Returns
    -------
    float
        Value in [0, 1].
    """
    z = np.asarray(samples, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 2:
        return 0.0
    return auto_phi_cov(covariance(z), cfg)


_PhiTerms = namedtuple("_PhiTerms", ["value", "outer_grad", "centered", "eigengap", "degenerate"])


def _phi_terms(z, cfg):
    # outer_grad is d(phi)/d(Sigma) with U_r held fixed
    n_samples, d = z.shape
    if n_samples < 2:
        return _PhiTerms(0.0, np.zeros((d, d)), np.zeros_like(z), np.inf, False)
    sigma = covariance(z)
    centered = z - z.mean(axis=0)
    norm = frobenius_norm(sigma)
    if norm == 0.0:
        return _PhiTerms(0.0, np.zeros((d, d)), centered, np.inf, False)

    residual, res, gap, lam_r = _spectral_residual(sigma, cfg.rank, cfg.eig_method)
    denom = norm + cfg.epsilon
    value = res / denom
    outer = -res * sigma / (norm * denom * denom)
    if res > 0.0:
        outer = outer + residual / (res * denom)

    degenerate = bool(gap < DEGENERATE_GAP and lam_r > DEGENERATE_GAP * norm)
    if degenerate:
        warnings.warn(
            "eigenvalues %d and %d coincide (gap %.2e); keeping the solver's ordering"
            % (cfg.rank, cfg.rank + 1, gap),
            DegenerateSpectrumWarning,
        )
    return _PhiTerms(value, outer, centered, gap, degenerate)


def auto_phi_with_grad(samples, current_index=-1, cfg=None):
    """Auto-Phi and its fixed-subspace gradient with respect to one sample.

    Every other sample of the window is a constant.

    Returns
    -------
    value : float
    grad : (d,) numpy.ndarray
    diagnostics : PhiDiagnostics
    """
    cfg = cfg or PhiConfig()
    z = np.asarray(samples, dtype=np.float64)
    if z.ndim != 2:
        raise ValueError("samples must stack to an (N, d) array")
    n_samples = z.shape[0]
    if not -n_samples <= current_index < max(n_samples, 1):
        raise ValueError("current_index %d out of range for %d samples" % (current_index, n_samples))
    terms = _phi_terms(z, cfg)
    if n_samples < 2:
        grad = np.zeros(z.shape[1])
    else:
        grad = (2.0 / n_samples) * terms.outer_grad @ terms.centered[current_index]
    return terms.value, grad, PhiDiagnostics(terms.value, terms.eigengap, terms.degenerate)


def grad_auto_phi(samples, current_index=-1, cfg=None, return_info=False):
    """Gradient of :func:`auto_phi_rel` with respect to ``samples[current_index]``.

    The projection basis U_r is held fixed (Danskin's rule), which agrees
    with the true derivative whenever the r-th eigengap is non-zero. When the
    gap vanishes a :class:`riiu.errors.DegenerateSpectrumWarning` is issued
    and the same fixed-subspace gradient is returned.

    Parameters
    ----------
    samples : (N, d) array-like
    current_index : int, default -1
        Row treated as the differentiable sample.
    cfg : PhiConfig, optional
    return_info : bool, default False
        Also return a :data:`PhiDiagnostics` tuple.

    Returns
    -------
    (d,) numpy.ndarray
    """
    _, grad, info = auto_phi_with_grad(samples, current_index, cfg)
    if return_info:
        return grad, info
    return grad


def lipschitz_bound(sigma, epsilon=1e-9, method="lapack"):
    """Gradient Lipschitz bound ``2 ||Sigma||_2 / (||Sigma||_F + eps)``."""
    sigma = np.asarray(sigma, dtype=np.float64)
    norm = frobenius_norm(sigma)
    if norm == 0.0:
        return 0.0
    vals, _ = sym_eig(sigma, method=method)
    return 2.0 * max(vals[0], 0.0) / (norm + epsilon)


def ascent_step_check(samples, current_index, cfg, eta):
    """Take one gradient-ascent step on a single sample and re-measure.

    Parameters
    ----------
    samples : (N, d) array-like
    current_index : int
    cfg : PhiConfig
    eta : float
        Step size with ``0 <= eta < 2 / L``.

    Returns
    -------
    (phi_before, phi_after) : tuple of float
    """
    z = np.array(samples, dtype=np.float64)
    if eta < 0:
        raise ValueError("eta must be non-negative")
    if z.shape[0] >= 2:
        bound = lipschitz_bound(covariance(z), cfg.epsilon)
        if bound > 0 and eta >= 2.0 / bound:
            raise ValueError("eta=%g violates eta < 2/L = %g" % (eta, 2.0 / bound))
    before, grad, _ = auto_phi_with_grad(z, current_index, cfg)
    z[current_index] = z[current_index] + eta * grad
    return before, auto_phi_rel(z, cfg)


def _block_slices(blocks, d):
    sizes = [int(b) for b in blocks]
    if any(b < 1 for b in sizes) or sum(sizes) != d:
        raise ValueError("block sizes %s must be positive and sum to %d" % (sizes, d))
    bounds = np.cumsum([0] + sizes)
    return [slice(lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:])]


def _block_terms(sigma, blocks, ranks, cfg):
    sigma = np.asarray(sigma, dtype=np.float64)
    slices = _block_slices(blocks, sigma.shape[0])
    if len(ranks) != len(slices):
        raise ValueError("need one rank per block")
    mask = np.zeros(sigma.shape, dtype=bool)
    for sl in slices:
        mask[sl, sl] = True
    if np.any(np.abs(sigma[~mask]) > 1e-12 * max(1.0, np.max(np.abs(sigma)))):
        raise ValueError("sigma is not block-diagonal for blocks %s" % (list(blocks),))
    residuals, norms = [], []
    for sl, r in zip(slices, ranks):
        block = sigma[sl, sl]
        norms.append(frobenius_norm(block))
        residuals.append(_spectral_residual(block, int(r), cfg.eig_method)[1] if norms[-1] > 0 else 0.0)
    return np.array(residuals), np.array(norms)


def auto_phi_partitioned(sigma, blocks, ranks, cfg=None):
    """Auto-Phi of a block-diagonal covariance under the block projection.

    The projection basis is ``diag(U_r1, U_r2, ...)`` built from each block's
    own leading eigenvectors.

    Parameters
    ----------
    sigma : (d, d) numpy.ndarray
        Block-diagonal covariance.
    blocks : sequence of int
        Block sizes summing to d.
    ranks : sequence of int
        Projection rank of every block.
    cfg : PhiConfig, optional
        'standard' gives ``sqrt(sum res_i^2) / (sqrt(sum n_i^2) + eps)``;
        'sum_of_norms' gives ``sum res_i / (sum n_i + eps)``.

    Returns
    -------
    float
    """
    cfg = cfg or PhiConfig()
    res, norms = _block_terms(sigma, blocks, ranks, cfg)
    if cfg.normalization == "sum_of_norms":
        return float(res.sum() / (norms.sum() + cfg.epsilon)) if norms.sum() > 0 else 0.0
    total = np.sqrt(np.sum(norms ** 2))
    return float(np.sqrt(np.sum(res ** 2)) / (total + cfg.epsilon)) if total > 0 else 0.0


def block_shares(sigma, blocks, ranks, cfg=None):
    """Per-block Auto-Phi values.

    Under 'sum_of_norms' every block is divided by the shared denominator
    ``sum n_i + eps``, so the shares add up to :func:`auto_phi_partitioned`.
    Under 'standard' each block is normalised by its own norm.
    """
    cfg = cfg or PhiConfig()
    res, norms = _block_terms(sigma, blocks, ranks, cfg)
    if cfg.normalization == "sum_of_norms":
        denom = norms.sum() + cfg.epsilon
        return res / denom if norms.sum() > 0 else np.zeros_like(res)
    return np.where(norms > 0, res / (norms + cfg.epsilon), 0.0)


class AutoPhiMeter(BaseEstimator, TransformerMixin):
    """A scikit-learn transformer mapping state windows to Auto-Phi values.

    Parameters
    ----------
    rank : int, optional
        Projection rank. When None, each window uses half its dimension.
    epsilon : float, default 1e-9
    normalization : str, default 'standard'

    Examples
    --------
    ::

        >>> meter = AutoPhiMeter(rank=2)
        >>> windows = [np.random.randn(64, 6) for _ in range(3)]
        >>> meter.fit_transform(windows).shape
        (3,)
    """

    def __init__(self, rank=None, epsilon=1e-9, normalization="standard"):
        self.rank = rank
        self.epsilon = epsilon
        self.normalization = normalization

    def fit(self, windows, y=None):
        """Validate the settings; Auto-Phi has nothing to learn."""
        PhiConfig(rank=self.rank or 1, epsilon=self.epsilon, normalization=self.normalization)
        return self

    def _config(self, dim):
        rank = self.rank if self.rank is not None else max(dim // 2, 1)
        return PhiConfig(rank=rank, epsilon=self.epsilon, normalization=self.normalization)

    def transform(self, windows):
        """Auto-Phi of every (N, d) window.

        Returns
        -------
        (n_windows,) numpy.ndarray
        """
        out = []
        for w in windows:
            w = np.asarray(w, dtype=np.float64)
            out.append(auto_phi_rel(w, self._config(w.shape[1])))
        return np.array(out)
