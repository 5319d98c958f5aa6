"""
    Dense linear algebra used by the Auto-Phi surrogate and the cells.

    Vectors and matrices are plain float64 numpy arrays. The symmetric
    eigensolver is a cyclic Jacobi iteration; a LAPACK path through
    ``numpy.linalg.eigh`` is available under the same ordering and sign
    conventions for the hot loops of training.
"""

import zlib

import numpy as np
from scipy.special import erf

from .errors import ConvergenceError, InsufficientDataError

__all__ = [
    "RngStream",
    "as_vector",
    "as_matrix",
    "matmul",
    "covariance",
    "sym_eig",
    "frobenius_norm",
    "gelu",
    "gelu_grad",
]

_SQRT2 = np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


class RngStream:
    """Seeded random stream with named, reproducible substreams.

    Parameters
    ----------
    seed : int
        64-bit seed. Identical seeds give identical draws on every platform
        (PCG64 through ``numpy.random.SeedSequence``).

    Examples
    --------
    Substreams are keyed by name, so adding a new consumer does not shift the
    draws of the existing ones::

        >>> rng = RngStream(3)
        >>> init_rng = rng.spawn("init")
        >>> act_rng = rng.spawn("actions")
    """

    def __init__(self, seed, _key=()):
        seed = int(seed)
        if seed < 0 or seed >= 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer, got %d" % seed)
        self.seed = seed
        self._key = tuple(_key)
        sequence = np.random.SeedSequence(entropy=seed, spawn_key=self._key)
        self._generator = np.random.Generator(np.random.PCG64(sequence))

    def __repr__(self):
        return "RngStream(seed=%d, key=%s)" % (self.seed, self._key)

    def spawn(self, name):
        """Independent child stream identified by ``name``."""
        return RngStream(self.seed, self._key + (zlib.crc32(str(name).encode("utf-8")),))

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._generator.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._generator.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self._generator.integers(low, high, size)

    def categorical(self, probs):
        """Draw one index per row of ``probs`` by inverse-CDF sampling."""
        probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
        cdf = np.cumsum(probs, axis=1)
        u = self._generator.uniform(0.0, 1.0, size=probs.shape[0]) * cdf[:, -1]
        idx = (cdf <= u[:, None]).sum(axis=1)
        return np.minimum(idx, probs.shape[1] - 1)


def as_vector(x, dim=None, name="vector"):
    """Validate and convert ``x`` to a finite float64 vector."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError("%s must be one-dimensional, got shape %s" % (name, v.shape))
    if dim is not None and v.shape[0] != dim:
        raise ValueError("%s must have dimension %d, got %d" % (name, dim, v.shape[0]))
    if not np.all(np.isfinite(v)):
        raise ValueError("%s has non-finite entries" % name)
    return v


def as_matrix(m, shape=None, name="matrix"):
    """Validate and convert ``m`` to a finite float64 matrix."""
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError("%s must be two-dimensional, got shape %s" % (name, a.shape))
    if shape is not None and a.shape != tuple(shape):
        raise ValueError("%s must have shape %s, got %s" % (name, tuple(shape), a.shape))
    if not np.all(np.isfinite(a)):
        raise ValueError("%s has non-finite entries" % name)
    return a


def matmul(a, b):
    """Matrix product ``a @ b`` with an explicit shape check.

    Parameters
    ----------
    a : (m, k) numpy.ndarray
    b : (k, n) or (k,) numpy.ndarray

    Returns
    -------
    numpy.ndarray
        The product, shape (m, n) or (m,).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim not in (1, 2):
        raise ValueError("matmul expects a matrix and a matrix or vector, got %s and %s" % (a.shape, b.shape))
    if a.shape[1] != b.shape[0]:
        raise ValueError("shape mismatch: %s cannot multiply %s" % (a.shape, b.shape))
    return a @ b


def covariance(samples):
    """Mean-centred covariance with divisor N.

    Parameters
    ----------
    samples : (N, d) array-like or list of (d,) vectors
        At least two samples of equal dimension.

    Returns
    -------
    (d, d) numpy.ndarray
        Symmetric positive semidefinite matrix
        ``1/N * sum_n (z_n - mean)(z_n - mean)^T``.
    """
    z = np.asarray(samples, dtype=np.float64)
    if z.ndim != 2:
        raise ValueError("samples must stack to an (N, d) array, got shape %s" % (z.shape,))
    n = z.shape[0]
    if n < 2:
        raise InsufficientDataError("covariance needs at least 2 samples, got %d" % n)
    centered = z - z.mean(axis=0)
    sigma = centered.T @ centered / n
    return 0.5 * (sigma + sigma.T)


def frobenius_norm(m):
    """Square root of the sum of squared entries."""
    a = np.asarray(m, dtype=np.float64)
    return float(np.sqrt(np.sum(a * a)))


def _fix_signs(vecs):
    # largest-magnitude component of every column is made non-negative
    rows = np.argmax(np.abs(vecs), axis=0)
    signs = np.where(vecs[rows, np.arange(vecs.shape[1])] < 0, -1.0, 1.0)
    return vecs * signs


def _jacobi(a, tol, max_sweeps):
    a = a.copy()
    n = a.shape[0]
    v = np.eye(n)
    scale = frobenius_norm(a)
    for _ in range(max_sweeps):
        off = np.sqrt(max(np.sum(a * a) - np.sum(np.diag(a) ** 2), 0.0))
        if off <= tol * scale:
            return np.diag(a).copy(), v
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = (1.0 if theta >= 0 else -1.0) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c

                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q

                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0

                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq

    off = np.sqrt(max(np.sum(a * a) - np.sum(np.diag(a) ** 2), 0.0))
    if off <= tol * scale:
        return np.diag(a).copy(), v
    raise ConvergenceError(
        "Jacobi eigensolver did not converge in %d sweeps (off-diagonal %.3e)" % (max_sweeps, off)
    )


def sym_eig(m, tol=1e-10, method="jacobi", max_sweeps=50):
    """Eigendecomposition of a symmetric matrix.

    Parameters
    ----------
    m : (d, d) array-like
        Symmetric matrix (within 1e-9 relative to its largest entry).
    tol : float, default 1e-10
        Stop when the off-diagonal Frobenius mass is at most ``tol * ||m||_F``.
    method : {'jacobi', 'lapack'}, default 'jacobi'
        Cyclic Jacobi rotations, or ``numpy.linalg.eigh``.
    max_sweeps : int, default 50
        Sweep budget of the Jacobi iteration.

    Returns
    -------
    eigvals : (d,) numpy.ndarray
        Eigenvalues in descending order.
    eigvecs : (d, d) numpy.ndarray
        Orthonormal eigenvectors in columns; the largest-magnitude component
        of each column is non-negative.
    """
    a = as_matrix(m, name="m")
    if a.shape[0] != a.shape[1]:
        raise ValueError("m must be square, got shape %s" % (a.shape,))
    if tol <= 0:
        raise ValueError("tol must be positive")
    asym = np.max(np.abs(a - a.T)) if a.size else 0.0
    if asym > 1e-9 * max(1.0, np.max(np.abs(a))):
        raise ValueError("m is not symmetric (max asymmetry %.3e)" % asym)
    a = 0.5 * (a + a.T)

    if method == "jacobi":
        vals, vecs = _jacobi(a, tol, max_sweeps)
    elif method == "lapack":
        vals, vecs = np.linalg.eigh(a)
    else:
        raise ValueError("method must be 'jacobi' or 'lapack', got %r" % (method,))

    order = np.argsort(-vals, kind="stable")
    return vals[order], _fix_signs(vecs[:, order])


def gelu(x):
    """Exact GELU, ``x * Phi(x)`` with the standard normal CDF."""
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_grad(x):
    """Derivative of :func:`gelu`, ``Phi(x) + x * phi(x)``."""
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * (1.0 + erf(x / _SQRT2)) + x * _INV_SQRT2PI * np.exp(-0.5 * x * x)
