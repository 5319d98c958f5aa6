"""
    Brute-force integration oracle for small Gaussian systems.

    The integration of a Gaussian system is taken to be the mutual
    information across its minimum-information bipartition, normalised by
    the size of the smaller side. This is a tractable stand-in for exact
    integrated information, used to check how faithfully Auto-Phi ranks
    systems.
"""

import itertools
import logging
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from joblib import Parallel, delayed
from scipy.stats import spearmanr

from .autophi import AutoPhiMeter
from .errors import IllConditionedError
from .linalg import RngStream, as_matrix

__all__ = [
    "MAX_ORACLE_DIM",
    "GaussianSystem",
    "CalibrationConfig",
    "CalibrationReport",
    "bipartitions",
    "bipartition_mi",
    "oracle_phi",
    "random_system",
    "calibrate",
]

logger = logging.getLogger(__name__)

MAX_ORACLE_DIM = 12


@dataclass(frozen=True)
class GaussianSystem:
    """A zero-mean Gaussian over ``dim`` coordinates.

    Parameters
    ----------
    sigma : (d, d) numpy.ndarray
        Symmetric positive definite covariance.
    """

    sigma: np.ndarray

    def __post_init__(self):
        sigma = as_matrix(self.sigma, name="sigma")
        if sigma.shape[0] != sigma.shape[1]:
            raise ValueError("sigma must be square")
        if np.max(np.abs(sigma - sigma.T)) > 1e-9 * max(1.0, np.max(np.abs(sigma))):
            raise ValueError("sigma must be symmetric")
        if np.linalg.eigvalsh(sigma)[0] <= 1e-10:
            raise IllConditionedError("sigma is not positive definite")
        object.__setattr__(self, "sigma", sigma)

    @property
    def dim(self):
        return self.sigma.shape[0]


def _logdet(m):
    sign, value = np.linalg.slogdet(m)
    if sign <= 0:
        raise IllConditionedError("covariance block is singular or indefinite")
    return value


def bipartitions(dim):
    """Every split of ``range(dim)`` into two non-empty sides, once each.

    Index 0 is always on the first side, so the generator yields
    ``2**(dim - 1) - 1`` tuples.
    """
    rest = range(1, dim)
    for size in range(0, dim - 1):
        for extra in itertools.combinations(rest, size):
            yield (0,) + extra


def bipartition_mi(system, part):
    """Gaussian mutual information across the cut ``part | complement``.

    ``I(A; B) = 1/2 * (ln det Sigma_A + ln det Sigma_B - ln det Sigma)``.

    Parameters
    ----------
    system : GaussianSystem
    part : sequence of int
        Non-empty proper subset of the coordinates.

    Returns
    -------
    float
        Non-negative; rounding below zero is clipped.
    """
    a = sorted(set(int(i) for i in part))
    if not a or len(a) >= system.dim or a[0] < 0 or a[-1] >= system.dim:
        raise ValueError("part must be a non-empty proper subset of range(%d), got %s" % (system.dim, list(part)))
    b = [i for i in range(system.dim) if i not in set(a)]
    s = system.sigma
    mi = 0.5 * (_logdet(s[np.ix_(a, a)]) + _logdet(s[np.ix_(b, b)]) - _logdet(s))
    return max(mi, 0.0)


def oracle_phi(system, return_partition=False):
    """Normalised mutual information of the minimum-information bipartition.

    Parameters
    ----------
    system : GaussianSystem
        At most :data:`MAX_ORACLE_DIM` coordinates.
    return_partition : bool, default False
        Also return the minimising side containing index 0.

    Returns
    -------
    float
        ``min_A I(A; B) / min(|A|, |B|)``.
    """
    if system.dim > MAX_ORACLE_DIM:
        raise ValueError(
            "oracle enumerates 2**(d-1)-1 cuts; dim %d exceeds %d" % (system.dim, MAX_ORACLE_DIM)
        )
    if system.dim < 2:
        raise ValueError("a system needs at least 2 coordinates to be cut")
    best, best_part = np.inf, None
    for part in bipartitions(system.dim):
        value = bipartition_mi(system, part) / min(len(part), system.dim - len(part))
        if value < best:
            best, best_part = value, part
    if return_partition:
        return best, best_part
    return best


def random_system(rng, dim, ridge=0.1):
    """``A A^T + ridge * I`` with standard normal ``A``."""
    a = rng.normal(size=(dim, dim))
    return GaussianSystem(a @ a.T + ridge * np.eye(dim))


@dataclass(frozen=True)
class CalibrationConfig:
    """Settings of the Auto-Phi calibration study.

    Parameters
    ----------
    n_systems : int, default 100
    min_dim, max_dim : int, default 8, 10
        System sizes are drawn uniformly from this inclusive range.
    n_samples : int, default 64
        Samples drawn from each system for Auto-Phi.
    ridge : float, default 0.1
    seed : int, default 1
    n_jobs : int, default 1
    """

    n_systems: int = 100
    min_dim: int = 8
    max_dim: int = 10
    n_samples: int = 64
    ridge: float = 0.1
    seed: int = 1
    n_jobs: int = 1

    def __post_init__(self):
        if self.n_systems < 30:
            raise ValueError("calibration needs at least 30 systems, got %d" % self.n_systems)
        if not 2 <= self.min_dim <= self.max_dim <= MAX_ORACLE_DIM:
            raise ValueError("need 2 <= min_dim <= max_dim <= %d" % MAX_ORACLE_DIM)
        if self.n_samples < 2:
            raise ValueError("n_samples must be at least 2")
        if self.ridge <= 0:
            raise ValueError("ridge must be positive")


@dataclass
class CalibrationReport:
    spearman: float
    pvalue: float
    rows: List[Tuple[int, int, float, float]]


def _measure(system_id, cfg):
    rng = RngStream(cfg.seed).spawn("system%d" % system_id)
    dim = int(rng.integers(cfg.min_dim, cfg.max_dim + 1))
    system = random_system(rng, dim, cfg.ridge)
    chol = np.linalg.cholesky(system.sigma)
    samples = rng.normal(size=(cfg.n_samples, dim)) @ chol.T
    auto = AutoPhiMeter(rank=None).fit_transform([samples])[0]
    return system_id, dim, oracle_phi(system), float(auto)


def calibrate(cfg=None):
    """Rank-correlate Auto-Phi with the oracle over random systems.

    Every system draws its own substream of ``cfg.seed``, so results do not
    depend on ``n_jobs``.

    Returns
    -------
    CalibrationReport
        Spearman correlation, its p-value and one
        ``(system_id, dim, oracle_phi, auto_phi_rel)`` row per system.
    """
    cfg = cfg or CalibrationConfig()
    rows = Parallel(n_jobs=cfg.n_jobs)(delayed(_measure)(i, cfg) for i in range(cfg.n_systems))
    rows = sorted(rows)
    rho, pvalue = spearmanr([r[2] for r in rows], [r[3] for r in rows])
    logger.info("calibration over %d systems: spearman %.3f", len(rows), rho)
    return CalibrationReport(float(rho), float(pvalue), rows)
