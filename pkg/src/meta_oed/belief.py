"""Gaussian belief states over partitioned (transferable, task-specific) parameters.

Conventions: all densities and divergences are in nats; univariate Gaussians are
parameterized by variance, never standard deviation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

_SYM_RTOL = 1e-12
_DEGENERATE_RTOL = 1e-10
_LOG_2PI = math.log(2.0 * math.pi)


class DegenerateCovarianceError(ValueError):
    """Raised when a covariance (or a required block of it) is not usable."""


def _frozen_array(values, ndim):
    arr = np.array(values, dtype=float)
    if arr.ndim != ndim:
        raise ValueError(f"expected a {ndim}-d array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("array entries must be finite")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class UnivariateGaussian:
    """A single-outcome Gaussian law, N(mean, variance)."""

    mean: float
    variance: float

    def __post_init__(self):
        if not (math.isfinite(self.mean) and math.isfinite(self.variance)):
            raise ValueError("mean and variance must be finite")
        if self.variance <= 0.0:
            raise ValueError(f"variance must be > 0, got {self.variance}")

    def log_pdf(self, y):
        y = np.asarray(y, dtype=float)
        return -0.5 * (_LOG_2PI + math.log(self.variance)) - (y - self.mean) ** 2 / (
            2.0 * self.variance
        )


@dataclass(frozen=True)
class Gaussian:
    """A multivariate Gaussian with a validated, Cholesky-backed covariance."""

    mean: np.ndarray
    cov: np.ndarray
    _chol: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mean = _frozen_array(self.mean, ndim=1)
        cov = np.array(self.cov, dtype=float)
        if cov.ndim != 2 or cov.shape != (mean.size, mean.size):
            raise ValueError(f"covariance shape {cov.shape} does not match mean size {mean.size}")
        if not np.all(np.isfinite(cov)):
            raise ValueError("covariance entries must be finite")
        scale = np.abs(cov).max()
        if scale > 0 and np.abs(cov - cov.T).max() > _SYM_RTOL * scale:
            raise ValueError("covariance is not symmetric")
        cov = 0.5 * (cov + cov.T)
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise DegenerateCovarianceError("covariance is not positive definite") from None
        cov.setflags(write=False)
        chol.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "_chol", chol)

    @property
    def dim(self):
        return self.mean.size

    def log_pdf(self, points):
        """Log density at one point (shape (d,)) or a batch (shape (n, d))."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        diff = pts - self.mean
        sol = solve_triangular(self._chol, diff.T, lower=True)
        log_det = 2.0 * np.sum(np.log(np.diag(self._chol)))
        out = -0.5 * (self.dim * _LOG_2PI + log_det + np.sum(sol * sol, axis=0))
        return float(out[0]) if np.asarray(points).ndim == 1 else out

    def sample(self, n, rng):
        z = rng.standard_normal((n, self.dim))
        return self.mean + z @ self._chol.T


@dataclass(frozen=True)
class GaussianBelief(Gaussian):
    """Joint Gaussian over (Theta, Psi); ``transferable_dims`` indexes the Theta block."""

    transferable_dims: tuple[int, ...] = ()

    def __post_init__(self):
        super().__post_init__()
        dims = tuple(int(i) for i in self.transferable_dims)
        if len(dims) != len(set(dims)) or any(i < 0 or i >= self.dim for i in dims):
            raise ValueError("transferable_dims must be distinct indices into the mean")
        if not dims or len(dims) == self.dim:
            raise ValueError("both the transferable and task-specific blocks must be non-empty")
        object.__setattr__(self, "transferable_dims", dims)

    @property
    def task_dims(self):
        return tuple(i for i in range(self.dim) if i not in self.transferable_dims)

    def theta_block(self):
        idx = np.asarray(self.transferable_dims)
        return self.mean[idx], self.cov[np.ix_(idx, idx)]

    def psi_block(self):
        idx = np.asarray(self.task_dims)
        return self.mean[idx], self.cov[np.ix_(idx, idx)]

    def cross_block(self):
        """Cov(Psi, Theta): rows are task-specific dims, columns transferable dims."""
        return self.cov[np.ix_(np.asarray(self.task_dims), np.asarray(self.transferable_dims))]


def kl_gaussian(a: UnivariateGaussian, b: UnivariateGaussian) -> float:
    """KL(a || b) between univariate Gaussians, in nats."""
    ratio = a.variance / b.variance
    return 0.5 * (math.log(b.variance / a.variance) + ratio - 1.0) + (
        a.mean - b.mean
    ) ** 2 / (2.0 * b.variance)


def _theta_chol(belief: GaussianBelief):
    _, s_tt = belief.theta_block()
    eigs = np.linalg.eigvalsh(s_tt)
    scale = max(float(eigs[-1]), float(np.abs(belief.cov).max()))
    if eigs[0] <= 0.0 or eigs[0] < _DEGENERATE_RTOL * scale:
        raise DegenerateCovarianceError(
            "transferable-block covariance is numerically singular; refusing to condition"
        )
    return np.linalg.cholesky(s_tt)


def condition_on_theta(belief: GaussianBelief, theta) -> Gaussian:
    """The Gaussian law of Psi given Theta = theta."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    m_t, _ = belief.theta_block()
    if theta.shape != m_t.shape:
        raise ValueError(f"theta shape {theta.shape} does not match the transferable block")
    l_tt = _theta_chol(belief)
    m_p, s_pp = belief.psi_block()
    s_pt = belief.cross_block()
    gain = cho_solve((l_tt, True), s_pt.T).T  # S_pt S_tt^{-1}
    mean = m_p + gain @ (theta - m_t)
    cov = s_pp - gain @ s_pt.T
    return Gaussian(mean=mean, cov=cov)


def conditional_psi_cov(belief: GaussianBelief) -> np.ndarray:
    """Cov(Psi | Theta), which does not depend on the conditioning value."""
    l_tt = _theta_chol(belief)
    s_pt = belief.cross_block()
    return belief.psi_block()[1] - cho_solve((l_tt, True), s_pt.T).T @ s_pt.T


def marginal_theta(belief: GaussianBelief) -> Gaussian:
    m, s = belief.theta_block()
    return Gaussian(mean=m, cov=s)


def log_pdf(dist, point):
    """Log density of a Gaussian / UnivariateGaussian at ``point``, in nats."""
    if isinstance(dist, UnivariateGaussian):
        return float(dist.log_pdf(point))
    return dist.log_pdf(point)
