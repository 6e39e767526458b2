"""Importance-weighted nested Monte Carlo acquisition estimates.

The binary preference model has no closed-form information gains, so ETIG and
ETSIG are estimated from an outer reservoir of weighted parameter samples
(drawn from a moment-matched Gaussian proposal, weights self-normalized
against the current target density) and, per outer draw, a small set of inner
task-specific samples from the proposal's analytic conditional.  The inner set
always includes the outer draw's own task-specific value, which keeps the
inner mixture strictly positive at every outcome the outer draw can produce.
The sum over outcomes is exact (two of them), so Monte Carlo error enters only
through the parameter samples.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from meta_oed._kernels import nmc_sweep
from meta_oed.belief import DegenerateCovarianceError, GaussianBelief
from meta_oed.models import Design, Preference, TaskModel
from meta_oed.quadrature import conditional_psi_coefficients

logger = logging.getLogger(__name__)

DEFAULT_INFLATION = 1.44


class ResampleRequiredError(ValueError):
    """The weights have collapsed; continuing needs a fresh sample set."""


@dataclass(frozen=True)
class WeightedSampleSet:
    """Outer importance-sampling reservoir.

    ``samples`` are rows (theta, psi) drawn from ``variational``; ``weights``
    are self-normalized against the target whose log density produced them.
    The target callable rides along so estimators can weight inner conditional
    draws against the same target.
    """

    samples: np.ndarray
    weights: np.ndarray
    variational: GaussianBelief
    target_log_density: Callable | None = None

    def __post_init__(self):
        samples = np.array(self.samples, dtype=float)
        weights = np.array(self.weights, dtype=float)
        if samples.ndim != 2 or samples.shape[0] < 2:
            raise ValueError("need at least two parameter samples")
        if weights.shape != (samples.shape[0],):
            raise ValueError("weights must align one-to-one with samples")
        if np.any(weights < 0.0) or abs(float(weights.sum()) - 1.0) > 1e-9:
            raise ValueError("weights must be non-negative and sum to 1")
        if samples.shape[1] != self.variational.dim:
            raise ValueError("sample dimension does not match the variational belief")
        samples.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "weights", weights)

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    def ess(self) -> float:
        """Effective sample size 1 / sum(w^2); equals n for uniform weights."""
        return float(1.0 / np.sum(self.weights**2))


def fit_variational(
    samples,
    weights,
    inflation: float = DEFAULT_INFLATION,
    transferable_dims=(0,),
) -> GaussianBelief:
    """Moment-match a Gaussian to weighted samples, covariance scaled by ``inflation``.

    The inflation overdisperses the proposal so importance weights can correct
    it; weights with ESS < 2 carry no usable second moment and raise
    ResampleRequiredError instead of returning a degenerate fit.
    """
    samples = np.asarray(samples, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if inflation < 1.0:
        raise ValueError("inflation must be >= 1")
    if np.any(weights < 0.0) or float(weights.sum()) <= 0.0:
        raise ValueError("weights must be non-negative with positive sum")
    w = weights / weights.sum()
    ess = float(1.0 / np.sum(w**2))
    if ess < 2.0:
        raise ResampleRequiredError(f"effective sample size {ess:.3f} < 2")
    mean = w @ samples
    centered = samples - mean
    cov = inflation * ((centered * w[:, None]).T @ centered)
    cov = 0.5 * (cov + cov.T)
    dim = cov.shape[0]
    scale = max(float(np.trace(cov)) / dim, np.finfo(float).tiny)
    jitter = 0.0
    for _ in range(12):
        try:
            return GaussianBelief(
                mean=mean, cov=cov + jitter * np.eye(dim), transferable_dims=transferable_dims
            )
        except DegenerateCovarianceError:
            jitter = max(jitter * 10.0, 1e-12 * scale)
    raise ResampleRequiredError("fitted covariance could not be repaired by jitter")


def refresh_samples(target_log_density, variational: GaussianBelief, n: int, rng) -> WeightedSampleSet:
    """Draw a fresh reservoir from the proposal, weighted against the target.

    ``target_log_density`` maps an (n, dim) array of parameter rows to n log
    densities (an unnormalized target is fine; weights are self-normalized).
    """
    if n < 2:
        raise ValueError("need at least two samples")
    draws = variational.sample(n, rng)
    log_target = np.asarray(target_log_density(draws), dtype=float)
    if log_target.shape != (n,):
        raise ValueError("target_log_density must return one log value per sample row")
    if np.any(np.isnan(log_target)) or np.any(np.isposinf(log_target)):
        raise ValueError("target log density returned NaN or +inf")
    log_w = log_target - variational.log_pdf(draws)
    norm = logsumexp(log_w)
    if not np.isfinite(norm):
        raise ResampleRequiredError("all importance weights are zero under the target")
    weights = np.exp(log_w - norm)
    weights = weights / weights.sum()
    out = WeightedSampleSet(draws, weights, variational, target_log_density)
    logger.debug("refreshed reservoir: n=%d ess=%.1f", n, out.ess())
    return out


# ---------------------------------------------------------------------------
# estimation


def _default_m(n: int) -> int:
    return max(int(math.isqrt(n)), 1)


def _validated_m(model: TaskModel, sample_set: WeightedSampleSet, m) -> int:
    if not isinstance(model, Preference):
        raise TypeError("nested MC acquisition requires the binary preference model")
    if sample_set.target_log_density is None:
        raise ValueError("sample set carries no target density for inner weights")
    if m is None:
        return _default_m(sample_set.n)
    m = int(m)
    if m < 1:
        raise ValueError("m must be >= 1")
    return m


def _inner_reservoir(sample_set: WeightedSampleSet, m: int, rng):
    """Per outer draw: m fresh conditional samples plus the draw's own psi,
    weighted against the target joint over the proposal conditional."""
    v = sample_set.variational
    t = v.transferable_dims[0]
    p = v.task_dims[0]
    theta = sample_set.samples[:, t]
    psi = sample_set.samples[:, p]
    n = theta.size
    base, gain, sd = conditional_psi_coefficients(v)
    cond_mean = base + gain * theta
    fresh = cond_mean[:, None] + sd * rng.standard_normal((n, m))
    psi_in = np.concatenate([fresh, psi[:, None]], axis=1)
    points = np.empty((n * (m + 1), 2))
    points[:, t] = np.repeat(theta, m + 1)
    points[:, p] = psi_in.ravel()
    log_target = np.asarray(sample_set.target_log_density(points), dtype=float).reshape(n, m + 1)
    log_cond = -0.5 * math.log(2.0 * math.pi * sd * sd) - (psi_in - cond_mean[:, None]) ** 2 / (
        2.0 * sd * sd
    )
    log_w = log_target - log_cond
    log_norm = logsumexp(log_w, axis=1, keepdims=True)
    w_in = np.exp(log_w - log_norm)
    # rows with zero target mass everywhere have zero outer weight; give them
    # uniform inner weights so no NaN reaches the kernels
    dead = ~np.isfinite(log_norm.ravel())
    if np.any(dead):
        w_in[dead] = 1.0 / (m + 1)
    return theta, psi, psi_in, w_in


def estimate_sweep(model: TaskModel, sample_set: WeightedSampleSet, m=None, rng=None):
    """(etig, etsig) arrays over the model's whole design grid, one shared
    reservoir of inner samples for every design."""
    if rng is None:
        raise ValueError("rng is required")
    m = _validated_m(model, sample_set, m)
    theta, psi, psi_in, w_in = _inner_reservoir(sample_set, m, rng)
    xs = np.array([float(d.x[0]) for d in model.designs])
    eig, etig = nmc_sweep(theta, psi, sample_set.weights, psi_in, w_in, xs)
    return etig, eig - etig


def estimate_pair(model: TaskModel, design: Design, sample_set: WeightedSampleSet, m=None, rng=None):
    """(etig, etsig) at one design.  etig + etsig reproduces the plain expected
    information gain estimate exactly, because both come from one reservoir."""
    if rng is None:
        raise ValueError("rng is required")
    m = _validated_m(model, sample_set, m)
    theta, psi, psi_in, w_in = _inner_reservoir(sample_set, m, rng)
    xs = np.array([float(design.x[0])])
    eig, etig = nmc_sweep(theta, psi, sample_set.weights, psi_in, w_in, xs)
    return float(etig[0]), float(eig[0] - etig[0])


def estimate_etig(model, design, sample_set, m=None, rng=None) -> float:
    return estimate_pair(model, design, sample_set, m, rng)[0]


def estimate_etsig(model, design, sample_set, m=None, rng=None) -> float:
    return estimate_pair(model, design, sample_set, m, rng)[1]
