"""Exact information-gain acquisitions and conjugate updates for linear-Gaussian models.

A design ``x`` is read as the coefficient vector of the outcome mean over the
belief's parameter order, y ~ N(x . params, sigma2).  All quantities are in nats.
"""

from __future__ import annotations

import math
import warnings

import numpy as np
from scipy.linalg import cho_solve

from meta_oed.belief import Gaussian, GaussianBelief, conditional_psi_cov
from meta_oed.models import Design


def _coeff(belief: GaussianBelief, design: Design) -> np.ndarray:
    x = design.x if isinstance(design, Design) else np.asarray(design, dtype=float)
    if x.shape != (belief.dim,):
        raise ValueError(f"design length {x.shape} does not match belief dimension {belief.dim}")
    return x


def _check_sigma2(sigma2):
    if sigma2 <= 0.0:
        raise ValueError("sigma2 must be > 0")


def _quad(mat, vec):
    # PD quadratic forms can round to tiny negatives; information terms may not.
    return max(float(vec @ mat @ vec), 0.0)


def eig_lg(belief: GaussianBelief, design, sigma2) -> float:
    """I((Theta, Psi); Y | x): total information in one outcome."""
    _check_sigma2(sigma2)
    x = _coeff(belief, design)
    total = _quad(belief.cov, x)
    return 0.5 * math.log((sigma2 + total) / sigma2)


def etig_lg(belief: GaussianBelief, design, sigma2) -> float:
    """I(Theta; Y | x): the transferable share of one outcome's information."""
    _check_sigma2(sigma2)
    x = _coeff(belief, design)
    total = _quad(belief.cov, x)
    x_psi = x[np.asarray(belief.task_dims)]
    task_only = _quad(conditional_psi_cov(belief), x_psi)
    return max(0.5 * math.log((sigma2 + total) / (sigma2 + task_only)), 0.0)


def etsig_lg(belief: GaussianBelief, design, sigma2) -> float:
    """I(Psi; Y | x, Theta)-style remainder: eig_lg minus etig_lg."""
    return eig_lg(belief, design, sigma2) - etig_lg(belief, design, sigma2)


def posterior_update_lg(belief: GaussianBelief, design, y, sigma2) -> GaussianBelief:
    """Exact conjugate update of the joint Gaussian belief after observing y at x."""
    _check_sigma2(sigma2)
    x = _coeff(belief, design)
    s_x = belief.cov @ x
    denom = sigma2 + float(x @ s_x)
    gain = s_x / denom
    mean = belief.mean + gain * (float(y) - float(x @ belief.mean))
    cov = belief.cov - np.outer(gain, s_x)
    return GaussianBelief(mean=mean, cov=cov, transferable_dims=belief.transferable_dims)


def argmax_design(values) -> int:
    """Index of the largest acquisition value; exact ties resolve to the lowest
    index and are reported as a warning."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("empty acquisition sweep")
    idx = int(np.argmax(values))
    if np.count_nonzero(values == values[idx]) > 1:
        warnings.warn(
            f"acquisition tie at value {values[idx]!r}; choosing the lowest design index",
            stacklevel=2,
        )
    return idx


def etig_lg_sweep(belief: GaussianBelief, designs, sigma2) -> np.ndarray:
    return np.array([etig_lg(belief, d, sigma2) for d in designs])


def toy_design_grid(xbar1=10.0, xbar2=10.0, per_axis=11):
    """Axis-aligned toy action set: designs with one coordinate zero, the other on
    an even grid up to its budget (integer steps at the default budgets)."""
    a = np.linspace(0.0, xbar1, per_axis)
    b = np.linspace(0.0, xbar2, per_axis)
    designs = [Design(np.array([v, 0.0])) for v in a]
    designs += [Design(np.array([0.0, v])) for v in b if v > 0.0]
    return tuple(designs)
