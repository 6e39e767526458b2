"""Deterministic Gauss-Hermite information quantities for the binary preference model.

These routines back the misjudgment diagnostics: they depend only on the belief
and the design grid (no Monte Carlo), so diagnostics are reproducible without
reference to any sampling-based estimator.  1-d conditionals use a 400-node rule;
joint expectations run the same rule through the conditional decomposition.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from scipy.special import roots_hermitenorm

from meta_oed.belief import GaussianBelief
from meta_oed.closed_form import argmax_design
from meta_oed.models import Design, sigmoid

COND_NODES = 400


@lru_cache(maxsize=8)
def _hermite(n):
    nodes, weights = roots_hermitenorm(n)
    weights = weights / weights.sum()
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def gauss_hermite_nodes(n=COND_NODES):
    """Standard-normal quadrature nodes and normalized weights."""
    return _hermite(n)


def binary_entropy(p):
    p = np.asarray(p, dtype=float)
    out = np.zeros_like(p)
    for q in (p, 1.0 - p):
        mask = q > 0.0
        out = out - np.where(mask, q * np.log(np.where(mask, q, 1.0)), 0.0)
    return out if out.ndim else float(out)


def binary_kl(a, b):
    """KL(Bernoulli(a) || Bernoulli(b)) in nats, with 0 log 0 = 0."""
    total = 0.0
    for qa, qb in ((a, b), (1.0 - a, 1.0 - b)):
        if qa > 0.0:
            total += qa * (math.log(qa) - math.log(qb))
    return total


def conditional_psi_coefficients(belief: GaussianBelief):
    """(base, gain, sd) with psi | theta ~ N(base + gain * theta, sd^2), scalar blocks."""
    m_t = float(belief.theta_block()[0][0])
    v_t = float(belief.theta_block()[1][0, 0])
    m_p = float(belief.psi_block()[0][0])
    v_p = float(belief.psi_block()[1][0, 0])
    c = float(belief.cross_block()[0, 0])
    gain = c / v_t
    var = v_p - gain * c
    return m_p - gain * m_t, gain, math.sqrt(max(var, 0.0))


def success_given_theta(belief: GaussianBelief, design: Design, thetas, n_nodes=COND_NODES):
    """P(y=1 | x, theta) for each theta, integrating psi out of the belief."""
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    base, gain, sd = conditional_psi_coefficients(belief)
    nodes, weights = _hermite(n_nodes)
    psi = (base + gain * thetas)[:, None] + sd * nodes[None, :]
    return sigmoid(thetas[:, None] - psi * float(design.x[0])) @ weights


def _theta_grid(belief: GaussianBelief, n_nodes):
    nodes, weights = _hermite(n_nodes)
    m_t = float(belief.theta_block()[0][0])
    sd_t = math.sqrt(float(belief.theta_block()[1][0, 0]))
    return m_t + sd_t * nodes, weights


def marginal_success(belief: GaussianBelief, design: Design, n_nodes=COND_NODES) -> float:
    """P(y=1 | x) under the joint belief."""
    thetas, weights = _theta_grid(belief, n_nodes)
    return float(weights @ success_given_theta(belief, design, thetas, n_nodes))


def info_gains(belief: GaussianBelief, design: Design, n_nodes=COND_NODES):
    """(eig, etig, etsig) for one design, all in nats, fully deterministic."""
    thetas, weights = _theta_grid(belief, n_nodes)
    base, gain, sd = conditional_psi_coefficients(belief)
    nodes, _ = _hermite(n_nodes)
    psi = (base + gain * thetas)[:, None] + sd * nodes[None, :]
    p = sigmoid(thetas[:, None] - psi * float(design.x[0]))  # (n_theta, n_psi)
    p_theta = p @ weights
    p_marg = float(weights @ p_theta)
    h_marg = binary_entropy(p_marg)
    etig = float(h_marg - weights @ binary_entropy(p_theta))
    eig = float(h_marg - weights @ (binary_entropy(p) @ weights))
    return max(eig, 0.0), max(etig, 0.0), max(eig - etig, 0.0)


def etig_sweep(belief: GaussianBelief, designs, n_nodes=COND_NODES):
    return np.array([info_gains(belief, d, n_nodes)[1] for d in designs])


def x_etig_index(belief: GaussianBelief, designs, n_nodes=COND_NODES) -> int:
    """Index of the design with the largest transferable information gain."""
    return argmax_design(etig_sweep(belief, designs, n_nodes))
