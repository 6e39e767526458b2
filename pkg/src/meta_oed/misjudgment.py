"""Transfer-misjudgment diagnostics for a proposed design.

Central quantities, all in nats, all relative to the learner's current belief:

- ``m_pred``: KL from the true outcome law to the belief's predictive marginal.
- ``m_l(theta)``: KL from the true outcome law to the belief's predictive given a
  candidate transferable value theta; ``m_l_star`` evaluates it at the truth.
- ``rt_star = m_pred - m_l_star``: the expected transferable information gain at
  the true parameters.  Negative values mean the outcome is expected to push the
  transferable belief away from the truth.

Threat levels order ``m_l_star`` against ``m_pred`` and the prior average of
``m_l``; bounds on ``rt_star`` follow from the pseudo-prior construction that
removes an epsilon-ball around the truth from the transferable prior.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import logsumexp

from meta_oed import quadrature
from meta_oed._kernels import pref_rt_table
from meta_oed.belief import (
    GaussianBelief,
    UnivariateGaussian,
    conditional_psi_cov,
    kl_gaussian,
)
from meta_oed.closed_form import argmax_design, etig_lg_sweep
from meta_oed.models import Design, Preference, TaskModel, sigmoid

DEFAULT_THETA_SAMPLES = 2000
DEFAULT_DIAGNOSTIC_SEED = 0
_MIN_OUTSIDE_MASS = 1e-3


class ThreatLevel(Enum):
    NO_THREAT = "none"
    MILD = "mild"
    EXTREME = "extreme"


def classify_threat(m_pred, m_l_star, e_m_l) -> ThreatLevel:
    """Sequential classification; exhaustive because m_pred never exceeds e_m_l."""
    if m_l_star <= m_pred:
        return ThreatLevel.NO_THREAT
    if m_l_star <= e_m_l:
        return ThreatLevel.MILD
    return ThreatLevel.EXTREME


@dataclass(frozen=True)
class MisjudgmentReport:
    design: Design
    m_pred: float
    m_l_star: float
    e_m_l: float
    e_m_l_se: float
    rt_star: float
    level: ThreatLevel
    generic_upper: float
    generic_upper_se: float
    level_bound: float | None
    epsilon: float
    outside_mass: float
    m_pred_tilde: float
    m_pred_tilde_se: float


class DegenerateMarginalError(ValueError):
    """The belief's predictive marginal puts zero mass where the truth has mass."""


def default_epsilon(belief: GaussianBelief) -> float:
    """0.05 of the belief's average transferable marginal standard deviation."""
    _, s_tt = belief.theta_block()
    return 0.05 * float(np.mean(np.sqrt(np.diag(s_tt))))


# ---------------------------------------------------------------------------
# predictive laws


def _lg_predictives(model, belief: GaussianBelief, design: Design):
    """Linear-Gaussian predictive pieces: marginal (mu_m, v_m), conditional-on-theta
    mean function (base + theta @ slope) and variance v_c."""
    x = model.coefficients(design)
    t_idx = np.asarray(belief.transferable_dims)
    p_idx = np.asarray(belief.task_dims)
    x_t, x_p = x[t_idx], x[p_idx]
    mu_m = float(x @ belief.mean)
    v_m = model.sigma2 + max(float(x @ belief.cov @ x), 0.0)
    m_t, s_tt = belief.theta_block()
    m_p, _ = belief.psi_block()
    gain = belief.cross_block() @ np.linalg.inv(s_tt)
    slope = x_t + gain.T @ x_p
    base = float(x_p @ (m_p - gain @ m_t))
    v_c = model.sigma2 + max(float(x_p @ conditional_psi_cov(belief) @ x_p), 0.0)
    return mu_m, v_m, base, slope, v_c


def _lg_true_mean(model, design, theta, psi) -> float:
    x = model.coefficients(design)
    return float(x @ np.concatenate([np.atleast_1d(theta), np.atleast_1d(psi)]))


def _bern_check(p_true, p_model):
    if (p_true > 0.0 and p_model <= 0.0) or (1.0 - p_true > 0.0 and p_model >= 1.0):
        raise DegenerateMarginalError("predictive marginal has no mass on an observed outcome")


# ---------------------------------------------------------------------------
# core operations


def rt(model: TaskModel, belief: GaussianBelief, design: Design, theta, psi) -> float:
    """Expected transferable gain E_y[log p(y|x,theta) - log p(y|x)] at (theta, psi).

    The expectation is under the true outcome law at (theta, psi).  Computed from
    the definition (cross-entropy difference), not via the KL decomposition, so
    the two routes can be checked against each other.
    """
    if isinstance(model, Preference):
        th = float(np.asarray(theta).ravel()[0])
        ps = float(np.asarray(psi).ravel()[0])
        q1 = float(model.success_prob(design, th, ps))
        p_t = float(quadrature.success_given_theta(belief, design, th)[0])
        p_m = quadrature.marginal_success(belief, design)
        _bern_check(q1, p_m)
        _bern_check(q1, p_t)
        out = 0.0
        for qy, pt_y, pm_y in ((q1, p_t, p_m), (1.0 - q1, 1.0 - p_t, 1.0 - p_m)):
            if qy > 0.0:
                out += qy * (math.log(pt_y) - math.log(pm_y))
        return out
    mu_m, v_m, base, slope, v_c = _lg_predictives(model, belief, design)
    mu_star = _lg_true_mean(model, design, theta, psi)
    mu_t = base + float(np.atleast_1d(theta) @ slope)
    s2 = model.sigma2

    def cross_entropy(mu, v):
        return -0.5 * math.log(2.0 * math.pi * v) - (s2 + (mu_star - mu) ** 2) / (2.0 * v)

    return cross_entropy(mu_t, v_c) - cross_entropy(mu_m, v_m)


def _theta_sample_matrix(belief: GaussianBelief, n, seed):
    rng = np.random.default_rng(seed)
    m_t, s_tt = belief.theta_block()
    chol = np.linalg.cholesky(s_tt)
    return m_t + rng.standard_normal((n, m_t.size)) @ chol.T


def _lg_m_l(model, belief, design, theta_star, psi_star, thetas):
    """M_L(theta) for each row of thetas, linear-Gaussian closed form."""
    _, _, base, slope, v_c = _lg_predictives(model, belief, design)
    mu_star = _lg_true_mean(model, design, theta_star, psi_star)
    mu = base + thetas @ slope
    s2 = model.sigma2
    return 0.5 * (math.log(v_c / s2) + (s2 + (mu_star - mu) ** 2) / v_c - 1.0)


def _bern_m_l(model, belief, design, theta_star, psi_star, thetas):
    q1 = float(model.success_prob(design, float(theta_star), float(psi_star)))
    p_t = quadrature.success_given_theta(belief, design, thetas.ravel())
    out = np.zeros(p_t.size)
    for qy, py in ((q1, p_t), (1.0 - q1, 1.0 - p_t)):
        if qy > 0.0:
            out += qy * (math.log(qy) - np.log(np.maximum(py, 1e-300)))
    return out


def _core_quantities(model, belief, design, theta_star, psi_star, thetas):
    """(m_pred, m_l_star, per-sample m_l array) for one candidate truth."""
    if isinstance(model, Preference):
        th = float(theta_star[0])
        ps = float(psi_star[0])
        q1 = float(model.success_prob(design, th, ps))
        p_m = quadrature.marginal_success(belief, design)
        _bern_check(q1, p_m)
        m_pred = quadrature.binary_kl(q1, p_m)
        p_t_star = float(quadrature.success_given_theta(belief, design, th)[0])
        _bern_check(q1, p_t_star)
        m_l_star = quadrature.binary_kl(q1, p_t_star)
        m_l_samples = _bern_m_l(model, belief, design, th, ps, thetas)
    else:
        mu_m, v_m, base, slope, v_c = _lg_predictives(model, belief, design)
        mu_star = _lg_true_mean(model, design, theta_star, psi_star)
        q_law = UnivariateGaussian(mu_star, model.sigma2)
        m_pred = kl_gaussian(q_law, UnivariateGaussian(mu_m, v_m))
        mu_t_star = base + float(theta_star @ slope)
        m_l_star = kl_gaussian(q_law, UnivariateGaussian(mu_t_star, v_c))
        m_l_samples = _lg_m_l(model, belief, design, theta_star, psi_star, thetas)
    return m_pred, m_l_star, m_l_samples


def classify_instance(
    model: TaskModel, belief: GaussianBelief, design: Design, theta_star, psi_star, theta_matrix
) -> ThreatLevel:
    """Threat level alone, against a caller-supplied transferable sample matrix.

    The cheap core of misjudgment_report, for per-step policy checks in
    sequential experiments.
    """
    theta_star = np.atleast_1d(np.asarray(theta_star, dtype=float))
    psi_star = np.atleast_1d(np.asarray(psi_star, dtype=float))
    m_pred, m_l_star, m_l_samples = _core_quantities(
        model, belief, design, theta_star, psi_star, theta_matrix
    )
    return classify_threat(m_pred, m_l_star, float(m_l_samples.mean()))


def misjudgment_report(
    model: TaskModel,
    belief: GaussianBelief,
    design: Design,
    theta_star,
    psi_star,
    epsilon: float | None = None,
    theta_samples: int = DEFAULT_THETA_SAMPLES,
    seed: int = DEFAULT_DIAGNOSTIC_SEED,
) -> MisjudgmentReport:
    """Full misjudgment diagnostic at one design for a hypothetical truth.

    The prior average e_m_l and the pseudo-prior quantities are computed over a
    shared transferable sample set (size ``theta_samples``, deterministic given
    ``seed``); everything else is exact (closed form or quadrature).
    """
    theta_star = np.atleast_1d(np.asarray(theta_star, dtype=float))
    psi_star = np.atleast_1d(np.asarray(psi_star, dtype=float))
    if epsilon is None:
        epsilon = default_epsilon(belief)
    if epsilon <= 0.0:
        raise ValueError("epsilon must be > 0")

    thetas = _theta_sample_matrix(belief, theta_samples, seed)
    m_pred, m_l_star, m_l_samples = _core_quantities(
        model, belief, design, theta_star, psi_star, thetas
    )
    e_m_l = float(m_l_samples.mean())
    e_m_l_se = float(m_l_samples.std(ddof=1) / math.sqrt(theta_samples))
    level = classify_threat(m_pred, m_l_star, e_m_l)
    rt_star = rt(model, belief, design, theta_star, psi_star)

    dist = np.linalg.norm(thetas - theta_star, axis=1)
    outside = dist >= epsilon
    outside_mass = float(outside.mean())
    if outside_mass < _MIN_OUTSIDE_MASS:
        raise ValueError(
            f"epsilon={epsilon} leaves complement mass {outside_mass} < {_MIN_OUTSIDE_MASS}; "
            "pseudo-prior bound undefined"
        )
    m_pred_tilde, m_pred_tilde_se = _m_pred_tilde(
        model, belief, design, theta_star, psi_star, thetas[outside]
    )
    generic_upper = outside_mass * (m_pred_tilde - m_l_star)
    level_bound = None if level is ThreatLevel.NO_THREAT else m_pred - e_m_l

    return MisjudgmentReport(
        design=design,
        m_pred=float(m_pred),
        m_l_star=float(m_l_star),
        e_m_l=e_m_l,
        e_m_l_se=e_m_l_se,
        rt_star=float(rt_star),
        level=level,
        generic_upper=float(generic_upper),
        generic_upper_se=float(outside_mass * m_pred_tilde_se),
        level_bound=level_bound,
        epsilon=float(epsilon),
        outside_mass=outside_mass,
        m_pred_tilde=float(m_pred_tilde),
        m_pred_tilde_se=float(m_pred_tilde_se),
    )


def _m_pred_tilde(model, belief, design, theta_star, psi_star, thetas_outside):
    """KL from the true outcome law to the pseudo-prior predictive (truth's
    epsilon-ball removed from the transferable sample set, then renormalized).

    Returns (value, se); the se is a delta-method account of the sample-set noise
    in the pseudo-prior mixture, which dominates every other error here.
    """
    if thetas_outside.shape[0] == 0:
        raise ValueError("no transferable samples outside the epsilon-ball")
    n_out = thetas_outside.shape[0]
    if isinstance(model, Preference):
        th = float(np.asarray(theta_star).ravel()[0])
        ps = float(np.asarray(psi_star).ravel()[0])
        q1 = float(model.success_prob(design, th, ps))
        pis = quadrature.success_given_theta(belief, design, thetas_outside.ravel())
        p_tilde = float(pis.mean())
        _bern_check(q1, p_tilde)
        sens = abs(-q1 / p_tilde + (1.0 - q1) / max(1.0 - p_tilde, 1e-300))
        se = sens * float(pis.std(ddof=1)) / math.sqrt(n_out) if n_out > 1 else 0.0
        return quadrature.binary_kl(q1, p_tilde), se
    _, _, base, slope, v_c = _lg_predictives(model, belief, design)
    mu_star = _lg_true_mean(model, design, theta_star, psi_star)
    mus = base + thetas_outside @ slope
    s2 = model.sigma2
    nodes, weights = quadrature.gauss_hermite_nodes(200)
    ys = mu_star + math.sqrt(s2) * nodes
    log_comp = -0.5 * math.log(2.0 * math.pi * v_c) - (
        ys[:, None] - mus[None, :]
    ) ** 2 / (2.0 * v_c)
    log_mix = logsumexp(log_comp, axis=1) - math.log(n_out)
    entropy = 0.5 * math.log(2.0 * math.pi * math.e * s2)
    value = float(-entropy - weights @ log_mix)
    # influence of each mixture component on E_q[log p_tilde]
    h = weights @ np.exp(log_comp - log_mix[:, None])
    se = float(h.std(ddof=1)) / math.sqrt(n_out) if n_out > 1 else 0.0
    return value, se


def check_assumption_smoothness(
    model: TaskModel,
    belief: GaussianBelief,
    design: Design,
    theta_star,
    psi_star,
    epsilon: float | None = None,
    mc_samples: int = DEFAULT_THETA_SAMPLES,
    theta_samples: int = DEFAULT_THETA_SAMPLES,
    seed: int = DEFAULT_DIAGNOSTIC_SEED,
):
    """Smoothness check: is the predictive marginal at least as close to the truth
    as the epsilon-ball/complement split implies?  Returns (holds, slack, se).

    slack = E_y[log p(y|x) - inside * log p(y|x, near truth) - outside * log p_tilde(y|x)]
    under the true outcome law; ``holds`` iff slack >= -3 se (se = 0 for the exact
    binary-channel evaluation).
    """
    theta_star = np.atleast_1d(np.asarray(theta_star, dtype=float))
    psi_star = np.atleast_1d(np.asarray(psi_star, dtype=float))
    if epsilon is None:
        epsilon = default_epsilon(belief)
    if epsilon <= 0.0:
        raise ValueError("epsilon must be > 0")
    thetas = _theta_sample_matrix(belief, theta_samples, seed)
    dist = np.linalg.norm(thetas - theta_star, axis=1)
    outside = dist >= epsilon
    outside_mass = float(outside.mean())
    inside_mass = 1.0 - outside_mass
    if isinstance(model, Preference):
        th = float(theta_star[0])
        ps = float(psi_star[0])
        q1 = float(model.success_prob(design, th, ps))
        p_m = quadrature.marginal_success(belief, design)
        p_t = float(quadrature.success_given_theta(belief, design, th)[0])
        se = 0.0
        if outside_mass > 0.0:
            pis = quadrature.success_given_theta(belief, design, thetas[outside].ravel())
            p_tilde = float(pis.mean())
            sens = outside_mass * abs(
                q1 / max(p_tilde, 1e-300) - (1.0 - q1) / max(1.0 - p_tilde, 1e-300)
            )
            if pis.size > 1:
                se = sens * float(pis.std(ddof=1)) / math.sqrt(pis.size)
        else:
            p_tilde = p_m
        slack = 0.0
        for qy, pm_y, pt_y, ptil_y in (
            (q1, p_m, p_t, p_tilde),
            (1.0 - q1, 1.0 - p_m, 1.0 - p_t, 1.0 - p_tilde),
        ):
            if qy > 0.0:
                slack += qy * (
                    math.log(max(pm_y, 1e-300))
                    - inside_mass * math.log(max(pt_y, 1e-300))
                    - outside_mass * math.log(max(ptil_y, 1e-300))
                )
        return slack >= -3.0 * se - 1e-12, float(slack), se
    mu_m, v_m, base, slope, v_c = _lg_predictives(model, belief, design)
    mu_star = _lg_true_mean(model, design, theta_star, psi_star)
    mu_t_star = base + float(theta_star @ slope)
    s2 = model.sigma2
    rng = np.random.default_rng(seed + 1)
    ys = mu_star + math.sqrt(s2) * rng.standard_normal(mc_samples)
    log_m = -0.5 * np.log(2 * math.pi * v_m) - (ys - mu_m) ** 2 / (2 * v_m)
    log_t = -0.5 * np.log(2 * math.pi * v_c) - (ys - mu_t_star) ** 2 / (2 * v_c)
    se_theta = 0.0
    if outside_mass > 0.0:
        mus = base + thetas[outside] @ slope
        log_comp = -0.5 * math.log(2 * math.pi * v_c) - (
            ys[:, None] - mus[None, :]
        ) ** 2 / (2 * v_c)
        log_tilde = logsumexp(log_comp, axis=1) - math.log(mus.size)
        # delta-method influence of each pseudo-prior component on the slack
        h = np.exp(log_comp - log_tilde[:, None]).mean(axis=0)
        if mus.size > 1:
            se_theta = outside_mass * float(h.std(ddof=1)) / math.sqrt(mus.size)
    else:
        log_tilde = log_m
    vals = log_m - inside_mass * log_t - outside_mass * log_tilde
    slack = float(vals.mean())
    se = math.hypot(float(vals.std(ddof=1) / math.sqrt(mc_samples)), se_theta)
    return slack >= -3.0 * se, slack, se


def theorem2_curve(
    model: TaskModel,
    belief: GaussianBelief,
    design: Design,
    theta_star,
    psi_star,
    alphas,
    theta_samples: int = DEFAULT_THETA_SAMPLES,
    seed: int = DEFAULT_DIAGNOSTIC_SEED,
):
    """m_l_star with the task-specific conditional replaced by a truth/prior mixture.

    At mixture weight alpha the candidate predictive is alpha * (true law) +
    (1 - alpha) * (belief predictive given the true transferable value).  Only
    meaningful for threatening instances; NoThreat inputs are rejected.
    """
    alphas = np.asarray(alphas, dtype=float)
    if alphas.size == 0 or np.any(alphas <= 0.0) or np.any(alphas > 1.0):
        raise ValueError("alphas must lie in (0, 1]")
    base_report = misjudgment_report(
        model, belief, design, theta_star, psi_star, theta_samples=theta_samples, seed=seed
    )
    if base_report.level is ThreatLevel.NO_THREAT:
        raise ValueError("theorem2_curve requires a threatening instance (Mild or Extreme)")
    theta_star = np.atleast_1d(np.asarray(theta_star, dtype=float))
    psi_star = np.atleast_1d(np.asarray(psi_star, dtype=float))
    out = []
    if isinstance(model, Preference):
        th, ps = float(theta_star[0]), float(psi_star[0])
        q1 = float(model.success_prob(design, th, ps))
        p_t = float(quadrature.success_given_theta(belief, design, th)[0])
        for a in alphas:
            mix = a * q1 + (1.0 - a) * p_t
            out.append((float(a), quadrature.binary_kl(q1, mix)))
        return out
    _, _, base, slope, v_c = _lg_predictives(model, belief, design)
    mu_star = _lg_true_mean(model, design, theta_star, psi_star)
    mu_t_star = base + float(theta_star @ slope)
    s2 = model.sigma2
    nodes, weights = quadrature.gauss_hermite_nodes(200)
    ys = mu_star + math.sqrt(s2) * nodes
    log_q = -0.5 * math.log(2 * math.pi * s2) - (ys - mu_star) ** 2 / (2 * s2)
    log_t = -0.5 * math.log(2 * math.pi * v_c) - (ys - mu_t_star) ** 2 / (2 * v_c)
    for a in alphas:
        if a >= 1.0:
            out.append((float(a), 0.0))
            continue
        log_mix = np.logaddexp(math.log(a) + log_q, math.log1p(-a) + log_t)
        out.append((float(a), float(weights @ (log_q - log_mix))))
    return out


def unboundedness_sweep(model, belief, design, theta_star, psi_grid):
    """rt_star along a monotone grid of task-specific values (fixed theta_star)."""
    psi_grid = np.asarray(psi_grid, dtype=float)
    flat = psi_grid.reshape(psi_grid.shape[0], -1)
    diffs = np.diff(flat, axis=0)
    if not (np.all(diffs >= 0.0) or np.all(diffs <= 0.0)):
        raise ValueError("psi_grid must be monotone")
    return [(psi_grid[i], rt(model, belief, design, theta_star, flat[i])) for i in range(flat.shape[0])]


# ---------------------------------------------------------------------------
# threat atlas


@dataclass(frozen=True)
class AtlasRecord:
    theta: np.ndarray
    psi: np.ndarray
    psi_avg: float
    p_psi_given_theta: float
    level: ThreatLevel
    rt_at_x_etig: float
    max_rt_over_designs: float


@dataclass(frozen=True)
class AtlasResult:
    """Per-draw threat diagnostics over prior samples, plus the probing design."""

    theta: np.ndarray
    psi: np.ndarray
    psi_avg: np.ndarray
    p_psi_given_theta: np.ndarray
    level: tuple
    rt_at_x_etig: np.ndarray
    max_rt_over_designs: np.ndarray
    x_etig_index: int

    @property
    def n_samples(self):
        return self.theta.shape[0]

    @property
    def threat_fraction(self):
        return float(np.mean([lv is not ThreatLevel.NO_THREAT for lv in self.level]))

    def level_fractions(self):
        return {
            lv.value: float(np.mean([v is lv for v in self.level])) for lv in ThreatLevel
        }

    def records(self):
        for k in range(self.n_samples):
            yield AtlasRecord(
                theta=self.theta[k],
                psi=self.psi[k],
                psi_avg=float(self.psi_avg[k]),
                p_psi_given_theta=float(self.p_psi_given_theta[k]),
                level=self.level[k],
                rt_at_x_etig=float(self.rt_at_x_etig[k]),
                max_rt_over_designs=float(self.max_rt_over_designs[k]),
            )


def _conditional_psi_logpdf(belief: GaussianBelief, thetas, psis):
    """log p(psi | theta) per row, for fixed conditional covariance."""
    from scipy.linalg import solve_triangular

    m_t, s_tt = belief.theta_block()
    m_p, _ = belief.psi_block()
    gain = belief.cross_block() @ np.linalg.inv(s_tt)
    cond_cov = conditional_psi_cov(belief)
    chol = np.linalg.cholesky(cond_cov)
    means = m_p + (thetas - m_t) @ gain.T
    diff = psis - means
    z = solve_triangular(chol, diff.T, lower=True)
    log_det = 2.0 * float(np.sum(np.log(np.diag(chol))))
    d = cond_cov.shape[0]
    return -0.5 * (d * math.log(2.0 * math.pi) + log_det + np.sum(z * z, axis=0))


def _select_design_index(model, belief, design_selector) -> int:
    if callable(design_selector):
        return int(design_selector(model, belief))
    if design_selector is not None:
        return int(design_selector)
    if isinstance(model, Preference):
        return quadrature.x_etig_index(belief, model.designs)
    return argmax_design(etig_lg_sweep(belief, model.designs, model.sigma2))


def _lg_atlas(model, belief, draws, thetas_s, x_e_idx):
    designs = model.designs
    t_idx = np.asarray(belief.transferable_dims)
    s2 = model.sigma2
    theta_draws = draws[:, t_idx]
    mu_star = np.column_stack([draws @ model.coefficients(d) for d in designs])  # (K, D)
    mu_c = np.empty_like(mu_star)
    v_c = np.empty(len(designs))
    mu_m = np.empty(len(designs))
    v_m = np.empty(len(designs))
    for j, d in enumerate(designs):
        mm, vm, base, slope, vc = _lg_predictives(model, belief, d)
        mu_c[:, j] = base + theta_draws @ slope
        v_c[j], mu_m[j], v_m[j] = vc, mm, vm
    rt_table = 0.5 * (
        np.log(v_m / v_c)
        + (s2 + (mu_star - mu_m) ** 2) / v_m
        - (s2 + (mu_star - mu_c) ** 2) / v_c
    )
    # classification pieces at the probing design
    e = x_e_idx
    m_pred = 0.5 * (
        np.log(v_m[e] / s2) + (s2 + (mu_star[:, e] - mu_m[e]) ** 2) / v_m[e] - 1.0
    )
    m_l_star = 0.5 * (
        np.log(v_c[e] / s2) + (s2 + (mu_star[:, e] - mu_c[:, e]) ** 2) / v_c[e] - 1.0
    )
    _, _, base_e, slope_e, _ = _lg_predictives(model, belief, designs[e])
    mu_s = base_e + thetas_s @ slope_e
    m1, m2 = float(mu_s.mean()), float((mu_s**2).mean())
    mean_sq_gap = mu_star[:, e] ** 2 - 2.0 * mu_star[:, e] * m1 + m2
    e_m_l = 0.5 * (np.log(v_c[e] / s2) + (s2 + mean_sq_gap) / v_c[e] - 1.0)
    return rt_table, m_pred, m_l_star, e_m_l


def _bern_atlas(model, belief, draws, thetas_s, x_e_idx):
    designs = model.designs
    xs = np.array([float(d.x[0]) for d in designs])
    t_idx = belief.transferable_dims[0]
    p_idx = belief.task_dims[0]
    theta_draws = draws[:, t_idx]
    psi_draws = draws[:, p_idx]
    base, gain, sd = quadrature.conditional_psi_coefficients(belief)
    nodes, wts = quadrature.gauss_hermite_nodes()
    p_marg = np.array([quadrature.marginal_success(belief, d) for d in designs])
    if np.any(p_marg <= 0.0) or np.any(p_marg >= 1.0):
        raise DegenerateMarginalError("a design's predictive marginal is degenerate")
    rt_table = pref_rt_table(
        theta_draws,
        psi_draws,
        base,
        gain,
        sd,
        nodes,
        wts,
        xs,
        np.log(p_marg),
        np.log1p(-p_marg),
    )
    e = x_e_idx
    x_e = xs[e]
    q1 = sigmoid(theta_draws - psi_draws * x_e)
    p_t = quadrature.success_given_theta(belief, designs[e], theta_draws)
    m_pred = _binary_kl_vec(q1, p_marg[e])
    m_l_star = _binary_kl_vec(q1, p_t)
    pi_s = quadrature.success_given_theta(belief, designs[e], thetas_s.ravel())
    log_a = float(np.mean(np.log(np.maximum(pi_s, 1e-300))))
    log_b = float(np.mean(np.log(np.maximum(1.0 - pi_s, 1e-300))))
    neg_h = _xlogx(q1) + _xlogx(1.0 - q1)
    e_m_l = neg_h - q1 * log_a - (1.0 - q1) * log_b
    return rt_table, m_pred, m_l_star, e_m_l


def _xlogx(p):
    p = np.asarray(p, dtype=float)
    return np.where(p > 0.0, p * np.log(np.where(p > 0.0, p, 1.0)), 0.0)


def _binary_kl_vec(q, p):
    q = np.asarray(q, dtype=float)
    p = np.broadcast_to(np.asarray(p, dtype=float), q.shape)
    return (
        _xlogx(q)
        + _xlogx(1.0 - q)
        - np.where(q > 0.0, q * np.log(np.maximum(p, 1e-300)), 0.0)
        - np.where(1.0 - q > 0.0, (1.0 - q) * np.log(np.maximum(1.0 - p, 1e-300)), 0.0)
    )


def threat_atlas(
    model: TaskModel,
    belief: GaussianBelief,
    design_selector,
    n_samples: int,
    rng,
    theta_samples: int = DEFAULT_THETA_SAMPLES,
) -> AtlasResult:
    """Classify every prior draw as if it were the data-generating truth.

    Uses the unmodified belief throughout, so the atlas needs no knowledge of the
    actual truth; ``design_selector`` picks the probing design (default: the
    transferable-information argmax over the model's design set).
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    x_e_idx = _select_design_index(model, belief, design_selector)
    draws = belief.sample(n_samples, rng)
    thetas_s = _theta_sample_matrix_from_rng(belief, theta_samples, rng)
    t_idx = np.asarray(belief.transferable_dims)
    p_idx = np.asarray(belief.task_dims)
    theta_draws = draws[:, t_idx]
    psi_draws = draws[:, p_idx]
    if isinstance(model, Preference):
        rt_table, m_pred, m_l_star, e_m_l = _bern_atlas(model, belief, draws, thetas_s, x_e_idx)
    else:
        rt_table, m_pred, m_l_star, e_m_l = _lg_atlas(model, belief, draws, thetas_s, x_e_idx)
    levels = tuple(
        classify_threat(m_pred[k], m_l_star[k], e_m_l[k]) for k in range(n_samples)
    )
    log_cond = _conditional_psi_logpdf(belief, theta_draws, psi_draws)
    return AtlasResult(
        theta=theta_draws,
        psi=psi_draws,
        psi_avg=psi_draws.mean(axis=1),
        p_psi_given_theta=np.exp(log_cond),
        level=levels,
        rt_at_x_etig=rt_table[:, x_e_idx].copy(),
        max_rt_over_designs=rt_table.max(axis=1),
        x_etig_index=x_e_idx,
    )


def _theta_sample_matrix_from_rng(belief: GaussianBelief, n, rng):
    m_t, s_tt = belief.theta_block()
    chol = np.linalg.cholesky(s_tt)
    return m_t + rng.standard_normal((n, m_t.size)) @ chol.T
