"""Simulated sequential experiments over the shared design sets.

A run pits an acquisition policy against a fixed data-generating task: at each
step the policy picks a design, an outcome is sampled from the truth, the
belief is updated (exactly for the linear-Gaussian setting, by
reweight-refit-resample for the preference setting), and the transferable
knowledge metric log p(theta_star | data) is recorded.  The "naive" policy
always maximizes the estimated transferable gain; the "oracle" policy gets to
peek at the truth, re-checks the threat level at the design the naive policy
would pick, and switches to maximizing task-specific gain whenever a threat is
flagged.

Each replication owns three RNG streams (estimator, outcome, threat) spawned
from one seed tree, so the two policies see identical outcomes whenever they
choose identical designs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from meta_oed import nmc, quadrature
from meta_oed.belief import GaussianBelief, marginal_theta
from meta_oed.closed_form import argmax_design, etig_lg_sweep, etsig_lg, posterior_update_lg
from meta_oed.misjudgment import (
    DEFAULT_THETA_SAMPLES,
    ThreatLevel,
    _binary_kl_vec,
    _lg_atlas,
    _theta_sample_matrix_from_rng,
    _xlogx,
    classify_instance,
    misjudgment_report,
)
from meta_oed.models import (
    Preference,
    TaskEnvironment,
    default_path_prior,
    default_preference_prior,
    generate_path_analysis_designs,
    log_sigmoid,
    preference_design_grid,
    sample_outcome,
    sigmoid,
)
from meta_oed.models import PathAnalysis

SETTINGS = ("path", "preference")
POLICIES = ("naive", "oracle")
DEFAULT_CANDIDATES = {"path": 20000, "preference": 10000}


class SelectionFailedError(RuntimeError):
    """No prior candidate satisfied the requested threat level's rule."""


@dataclass(frozen=True)
class ExperimentConfig:
    setting: str
    policy: str
    steps: int = 10
    replications: int = 1
    seed: int = 0
    generating: TaskEnvironment | None = None
    level: ThreatLevel | None = None
    design_count: int = 100
    design_seed: int = 5
    grid_count: int = 100
    n: int = 10000
    m: int | None = None
    inflation: float = nmc.DEFAULT_INFLATION
    theta_samples: int = DEFAULT_THETA_SAMPLES
    classify_once: bool = False
    epsilon: float | None = None

    def __post_init__(self):
        if self.setting not in SETTINGS:
            raise ValueError(f"setting must be one of {SETTINGS}")
        if self.policy not in POLICIES:
            raise ValueError(f"policy must be one of {POLICIES}")
        if self.steps < 1 or self.replications < 1:
            raise ValueError("steps and replications must be >= 1")
        if self.n < 2:
            raise ValueError("n must be >= 2")
        if self.inflation < 1.0:
            raise ValueError("inflation must be >= 1")
        if self.generating is None and self.level is None:
            raise ValueError("provide generating parameters or a threat level to select them")
        if isinstance(self.level, str):
            object.__setattr__(self, "level", ThreatLevel(self.level))


@dataclass(frozen=True)
class ExperimentTrace:
    design_index: np.ndarray
    y: np.ndarray
    etig: np.ndarray
    etsig: np.ndarray
    metric: np.ndarray
    metric_prior: float
    failed: bool = False


@dataclass(frozen=True)
class AggregateResult:
    mean: np.ndarray
    q25: np.ndarray
    q75: np.ndarray
    n_failed: int


def setting_components(setting, design_count=100, design_seed=5, grid_count=100):
    """(model, prior) for a named experimental setting."""
    if setting == "path":
        model = PathAnalysis(
            sigma2=1.0, designs=generate_path_analysis_designs(design_count, design_seed)
        )
        return model, default_path_prior()
    if setting == "preference":
        return Preference(designs=preference_design_grid(grid_count)), default_preference_prior()
    raise ValueError(f"setting must be one of {SETTINGS}")


def _etig_argmax_index(model, belief) -> int:
    if isinstance(model, Preference):
        return quadrature.x_etig_index(belief, model.designs)
    return argmax_design(etig_lg_sweep(belief, model.designs, model.sigma2))


# ---------------------------------------------------------------------------
# generating-parameter selection


def _pref_candidate_stats(model, prior, design, draws, thetas_s):
    t = prior.transferable_dims[0]
    p = prior.task_dims[0]
    x = float(design.x[0])
    q1 = sigmoid(draws[:, t] - draws[:, p] * x)
    p_t = quadrature.success_given_theta(prior, design, draws[:, t])
    p_m = quadrature.marginal_success(prior, design)
    log_pt = np.log(np.maximum(p_t, 1e-300))
    log_pt0 = np.log(np.maximum(1.0 - p_t, 1e-300))
    rt = q1 * (log_pt - np.log(p_m)) + (1.0 - q1) * (log_pt0 - np.log1p(-p_m))
    m_l_star = _binary_kl_vec(q1, p_t)
    pi_s = quadrature.success_given_theta(prior, design, thetas_s.ravel())
    log_a = float(np.mean(np.log(np.maximum(pi_s, 1e-300))))
    log_b = float(np.mean(np.log(np.maximum(1.0 - pi_s, 1e-300))))
    e_m_l = _xlogx(q1) + _xlogx(1.0 - q1) - q1 * log_a - (1.0 - q1) * log_b
    return rt, m_l_star, e_m_l


def select_generating_params(setting, level, n_candidates=None, rng=None) -> TaskEnvironment:
    """Draw prior candidates and pick the one matching the level's rule at the
    transferable-gain argmax design: NoThreat takes the highest expected gain,
    Extreme the lowest, Mild the gain-negative candidate whose conditional
    misfit sits closest to the prior average."""
    if rng is None:
        raise ValueError("rng is required")
    level = ThreatLevel(level) if isinstance(level, str) else level
    model, prior = setting_components(setting)
    n = DEFAULT_CANDIDATES[setting] if n_candidates is None else int(n_candidates)
    if n < 1:
        raise ValueError("n_candidates must be >= 1")
    draws = prior.sample(n, rng)
    thetas_s = _theta_sample_matrix_from_rng(prior, DEFAULT_THETA_SAMPLES, rng)
    x_e = _etig_argmax_index(model, prior)
    if isinstance(model, Preference):
        rt_e, m_l_star, e_m_l = _pref_candidate_stats(
            model, prior, model.designs[x_e], draws, thetas_s
        )
    else:
        rt_table, _, m_l_star, e_m_l = _lg_atlas(model, prior, draws, thetas_s, x_e)
        rt_e = rt_table[:, x_e]
    if level is ThreatLevel.NO_THREAT:
        k = int(np.argmax(rt_e))
    elif level is ThreatLevel.EXTREME:
        k = int(np.argmin(rt_e))
    else:
        negative = rt_e < 0.0
        if not np.any(negative):
            raise SelectionFailedError("no candidate elicits a negative transferable gain")
        gap = np.abs(m_l_star - e_m_l)
        gap = np.where(negative, gap, np.inf)
        k = int(np.argmin(gap))
    t_idx = np.asarray(prior.transferable_dims)
    p_idx = np.asarray(prior.task_dims)
    return TaskEnvironment(theta_star=draws[k, t_idx], psi_star=draws[k, p_idx])


def _resolve_generating(config: ExperimentConfig, rng) -> TaskEnvironment:
    if config.generating is not None:
        return config.generating
    return select_generating_params(config.setting, config.level, rng=rng)


# ---------------------------------------------------------------------------
# sequential loops


def _pref_target(prior: GaussianBelief, xs, ys) -> Callable:
    xs = np.array(xs, dtype=float)
    ys = np.array(ys, dtype=float)
    t = prior.transferable_dims[0]
    p = prior.task_dims[0]

    def log_density(points):
        logits = points[:, t, None] - points[:, p, None] * xs[None, :]
        signed = np.where(ys[None, :] > 0.5, logits, -logits)
        return prior.log_pdf(points) + log_sigmoid(signed).sum(axis=1)

    return log_density


def _oracle_wants_etsig(model, belief, design, env, config, threat_rng):
    thetas = _theta_sample_matrix_from_rng(belief, config.theta_samples, threat_rng)
    level = classify_instance(model, belief, design, env.theta_star, env.psi_star, thetas)
    return level is not ThreatLevel.NO_THREAT


def _run_path_replication(config, model, prior, env, out_rng, threat_rng) -> ExperimentTrace:
    belief = prior
    metric_prior = float(marginal_theta(prior).log_pdf(env.theta_star))
    idxs, ys, etigs, etsigs, metrics = [], [], [], [], []
    sticky = None
    for _ in range(config.steps):
        etig_vals = etig_lg_sweep(belief, model.designs, model.sigma2)
        use_etsig = False
        if config.policy == "oracle":
            if config.classify_once and sticky is not None:
                use_etsig = sticky
            else:
                x_e = argmax_design(etig_vals)
                use_etsig = _oracle_wants_etsig(
                    model, belief, model.designs[x_e], env, config, threat_rng
                )
                if config.classify_once:
                    sticky = use_etsig
        if use_etsig:
            values = np.array([etsig_lg(belief, d, model.sigma2) for d in model.designs])
        else:
            values = etig_vals
        j = argmax_design(values)
        design = model.designs[j]
        y = float(sample_outcome(model, design, env.theta_star, env.psi_star, out_rng))
        idxs.append(j)
        ys.append(y)
        etigs.append(float(etig_vals[j]))
        etsigs.append(etsig_lg(belief, design, model.sigma2))
        belief = posterior_update_lg(belief, design, y, model.sigma2)
        metrics.append(float(marginal_theta(belief).log_pdf(env.theta_star)))
    return ExperimentTrace(
        design_index=np.array(idxs, dtype=int),
        y=np.array(ys),
        etig=np.array(etigs),
        etsig=np.array(etsigs),
        metric=np.array(metrics),
        metric_prior=metric_prior,
    )


def _run_pref_replication(config, model, prior, env, est_rng, out_rng, threat_rng) -> ExperimentTrace:
    t_dim = prior.transferable_dims[0]
    p_dim = prior.task_dims[0]
    metric_prior = float(marginal_theta(prior).log_pdf(env.theta_star))
    idxs, ys, etigs, etsigs, metrics = [], [], [], [], []
    xs_seen, ys_seen = [], []
    proposal = GaussianBelief(prior.mean, prior.cov * config.inflation, prior.transferable_dims)
    sticky = None
    try:
        sset = nmc.refresh_samples(prior.log_pdf, proposal, config.n, est_rng)
        current = prior
        for _ in range(config.steps):
            etig_vals, etsig_vals = nmc.estimate_sweep(model, sset, config.m, est_rng)
            use_etsig = False
            if config.policy == "oracle":
                if config.classify_once and sticky is not None:
                    use_etsig = sticky
                else:
                    x_e = argmax_design(etig_vals)
                    use_etsig = _oracle_wants_etsig(
                        model, current, model.designs[x_e], env, config, threat_rng
                    )
                    if config.classify_once:
                        sticky = use_etsig
            values = etsig_vals if use_etsig else etig_vals
            j = argmax_design(values)
            design = model.designs[j]
            y = int(sample_outcome(model, design, env.theta_star, env.psi_star, out_rng))
            idxs.append(j)
            ys.append(float(y))
            etigs.append(float(etig_vals[j]))
            etsigs.append(float(etsig_vals[j]))
            xs_seen.append(float(design.x[0]))
            ys_seen.append(y)
            logits = sset.samples[:, t_dim] - sset.samples[:, p_dim] * float(design.x[0])
            step_ll = log_sigmoid(logits if y == 1 else -logits)
            reweighted = sset.weights * np.exp(step_ll)
            total = float(reweighted.sum())
            if total <= 0.0:
                raise nmc.ResampleRequiredError("observation annihilated every sample weight")
            reweighted = reweighted / total
            proposal = nmc.fit_variational(
                sset.samples, reweighted, config.inflation, prior.transferable_dims
            )
            target = _pref_target(prior, xs_seen, ys_seen)
            sset = nmc.refresh_samples(target, proposal, config.n, est_rng)
            current = nmc.fit_variational(
                sset.samples, sset.weights, 1.0, prior.transferable_dims
            )
            metrics.append(float(marginal_theta(current).log_pdf(env.theta_star)))
    except nmc.ResampleRequiredError:
        pad = config.steps - len(metrics)
        return ExperimentTrace(
            design_index=np.array(idxs + [-1] * pad, dtype=int),
            y=np.array(ys + [np.nan] * pad),
            etig=np.array(etigs + [np.nan] * pad),
            etsig=np.array(etsigs + [np.nan] * pad),
            metric=np.array(metrics + [np.nan] * pad),
            metric_prior=metric_prior,
            failed=True,
        )
    return ExperimentTrace(
        design_index=np.array(idxs, dtype=int),
        y=np.array(ys),
        etig=np.array(etigs),
        etsig=np.array(etsigs),
        metric=np.array(metrics),
        metric_prior=metric_prior,
    )


def run_replication(config, model, prior, env, rep_seed_seq) -> ExperimentTrace:
    """Run one replication from its own seed-tree node.

    Results depend only on the arguments, so callers may fan replications out
    across processes and still reproduce the serial run trace for trace.
    """
    est_ss, out_ss, threat_ss = rep_seed_seq.spawn(3)
    if config.setting == "path":
        return _run_path_replication(
            config, model, prior, env,
            np.random.default_rng(out_ss), np.random.default_rng(threat_ss),
        )
    return _run_pref_replication(
        config, model, prior, env,
        np.random.default_rng(est_ss),
        np.random.default_rng(out_ss),
        np.random.default_rng(threat_ss),
    )


def prepare_experiment(config: ExperimentConfig):
    """(model, prior, generating environment, per-replication seed nodes)."""
    model, prior = setting_components(
        config.setting, config.design_count, config.design_seed, config.grid_count
    )
    root = np.random.SeedSequence(config.seed)
    select_ss, *rep_ss = root.spawn(config.replications + 1)
    env = _resolve_generating(config, np.random.default_rng(select_ss))
    return model, prior, env, rep_ss


def run_experiment(config: ExperimentConfig) -> list[ExperimentTrace]:
    """One trace per replication; failed replications are returned flagged, not
    dropped, so callers can report the count."""
    model, prior, env, rep_ss = prepare_experiment(config)
    return [run_replication(config, model, prior, env, child) for child in rep_ss]


def aggregate(traces) -> AggregateResult:
    """Per-step mean and interquartile band of the metric over successful traces."""
    ok = [tr for tr in traces if not tr.failed]
    if not ok:
        raise ValueError("no successful replications to aggregate")
    mat = np.stack([tr.metric for tr in ok])
    return AggregateResult(
        mean=mat.mean(axis=0),
        q25=np.percentile(mat, 25.0, axis=0),
        q75=np.percentile(mat, 75.0, axis=0),
        n_failed=len(traces) - len(ok),
    )


def bound_reference_lines(config: ExperimentConfig):
    """(lower, upper) reference values for the first step's expected metric.

    Converts the first-step bound on the expected transferable gain into metric
    units by shifting the prior log-density of theta_star.  Exactly one side is
    set: a floor for mild threats, a ceiling for extreme ones.  The ceiling
    constrains only the first step; later steps may exceed it.
    """
    model, prior = setting_components(
        config.setting, config.design_count, config.design_seed, config.grid_count
    )
    root = np.random.SeedSequence(config.seed)
    select_ss = root.spawn(1)[0]
    env = _resolve_generating(config, np.random.default_rng(select_ss))
    x_e = _etig_argmax_index(model, prior)
    report = misjudgment_report(
        model, prior, model.designs[x_e], env.theta_star, env.psi_star,
        epsilon=config.epsilon, theta_samples=config.theta_samples,
    )
    if report.level is ThreatLevel.NO_THREAT:
        raise ValueError("no reference line exists without a threat")
    value = float(marginal_theta(prior).log_pdf(env.theta_star)) + report.level_bound
    if report.level is ThreatLevel.MILD:
        return value, None
    return None, value
