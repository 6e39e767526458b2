"""End-to-end acceptance gate.

One test per shipped acceptance criterion, each checked at its stated
tolerance.  Every test prints a single ``[ACCEPTANCE] <name>: PASS/FAIL``
verdict line that bypasses output capture so the verdicts are visible in any
test log, then asserts, so an unmet criterion is also a red test.
"""

import json
import math
import time

import numpy as np
import pytest
from scipy.stats import spearmanr

from meta_oed import _kernels, cli, nmc, quadrature
from meta_oed.belief import GaussianBelief
from meta_oed.closed_form import argmax_design, etig_lg, etsig_lg, toy_design_grid
from meta_oed.harness import (
    ExperimentConfig,
    aggregate,
    bound_reference_lines,
    run_experiment,
    setting_components,
)
from meta_oed.misjudgment import (
    ThreatLevel,
    check_assumption_smoothness,
    misjudgment_report,
    rt,
    theorem2_curve,
    threat_atlas,
)
from meta_oed.models import TaskEnvironment, default_toy_prior

PATH_MODEL, PATH_PRIOR = setting_components("path")
PREF_MODEL, PREF_PRIOR = setting_components("preference")
PATH_X_ETIG = PATH_MODEL.designs[85]
PREF_X_ETIG = PREF_MODEL.designs[49]

# reference extreme-threat generating values for the directional experiment
PATH_TRUTH = TaskEnvironment(theta_star=[9.33], psi_star=[-3.39, -4.11, -5.17])
PREF_TRUTH = TaskEnvironment(theta_star=[8.27], psi_star=[-3.18])


@pytest.fixture
def report(capsys):
    def _report(name, ok, detail=""):
        line = f"[ACCEPTANCE] {name}: {'PASS' if ok else 'FAIL'}"
        if detail:
            line += f"  ({detail})"
        with capsys.disabled():
            print(line, flush=True)
        return ok

    return _report


def random_pref_belief(rng):
    v_t = rng.uniform(4.0, 25.0)
    v_p = rng.uniform(0.5, 2.0)
    c = rng.uniform(-0.5, 0.5) * math.sqrt(v_t * v_p)
    return GaussianBelief(
        mean=rng.normal(scale=0.5, size=2),
        cov=np.array([[v_t, c], [c, v_p]]),
        transferable_dims=(0,),
    )


def test_01_threat_region_fractions(report, tmp_path):
    t0 = time.perf_counter()
    fractions = {}
    for setting in ("path", "preference"):
        out = tmp_path / setting
        code = cli.main(
            ["diagnose", "--setting", setting, "--samples", "10000", "--seed", "7",
             "--out", str(out)]
        )
        assert code == 0
        fractions[setting] = json.loads((out / "summary.json").read_text())["threat_fraction"]
    elapsed = time.perf_counter() - t0
    path_ok = 0.38 <= fractions["path"] <= 0.52
    pref_ok = 0.18 <= fractions["preference"] <= 0.32
    ok = path_ok and pref_ok and elapsed < 300.0
    detail = (
        f"path {fractions['path']:.4f} in [0.38, 0.52]: {path_ok}; "
        f"preference {fractions['preference']:.4f} in [0.18, 0.32]: {pref_ok}; "
        f"{elapsed:.0f}s"
    )
    report("threat-region-fractions", ok, detail)
    if not ok:
        pytest.fail(
            "threatening-fraction bands not met: " + detail + ". At the "
            "transferable-information argmax design the preference prior "
            "yields a threatening fraction near 0.03, so the 0.25 +/- 0.07 "
            "band is unattainable there; the probing design would have to "
            "sit in the strongly negative part of the design grid instead."
        )


def test_02_appendix_b_exactness(report):
    t0 = time.perf_counter()
    prior = default_toy_prior()
    designs = toy_design_grid()
    etig_vals = [etig_lg(prior, d, 1.0) for d in designs]
    best = designs[argmax_design(etig_vals)]
    etsig_at_best = etsig_lg(prior, best, 1.0)
    elapsed = time.perf_counter() - t0
    ok = bool(np.array_equal(best.x, [10.0, 0.0])) and abs(etsig_at_best) <= 1e-12
    report(
        "appendix-b-exactness", ok,
        f"x_etig={best.x.tolist()}, etsig={etsig_at_best:.2e}, {elapsed * 1e3:.0f}ms",
    )
    assert ok


def test_03_decomposition_identity(report):
    rng = np.random.default_rng(90)
    worst_lg = 0.0
    for _ in range(500):
        draw = PATH_PRIOR.sample(1, rng)[0]
        d = PATH_MODEL.designs[int(rng.integers(len(PATH_MODEL.designs)))]
        val = rt(PATH_MODEL, PATH_PRIOR, d, draw[:1], draw[1:])
        rep = misjudgment_report(PATH_MODEL, PATH_PRIOR, d, draw[:1], draw[1:], theta_samples=50)
        worst_lg = max(worst_lg, abs(val - (rep.m_pred - rep.m_l_star)))
    worst_bin = 0.0
    for _ in range(200):
        belief = random_pref_belief(rng)
        draw = belief.sample(1, rng)[0]
        d = PREF_MODEL.designs[int(rng.integers(len(PREF_MODEL.designs)))]
        val = rt(PREF_MODEL, belief, d, draw[0], draw[1])
        rep = misjudgment_report(PREF_MODEL, belief, d, draw[0], draw[1], theta_samples=50)
        worst_bin = max(worst_bin, abs(val - (rep.m_pred - rep.m_l_star)))
    ok = worst_lg <= 1e-9 and worst_bin <= 1e-4
    report(
        "decomposition-identity", ok,
        f"max gap: linear-Gaussian {worst_lg:.2e} (500 inst, tol 1e-9), "
        f"binary {worst_bin:.2e} (200 inst, tol 1e-4)",
    )
    assert ok


def test_04_estimator_identity_and_accuracy(report):
    t0 = time.perf_counter()
    inflated = GaussianBelief(
        PREF_PRIOR.mean, PREF_PRIOR.cov * nmc.DEFAULT_INFLATION, PREF_PRIOR.transferable_dims
    )
    sset = nmc.refresh_samples(PREF_PRIOR.log_pdf, inflated, 10000, np.random.default_rng(1234))
    etig_hat, etsig_hat = nmc.estimate_sweep(PREF_MODEL, sset, 100, np.random.default_rng(77))
    # replay the identical inner reservoir and recompute the total gain
    theta, psi, psi_in, w_in = nmc._inner_reservoir(sset, 100, np.random.default_rng(77))
    xs = np.array([float(d.x[0]) for d in PREF_MODEL.designs])
    eig_hat, etig_replay = _kernels.nmc_sweep(theta, psi, sset.weights, psi_in, w_in, xs)
    identity_exact = bool(
        np.array_equal(etig_replay, etig_hat) and np.array_equal(etsig_hat, eig_hat - etig_hat)
    )
    idx = list(range(0, 100, 5))
    oracle = quadrature.etig_sweep(PREF_PRIOR, [PREF_MODEL.designs[j] for j in idx])
    worst = float(np.max(np.abs(etig_hat[idx] - oracle)))
    elapsed = time.perf_counter() - t0
    ok = identity_exact and worst <= 0.05 and elapsed < 600.0
    report(
        "estimator-identity-and-accuracy", ok,
        f"identity exact: {identity_exact}; max |etig - quadrature| {worst:.4f} "
        f"over 20 designs at N=10000, M=100; {elapsed:.1f}s",
    )
    assert ok


def test_05_theorem1_containment(report):
    details = []
    ok = True
    for setting in ("path", "preference"):
        model, prior = setting_components(setting)
        design = PATH_X_ETIG if setting == "path" else PREF_X_ETIG
        rng = np.random.default_rng(41)
        draws = prior.sample(1000, rng)
        t_dim = len(prior.transferable_dims)
        bad = {"none": 0, "mild": 0, "extreme": 0, "generic": 0}
        verified = 0
        for k in range(1000):
            th, ps = draws[k, :t_dim], draws[k, t_dim:]
            rep = misjudgment_report(model, prior, design, th, ps, theta_samples=500)
            if rep.level is ThreatLevel.NO_THREAT:
                if not rep.rt_star >= -1e-6:
                    bad["none"] += 1
            elif rep.level is ThreatLevel.MILD:
                lo = rep.m_pred - rep.e_m_l - 3.0 * rep.e_m_l_se
                if not (lo <= rep.rt_star < 0.0):
                    bad["mild"] += 1
            else:
                hi = rep.m_pred - rep.e_m_l + 3.0 * rep.e_m_l_se
                if not rep.rt_star < hi:
                    bad["extreme"] += 1
            holds, _, se_s = check_assumption_smoothness(
                model, prior, design, th, ps, mc_samples=500, theta_samples=500
            )
            if holds:  # the generic bound is only reported under verified smoothness
                verified += 1
                slack = 3.0 * (rep.generic_upper_se + se_s) + 1e-9
                if not rep.rt_star <= rep.generic_upper + slack:
                    bad["generic"] += 1
        setting_ok = all(v == 0 for v in bad.values())
        ok = ok and setting_ok
        details.append(f"{setting}: violations {bad}, smoothness verified {verified}/1000")
    report("theorem-1-containment", ok, "; ".join(details))
    assert ok


def test_06_lemma_inequalities(report):
    rng = np.random.default_rng(92)
    jensen_bad = 0
    for _ in range(250):
        draw = PATH_PRIOR.sample(1, rng)[0]
        rep = misjudgment_report(
            PATH_MODEL, PATH_PRIOR, PATH_X_ETIG, draw[:1], draw[1:], theta_samples=500
        )
        if not rep.m_pred <= rep.e_m_l + 3.0 * rep.e_m_l_se:
            jensen_bad += 1
    for _ in range(250):
        belief = random_pref_belief(rng)
        draw = belief.sample(1, rng)[0]
        d = PREF_MODEL.designs[int(rng.integers(len(PREF_MODEL.designs)))]
        rep = misjudgment_report(PREF_MODEL, belief, d, draw[0], draw[1], theta_samples=500)
        if not rep.m_pred <= rep.e_m_l + 3.0 * rep.e_m_l_se:
            jensen_bad += 1
    split_bad = 0
    checked = 0
    for _ in range(150):
        draw = PATH_PRIOR.sample(1, rng)[0]
        holds, _, se_s = check_assumption_smoothness(
            PATH_MODEL, PATH_PRIOR, PATH_X_ETIG, draw[:1], draw[1:],
            mc_samples=500, theta_samples=500,
        )
        if not holds:
            continue
        checked += 1
        rep = misjudgment_report(
            PATH_MODEL, PATH_PRIOR, PATH_X_ETIG, draw[:1], draw[1:], theta_samples=500
        )
        inside = 1.0 - rep.outside_mass
        bound = inside * rep.m_l_star + rep.outside_mass * rep.m_pred_tilde
        if not rep.m_pred <= bound + 3.0 * (rep.generic_upper_se + se_s) + 1e-9:
            split_bad += 1
    ok = jensen_bad == 0 and split_bad == 0 and checked >= 75
    report(
        "lemma-inequalities", ok,
        f"prior-average bound: 0 violations expected, got {jensen_bad}/500; "
        f"ball-split bound: {split_bad} violations over {checked} smoothness-verified instances",
    )
    assert ok


def test_07_theorem2_monotonicity(report):
    alphas = np.linspace(0.05, 1.0, 12)
    worst_rise = -np.inf
    counted = 0
    for setting, n, design in (("path", 400, PATH_X_ETIG), ("preference", 2000, PREF_X_ETIG)):
        model, prior = setting_components(setting)
        atlas = threat_atlas(model, prior, None, n, np.random.default_rng(11), 500)
        rows = np.flatnonzero(atlas.rt_at_x_etig < 0.0)[:25]
        assert rows.size == 25
        for k in rows:
            curve = theorem2_curve(
                model, prior, design, atlas.theta[k], atlas.psi[k], alphas, theta_samples=300
            )
            vals = np.array([value for _, value in curve])
            worst_rise = max(worst_rise, float(np.max(np.diff(vals))))
            counted += 1
    # the curves are closed-form/quadrature evaluations, so the stated 3-SE
    # slack reduces to float tolerance
    ok = counted == 50 and worst_rise <= 1e-9
    report(
        "theorem-2-monotonicity", ok,
        f"{counted} threatening instances, worst increase between grid points {worst_rise:.2e}",
    )
    assert ok


def test_08_negative_transfer_correlation(report):
    details = []
    ok = True
    for setting in ("path", "preference"):
        model, prior = setting_components(setting)
        atlas = threat_atlas(model, prior, None, 10000, np.random.default_rng(7), 2000)
        mask = atlas.rt_at_x_etig < 0.0
        res = spearmanr(atlas.p_psi_given_theta[mask], atlas.rt_at_x_etig[mask])
        setting_ok = res.statistic > 0.0 and res.pvalue < 0.01
        ok = ok and setting_ok
        details.append(
            f"{setting}: rho={res.statistic:.3f}, p={res.pvalue:.2e} over {int(mask.sum())} rows"
        )
    report("negative-transfer-correlation", ok, "; ".join(details))
    assert ok


def test_09_directional_experiment(report):
    t0 = time.perf_counter()
    finals = {}
    naive_path_traces = None
    for setting, env, kwargs in (
        ("path", PATH_TRUTH, {}),
        ("preference", PREF_TRUTH, {"n": 2500, "m": 50}),
    ):
        for policy in ("naive", "oracle"):
            cfg = ExperimentConfig(
                setting, policy, steps=10, replications=200, seed=404, generating=env, **kwargs
            )
            traces = run_experiment(cfg)
            finals[(setting, policy)] = float(aggregate(traces).mean[-1])
            if setting == "path" and policy == "naive":
                naive_path_traces = traces
    # bound-line consistency: the first naive step probes the
    # transferable-information argmax, so its mean metric must respect the
    # extreme-threat ceiling within Monte Carlo error
    _, upper = bound_reference_lines(
        ExperimentConfig("path", "naive", steps=10, replications=200, seed=404, generating=PATH_TRUTH)
    )
    t1 = np.array([tr.metric[0] for tr in naive_path_traces])
    sem = float(t1.std(ddof=1) / np.sqrt(t1.size))
    bound_ok = t1.mean() <= upper + 3.0 * sem
    path_ok = finals[("path", "oracle")] >= finals[("path", "naive")]
    pref_ok = finals[("preference", "oracle")] >= finals[("preference", "naive")]
    elapsed = time.perf_counter() - t0
    ok = path_ok and pref_ok and bound_ok and elapsed < 1800.0
    report(
        "directional-experiment", ok,
        f"path oracle {finals[('path', 'oracle')]:.3f} >= naive "
        f"{finals[('path', 'naive')]:.3f}: {path_ok}; "
        f"preference oracle {finals[('preference', 'oracle')]:.3f} >= naive "
        f"{finals[('preference', 'naive')]:.3f}: {pref_ok}; "
        f"first-step mean {t1.mean():.3f} <= ceiling {upper:.3f} + 3SE: {bound_ok}; "
        f"{elapsed:.0f}s",
    )
    assert ok


def test_10_determinism(report, tmp_path, capsys):
    commands = {
        "diagnose": (tmp_path / "d", ["diagnose", "--setting", "path", "--samples", "80",
                                      "--seed", "5"]),
        "run": (tmp_path / "r", ["run", "--setting", "path", "--level", "extreme",
                                 "--steps", "2", "--reps", "2", "--seed", "4"]),
        "toy": (tmp_path / "t", ["toy"]),
        "select-params": (tmp_path / "s", ["select-params", "--setting", "path", "--level",
                                           "none", "--samples", "300", "--seed", "17"]),
    }
    ok = True
    details = []
    for name, (out_dir, args) in commands.items():
        args = args + ["--out", str(out_dir)]
        assert cli.main(args) == 0
        first_out = capsys.readouterr().out
        first = {p.name: p.read_bytes() for p in sorted(out_dir.iterdir())}
        assert cli.main(args) == 0
        second_out = capsys.readouterr().out
        second = {p.name: p.read_bytes() for p in sorted(out_dir.iterdir())}
        same = first == second and first_out == second_out
        ok = ok and same
        details.append(f"{name}: {'byte-identical' if same else 'DIFFERS'} ({len(first)} files)")
    report("determinism", ok, "; ".join(details))
    assert ok
