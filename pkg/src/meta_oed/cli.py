"""Command-line interface: threat diagnostics, simulated experiments, and the
axis-aligned toy acquisition tables, exported as bit-stable CSV/JSON.

Every output file embeds the fully resolved configuration (CSV files as a
leading ``#`` comment row, JSON files as a ``config`` field) and floats are
written with 17 significant digits, so rerunning a command with identical
flags reproduces every file byte for byte.

Configuration resolves as defaults < ``--config`` JSON file < explicit flags.
The file is a flat JSON object keyed by flag names (hyphens or underscores).

``META_OED_THREADS`` caps the replication worker processes and the jit kernel
threads; unset or 0 means the machine default.  All file writing happens on
the main process after the workers join.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from itertools import repeat
from pathlib import Path

import numpy as np

from meta_oed import _kernels, harness, nmc
from meta_oed.closed_form import argmax_design, etig_lg, etsig_lg, toy_design_grid
from meta_oed.harness import (
    ExperimentConfig,
    SelectionFailedError,
    aggregate,
    bound_reference_lines,
    prepare_experiment,
    run_replication,
    select_generating_params,
    setting_components,
)
from meta_oed.misjudgment import misjudgment_report, threat_atlas
from meta_oed.models import default_toy_prior

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

TOY_THETA_STAR = 0.0
TOY_PSI_STAR = 6.0
TOY_GRID_POINTS = 101
TOY_GRID_HALF_WIDTH = 10.0


class ConfigError(Exception):
    """Invalid flag, config-file entry, or flag/file combination."""


class EstimatorFailureError(RuntimeError):
    """Every replication lost its importance-sample support."""


# defaults per command; the resolved dict is echoed into every output file
_DEFAULTS = {
    "diagnose": {
        "setting": "path",
        "samples": 10000,
        "seed": 0,
        "theta_samples": 2000,
        "out": ".",
    },
    "run": {
        "setting": "path",
        "level": "extreme",
        "policy": "naive",
        "steps": 10,
        "reps": 200,
        "seed": 0,
        "n": 10000,
        "m": 0,
        "out": ".",
    },
    "toy": {"out": "."},
    "select-params": {
        "setting": "path",
        "level": "extreme",
        "samples": 0,
        "seed": 0,
        "out": "",
    },
}

_INT_KEYS = frozenset({"samples", "seed", "theta_samples", "steps", "reps", "n", "m"})
_MIN_VALUES = {"samples": 1, "theta_samples": 2, "steps": 1, "reps": 1, "n": 2, "m": 0, "seed": 0}
_CHOICES = {
    "setting": harness.SETTINGS,
    "policy": harness.POLICIES,
    "level": ("none", "mild", "extreme"),
}


def _resolve(args, defaults, command) -> dict:
    mins = dict(_MIN_VALUES)
    if command == "select-params":
        mins["samples"] = 0  # 0 = the setting's default candidate-pool size
    cfg = dict(defaults)
    config_path = getattr(args, "config", None)
    if config_path is not None:
        try:
            loaded = json.loads(Path(config_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {config_path}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError("config file must be a flat JSON object of flag values")
        for key, value in loaded.items():
            name = str(key).replace("-", "_")
            if name not in defaults:
                raise ConfigError(f"unknown config key {key!r} for this command")
            cfg[name] = value
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    for key, value in cfg.items():
        if key in _INT_KEYS:
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{key} must be an integer, got {value!r}")
            if value < mins[key]:
                raise ConfigError(f"{key} must be >= {mins[key]}, got {value}")
        elif not isinstance(value, str):
            raise ConfigError(f"{key} must be a string, got {value!r}")
        if key in _CHOICES and value not in _CHOICES[key]:
            raise ConfigError(f"{key} must be one of {_CHOICES[key]}, got {value!r}")
    return cfg


def _worker_count() -> int:
    raw = os.environ.get("META_OED_THREADS", "").strip()
    if raw:
        try:
            value = int(raw)
        except ValueError as exc:
            raise ConfigError(f"META_OED_THREADS must be an integer, got {raw!r}") from exc
        if value > 0:
            return value
    return os.cpu_count() or 1


# ---------------------------------------------------------------------------
# bit-stable writers


def _fmt(value) -> str:
    return "%.17g" % float(value)


def _header(cfg) -> str:
    return "# " + json.dumps(cfg, sort_keys=True)


def _write_csv(path, cfg, columns, rows):
    lines = [_header(cfg), ",".join(columns)]
    lines.extend(",".join(row) for row in rows)
    Path(path).write_text("\n".join(lines) + "\n")


def _write_json(path, payload):
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _out_dir(cfg) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _vector_columns(name, width):
    return [name] if width == 1 else [f"{name}_{i + 1}" for i in range(width)]


# ---------------------------------------------------------------------------
# commands


def cmd_diagnose(cfg, workers) -> int:
    model, prior = setting_components(cfg["setting"])
    atlas = threat_atlas(
        model, prior, None, cfg["samples"], np.random.default_rng(cfg["seed"]), cfg["theta_samples"]
    )
    out = _out_dir(cfg)
    columns = (
        _vector_columns("theta", atlas.theta.shape[1])
        + _vector_columns("psi", atlas.psi.shape[1])
        + ["psi_avg", "p_psi_given_theta", "level", "rt_at_xetig", "max_rt", "xetig_index"]
    )
    idx = str(atlas.x_etig_index)
    rows = []
    for k in range(atlas.n_samples):
        rows.append(
            [_fmt(v) for v in atlas.theta[k]]
            + [_fmt(v) for v in atlas.psi[k]]
            + [
                _fmt(atlas.psi_avg[k]),
                _fmt(atlas.p_psi_given_theta[k]),
                atlas.level[k].value,
                _fmt(atlas.rt_at_x_etig[k]),
                _fmt(atlas.max_rt_over_designs[k]),
                idx,
            ]
        )
    _write_csv(out / "atlas.csv", cfg, columns, rows)
    _write_json(
        out / "summary.json",
        {
            "command": "diagnose",
            "config": cfg,
            "n_samples": atlas.n_samples,
            "x_etig_index": atlas.x_etig_index,
            "x_etig": [float(v) for v in model.designs[atlas.x_etig_index].x],
            "threat_fraction": atlas.threat_fraction,
            "level_fractions": atlas.level_fractions(),
        },
    )
    return EXIT_OK


def cmd_run(cfg, workers) -> int:
    try:
        config = ExperimentConfig(
            cfg["setting"],
            cfg["policy"],
            steps=cfg["steps"],
            replications=cfg["reps"],
            seed=cfg["seed"],
            level=cfg["level"],
            n=cfg["n"],
            m=cfg["m"] or None,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    model, prior, env, rep_ss = prepare_experiment(config)
    if workers > 1 and config.replications > 1:
        chunk = max(1, config.replications // (4 * workers))
        with ProcessPoolExecutor(max_workers=min(workers, config.replications)) as pool:
            traces = list(
                pool.map(
                    run_replication,
                    repeat(config),
                    repeat(model),
                    repeat(prior),
                    repeat(env),
                    rep_ss,
                    chunksize=chunk,
                )
            )
    else:
        traces = [run_replication(config, model, prior, env, child) for child in rep_ss]
    if all(tr.failed for tr in traces):
        raise EstimatorFailureError(
            "every replication failed: importance weights collapsed; raise --n"
        )
    agg = aggregate(traces)
    try:
        lower, upper = bound_reference_lines(config)
    except ValueError:
        lower = upper = None
    bound = lower if lower is not None else upper

    out = _out_dir(cfg)
    trace_rows = []
    for r, tr in enumerate(traces):
        for t in range(config.steps):
            trace_rows.append(
                [
                    str(r),
                    str(t + 1),
                    str(int(tr.design_index[t])),
                    _fmt(tr.y[t]),
                    _fmt(tr.etig[t]),
                    _fmt(tr.etsig[t]),
                    _fmt(tr.metric[t]),
                ]
            )
    _write_csv(
        out / "trace.csv",
        cfg,
        ["rep", "t", "design_index", "y", "etig", "etsig", "metric"],
        trace_rows,
    )

    columns = ["t", "mean", "q25", "q75"]
    if bound is not None:
        columns.append("bound_line")
    prior_metric = traces[0].metric_prior
    curve_rows = [["0"] + [_fmt(prior_metric)] * 3]
    for t in range(config.steps):
        curve_rows.append([str(t + 1), _fmt(agg.mean[t]), _fmt(agg.q25[t]), _fmt(agg.q75[t])])
    if bound is not None:
        for row in curve_rows:
            row.append(_fmt(bound))
    _write_csv(out / "curves.csv", cfg, columns, curve_rows)

    _write_json(
        out / "summary.json",
        {
            "command": "run",
            "config": cfg,
            "generating": {
                "theta_star": [float(v) for v in env.theta_star],
                "psi_star": [float(v) for v in env.psi_star],
            },
            "metric_prior": float(prior_metric),
            "final_metric_mean": float(agg.mean[-1]),
            "n_failed": agg.n_failed,
            "bound_lower": None if lower is None else float(lower),
            "bound_upper": None if upper is None else float(upper),
        },
    )
    return EXIT_OK


def cmd_toy(cfg, workers) -> int:
    prior = default_toy_prior()
    sigma2 = 1.0
    c = 1.0
    designs = toy_design_grid()
    etig_vals = np.array([etig_lg(prior, d, sigma2) for d in designs])
    etsig_vals = np.array([etsig_lg(prior, d, sigma2) for d in designs])
    x_etig_index = argmax_design(etig_vals)

    out = _out_dir(cfg)
    table_rows = [
        [_fmt(d.x[0]), _fmt(d.x[1]), _fmt(etig_vals[j]), _fmt(etsig_vals[j])]
        for j, d in enumerate(designs)
    ]
    _write_csv(out / "toy_table.csv", cfg, ["x1", "x2", "etig", "etsig"], table_rows)

    # one-observation grid Bayes for the confounded model y ~ N(c(psi-theta), sigma2),
    # conditioning on the most likely outcome under the true parameters
    y_obs = c * (TOY_PSI_STAR - TOY_THETA_STAR)
    axis = np.linspace(-TOY_GRID_HALF_WIDTH, TOY_GRID_HALF_WIDTH, TOY_GRID_POINTS)
    th, ps = np.meshgrid(axis, axis, indexing="ij")
    points = np.column_stack([th.ravel(), ps.ravel()])
    e_y = c * (points[:, 1] - points[:, 0])
    log_prior = prior.log_pdf(points)
    log_lik = -0.5 * (np.log(2.0 * np.pi * sigma2) + (y_obs - e_y) ** 2 / sigma2)
    log_post = log_prior + log_lik
    cell = (axis[1] - axis[0]) ** 2
    posterior = np.exp(log_post - log_post.max())
    posterior /= posterior.sum() * cell
    prior_density = np.exp(log_prior)
    grid_rows = [
        [_fmt(points[i, 0]), _fmt(points[i, 1]), _fmt(e_y[i]), _fmt(prior_density[i]), _fmt(posterior[i])]
        for i in range(points.shape[0])
    ]
    _write_csv(
        out / "toy_grid.csv",
        cfg,
        ["theta", "psi", "e_y", "prior_density", "posterior_density"],
        grid_rows,
    )

    theta_marginal = posterior.reshape(TOY_GRID_POINTS, TOY_GRID_POINTS).sum(axis=1)
    _write_json(
        out / "summary.json",
        {
            "command": "toy",
            "config": cfg,
            "c": c,
            "sigma2": sigma2,
            "theta_star": TOY_THETA_STAR,
            "psi_star": TOY_PSI_STAR,
            "y_obs": float(y_obs),
            "x_etig_index": x_etig_index,
            "x_etig": [float(v) for v in designs[x_etig_index].x],
            "etig_at_x_etig": float(etig_vals[x_etig_index]),
            "etsig_at_x_etig": float(etsig_vals[x_etig_index]),
            "posterior_theta_mode": float(axis[int(np.argmax(theta_marginal))]),
            "prior_theta_mode": float(prior.mean[0]),
        },
    )
    return EXIT_OK


def cmd_select_params(cfg, workers) -> int:
    env = select_generating_params(
        cfg["setting"], cfg["level"], cfg["samples"] or None, np.random.default_rng(cfg["seed"])
    )
    model, prior = setting_components(cfg["setting"])
    x_etig_index = harness._etig_argmax_index(model, prior)
    report = misjudgment_report(
        model, prior, model.designs[x_etig_index], env.theta_star, env.psi_star
    )
    payload = {
        "command": "select-params",
        "config": cfg,
        "theta_star": [float(v) for v in env.theta_star],
        "psi_star": [float(v) for v in env.psi_star],
        "classified_level": report.level.value,
        "rt_star": float(report.rt_star),
        "x_etig_index": x_etig_index,
    }
    print(json.dumps(payload, sort_keys=True, indent=2))
    if cfg["out"]:
        _write_json(_out_dir(cfg) / "selection.json", payload)
    return EXIT_OK


_COMMANDS = {
    "diagnose": cmd_diagnose,
    "run": cmd_run,
    "toy": cmd_toy,
    "select-params": cmd_select_params,
}


# ---------------------------------------------------------------------------
# argument parsing


def _add_common(sub, with_seed=True):
    sub.add_argument("--config", metavar="FILE", help="flat JSON file of flag values")
    sub.add_argument("--out", metavar="DIR", help="output directory (default: current)")
    if with_seed:
        sub.add_argument("--seed", type=int, help="root seed (default: 0)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="meta-oed",
        description="Active meta-learning diagnostics and simulated sequential experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    d = sub.add_parser(
        "diagnose", help="classify prior-sampled tasks by negative-transfer threat level"
    )
    d.add_argument("--setting", choices=harness.SETTINGS, help="task setting (default: path)")
    d.add_argument("--samples", type=int, help="prior draws to classify (default: 10000)")
    d.add_argument(
        "--theta-samples", dest="theta_samples", type=int,
        help="transferable-parameter draws per classification (default: 2000)",
    )
    _add_common(d)

    r = sub.add_parser("run", help="run replicated sequential experiments for one policy")
    r.add_argument("--setting", choices=harness.SETTINGS, help="task setting (default: path)")
    r.add_argument(
        "--level", choices=_CHOICES["level"],
        help="threat level used to select the generating parameters (default: extreme)",
    )
    r.add_argument("--policy", choices=harness.POLICIES, help="acquisition policy (default: naive)")
    r.add_argument("--steps", type=int, help="acquisitions per replication (default: 10)")
    r.add_argument("--reps", type=int, help="replications (default: 200)")
    r.add_argument("--n", type=int, help="outer importance-sample count (default: 10000)")
    r.add_argument("--m", type=int, help="inner sample count; 0 = sqrt of n (default: 0)")
    _add_common(r)

    t = sub.add_parser("toy", help="write the axis-aligned acquisition table and Bayes grid")
    _add_common(t, with_seed=False)

    s = sub.add_parser("select-params", help="select generating parameters for a threat level")
    s.add_argument("--setting", choices=harness.SETTINGS, help="task setting (default: path)")
    s.add_argument("--level", choices=_CHOICES["level"], help="target threat level (default: extreme)")
    s.add_argument("--samples", type=int, help="candidate pool size; 0 = setting default")
    _add_common(s)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        workers = _worker_count()
        _kernels.set_threads(workers)
        cfg = _resolve(args, _DEFAULTS[args.command], args.command)
        return _COMMANDS[args.command](cfg, workers)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (EstimatorFailureError, SelectionFailedError, nmc.ResampleRequiredError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())
