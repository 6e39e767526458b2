"""Time the jit-compiled hot kernels against their pure-numpy fallbacks.

Both implementations live in ``meta_oed._kernels`` and are exercised here on
identical inputs built through the real estimator pipeline, so the reported
speedups reflect what the harness actually sees.  The first jit call is a
warm-up (compilation) and is excluded from timing.

Usage::

    python3 benchmarks/bench_kernels.py [--n 10000] [--m 100] [--draws 2000] [--repeat 5]

Setting ``META_OED_NO_NUMBA=1`` disables the jit path at import, in which case
this script times the fallback only and says so.  ``--threads`` caps the jit
thread count (same effect as ``META_OED_THREADS`` in the CLI).
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from meta_oed import _kernels, nmc, quadrature
from meta_oed.belief import GaussianBelief
from meta_oed.harness import setting_components


def _best_of(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times), out


def _report(name, shape_note, np_time, nb_time, max_diff):
    print(f"{name}  ({shape_note})")
    print(f"  numpy fallback : {np_time * 1e3:9.2f} ms")
    if nb_time is None:
        print("  jit            :       n/a (numba unavailable or disabled)")
    else:
        print(f"  jit            : {nb_time * 1e3:9.2f} ms   speedup x{np_time / nb_time:.1f}")
        print(f"  max |diff|     : {max_diff:.3e}")
    print()


def bench_nmc_sweep(n, m, repeat, rng):
    model, prior = setting_components("preference")
    inflated = GaussianBelief(prior.mean, prior.cov * nmc.DEFAULT_INFLATION, prior.transferable_dims)
    sset = nmc.refresh_samples(prior.log_pdf, inflated, n, rng)
    theta, psi, psi_in, w_in = nmc._inner_reservoir(sset, m, rng)
    xs = np.array([float(d.x[0]) for d in model.designs])
    args = tuple(
        np.ascontiguousarray(a, dtype=np.float64)
        for a in (theta, psi, sset.weights, psi_in, w_in, xs)
    )

    np_time, np_out = _best_of(_kernels._nmc_sweep_np, args, repeat)
    nb_time = max_diff = None
    if _kernels.HAS_NUMBA:
        _kernels._nmc_sweep_nb(*args)  # warm-up / compile
        nb_time, nb_out = _best_of(_kernels._nmc_sweep_nb, args, repeat)
        max_diff = max(float(np.max(np.abs(a - b))) for a, b in zip(np_out, nb_out))
    _report("nmc_sweep", f"n={n}, m={m}, designs={len(xs)}", np_time, nb_time, max_diff)


def bench_pref_rt_table(draws, repeat, rng):
    model, prior = setting_components("preference")
    sample = prior.sample(draws, rng)
    t_idx = prior.transferable_dims[0]
    p_idx = prior.task_dims[0]
    base, gain, sd = quadrature.conditional_psi_coefficients(prior)
    nodes, wts = quadrature.gauss_hermite_nodes()
    xs = np.array([float(d.x[0]) for d in model.designs])
    p_marg = np.array([quadrature.marginal_success(prior, d) for d in model.designs])
    args = (
        np.ascontiguousarray(sample[:, t_idx]),
        np.ascontiguousarray(sample[:, p_idx]),
        float(base),
        float(gain),
        float(sd),
        nodes,
        wts,
        xs,
        np.log(p_marg),
        np.log1p(-p_marg),
    )

    np_time, np_out = _best_of(_kernels._pref_rt_table_np, args, repeat)
    nb_time = max_diff = None
    if _kernels.HAS_NUMBA:
        _kernels._pref_rt_table_nb(*args)  # warm-up / compile
        nb_time, nb_out = _best_of(_kernels._pref_rt_table_nb, args, repeat)
        max_diff = float(np.max(np.abs(np_out - nb_out)))
    _report(
        "pref_rt_table",
        f"draws={draws}, designs={len(xs)}, nodes={len(nodes)}",
        np_time,
        nb_time,
        max_diff,
    )


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n", type=int, default=10000, help="outer importance-sample size")
    parser.add_argument("--m", type=int, default=100, help="inner reservoir size")
    parser.add_argument("--draws", type=int, default=2000, help="environment draws for the rt table")
    parser.add_argument("--repeat", type=int, default=5, help="timed repetitions (best is reported)")
    parser.add_argument("--threads", type=int, default=0, help="jit thread cap (0 = leave as-is)")
    args = parser.parse_args(argv)

    if args.threads > 0:
        _kernels.set_threads(args.threads)
    print(f"numba available: {_kernels.HAS_NUMBA}\n")
    rng = np.random.default_rng(0)
    bench_nmc_sweep(args.n, args.m, args.repeat, rng)
    bench_pref_rt_table(args.draws, args.repeat, rng)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
