"""Hot numerical kernels with a numba fast path and a pure-numpy fallback.

The fallback is selected automatically when numba is unavailable, or explicitly
by setting ``META_OED_NO_NUMBA=1``.  Both paths accumulate per output slot in a
fixed order, so results are bit-identical across thread counts.
"""

from __future__ import annotations

import math
import os

import numpy as np

os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

_FLOOR = 1e-300  # keeps 0*log(0) contributions out without changing finite terms


def _numba_disabled():
    return os.environ.get("META_OED_NO_NUMBA", "").strip().lower() in ("1", "true", "yes")


try:
    if _numba_disabled():
        raise ImportError("numba disabled by META_OED_NO_NUMBA")
    import numba as nb

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised via the env flag in tests
    nb = None
    HAS_NUMBA = False


def set_threads(n: int):
    if HAS_NUMBA:
        # cannot exceed the pool size fixed at interpreter start
        nb.set_num_threads(min(max(1, int(n)), nb.config.NUMBA_NUM_THREADS))


# ---------------------------------------------------------------------------
# pure-numpy implementations


def _nmc_sweep_np(theta, psi, w, psi_in, w_in, xs):
    n_designs = xs.shape[0]
    eig = np.zeros(n_designs)
    etig = np.zeros(n_designs)
    pos = w > 0.0
    for d in range(n_designs):
        x = xs[d]
        # exp overflow -> inf -> sigmoid 0.0, matching the jit twin bit for bit
        with np.errstate(over="ignore"):
            p1 = 1.0 / (1.0 + np.exp(-(theta - psi * x)))
            inn1 = np.einsum(
                "ij,ij->i", w_in, 1.0 / (1.0 + np.exp(-(theta[:, None] - psi_in * x)))
            )
        p0 = 1.0 - p1
        den1 = float(w @ p1)
        den0 = 1.0 - den1
        inn0 = 1.0 - inn1
        e_acc = t_acc = 0.0
        for p, inn, den in ((p1, inn1, den1), (p0, inn0, den0)):
            mask = pos & (p > 0.0)
            logp = np.log(np.where(mask, p, 1.0))
            logd = math.log(max(den, _FLOOR))
            logi = np.log(np.maximum(np.where(mask, inn, 1.0), _FLOOR))
            e_acc += float(np.sum(w[mask] * p[mask] * (logp[mask] - logd)))
            t_acc += float(np.sum(w[mask] * p[mask] * (logi[mask] - logd)))
        eig[d] = e_acc
        etig[d] = t_acc
    return eig, etig


def _pref_rt_table_np(theta, psi, base, gain, sd, nodes, wts, xs, log_pm1, log_pm0):
    n_draws = theta.shape[0]
    n_designs = xs.shape[0]
    rt = np.zeros((n_draws, n_designs))
    psi_nodes = (base + gain * theta)[:, None] + sd * nodes[None, :]
    for d in range(n_designs):
        x = xs[d]
        with np.errstate(over="ignore"):
            q1 = 1.0 / (1.0 + np.exp(-(theta - psi * x)))
            pt1 = (1.0 / (1.0 + np.exp(-(theta[:, None] - psi_nodes * x)))) @ wts
        q0 = 1.0 - q1
        pt0 = 1.0 - pt1
        col = np.zeros(n_draws)
        for q, pt, log_pm in ((q1, pt1, log_pm1[d]), (q0, pt0, log_pm0[d])):
            mask = q > 0.0
            col += np.where(
                mask, q * (np.log(np.maximum(pt, _FLOOR)) - log_pm), 0.0
            )
        rt[:, d] = col
    return rt


# ---------------------------------------------------------------------------
# numba implementations

if HAS_NUMBA:

    @nb.njit(cache=True, parallel=True, fastmath=False)
    def _nmc_sweep_nb(theta, psi, w, psi_in, w_in, xs):  # pragma: no cover - thin jit
        n = theta.shape[0]
        n_in = psi_in.shape[1]
        n_designs = xs.shape[0]
        eig = np.zeros(n_designs)
        etig = np.zeros(n_designs)
        for d in nb.prange(n_designs):
            x = xs[d]
            den1 = 0.0
            for i in range(n):
                den1 += w[i] / (1.0 + math.exp(-(theta[i] - psi[i] * x)))
            den0 = 1.0 - den1
            log_den1 = math.log(max(den1, _FLOOR))
            log_den0 = math.log(max(den0, _FLOOR))
            e_acc = 0.0
            t_acc = 0.0
            for i in range(n):
                if w[i] <= 0.0:
                    continue
                p1 = 1.0 / (1.0 + math.exp(-(theta[i] - psi[i] * x)))
                p0 = 1.0 - p1
                inn1 = 0.0
                for j in range(n_in):
                    inn1 += w_in[i, j] / (1.0 + math.exp(-(theta[i] - psi_in[i, j] * x)))
                inn0 = 1.0 - inn1
                if p1 > 0.0:
                    e_acc += w[i] * p1 * (math.log(p1) - log_den1)
                    t_acc += w[i] * p1 * (math.log(max(inn1, _FLOOR)) - log_den1)
                if p0 > 0.0:
                    e_acc += w[i] * p0 * (math.log(p0) - log_den0)
                    t_acc += w[i] * p0 * (math.log(max(inn0, _FLOOR)) - log_den0)
            eig[d] = e_acc
            etig[d] = t_acc
        return eig, etig

    @nb.njit(cache=True, parallel=True, fastmath=False)
    def _pref_rt_table_nb(
        theta, psi, base, gain, sd, nodes, wts, xs, log_pm1, log_pm0
    ):  # pragma: no cover - thin jit
        n_draws = theta.shape[0]
        n_designs = xs.shape[0]
        n_nodes = nodes.shape[0]
        rt = np.zeros((n_draws, n_designs))
        for k in nb.prange(n_draws):
            cm = base + gain * theta[k]
            for d in range(n_designs):
                x = xs[d]
                q1 = 1.0 / (1.0 + math.exp(-(theta[k] - psi[k] * x)))
                q0 = 1.0 - q1
                pt1 = 0.0
                for g in range(n_nodes):
                    pt1 += wts[g] / (1.0 + math.exp(-(theta[k] - (cm + sd * nodes[g]) * x)))
                pt0 = 1.0 - pt1
                val = 0.0
                if q1 > 0.0:
                    val += q1 * (math.log(max(pt1, _FLOOR)) - log_pm1[d])
                if q0 > 0.0:
                    val += q0 * (math.log(max(pt0, _FLOOR)) - log_pm0[d])
                rt[k, d] = val
        return rt


def nmc_sweep(theta, psi, w, psi_in, w_in, xs):
    """Weighted nested-MC (eig, etig) estimates per design for the binary channel.

    ``theta, psi, w``: the outer importance sample; ``psi_in, w_in``: per-outer-row
    inner conditionals (already weighted, rows sum to 1); ``xs``: scalar designs.
    """
    args = [np.ascontiguousarray(a, dtype=np.float64) for a in (theta, psi, w, psi_in, w_in, xs)]
    if HAS_NUMBA:
        return _nmc_sweep_nb(*args)
    return _nmc_sweep_np(*args)


def pref_rt_table(theta, psi, base, gain, sd, nodes, wts, xs, log_pm1, log_pm0):
    """Transferable-gain table rt[draw, design] for the binary channel.

    ``base, gain, sd`` parameterize psi | theta under the belief; ``log_pm*`` are
    precomputed log marginal outcome probabilities per design.
    """
    theta, psi, nodes, wts, xs, log_pm1, log_pm0 = (
        np.ascontiguousarray(a, dtype=np.float64)
        for a in (theta, psi, nodes, wts, xs, log_pm1, log_pm0)
    )
    if HAS_NUMBA:
        return _pref_rt_table_nb(
            theta, psi, float(base), float(gain), float(sd), nodes, wts, xs, log_pm1, log_pm0
        )
    return _pref_rt_table_np(
        theta, psi, float(base), float(gain), float(sd), nodes, wts, xs, log_pm1, log_pm0
    )
