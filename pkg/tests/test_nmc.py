import math

import numpy as np
import pytest

from meta_oed import nmc
from meta_oed.belief import GaussianBelief
from meta_oed.models import (
    Design,
    default_path_model,
    default_preference_model,
    default_preference_prior,
)

PREF_MODEL = default_preference_model()
PREF_PRIOR = default_preference_prior()
INFLATED = GaussianBelief(PREF_PRIOR.mean, PREF_PRIOR.cov * nmc.DEFAULT_INFLATION, (0,))
X_ONE = Design(np.array([1.0]))


def _sig(z):
    return 1.0 / (1.0 + np.exp(-np.clip(z, -700, 700)))


def reference_estimates(theta, psi, w, psi_in, w_in, x):
    """Straight transcription of the double-sum estimators, for cross-checking
    the production kernels on a shared reservoir."""
    p1 = _sig(theta - psi * x)
    den1 = float(w @ p1)
    inn1 = (w_in * _sig(theta[:, None] - psi_in * x)).sum(axis=1)
    eig = etig = 0.0
    for p, inn, den in ((p1, inn1, den1), (1.0 - p1, 1.0 - inn1, 1.0 - den1)):
        mask = (w > 0.0) & (p > 0.0)
        eig += float(np.sum(w[mask] * p[mask] * (np.log(p[mask]) - np.log(den))))
        etig += float(np.sum(w[mask] * p[mask] * (np.log(inn[mask]) - np.log(den))))
    return eig, etig


class TestWeightedSampleSet:
    def test_invariants_enforced(self):
        samples = np.zeros((5, 2))
        w = np.full(5, 0.2)
        with pytest.raises(ValueError, match="two"):
            nmc.WeightedSampleSet(samples[:1], w[:1] * 5.0, PREF_PRIOR)
        with pytest.raises(ValueError, match="align"):
            nmc.WeightedSampleSet(samples, w[:4], PREF_PRIOR)
        with pytest.raises(ValueError, match="sum to 1"):
            nmc.WeightedSampleSet(samples, w * 2.0, PREF_PRIOR)
        with pytest.raises(ValueError, match="non-negative"):
            nmc.WeightedSampleSet(samples, np.array([-0.2, 0.4, 0.4, 0.2, 0.2]), PREF_PRIOR)
        with pytest.raises(ValueError, match="dimension"):
            nmc.WeightedSampleSet(np.zeros((5, 3)), w, PREF_PRIOR)

    def test_ess_uniform_equals_n(self):
        s = nmc.WeightedSampleSet(np.zeros((8, 2)), np.full(8, 0.125), PREF_PRIOR)
        assert s.ess() == pytest.approx(8.0, abs=1e-12)
        assert s.n == 8

    def test_arrays_read_only(self):
        s = nmc.WeightedSampleSet(np.zeros((4, 2)), np.full(4, 0.25), PREF_PRIOR)
        with pytest.raises(ValueError):
            s.weights[0] = 1.0


class TestFitVariational:
    def test_mean_recovers_standard_normal(self):
        rng = np.random.default_rng(0)
        n = 4000
        samples = rng.standard_normal((n, 2))
        fit = nmc.fit_variational(samples, np.full(n, 1.0 / n), inflation=1.0)
        assert np.all(np.abs(fit.mean) <= 6.0 / math.sqrt(n))
        assert np.allclose(fit.cov, np.eye(2), atol=0.2)

    def test_inflation_scales_covariance_exactly(self):
        rng = np.random.default_rng(1)
        samples = rng.standard_normal((200, 2)) @ np.array([[1.0, 0.3], [0.0, 0.5]])
        w = rng.uniform(0.5, 1.5, 200)
        w /= w.sum()
        base = nmc.fit_variational(samples, w, inflation=1.0)
        doubled = nmc.fit_variational(samples, w, inflation=2.0)
        assert np.array_equal(doubled.cov, 2.0 * base.cov)
        assert np.array_equal(doubled.mean, base.mean)

    def test_collapsed_weights_rejected(self):
        samples = np.random.default_rng(2).standard_normal((50, 2))
        one_hot = np.zeros(50)
        one_hot[7] = 1.0
        with pytest.raises(nmc.ResampleRequiredError):
            nmc.fit_variational(samples, one_hot)

    def test_deflation_rejected(self):
        samples = np.random.default_rng(3).standard_normal((50, 2))
        with pytest.raises(ValueError, match="inflation"):
            nmc.fit_variational(samples, np.full(50, 0.02), inflation=0.5)

    def test_singular_direction_repaired_by_jitter(self):
        rng = np.random.default_rng(4)
        samples = np.column_stack([rng.standard_normal(100), np.full(100, 3.0)])
        fit = nmc.fit_variational(samples, np.full(100, 0.01), inflation=1.0)
        assert fit.cov[1, 1] > 0.0
        np.linalg.cholesky(fit.cov)


class TestRefreshSamples:
    def test_target_equals_proposal_gives_uniform_weights(self):
        s = nmc.refresh_samples(INFLATED.log_pdf, INFLATED, 500, np.random.default_rng(2))
        assert np.all(s.weights == s.weights[0])
        assert s.weights.sum() == pytest.approx(1.0, abs=1e-12)
        assert s.ess() == pytest.approx(500.0, rel=1e-9)

    def test_overdispersed_proposal_recovers_target_mean(self):
        target = GaussianBelief(np.zeros(2), np.eye(2), (0,))
        proposal = GaussianBelief(np.zeros(2), 2.0 * np.eye(2), (0,))
        s = nmc.refresh_samples(target.log_pdf, proposal, 10000, np.random.default_rng(1))
        mean = s.weights @ s.samples
        assert np.all(np.abs(mean) <= 6.0 / math.sqrt(s.ess()))

    def test_weighted_mean_matches_exact_value(self):
        target = GaussianBelief(np.array([0.3, -0.2]), np.eye(2), (0,))
        proposal = GaussianBelief(np.zeros(2), 2.0 * np.eye(2), (0,))
        s = nmc.refresh_samples(target.log_pdf, proposal, 10000, np.random.default_rng(0))
        mean = s.weights @ s.samples
        assert np.abs(mean - target.mean).max() <= 0.02

    def test_zero_mass_target_rejected(self):
        dead = lambda pts: np.full(pts.shape[0], -np.inf)
        with pytest.raises(nmc.ResampleRequiredError, match="zero"):
            nmc.refresh_samples(dead, INFLATED, 50, np.random.default_rng(3))

    def test_nan_target_rejected(self):
        bad = lambda pts: np.full(pts.shape[0], np.nan)
        with pytest.raises(ValueError, match="NaN"):
            nmc.refresh_samples(bad, INFLATED, 50, np.random.default_rng(3))

    def test_shape_mismatch_rejected(self):
        bad = lambda pts: np.zeros(3)
        with pytest.raises(ValueError, match="per sample"):
            nmc.refresh_samples(bad, INFLATED, 50, np.random.default_rng(3))

    def test_minimum_size(self):
        with pytest.raises(ValueError, match="two"):
            nmc.refresh_samples(INFLATED.log_pdf, INFLATED, 1, np.random.default_rng(3))

    def test_deterministic_per_seed(self):
        a = nmc.refresh_samples(PREF_PRIOR.log_pdf, INFLATED, 100, np.random.default_rng(9))
        b = nmc.refresh_samples(PREF_PRIOR.log_pdf, INFLATED, 100, np.random.default_rng(9))
        assert np.array_equal(a.samples, b.samples)
        assert np.array_equal(a.weights, b.weights)


class TestEstimators:
    def _reservoir(self, n=500, seed=11):
        return nmc.refresh_samples(PREF_PRIOR.log_pdf, INFLATED, n, np.random.default_rng(seed))

    def test_matches_reference_transcription(self):
        s = self._reservoir()
        for idx in (0, 49, 50, 99):
            d = PREF_MODEL.designs[idx]
            etig, etsig = nmc.estimate_pair(PREF_MODEL, d, s, 20, np.random.default_rng(21))
            th, ps, psi_in, w_in = nmc._inner_reservoir(s, 20, np.random.default_rng(21))
            eig_ref, etig_ref = reference_estimates(th, ps, s.weights, psi_in, w_in, float(d.x[0]))
            assert etig == pytest.approx(etig_ref, abs=1e-12)
            assert etsig == pytest.approx(eig_ref - etig_ref, abs=1e-12)

    def test_inner_weights_uniform_under_proposal_target(self):
        s = nmc.refresh_samples(INFLATED.log_pdf, INFLATED, 200, np.random.default_rng(2))
        _, _, _, w_in = nmc._inner_reservoir(s, 10, np.random.default_rng(3))
        assert np.allclose(w_in, 1.0 / 11.0, atol=1e-12)

    def test_split_calls_share_reservoir_identity(self):
        s = self._reservoir()
        etig = nmc.estimate_etig(PREF_MODEL, X_ONE, s, 25, np.random.default_rng(4))
        etsig = nmc.estimate_etsig(PREF_MODEL, X_ONE, s, 25, np.random.default_rng(4))
        pair = nmc.estimate_pair(PREF_MODEL, X_ONE, s, 25, np.random.default_rng(4))
        assert (etig, etsig) == pair
        assert etig + etsig == pair[0] + pair[1]

    def test_sweep_matches_single_design_calls(self):
        s = self._reservoir(n=300)
        etig_all, etsig_all = nmc.estimate_sweep(PREF_MODEL, s, 15, np.random.default_rng(5))
        assert etig_all.shape == (100,)
        for idx in (3, 49, 96):
            pair = nmc.estimate_pair(
                PREF_MODEL, PREF_MODEL.designs[idx], s, 15, np.random.default_rng(5)
            )
            assert etig_all[idx] == pytest.approx(pair[0], abs=1e-12)
            assert etsig_all[idx] == pytest.approx(pair[1], abs=1e-12)

    def test_matches_quadrature_oracle(self):
        # 400x400 grid oracle at x=1: etig 0.36810311, etsig 0.04114977
        s = self._reservoir(n=10000)
        etig, etsig = nmc.estimate_pair(PREF_MODEL, X_ONE, s, 100, np.random.default_rng(12))
        assert abs(etig - 0.36810311) <= 0.05
        assert abs(etsig - 0.04114977) <= 0.05

    def test_saturated_design_carries_no_transferable_information(self):
        s = self._reservoir(n=10000)
        etig, _ = nmc.estimate_pair(
            PREF_MODEL, PREF_MODEL.designs[99], s, 100, np.random.default_rng(13)
        )
        assert etig <= 0.05

    def test_known_task_parameter_kills_etsig(self):
        v = GaussianBelief(np.zeros(2), np.diag([16.0, 1e-10]), (0,))
        s = nmc.refresh_samples(v.log_pdf, v, 2000, np.random.default_rng(5))
        _, etsig = nmc.estimate_pair(PREF_MODEL, X_ONE, s, 40, np.random.default_rng(6))
        assert -1e-12 <= etsig <= 1e-6

    def test_known_transferable_parameter_kills_etig(self):
        v = GaussianBelief(np.zeros(2), np.diag([1e-10, 1.0]), (0,))
        s = nmc.refresh_samples(v.log_pdf, v, 4000, np.random.default_rng(7))
        etig, etsig = nmc.estimate_pair(PREF_MODEL, X_ONE, s, 63, np.random.default_rng(100))
        assert abs(etig) <= 0.01
        assert etsig > 0.05  # all the information is task-specific here

    def test_more_inner_samples_reduce_bias(self):
        errors = {10: [], 100: []}
        for seed in range(20):
            s = nmc.refresh_samples(
                PREF_PRIOR.log_pdf, INFLATED, 5000, np.random.default_rng(1000 + seed)
            )
            for m in (10, 100):
                e, _ = nmc.estimate_pair(PREF_MODEL, X_ONE, s, m, np.random.default_rng(2000 + seed))
                errors[m].append(abs(e - 0.36810311))
        assert np.mean(errors[100]) <= np.mean(errors[10])

    def test_default_inner_count_is_sqrt_n(self):
        s = self._reservoir(n=400)
        explicit = nmc.estimate_pair(PREF_MODEL, X_ONE, s, 20, np.random.default_rng(8))
        default = nmc.estimate_pair(PREF_MODEL, X_ONE, s, None, np.random.default_rng(8))
        assert explicit == default

    def test_estimates_finite_under_extreme_designs(self):
        s = self._reservoir(n=300)
        etig_all, etsig_all = nmc.estimate_sweep(PREF_MODEL, s, None, np.random.default_rng(10))
        assert np.all(np.isfinite(etig_all))
        assert np.all(np.isfinite(etsig_all))
        assert np.all(etsig_all >= -1e-12)

    def test_rejects_bad_inputs(self):
        s = self._reservoir(n=50)
        with pytest.raises(TypeError, match="preference"):
            nmc.estimate_pair(default_path_model(), X_ONE, s, 5, np.random.default_rng(1))
        with pytest.raises(ValueError, match="m must"):
            nmc.estimate_pair(PREF_MODEL, X_ONE, s, 0, np.random.default_rng(1))
        with pytest.raises(ValueError, match="rng"):
            nmc.estimate_pair(PREF_MODEL, X_ONE, s, 5)
        bare = nmc.WeightedSampleSet(s.samples, s.weights, s.variational)
        with pytest.raises(ValueError, match="target"):
            nmc.estimate_pair(PREF_MODEL, X_ONE, bare, 5, np.random.default_rng(1))
