"""Model-state evaluation: effects, integrals, likelihood, attribution."""

import math

import numpy as np
import pytest

from conftest import make_data, make_state, slow_log_posterior
from ppfactor import (Hyperparams, ModelState, NumericalError,
                      attribution_probs, covariate_effects, expected_counts,
                      integrals, intensity_track, log_posterior, observed_track,
                      unit_domain_data)
from ppfactor.mapfit import compnmf_log_posterior
from ppfactor.model import cell_attribution_probs


class TestCovariateEffects:
    def test_zero_coefficients_give_ones(self, rng):
        data = make_data(rng)
        E = covariate_effects(np.zeros((3, data.n_covariates)), data.genome)
        assert np.all(E.values == 1.0)
        assert not E.saturated

    def test_single_covariate_analytic(self, rng):
        data = make_data(rng, p=1)
        data.genome.covariates[:] = 1.0
        E = covariate_effects(np.array([[math.log(2.0)]]), data.genome)
        np.testing.assert_allclose(E.values, 2.0, rtol=1e-15)

    def test_matches_scalar_loop_oracle(self, rng):
        data = make_data(rng, Q=7, p=3)
        B = rng.normal(0, 1, size=(4, 3))
        E = covariate_effects(B, data.genome).values
        for q in range(7):
            for k in range(4):
                oracle = math.exp(sum(B[k, l] * data.genome.covariates[q, l]
                                      for l in range(3)))
                assert abs(E[q, k] - oracle) <= 1e-13 * oracle

    def test_clamp_sets_saturation_flag(self, rng):
        data = make_data(rng, p=1)
        data.genome.covariates[:] = 1.0
        E = covariate_effects(np.array([[1000.0]]), data.genome)
        assert E.saturated
        assert np.all(np.isfinite(E.values))
        assert E.values.max() == pytest.approx(math.exp(700.0))

    def test_nonfinite_coefficients_rejected(self, rng):
        data = make_data(rng, p=1)
        with pytest.raises(NumericalError):
            covariate_effects(np.array([[np.nan]]), data.genome)


class TestIntegrals:
    def test_diploid_no_covariates_gives_total_length(self, rng):
        data = make_data(rng)
        data.copies.copies[:] = 2.0
        E = covariate_effects(np.zeros((2, data.n_covariates)), data.genome)
        G = integrals(E, data.copies, data.genome)
        np.testing.assert_allclose(G, data.genome.total_length, rtol=1e-12)

    def test_single_bin_arithmetic(self, rng):
        data = make_data(rng, Q=1, J=1, p=1)
        data.genome.weights[:] = 100.0
        data.copies.copies[:] = 4.0
        E_val = np.array([[2.0]])
        G = integrals(E_val, data.copies, data.genome)
        assert G[0, 0] == pytest.approx(400.0)

    def test_matches_loop_oracle(self, rng):
        data = make_data(rng, Q=6, J=3, p=2)
        E = covariate_effects(rng.normal(0, 0.5, size=(4, 2)), data.genome)
        G = integrals(E, data.copies, data.genome)
        for k in range(4):
            for j in range(3):
                oracle = sum(data.genome.weights[q] * data.copies.copies[q, j] / 2.0
                             * E.values[q, k] for q in range(6))
                assert abs(G[k, j] - oracle) <= 1e-12 * abs(oracle)


class TestExpectedCounts:
    def test_uniform_single_factor(self, rng):
        data = make_data(rng, I=96, J=2, Q=1, p=0)
        data.genome.weights[:] = 1.0
        data.copies.copies[:] = 2.0
        state = ModelState(np.full((96, 1), 1 / 96), np.full((1, 2), 96.0),
                           np.zeros((1, 0)), np.ones(1), np.ones(1))
        lam = expected_counts(state, data)
        np.testing.assert_allclose(lam, 1.0, rtol=1e-12)

    def test_aggregate_regime_reduces_to_matrix_product(self, rng):
        # single unit-weight diploid bin: expected counts are exactly R Theta
        N = rng.poisson(5.0, size=(4, 3))
        data = unit_domain_data(N)
        state = make_state(rng, I=4, J=3, K=2, p=0)
        lam = expected_counts(state, data)
        np.testing.assert_allclose(lam, state.R @ state.Theta, rtol=1e-14)

    def test_poisson_noise_calibration_on_simulated_truth(self, desk_sim):
        from ppfactor.simulate import sample_count_tensor
        config, truth, data, _ = desk_sim
        state = ModelState(truth.signatures, truth.baselines, truth.coefficients,
                           np.ones(config.n_factors), np.ones(config.n_factors))
        lam = expected_counts(state, data)
        rng = np.random.default_rng(7)
        z2_sum, n_obs = 0.0, 0
        for _ in range(20):
            ct = sample_count_tensor(truth, rng)
            mask = lam > 5.0
            z = (ct.totals[mask] - lam[mask]) / np.sqrt(lam[mask])
            z2_sum += float((z ** 2).sum())
            n_obs += int(mask.sum())
        # sum of squared Poisson z-scores ~ chi2(n_obs): mean n, sd sqrt(2n)
        assert abs(z2_sum - n_obs) < 4.0 * math.sqrt(2.0 * n_obs)


class TestLogPosterior:
    def test_matches_independent_slow_evaluator(self, rng):
        data = make_data(rng, I=3, J=2, Q=4, p=2)
        hyper = Hyperparams(n_factors=2)
        s1 = make_state(rng, I=3, J=2, K=2, p=2)
        s2 = make_state(rng, I=3, J=2, K=2, p=2)
        d_fast = log_posterior(s1, data, hyper) - log_posterior(s2, data, hyper)
        d_slow = slow_log_posterior(s1, data, hyper) - slow_log_posterior(s2, data, hyper)
        assert d_fast == pytest.approx(d_slow, rel=1e-10)

    def test_mu_rescaling_touches_only_its_blocks(self, rng):
        data = make_data(rng)
        hyper = Hyperparams(n_factors=2)
        state = make_state(rng)
        scaled = state.copy()
        scaled.mu = state.mu * 3.0
        J = data.n_patients
        a0, b0 = hyper.mu_prior(J)
        ci = data.copy_integrals()
        def mu_blocks(s):
            acc = -hyper.a * J * np.log(s.mu).sum()
            acc += float((-(a0 + 1.0) * np.log(s.mu) - b0 / s.mu).sum())
            acc += float((-(hyper.a / s.mu[:, None]) * ci[None, :] * s.Theta).sum())
            return acc
        expected_delta = mu_blocks(scaled) - mu_blocks(state)
        actual_delta = log_posterior(scaled, data, hyper) - log_posterior(state, data, hyper)
        assert actual_delta == pytest.approx(expected_delta, rel=1e-12)

    def test_aggregate_regime_differences_match_baseline_objective(self, rng):
        N = rng.poisson(4.0, size=(5, 3)).astype(float)
        data = unit_domain_data(N)
        hyper = Hyperparams(n_factors=2)
        states = [make_state(rng, I=5, J=3, K=2, p=0) for _ in range(2)]
        for s in states:
            s.sigma2 = np.full(2, 0.009900990099009901)  # shared prior mode
        d_ppf = log_posterior(states[0], data, hyper) - log_posterior(states[1], data, hyper)
        d_base = (compnmf_log_posterior(N, states[0].R, states[0].Theta, states[0].mu, hyper)
                  - compnmf_log_posterior(N, states[1].R, states[1].Theta, states[1].mu, hyper))
        assert d_ppf == pytest.approx(d_base, rel=1e-10)

    def test_nonfinite_term_is_named(self, rng):
        data = make_data(rng)
        hyper = Hyperparams(n_factors=2)
        state = make_state(rng)
        state.Theta[0, 0] = 0.0  # log(0) in the baseline prior block
        with pytest.raises(NumericalError, match="baselines"):
            log_posterior(state, data, hyper)

    def test_label_switching_invariance(self, rng):
        data = make_data(rng, I=4, J=3, Q=5, p=2)
        hyper = Hyperparams(n_factors=3)
        state = make_state(rng, I=4, J=3, K=3, p=2)
        perm = np.array([2, 0, 1])
        lp = log_posterior(state, data, hyper)
        lp_perm = log_posterior(state.permuted(perm), data, hyper)
        assert lp_perm == pytest.approx(lp, rel=1e-14)
        np.testing.assert_allclose(expected_counts(state.permuted(perm), data),
                                   expected_counts(state, data), rtol=1e-12)


class TestAttribution:
    def test_symmetric_factors_split_evenly(self, rng):
        data = make_data(rng, I=3, J=2, Q=4, p=2)
        state = make_state(rng, I=3, J=2, K=1, p=2)
        dup = ModelState(np.repeat(state.R, 2, axis=1), np.repeat(state.Theta, 2, axis=0),
                         np.repeat(state.B, 2, axis=0), np.repeat(state.mu, 2),
                         np.repeat(state.sigma2, 2))
        p = attribution_probs(dup, data, q=1, i=2, j=0)
        np.testing.assert_allclose(p, [0.5, 0.5], atol=1e-15)

    def test_constant_across_bins_without_covariate_effects(self, rng):
        data = make_data(rng, Q=6)
        state = make_state(rng, K=3)
        state.B[:] = 0.0
        base = attribution_probs(state, data, q=0, i=1, j=1)
        for q in range(1, 6):
            np.testing.assert_allclose(attribution_probs(state, data, q=q, i=1, j=1),
                                       base, rtol=1e-15)

    def test_matches_direct_normalization_oracle(self, rng):
        data = make_data(rng, I=4, J=3, Q=5, p=2)
        state = make_state(rng, I=4, J=3, K=3, p=2)
        E = covariate_effects(state.B, data.genome).values
        for (q, i, j) in [(0, 1, 2), (3, 0, 0), (4, 3, 1)]:
            w = np.array([state.R[i, k] * state.Theta[k, j] * E[q, k] for k in range(3)])
            np.testing.assert_allclose(attribution_probs(state, data, q, i, j),
                                       w / w.sum(), rtol=1e-13)

    def test_cell_probabilities_sum_to_one(self, rng):
        data = make_data(rng, I=5, J=3, Q=6, p=2, mean_count=2.0)
        state = make_state(rng, I=5, J=3, K=4, p=2)
        P = cell_attribution_probs(state, data)
        np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)

    def test_zero_weights_rejected(self, rng):
        data = make_data(rng)
        state = make_state(rng)
        state.Theta[:, 0] = 0.0
        with pytest.raises(NumericalError):
            attribution_probs(state, data, q=0, i=0, j=0)


class TestIntensityTrack:
    def test_whole_genome_window_matches_expected_count_columns(self, rng):
        data = make_data(rng, Q=6)
        state = make_state(rng, K=3)
        edges, track = intensity_track(state, data, window_bins=6)
        assert track.shape == (1, data.n_patients)
        np.testing.assert_allclose(track[0], expected_counts(state, data).sum(axis=0),
                                   rtol=1e-12)

    def test_flat_when_no_effects_and_diploid(self, rng):
        data = make_data(rng, Q=6)
        data.copies.copies[:] = 2.0
        data.genome.weights[:] = 100.0
        state = make_state(rng, K=3)
        state.B[:] = 0.0
        edges, track = intensity_track(state, data, window_bins=1)
        expect = 100.0 * state.Theta.sum(axis=0)
        np.testing.assert_allclose(track, np.tile(expect, (6, 1)), rtol=1e-12)

    def test_matches_windowed_oracle(self, rng):
        data = make_data(rng, Q=7, J=2, p=2)
        state = make_state(rng, J=2, K=2, p=2)
        E = covariate_effects(state.B, data.genome).values
        edges, track = intensity_track(state, data, window_bins=3)
        assert list(edges) == [0, 3, 6, 7]
        for w, (lo, hi) in enumerate(zip(edges[:-1], edges[1:])):
            for j in range(2):
                oracle = sum(
                    data.genome.weights[q] * data.copies.copies[q, j] / 2.0
                    * sum(state.Theta[k, j] * E[q, k] for k in range(2))
                    for q in range(lo, hi))
                assert track[w, j] == pytest.approx(oracle, rel=1e-12)

    def test_observed_track_counts(self, rng):
        data = make_data(rng, Q=6, J=2)
        edges, obs = observed_track(data, window_bins=2)
        assert obs.sum() == data.counts.total
        c = data.counts
        oracle = np.zeros((3, 2))
        for idx in range(c.n_cells):
            oracle[c.bin_idx[idx] // 2, c.patient_idx[idx]] += c.counts[idx]
        np.testing.assert_allclose(obs, oracle)

    def test_window_validation(self, rng):
        data = make_data(rng)
        state = make_state(rng)
        with pytest.raises(ValueError):
            intensity_track(state, data, window_bins=0)
