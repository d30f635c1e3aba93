"""Shared fixtures and instance builders."""

import numpy as np
import pytest

from ppfactor import (BinnedGenome, CopyNumberProfile, CountTensor, ModelState,
                      PPFData, SimConfig, simulate_dataset)


def make_genome(rng, Q=6, p=2, chrom="chr1", width=100, weights=None):
    starts = np.arange(Q, dtype=np.int64) * width
    X = rng.standard_normal((Q, p))
    if weights is None:
        weights = np.full(Q, float(width))
    return BinnedGenome(np.asarray([chrom] * Q, dtype=object), starts, starts + width,
                        weights, X, [f"cov{l}" for l in range(p)])


def make_data(rng, I=3, J=2, Q=4, p=2, mean_count=3.0, weights=None):
    """Small random instance with Poisson counts at a haphazard rate field."""
    genome = make_genome(rng, Q=Q, p=p, weights=weights)
    copies = CopyNumberProfile(2.0 + rng.integers(0, 3, size=(Q, J)).astype(float),
                               [f"P{j:03d}" for j in range(J)])
    lam = rng.gamma(2.0, mean_count / 2.0, size=(Q, J, I))
    N = rng.poisson(lam)
    N[genome.weights <= 0, :, :] = 0
    q, j, i = np.nonzero(N)
    totals = N.sum(axis=0).T  # (I, J)
    counts = CountTensor(q, j, i, N[q, j, i], totals, copies.patients, I)
    return PPFData(genome, copies, counts)


def make_state(rng, I=3, J=2, K=2, p=2, beta_scale=0.3):
    R = rng.dirichlet(np.ones(I), size=K).T
    Theta = rng.gamma(2.0, 1.0, size=(K, J)) + 0.05
    B = rng.normal(0.0, beta_scale, size=(K, p))
    mu = rng.gamma(2.0, 1.0, size=K) + 0.05
    sigma2 = rng.gamma(2.0, 0.05, size=K) + 0.005
    return ModelState(R, Theta, B, mu, sigma2)


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)


@pytest.fixture(scope="session")
def desk_sim():
    """One small simulated dataset reused by read-only tests."""
    config = SimConfig(total_length=50_000.0, bin_width=100.0, n_patients=5,
                       n_covariates=4, n_active_covariates=2, n_factors=3,
                       coefficient_variance=0.3, seed=42)
    truth, data, records = simulate_dataset(config)
    return config, truth, data, records


def slow_log_posterior(state, data, hyper):
    """Independent scalar-loop evaluation of the log posterior.

    Mirrors the density term by term with explicit loops and no shared code
    with the package implementation (other than the data layout).
    """
    import math

    R, Theta, B, mu, s2 = state.R, state.Theta, state.B, state.mu, state.sigma2
    I, K = R.shape
    J = Theta.shape[1]
    p = B.shape[1]
    g = data.genome
    C = data.copies.copies
    lp = 0.0
    # survival term: - sum_kj theta_kj * sum_q w_q (c_qj / 2) exp(b_k . x_q)
    for k in range(K):
        for j in range(J):
            acc = 0.0
            for q in range(g.n_bins):
                acc += g.weights[q] * (C[q, j] / 2.0) * math.exp(
                    sum(B[k, l] * g.covariates[q, l] for l in range(p)))
            lp -= Theta[k, j] * acc
    # count term
    c = data.counts
    for idx in range(c.n_cells):
        q, j, i, n = c.bin_idx[idx], c.patient_idx[idx], c.channel_idx[idx], c.counts[idx]
        rate = 0.0
        for k in range(K):
            rate += R[i, k] * Theta[k, j] * math.exp(
                sum(B[k, l] * g.covariates[q, l] for l in range(p)))
        lp += n * math.log(rate)
    # priors
    A = hyper.alpha_matrix(I)
    for i in range(I):
        for k in range(K):
            lp += (A[i, k] - 1.0) * math.log(R[i, k])
    ci = [sum(g.weights[q] * C[q, j] / 2.0 for q in range(g.n_bins)) for j in range(J)]
    for k in range(K):
        for j in range(J):
            lp += (hyper.a - 1.0) * math.log(Theta[k, j]) \
                - (hyper.a / mu[k]) * ci[j] * Theta[k, j]
        lp -= hyper.a * J * math.log(mu[k])
    for k in range(K):
        lp += -0.5 * p * math.log(s2[k]) \
            - sum(B[k, l] ** 2 for l in range(p)) / (2.0 * s2[k])
    a0 = hyper.a * J + 1.0
    b0 = hyper.epsilon * hyper.a * J
    for k in range(K):
        lp += -(a0 + 1.0) * math.log(mu[k]) - b0 / mu[k]
        lp += -(hyper.c0 + 1.0) * math.log(s2[k]) - hyper.d0 / s2[k]
    return lp
