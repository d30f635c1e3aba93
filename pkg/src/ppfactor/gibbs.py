"""Posterior sampling by Gibbs cycles with latent event attributions.

Each cycle (1) splits every observed cell's count across factors with a
multinomial draw at the current attribution probabilities, (2) redraws
signature columns from their Dirichlet conditionals (skipped when signatures
are held fixed), (3) redraws baseline activities from gamma conditionals,
(4) redraws each factor's regression coefficients with one elliptical slice
transition, and (5) redraws relevance weights and coefficient variances from
inverse-gamma conditionals.

Randomness is drawn from substreams keyed by (iteration, step[, factor]), so
a chain is reproducible bit-for-bit from its seed regardless of how the
per-factor work is scheduled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError
from .model import EXP_CLAMP, covariate_effects, integrals, log_posterior

STEP_ATTRIBUTION, STEP_SIGNATURES, STEP_BASELINES, STEP_COEFFICIENTS, STEP_HYPER = range(5)


@dataclass
class ChainOptions:
    n_iter: int = 1000
    burn_in: int = 0
    thin: int = 1
    seed: int | None = None
    fixed_signatures: bool = False
    ess_max_shrink_iters: int = 1000

    def __post_init__(self):
        if self.n_iter < 1:
            raise ValueError("n_iter must be >= 1")
        if not 0 <= self.burn_in < self.n_iter:
            raise ValueError("burn_in must satisfy 0 <= burn_in < n_iter")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")


@dataclass
class AttributionCounts:
    """Latent per-factor event counts from one attribution draw."""

    M: np.ndarray            # (n_channels, n_factors) by channel
    S: np.ndarray            # (n_factors, n_patients) by patient
    cell_counts: np.ndarray  # (n_cells, n_factors) raw splits


@dataclass
class ChainOutput:
    """Stored draws, log-posterior trace, and summaries of one chain."""

    draws: dict
    logpost: np.ndarray
    summaries: dict
    n_draws: int
    shrink_total: int
    shrink_max: int
    options: ChainOptions = None

    def summary_table(self):
        """Rows (block, flat index, mean, q2.5, q97.5) over all parameters."""
        rows = []
        for block in ("R", "Theta", "B", "mu", "sigma2"):
            s = self.summaries[block]
            flat_mean = s["mean"].ravel()
            lo = s["q2.5"].ravel()
            hi = s["q97.5"].ravel()
            for idx in range(flat_mean.size):
                rows.append((block, idx, flat_mean[idx], lo[idx], hi[idx]))
        return rows


def substream(seed, *key):
    """Deterministic generator for a hierarchical stream key."""
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key))))


def sample_attributions(state, data, rng):
    """Multinomial split of every sparse cell's count across factors.

    Splits are drawn by sequential binomial conditioning, which is an exact
    multinomial draw in K - 1 vectorized binomial calls.
    """
    c = data.counts
    E = covariate_effects(state.B, data.genome).values
    W = state.R[c.channel_idx, :] * state.Theta[:, c.patient_idx].T * E[c.bin_idx, :]
    totals = W.sum(axis=1, keepdims=True)
    if np.any(totals <= 0):
        raise NumericalError("all-zero attribution weights in at least one cell")
    P = W / totals
    K = state.n_factors
    n_cells = c.n_cells
    out = np.zeros((n_cells, K), dtype=np.int64)
    remaining = c.counts.copy()
    tail = P[:, ::-1].cumsum(axis=1)[:, ::-1]
    for k in range(K - 1):
        with np.errstate(divide="ignore", invalid="ignore"):
            p = np.where(tail[:, k] > 0, P[:, k] / tail[:, k], 0.0)
        np.clip(p, 0.0, 1.0, out=p)
        out[:, k] = rng.binomial(remaining, p)
        remaining -= out[:, k]
    out[:, K - 1] = remaining
    M = np.zeros((data.n_channels, K))
    np.add.at(M, c.channel_idx, out)
    S = np.zeros((data.n_patients, K))
    np.add.at(S, c.patient_idx, out)
    return AttributionCounts(M, S.T, out)


def sample_signatures(M, alpha, rng):
    """Dirichlet conditional draw of every signature column."""
    A = np.asarray(alpha, dtype=np.float64)
    K = M.shape[1]
    if A.ndim == 0:
        A = np.full(M.shape, float(A))
    return np.column_stack([rng.dirichlet(A[:, k] + M[:, k]) for k in range(K)])


def sample_baselines(S, state, data, hyper, rng):
    """Gamma conditional draw of all baseline activities."""
    G = integrals(covariate_effects(state.B, data.genome), data.copies, data.genome)
    rate = (hyper.a / state.mu[:, None]) * data.copy_integrals()[None, :] + G
    shape = hyper.a + S
    return rng.gamma(shape, 1.0 / rate)


def _coef_loglik_parts(state, data, k):
    """Fixed pieces of factor k's coefficient log-likelihood.

    Returns ``m`` with ``sum_j Theta[k,j] G[k,j](beta) = m @ exp(X beta)``.
    """
    m = (data.genome.weights[:, None] * data.copies.copies / 2.0) @ state.Theta[k, :]
    return m


def coef_loglik(beta, X, m, xw):
    """Coefficient log-likelihood factor -sum theta*G(beta) + beta @ xw."""
    z = np.clip(X @ beta, -EXP_CLAMP, EXP_CLAMP)
    return float(-np.exp(z) @ m + beta @ xw)


def sample_beta_ess(state, data, k, xw, rng, max_shrink=1000):
    """One elliptical slice transition on factor ``k``'s coefficients.

    ``xw`` is the covariate-weighted latent count vector
    X^T sum_cells w_k x_q from the current attribution draw. Proposals move
    on the ellipse through the current point and a fresh prior draw, starting
    from a full-circle bracket that shrinks toward the current point until
    the log-likelihood threshold is exceeded.

    Returns (new beta_k, number of shrink steps).
    """
    X = data.genome.covariates
    m = _coef_loglik_parts(state, data, k)
    beta = state.B[k]
    nu = rng.normal(0.0, np.sqrt(state.sigma2[k]), size=beta.shape)
    ll = coef_loglik(beta, X, m, xw)
    if not np.isfinite(ll):
        raise NumericalError(f"non-finite coefficient log-likelihood for factor {k}")
    log_y = ll + np.log(rng.uniform())
    phi = rng.uniform(0.0, 2.0 * np.pi)
    lo, hi = phi - 2.0 * np.pi, phi
    for shrink in range(max_shrink + 1):
        prop = beta * np.cos(phi) + nu * np.sin(phi)
        if coef_loglik(prop, X, m, xw) > log_y:
            return prop, shrink
        if phi < 0:
            lo = phi
        else:
            hi = phi
        phi = rng.uniform(lo, hi)
    raise NumericalError(
        f"elliptical slice bracket failed to shrink within {max_shrink} steps "
        f"for factor {k}; the likelihood is likely non-finite")


def sample_hyper(state, data, hyper, rng):
    """Inverse-gamma conditional draws of relevance weights and variances."""
    J, p = data.n_patients, data.n_covariates
    a0, b0 = hyper.mu_prior(J)
    shape_mu = a0 + hyper.a * J
    scale_mu = b0 + hyper.a * (state.Theta * data.copy_integrals()[None, :]).sum(axis=1)
    mu = scale_mu / rng.gamma(shape_mu, 1.0, size=state.n_factors)
    shape_s2 = hyper.c0 + 0.5 * p
    scale_s2 = hyper.d0 + 0.5 * (state.B * state.B).sum(axis=1)
    sigma2 = scale_s2 / rng.gamma(shape_s2, 1.0, size=state.n_factors)
    return mu, sigma2


def gibbs_cycle(state, data, hyper, opts, iteration):
    """One full Gibbs cycle, in place. Returns total shrink steps."""
    seed = opts.seed
    attr = sample_attributions(state, data, substream(seed, iteration, STEP_ATTRIBUTION))
    if not (opts.fixed_signatures or state.fixed_signatures):
        state.R = sample_signatures(attr.M, hyper.alpha_matrix(data.n_channels),
                                    substream(seed, iteration, STEP_SIGNATURES))
    state.Theta = sample_baselines(attr.S, state, data, hyper,
                                   substream(seed, iteration, STEP_BASELINES))
    shrinks = 0
    if data.n_covariates > 0:
        U = np.zeros((data.n_bins, state.n_factors))
        np.add.at(U, data.counts.bin_idx, attr.cell_counts.astype(np.float64))
        XW = data.genome.covariates.T @ U
        newB = state.B.copy()
        for k in range(state.n_factors):
            newB[k], s = sample_beta_ess(
                state, data, k, XW[:, k],
                substream(seed, iteration, STEP_COEFFICIENTS, k),
                max_shrink=opts.ess_max_shrink_iters)
            shrinks += s
        state.B = newB
    state.mu, state.sigma2 = sample_hyper(state, data, hyper,
                                          substream(seed, iteration, STEP_HYPER))
    return shrinks


def run_chain(data, hyper, init, opts=None):
    """Run a full chain from ``init`` and summarize the stored draws.

    Draws are stored after burn-in, every ``thin``-th completed iteration, so
    exactly ``floor((n_iter - burn_in) / thin)`` draws are kept. Summaries
    are per-parameter means with equal-tailed 95% intervals.
    """
    opts = opts or ChainOptions()
    state = init.copy()
    n_kept = (opts.n_iter - opts.burn_in) // opts.thin
    K, I, J, p = state.n_factors, data.n_channels, data.n_patients, data.n_covariates
    draws = {
        "R": np.empty((n_kept, I, K)),
        "Theta": np.empty((n_kept, K, J)),
        "B": np.empty((n_kept, K, p)),
        "mu": np.empty((n_kept, K)),
        "sigma2": np.empty((n_kept, K)),
    }
    logpost = np.empty(opts.n_iter)
    kept = 0
    shrink_total = 0
    shrink_max = 0
    for it in range(opts.n_iter):
        shrinks = gibbs_cycle(state, data, hyper, opts, it)
        shrink_total += shrinks
        shrink_max = max(shrink_max, shrinks)
        try:
            logpost[it] = log_posterior(state, data, hyper)
        except NumericalError as exc:
            raise NumericalError(f"chain aborted at iteration {it}: {exc}") from exc
        if it >= opts.burn_in and (it - opts.burn_in + 1) % opts.thin == 0:
            draws["R"][kept] = state.R
            draws["Theta"][kept] = state.Theta
            draws["B"][kept] = state.B
            draws["mu"][kept] = state.mu
            draws["sigma2"][kept] = state.sigma2
            kept += 1
    summaries = {}
    for block, arr in draws.items():
        summaries[block] = {
            "mean": arr.mean(axis=0) if n_kept else np.full(arr.shape[1:], np.nan),
            "q2.5": np.quantile(arr, 0.025, axis=0) if n_kept else np.full(arr.shape[1:], np.nan),
            "q97.5": np.quantile(arr, 0.975, axis=0) if n_kept else np.full(arr.shape[1:], np.nan),
        }
    return ChainOutput(draws, logpost, summaries, n_kept, shrink_total, shrink_max, opts)
