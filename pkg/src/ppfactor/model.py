"""Model state and everything computed from it.

The intensity of events in channel ``i``, patient ``j`` at a bin ``q`` is

    lambda_{ij}(q) = sum_k R[i,k] * Theta[k,j] * (c[q,j]/2) * exp(B[k] @ x[q])

with columns of ``R`` on the simplex. This module evaluates the pieces every
solver needs: the exponential covariate effects, their copy-weighted binned
integrals, expected counts, the (unnormalized) log posterior, per-event
factor attribution probabilities, and windowed intensity tracks.

All functions here are pure: they never mutate their inputs, and repeated
calls with the same arguments return bit-identical results (reductions run
in a fixed order).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError

EXP_CLAMP = 700.0  # |exponent| above this saturates instead of overflowing


@dataclass(frozen=True)
class Hyperparams:
    """Prior and algorithm constants.

    ``alpha`` may be a scalar (symmetric Dirichlet) or a full
    (n_channels, n_factors) matrix of Dirichlet precisions.
    """

    n_factors: int
    a: float = 1.01
    epsilon: float = 1e-3
    alpha: float | np.ndarray = 1.01
    c0: float = 100.0
    d0: float = 1.0
    rho: float = 0.5
    tol: float = 1e-7

    def __post_init__(self):
        if self.n_factors < 1:
            raise ValueError("n_factors must be >= 1")
        for name in ("a", "epsilon", "c0", "d0", "rho", "tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if np.any(np.asarray(self.alpha) <= 0):
            raise ValueError("alpha must be positive")

    def alpha_matrix(self, n_channels):
        """Dirichlet precisions as a dense (n_channels, n_factors) matrix."""
        A = np.asarray(self.alpha, dtype=np.float64)
        if A.ndim == 0:
            return np.full((n_channels, self.n_factors), float(A))
        if A.shape != (n_channels, self.n_factors):
            raise ValueError(f"alpha has shape {A.shape}, expected "
                             f"({n_channels}, {self.n_factors})")
        return A

    def mu_prior(self, n_patients):
        """(shape, scale) = (a*J + 1, epsilon*a*J) of the relevance prior."""
        return self.a * n_patients + 1.0, self.epsilon * self.a * n_patients


@dataclass
class ModelState:
    """All free parameters of the factorization.

    ``R`` is (n_channels, n_factors) with simplex columns, ``Theta`` is
    (n_factors, n_patients) non-negative, ``B`` is (n_factors, n_covariates),
    ``mu`` and ``sigma2`` are positive length-``n_factors`` vectors.
    """

    R: np.ndarray
    Theta: np.ndarray
    B: np.ndarray
    mu: np.ndarray
    sigma2: np.ndarray
    fixed_signatures: bool = False

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=np.float64)
        self.Theta = np.asarray(self.Theta, dtype=np.float64)
        self.B = np.asarray(self.B, dtype=np.float64)
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.sigma2 = np.asarray(self.sigma2, dtype=np.float64)

    @property
    def n_channels(self):
        return self.R.shape[0]

    @property
    def n_factors(self):
        return self.R.shape[1]

    @property
    def n_patients(self):
        return self.Theta.shape[1]

    @property
    def n_covariates(self):
        return self.B.shape[1]

    def copy(self):
        return ModelState(self.R.copy(), self.Theta.copy(), self.B.copy(),
                          self.mu.copy(), self.sigma2.copy(), self.fixed_signatures)

    def permuted(self, perm):
        """State with factor axis reordered by ``perm`` (new k = old perm[k])."""
        perm = np.asarray(perm)
        return ModelState(self.R[:, perm], self.Theta[perm], self.B[perm],
                          self.mu[perm], self.sigma2[perm], self.fixed_signatures)

    def validate(self, atol=1e-12):
        colsums = self.R.sum(axis=0)
        if np.any(np.abs(colsums - 1.0) > atol):
            raise ValueError(f"signature columns must sum to 1 (max dev "
                             f"{np.abs(colsums - 1.0).max():.3e})")
        if np.any(self.Theta < 0):
            raise ValueError("Theta must be non-negative")
        if np.any(self.mu <= 0) or np.any(self.sigma2 <= 0):
            raise ValueError("mu and sigma2 must be strictly positive")
        for name in ("R", "Theta", "B", "mu", "sigma2"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} contains non-finite entries")


@dataclass
class EffectMatrix:
    """exp(B @ x_q) per bin and factor, with a saturation flag.

    Exponent arguments are clamped to +-700 before exponentiation so the fit
    survives transient blow-ups; ``saturated`` records whether the clamp was
    ever active.
    """

    values: np.ndarray  # (n_bins, n_factors)
    saturated: bool = False


def covariate_effects(B, genome):
    """Per-bin multiplicative covariate effects exp(B[k] @ x[q])."""
    B = np.asarray(B, dtype=np.float64)
    if not np.all(np.isfinite(B)):
        raise NumericalError("regression coefficients contain non-finite entries")
    Z = genome.covariates @ B.T
    saturated = False
    if Z.size and np.abs(Z).max() > EXP_CLAMP:
        saturated = True
        Z = np.clip(Z, -EXP_CLAMP, EXP_CLAMP)
    return EffectMatrix(np.exp(Z), saturated)


def _effect_values(effects):
    return effects.values if isinstance(effects, EffectMatrix) else np.asarray(effects)


def integrals(effects, copies, genome):
    """Copy-weighted binned integrals G[k,j] = sum_q w_q (c_qj/2) E_qk."""
    E = _effect_values(effects)
    return E.T @ (genome.weights[:, None] * copies.copies / 2.0)


def expected_counts(state, data):
    """Expected per-(channel, patient) totals sum_k R[i,k] Theta[k,j] G[k,j]."""
    E = covariate_effects(state.B, data.genome)
    G = integrals(E, data.copies, data.genome)
    return state.R @ (state.Theta * G)


def _cell_rates(state, data, effects=None):
    """Per-cell per-factor rates R[i,k] Theta[k,j] E[q,k] (no copy factor)."""
    E = _effect_values(effects) if effects is not None \
        else covariate_effects(state.B, data.genome).values
    c = data.counts
    return state.R[c.channel_idx, :] * state.Theta[:, c.patient_idx].T * E[c.bin_idx, :]


def attribution_probs(state, data, q, i, j):
    """Posterior probability that an event in cell (q, i, j) came from each factor."""
    E = covariate_effects(state.B, data.genome)
    w = state.R[i, :] * state.Theta[:, j] * E.values[q, :]
    total = w.sum()
    if total <= 0:
        raise NumericalError(f"all-zero attribution weights in cell (q={q}, i={i}, j={j})")
    return w / total


def cell_attribution_probs(state, data, effects=None):
    """Attribution probabilities for every sparse cell, (n_cells, n_factors)."""
    W = _cell_rates(state, data, effects)
    totals = W.sum(axis=1, keepdims=True)
    bad = np.flatnonzero(totals[:, 0] <= 0)
    if bad.size:
        c = data.counts
        q, i, j = c.bin_idx[bad[0]], c.channel_idx[bad[0]], c.patient_idx[bad[0]]
        raise NumericalError(f"all-zero attribution weights in cell (q={q}, i={i}, j={j})")
    return W / totals


def log_posterior(state, data, hyper):
    """Log posterior density at ``state``, up to a state-independent constant.

    Terms constant in the parameters (event-position base measures, count
    factorials, normalizing constants) are dropped, so only differences
    between evaluations are meaningful across implementations.

    Raises :class:`NumericalError` naming the first non-finite block.
    """
    I, J, p = data.n_channels, data.n_patients, data.n_covariates
    a, eps = hyper.a, hyper.epsilon
    effects = covariate_effects(state.B, data.genome)
    G = integrals(effects, data.copies, data.genome)
    ci = data.copy_integrals()

    terms = {}
    terms["survival"] = -float((state.Theta * G).sum())
    rates = _cell_rates(state, data, effects).sum(axis=1)
    with np.errstate(divide="ignore"):
        terms["counts"] = float((data.counts.counts * np.log(rates)).sum())
    A = hyper.alpha_matrix(I)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms["signatures"] = float(((A - 1.0) * np.log(state.R)).sum())
        terms["baselines"] = float(
            ((a - 1.0) * np.log(state.Theta)
             - (a / state.mu[:, None]) * ci[None, :] * state.Theta).sum()
            - a * J * np.log(state.mu).sum())
    terms["coefficients"] = float(
        (-0.5 * p * np.log(state.sigma2)
         - 0.5 * (state.B * state.B).sum(axis=1) / state.sigma2).sum())
    a0, b0 = hyper.mu_prior(J)
    terms["relevance"] = float((-(a0 + 1.0) * np.log(state.mu) - b0 / state.mu).sum())
    terms["variances"] = float(
        (-(hyper.c0 + 1.0) * np.log(state.sigma2) - hyper.d0 / state.sigma2).sum())

    for name, value in terms.items():
        if not np.isfinite(value):
            raise NumericalError(f"non-finite log-posterior term {name!r} ({value})")
    return float(sum(terms.values()))


def intensity_track(state, data, window_bins):
    """Windowed expected event totals per patient.

    Bins are grouped into consecutive windows of ``window_bins`` (the last
    window may be shorter). Channels marginalize out because signature
    columns sum to one, leaving per-window totals
    sum_{q in window} w_q (c_qj/2) sum_k Theta[k,j] E[q,k].

    Returns ``(edges, track)`` where ``edges`` has the first bin index of
    each window plus the total bin count, and ``track`` is
    (n_windows, n_patients).
    """
    if window_bins < 1:
        raise ValueError("window_bins must be >= 1")
    E = covariate_effects(state.B, data.genome).values
    per_bin = (data.genome.weights[:, None] * data.copies.copies / 2.0) \
        * (E @ state.Theta)  # (Q, J)
    Q = data.n_bins
    edges = np.arange(0, Q + window_bins, window_bins)
    edges[-1] = Q
    if edges[-1] == edges[-2]:
        edges = edges[:-1]
    track = np.add.reduceat(per_bin, edges[:-1], axis=0)
    return edges, track


def observed_track(data, window_bins):
    """Windowed observed event totals per patient, same layout as intensity_track."""
    if window_bins < 1:
        raise ValueError("window_bins must be >= 1")
    Q = data.n_bins
    per_bin = np.zeros((Q, data.n_patients))
    np.add.at(per_bin, (data.counts.bin_idx, data.counts.patient_idx),
              data.counts.counts.astype(np.float64))
    edges = np.arange(0, Q + window_bins, window_bins)
    edges[-1] = Q
    if edges[-1] == edges[-2]:
        edges = edges[:-1]
    return edges, np.add.reduceat(per_bin, edges[:-1], axis=0)
