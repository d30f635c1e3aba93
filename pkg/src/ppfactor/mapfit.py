"""Maximum a posteriori fitting.

One outer iteration cycles four blocks: multiplicative updates for the
signature columns and the baseline activities (each the exact minimizer of a
tangent surrogate obtained from the log-sum inequality, so the log posterior
never decreases), a capped Newton/Fisher-scoring step on each factor's
regression coefficients (applied ``newton_repeats`` times per cycle), and
closed-form conditional modes for the relevance weights and coefficient
variances. Iteration stops when the relative change in log posterior drops
below ``tol``.

``printed_updates=True`` switches the baseline and relevance updates to a
variant in which the additive prior-mode term is not divided by the
denominator (and the relevance denominator is smaller by one). That variant
differs at order (a - 1) and does not carry a descent guarantee; the default
exact-minimizer updates do.

The compressive-NMF baseline (:func:`compnmf_fit`) is the same model on
aggregate counts only: a single unit-weight diploid bin and no covariates,
written with dense matrix updates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError
from .model import ModelState, covariate_effects, integrals, log_posterior


@dataclass
class MapOptions:
    max_iter: int = 2000
    tol: float = 1e-7
    n_starts: int = 3
    seed: int | None = None
    newton_repeats: int = 2
    rho: float = 0.5
    printed_updates: bool = False
    verbose: bool = False

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.n_starts < 1:
            raise ValueError("n_starts must be >= 1")


@dataclass
class MapFit:
    """Best run of a multi-start MAP optimization."""

    state: ModelState
    trace: np.ndarray
    iterations: int
    converged: bool
    start_index: int
    all_traces: list = field(default_factory=list)
    ridge_jitters: int = 0


THETA_FLOOR = 1e-10  # keeps zero-count patients out of absorbing zeros


def init_random(data, hyper, rng):
    """Random starting point.

    Signatures are drawn from their Dirichlet prior, every factor's baseline
    is the patient's event total divided by its copy integral (floored at
    ``THETA_FLOOR``), coefficients are near-zero normals, ``mu`` starts at
    ``epsilon`` and ``sigma2`` at its prior mode.
    """
    I, J, K, p = data.n_channels, data.n_patients, hyper.n_factors, data.n_covariates
    A = hyper.alpha_matrix(I)
    R = np.column_stack([rng.dirichlet(A[:, k]) for k in range(K)])
    Nj = data.counts.totals.sum(axis=0)
    theta_row = np.maximum(Nj / data.copy_integrals(), THETA_FLOOR)
    Theta = np.tile(theta_row, (K, 1))
    B = rng.normal(0.0, np.sqrt(1e-7), size=(K, p))
    mu = np.full(K, hyper.epsilon)
    sigma2 = np.full(K, hyper.d0 / (hyper.c0 + 1.0))
    return ModelState(R, Theta, B, mu, sigma2)


def _attribution_sums(state, data, effects, axis_index, size):
    """Scatter expected per-factor event counts onto one cell axis.

    Returns sum over cells of n * p_k grouped by ``axis_index``.
    """
    c = data.counts
    W = state.R[c.channel_idx, :] * state.Theta[:, c.patient_idx].T \
        * effects.values[c.bin_idx, :]
    denom = W.sum(axis=1, keepdims=True)
    np.maximum(denom, 1e-300, out=denom)
    W *= (c.counts / denom[:, 0])[:, None]
    out = np.zeros((size, state.n_factors))
    np.add.at(out, axis_index, W)
    return out


def update_signatures_map(state, data, hyper):
    """Multiplicative update of all signature columns; returns the new R."""
    effects = covariate_effects(state.B, data.genome)
    A = hyper.alpha_matrix(data.n_channels)
    raw = (A - 1.0) + _attribution_sums(state, data, effects,
                                        data.counts.channel_idx, data.n_channels)
    colsum = raw.sum(axis=0)
    if np.any(colsum <= 0):
        raise NumericalError("signature column update summed to zero "
                             "(requires alpha > 1 or observed counts)")
    return raw / colsum


def update_baselines_map(state, data, hyper, printed=False):
    """Update of all baseline activities; returns the new Theta.

    The default divides the whole numerator, prior-mode term included, by the
    surrogate's quadratic coefficient (the exact minimizer). ``printed=True``
    leaves the (a - 1) term undivided.
    """
    effects = covariate_effects(state.B, data.genome)
    S = _attribution_sums(state, data, effects,
                          data.counts.patient_idx, data.n_patients).T  # (K, J)
    G = integrals(effects, data.copies, data.genome)
    denom = G + (hyper.a / state.mu[:, None]) * data.copy_integrals()[None, :]
    if printed:
        return (hyper.a - 1.0) + S / denom
    return ((hyper.a - 1.0) + S) / denom


def beta_gradient_hessian(state, data, k, effects=None, xw=None):
    """Gradient and Hessian of the coefficient surrogate for factor ``k``.

    At the current point the surrogate is tangent to the log posterior, so
    the returned gradient equals the log-posterior gradient in ``B[k]``. The
    Hessian is negative definite. ``effects`` and ``xw`` (the covariate-
    weighted attribution sums X^T sum_cells n p_k) can be passed to reuse
    work across factors.
    """
    X = data.genome.covariates
    if effects is None:
        effects = covariate_effects(state.B, data.genome)
    if xw is None:
        U = _attribution_sums(state, data, effects, data.counts.bin_idx, data.n_bins)
        xw = X.T @ U[:, k]
    wk = effects.values[:, k] * ((data.genome.weights[:, None] * data.copies.copies / 2.0)
                                 @ state.Theta[k, :])
    g = -X.T @ wk + xw - state.B[k] / state.sigma2[k]
    H = -(X * wk[:, None]).T @ X - np.eye(data.n_covariates) / state.sigma2[k]
    if not (np.all(np.isfinite(g)) and np.all(np.isfinite(H))):
        raise NumericalError(f"non-finite coefficient gradient or Hessian for factor {k}")
    return g, H


def capped_newton_step(g, H, beta, rho):
    """One Newton step with the root-mean-square of the step capped at rho.

    Returns (new beta, used_ridge_jitter).
    """
    p = len(beta)
    jitter = False
    try:
        step = -np.linalg.solve(H, g)
    except np.linalg.LinAlgError:
        jitter = True
        step = -np.linalg.solve(H - 1e-8 * np.eye(p), g)
    norm = float(np.linalg.norm(step))
    if norm > 0:
        step = step * min(1.0, rho * np.sqrt(p) / norm)
    return beta + step, jitter


def update_coefficients_map(state, data, k, rho, effects=None, xw=None):
    """One capped Newton step on factor ``k``'s coefficients.

    Returns (new beta_k, used_ridge_jitter).
    """
    g, H = beta_gradient_hessian(state, data, k, effects=effects, xw=xw)
    return capped_newton_step(g, H, state.B[k], rho)


def update_hyper_map(state, data, hyper, printed=False):
    """Conditional modes of the relevance weights and coefficient variances.

    Returns ``(mu, sigma2)``. The default relevance denominator is the
    inverse-gamma full-conditional mode's (shape + 1); ``printed=True`` uses
    the variant smaller by one, which loses the descent guarantee.
    """
    J, p = data.n_patients, data.n_covariates
    a = hyper.a
    a0, b0 = hyper.mu_prior(J)
    total = a * (state.Theta * data.copy_integrals()[None, :]).sum(axis=1) + b0
    denom = (a * J + a0) if printed else (a * J + a0 + 1.0)
    mu = total / denom
    sigma2 = (0.5 * (state.B * state.B).sum(axis=1) + hyper.d0) / (0.5 * p + hyper.c0 + 1.0)
    return mu, sigma2


def map_cycle(state, data, hyper, opts):
    """One full update cycle, in place. Returns the ridge-jitter count."""
    jitters = 0
    if not state.fixed_signatures:
        state.R = update_signatures_map(state, data, hyper)
    state.Theta = update_baselines_map(state, data, hyper, printed=opts.printed_updates)
    if data.n_covariates > 0:
        for _ in range(opts.newton_repeats):
            effects = covariate_effects(state.B, data.genome)
            U = _attribution_sums(state, data, effects, data.counts.bin_idx, data.n_bins)
            XW = data.genome.covariates.T @ U  # (p, K)
            newB = state.B.copy()
            for k in range(state.n_factors):
                newB[k], jit = update_coefficients_map(
                    state, data, k, opts.rho, effects=effects, xw=XW[:, k])
                jitters += jit
            state.B = newB
    state.mu, state.sigma2 = update_hyper_map(state, data, hyper,
                                              printed=opts.printed_updates)
    return jitters


def _single_start(data, hyper, opts, rng, log=None):
    state = init_random(data, hyper, rng)
    lp = log_posterior(state, data, hyper)
    trace = [lp]
    converged = False
    jitters = 0
    for it in range(opts.max_iter):
        if log is not None:
            prev = (state.R.copy(), state.Theta.copy(), state.B.copy(),
                    state.mu.copy(), state.sigma2.copy())
        jitters += map_cycle(state, data, hyper, opts)
        lp_new = log_posterior(state, data, hyper)
        trace.append(lp_new)
        if log is not None:
            blocks = (state.R, state.Theta, state.B, state.mu, state.sigma2)
            delta = max((float(np.abs(new - old).max()) if new.size else 0.0)
                        for new, old in zip(blocks, prev))
            log(it + 1, lp_new, delta)
        if abs(lp_new - lp) <= opts.tol * abs(lp):
            converged = True
            break
        lp = lp_new
    return state, np.asarray(trace), converged, jitters


def fit_map(data, hyper, opts=None):
    """Multi-start MAP fit; returns the run with the highest log posterior."""
    opts = opts or MapOptions()
    best = None
    all_traces = []
    for s in range(opts.n_starts):
        rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence(opts.seed, spawn_key=(s,))))
        log = None
        if opts.verbose:
            log = lambda it, lp, delta, s=s: print(
                f"start={s} iter={it} logpost={lp:.6f} max_change={delta:.3e}")
        state, trace, converged, jitters = _single_start(data, hyper, opts, rng, log)
        all_traces.append(trace)
        if best is None or trace[-1] > best.trace[-1]:
            best = MapFit(state, trace, len(trace) - 1, converged, s,
                          ridge_jitters=jitters)
    best.all_traces = all_traces
    return best


# ---------------------------------------------------------------------------
# Compressive NMF on aggregate counts
# ---------------------------------------------------------------------------

def compnmf_log_posterior(N, R, Theta, mu, hyper):
    """Log posterior of the aggregate-count model, up to constants."""
    J = N.shape[1]
    lam = R @ Theta
    with np.errstate(divide="ignore"):
        ll = float((N * np.log(lam)).sum() - lam.sum())
    A = hyper.alpha_matrix(N.shape[0])
    with np.errstate(divide="ignore", invalid="ignore"):
        lp = ll + float(((A - 1.0) * np.log(R)).sum())
        lp += float(((hyper.a - 1.0) * np.log(Theta)
                     - (hyper.a / mu[:, None]) * Theta).sum())
        lp -= hyper.a * J * float(np.log(mu).sum())
    a0, b0 = hyper.mu_prior(J)
    lp += float((-(a0 + 1.0) * np.log(mu) - b0 / mu).sum())
    if not np.isfinite(lp):
        raise NumericalError("non-finite aggregate-model log posterior")
    return lp


def compnmf_fit(N, hyper, opts=None):
    """MAP for the compressive NMF baseline on a totals matrix.

    Multiplicative updates throughout; the relevance update is the
    inverse-gamma conditional mode. Returns a :class:`MapFit` whose state has
    no covariate block (``B`` is (K, 0)).
    """
    opts = opts or MapOptions()
    N = np.asarray(N, dtype=np.float64)
    if np.any(N < 0) or not np.all(np.isfinite(N)):
        raise ValueError("totals must be finite and non-negative")
    I, J = N.shape
    K = hyper.n_factors
    a = hyper.a
    a0, b0 = hyper.mu_prior(J)
    A = hyper.alpha_matrix(I)
    best = None
    all_traces = []
    for s in range(opts.n_starts):
        rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence(opts.seed, spawn_key=(s,))))
        R = np.column_stack([rng.dirichlet(A[:, k]) for k in range(K)])
        Theta = np.maximum(np.tile(N.sum(axis=0), (K, 1)), THETA_FLOOR)
        mu = np.full(K, hyper.epsilon)
        lp = compnmf_log_posterior(N, R, Theta, mu, hyper)
        trace = [lp]
        converged = False
        for _ in range(opts.max_iter):
            lam = np.maximum(R @ Theta, 1e-300)
            ratio = N / lam
            raw = (A - 1.0) + R * (ratio @ Theta.T)
            R = raw / raw.sum(axis=0)
            lam = np.maximum(R @ Theta, 1e-300)
            ratio = N / lam
            Theta = (mu / (a + mu))[:, None] * ((a - 1.0) + Theta * (R.T @ ratio))
            mu = (a * Theta.sum(axis=1) + b0) / (a * J + a0 + 1.0)
            lp_new = compnmf_log_posterior(N, R, Theta, mu, hyper)
            trace.append(lp_new)
            if abs(lp_new - lp) <= opts.tol * abs(lp):
                converged = True
                break
            lp = lp_new
        trace = np.asarray(trace)
        all_traces.append(trace)
        state = ModelState(R, Theta, np.zeros((K, 0)), mu,
                           np.full(K, hyper.d0 / (hyper.c0 + 1.0)))
        if best is None or trace[-1] > best.trace[-1]:
            best = MapFit(state, trace, len(trace) - 1, converged, s)
    best.all_traces = all_traces
    return best
