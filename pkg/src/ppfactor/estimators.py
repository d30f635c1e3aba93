"""Estimator-style front end.

:class:`PoissonProcessFactorization` wraps the MAP solver (and optional
posterior sampling) behind the usual fit/attribute/score surface, with
hyperparameters as constructor arguments so ``get_params``/``set_params``
and :func:`sklearn.base.clone` work. :class:`CompressiveNMF` does the same
for the aggregate-count baseline, which fits a plain channel-by-patient
totals matrix.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .gibbs import ChainOptions, run_chain
from .genome import PPFData
from .mapfit import MapOptions, compnmf_fit, fit_map
from .model import (Hyperparams, cell_attribution_probs, expected_counts,
                    intensity_track, log_posterior)
from .postprocess import prune


def _check_fitted(est, attr="state_"):
    if not hasattr(est, attr):
        raise NotFittedError(f"{type(est).__name__} is not fitted yet; call fit first")


class PoissonProcessFactorization(BaseEstimator):
    """Covariate-dependent non-negative factorization of binned event counts.

    Parameters mirror the model's hyperparameters and the solver options;
    ``n_factors`` is an upper bound on the rank, with redundant factors
    shrunk toward ``epsilon`` by the compressive prior and removable
    afterwards via :meth:`pruned`.
    """

    def __init__(self, n_factors=15, a=1.01, epsilon=1e-3, alpha=1.01,
                 c0=100.0, d0=1.0, rho=0.5, tol=1e-7, max_iter=2000,
                 n_starts=3, newton_repeats=2, printed_updates=False,
                 random_state=None):
        self.n_factors = n_factors
        self.a = a
        self.epsilon = epsilon
        self.alpha = alpha
        self.c0 = c0
        self.d0 = d0
        self.rho = rho
        self.tol = tol
        self.max_iter = max_iter
        self.n_starts = n_starts
        self.newton_repeats = newton_repeats
        self.printed_updates = printed_updates
        self.random_state = random_state

    def _hyper(self):
        return Hyperparams(n_factors=self.n_factors, a=self.a, epsilon=self.epsilon,
                           alpha=self.alpha, c0=self.c0, d0=self.d0, rho=self.rho,
                           tol=self.tol)

    def _map_options(self):
        return MapOptions(max_iter=self.max_iter, tol=self.tol, n_starts=self.n_starts,
                          seed=self.random_state, newton_repeats=self.newton_repeats,
                          rho=self.rho, printed_updates=self.printed_updates)

    def fit(self, data, y=None):
        """Run the multi-start MAP optimization on a :class:`PPFData` bundle."""
        if not isinstance(data, PPFData):
            raise TypeError("fit expects a PPFData bundle of genome, copies, counts")
        self.fit_result_ = fit_map(data, self._hyper(), self._map_options())
        self.state_ = self.fit_result_.state
        self.signatures_ = self.state_.R
        self.exposures_ = self.state_.Theta
        self.coefficients_ = self.state_.B
        self.relevance_ = self.state_.mu
        self.sigma2_ = self.state_.sigma2
        self.trace_ = self.fit_result_.trace
        self.n_iter_ = self.fit_result_.iterations
        self.converged_ = self.fit_result_.converged
        return self

    def score(self, data, y=None):
        """Log posterior of the fitted state on ``data`` (up to constants)."""
        _check_fitted(self)
        return log_posterior(self.state_, data, self._hyper())

    def expected_counts(self, data):
        _check_fitted(self)
        return expected_counts(self.state_, data)

    def attribution_probabilities(self, data):
        """Per sparse cell, the factor attribution simplex (n_cells, K)."""
        _check_fitted(self)
        return cell_attribution_probs(self.state_, data)

    def predict_intensity(self, data, window_bins=500):
        """Windowed expected event totals per patient; see intensity_track."""
        _check_fitted(self)
        return intensity_track(self.state_, data, window_bins)

    def pruned(self, mu_factor=5.0, cos_threshold=0.975):
        """Pruning report for the fitted factors."""
        _check_fitted(self)
        return prune(self.state_, self.epsilon, mu_factor, cos_threshold)

    def sample_posterior(self, data, n_iter=1000, burn_in=0, thin=1, seed=None,
                         fixed_signatures=False):
        """Run a Gibbs chain warm-started from the fitted state."""
        _check_fitted(self)
        opts = ChainOptions(n_iter=n_iter, burn_in=burn_in, thin=thin,
                            seed=self.random_state if seed is None else seed,
                            fixed_signatures=fixed_signatures)
        return run_chain(data, self._hyper(), self.state_, opts)


class CompressiveNMF(BaseEstimator):
    """Aggregate-count baseline: compressive NMF of a totals matrix."""

    def __init__(self, n_factors=15, a=1.01, epsilon=1e-3, alpha=1.01,
                 tol=1e-7, max_iter=20000, n_starts=3, random_state=None):
        self.n_factors = n_factors
        self.a = a
        self.epsilon = epsilon
        self.alpha = alpha
        self.tol = tol
        self.max_iter = max_iter
        self.n_starts = n_starts
        self.random_state = random_state

    def fit(self, N, y=None):
        """Factorize a dense (n_channels, n_patients) totals matrix."""
        N = np.asarray(N, dtype=np.float64)
        if N.ndim != 2:
            raise ValueError("expected a 2-D totals matrix")
        hyper = Hyperparams(n_factors=self.n_factors, a=self.a, epsilon=self.epsilon,
                            alpha=self.alpha, tol=self.tol)
        opts = MapOptions(max_iter=self.max_iter, tol=self.tol,
                          n_starts=self.n_starts, seed=self.random_state)
        self.fit_result_ = compnmf_fit(N, hyper, opts)
        self.state_ = self.fit_result_.state
        self.signatures_ = self.state_.R
        self.exposures_ = self.state_.Theta
        self.relevance_ = self.state_.mu
        self.trace_ = self.fit_result_.trace
        self.n_iter_ = self.fit_result_.iterations
        self.converged_ = self.fit_result_.converged
        return self

    def transform(self, N=None):
        """Fitted exposures (factors by patients)."""
        _check_fitted(self)
        return self.exposures_

    def inverse_transform(self, exposures=None):
        """Reconstructed totals from signatures and exposures."""
        _check_fitted(self)
        return self.signatures_ @ (self.exposures_ if exposures is None else exposures)

    def pruned(self, mu_factor=5.0, cos_threshold=0.975):
        _check_fitted(self)
        return prune(self.state_, self.epsilon, mu_factor, cos_threshold)
