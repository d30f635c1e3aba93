"""Rank pruning, signature matching, evaluation metrics, and chain diagnostics."""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .model import covariate_effects


def cosine(u, v):
    """Cosine similarity u.v / (|u||v|); zero vectors are an error."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ValueError("cosine similarity is undefined for a zero vector")
    return float(u @ v / (nu * nv))


def cosine_matrix(U, V):
    """Pairwise column cosines; zero columns get similarity 0."""
    U = np.asarray(U, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    nu = np.linalg.norm(U, axis=0)
    nv = np.linalg.norm(V, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        C = (U.T @ V) / np.outer(nu, nv)
    return np.nan_to_num(C, nan=0.0)


@dataclass
class PrunedFit:
    """Result of rank pruning: surviving factor indices plus a per-factor report."""

    kept: np.ndarray
    n_factors: int
    mu: np.ndarray
    cos_uniform: np.ndarray
    discarded: np.ndarray
    suspicious: np.ndarray  # shrunk relevance but non-uniform signature


def prune(fit, epsilon, mu_factor=5.0, cos_threshold=0.975):
    """Discard factors with shrunk relevance and near-uniform signatures.

    A factor is discarded iff ``mu_k <= mu_factor * epsilon`` and the cosine
    between its signature and the uniform profile exceeds ``cos_threshold``.
    Factors meeting the relevance screen but keeping a structured signature
    are retained and flagged ``suspicious``. Idempotent: pruning a pruned
    state discards nothing further.
    """
    state = getattr(fit, "state", fit)
    R, mu = state.R, state.mu
    I, K = R.shape
    uniform = np.full(I, 1.0 / I)
    cos_u = np.array([cosine(R[:, k], uniform) for k in range(K)])
    shrunk = mu <= mu_factor * epsilon
    discarded = shrunk & (cos_u > cos_threshold)
    suspicious = shrunk & ~discarded
    kept = np.flatnonzero(~discarded)
    return PrunedFit(kept, len(kept), mu.copy(), cos_u, discarded, suspicious)


@dataclass
class MatchResult:
    """Hungarian matching of estimated to reference signature columns."""

    pairs: list          # (estimated col, reference col) over real columns
    cosines: np.ndarray  # per matched pair
    unmatched_estimated: list
    unmatched_reference: list

    @property
    def permutation(self):
        return dict(self.pairs)


def match_signatures(Rhat, Rref):
    """Maximum-total-cosine assignment between two signature matrices.

    The cosine matrix is padded with zero columns to square (padded pairings
    contribute zero similarity), so matrices of different rank can be
    compared; pairs involving a padded column are reported as unmatched.
    """
    Rhat = np.asarray(Rhat, dtype=np.float64)
    Rref = np.asarray(Rref, dtype=np.float64)
    ka, kr = Rhat.shape[1], Rref.shape[1]
    n = max(ka, kr)
    C = np.zeros((n, n))
    C[:ka, :kr] = cosine_matrix(Rhat, Rref)
    rows, cols = linear_sum_assignment(-C)
    pairs = []
    cosines = []
    for r, c in zip(rows, cols):
        if r < ka and c < kr:
            pairs.append((int(r), int(c)))
            cosines.append(C[r, c])
    matched_a = {p[0] for p in pairs}
    matched_r = {p[1] for p in pairs}
    return MatchResult(pairs, np.asarray(cosines),
                       [k for k in range(ka) if k not in matched_a],
                       [k for k in range(kr) if k not in matched_r])


def match_signatures_bruteforce(Rhat, Rref):
    """Exhaustive assignment over permutations; oracle for small ranks."""
    ka, kr = Rhat.shape[1], Rref.shape[1]
    n = max(ka, kr)
    if n > 8:
        raise ValueError("brute-force matching is limited to rank 8")
    C = np.zeros((n, n))
    C[:ka, :kr] = cosine_matrix(Rhat, Rref)
    best, best_perm = -np.inf, None
    for perm in itertools.permutations(range(n)):
        total = sum(C[r, perm[r]] for r in range(n))
        if total > best:
            best, best_perm = total, perm
    return best, best_perm


def rmse(A_hat, A_ref):
    """Root mean squared difference over all entries."""
    A_hat = np.asarray(A_hat, dtype=np.float64)
    A_ref = np.asarray(A_ref, dtype=np.float64)
    if A_hat.shape != A_ref.shape:
        raise ValueError(f"shape mismatch {A_hat.shape} vs {A_ref.shape}")
    return float(np.sqrt(((A_hat - A_ref) ** 2).mean()))


def f1(Rhat, Rref, cos_cut=0.9):
    """Signature-recovery (precision, sensitivity, F1) at a cosine cutoff.

    Precision is the fraction of estimated columns within ``cos_cut`` of some
    reference column; sensitivity the fraction of reference columns within
    ``cos_cut`` of some estimate. F1 is their harmonic mean, defined as 0
    when both are 0.
    """
    Rhat = np.asarray(Rhat, dtype=np.float64)
    Rref = np.asarray(Rref, dtype=np.float64)
    if Rhat.shape[1] == 0 or Rref.shape[1] == 0:
        raise ValueError("both matrices must have at least one column")
    C = cosine_matrix(Rhat, Rref)
    precision = float((C.max(axis=1) >= cos_cut).mean())
    sensitivity = float((C.max(axis=0) >= cos_cut).mean())
    if precision + sensitivity == 0:
        return 0.0, 0.0, 0.0
    return precision, sensitivity, 2 * precision * sensitivity / (precision + sensitivity)


@dataclass
class Classification:
    """Per-cell hard factor assignments with their probabilities."""

    assignments: np.ndarray    # (n_cells,) argmax factor per sparse cell
    probabilities: np.ndarray  # (n_cells, n_factors)
    counts_per_factor: np.ndarray


def classify_mutations(state, data):
    """Assign every sparse cell's events to their most probable factor.

    Ties break to the lowest factor index. The counts assigned across factors
    always sum to the total event count.
    """
    E = covariate_effects(state.B, data.genome).values
    c = data.counts
    W = state.R[c.channel_idx, :] * state.Theta[:, c.patient_idx].T * E[c.bin_idx, :]
    P = W / W.sum(axis=1, keepdims=True)
    assignments = P.argmax(axis=1)
    counts = np.zeros(state.n_factors, dtype=np.int64)
    np.add.at(counts, assignments, c.counts)
    return Classification(assignments, P, counts)


def confusion_counts(class_a, class_b, counts, n_a, n_b):
    """Event counts cross-tabulated by the two models' assignments."""
    table = np.zeros((n_a, n_b), dtype=np.int64)
    np.add.at(table, (class_a.assignments, class_b.assignments), counts)
    return table


def ess(draws):
    """Effective sample size of a scalar chain.

    Uses the autocorrelation sum truncated by the initial-positive-sequence
    rule (pairwise sums of autocorrelations are summed while they stay
    positive). A zero-variance chain is degenerate; its ESS is reported as
    the chain length with a warning.
    """
    x = np.asarray(draws, dtype=np.float64)
    n = x.size
    if n < 10:
        raise ValueError("need at least 10 draws to estimate ESS")
    x = x - x.mean()
    var = x @ x / n
    if var == 0:
        warnings.warn("zero-variance chain; reporting ESS = n", stacklevel=2)
        return float(n)
    nfft = int(2 ** np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(x, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:n].real / n
    rho = acov / acov[0]
    # Geyer pairwise sums Gamma_m = rho_{2m} + rho_{2m+1}
    n_pairs = (n - 1) // 2
    iat = 1.0
    for m in range(n_pairs):
        gamma = rho[2 * m + 1] + (rho[2 * m + 2] if 2 * m + 2 < n else 0.0)
        if gamma <= 0:
            break
        iat += 2.0 * gamma
    return float(n / iat)
