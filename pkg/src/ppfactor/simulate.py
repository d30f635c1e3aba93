"""Synthetic data generation.

A synthetic dataset is built in four stages, each drawing from its own seed
substream so the pipeline is reproducible piecewise: (1) autocorrelated
piecewise-constant covariates, standardized per column; (2) per-patient
segment-wise copy numbers; (3) ground-truth factorization parameters;
(4) an event catalog sampled from the implied intensities by drawing each
(channel, patient) total from its Poisson law and placing events across bins
by inverse-CDF, with uniform within-bin coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channels import N_CHANNELS
from .genome import (BinnedGenome, CopyNumberProfile, CountTensor, MutationRecord,
                     PPFData, Standardization)


@dataclass
class SimConfig:
    """Generator configuration; defaults give the full-scale benchmark setup."""

    total_length: float = 200_000.0
    bin_width: float = 100.0
    n_patients: int = 40
    n_covariates: int = 10
    n_active_covariates: int = 5
    n_factors: int = 8
    n_channels: int = N_CHANNELS
    fixed_signatures: np.ndarray | None = None
    covariance: object = "identity"  # "identity", "onion", or a PD matrix
    ar_coeff: float = 0.99
    segment_rate: float = 20.0
    copy_mean: float = 1.0
    copy_dispersion: float = 10.0
    mu0_shape: float = 100.0
    mu0_rate: float = 1.0
    xi_shape: float = 0.5
    xi_rate: float = 0.5
    coefficient_variance: float = 0.5
    seed: int | None = None

    def __post_init__(self):
        q, rem = divmod(self.total_length, self.bin_width)
        if rem != 0 or q < 1:
            raise ValueError("bin_width must divide total_length")
        if self.n_active_covariates > self.n_covariates:
            raise ValueError("n_active_covariates cannot exceed n_covariates")

    @property
    def n_bins(self):
        return int(self.total_length // self.bin_width)


@dataclass
class SimTruth:
    """Ground truth for one synthetic dataset."""

    signatures: np.ndarray    # (n_channels, n_factors)
    baselines: np.ndarray     # (n_factors, n_patients)
    coefficients: np.ndarray  # (n_factors, n_covariates)
    relevance: np.ndarray     # (n_factors,) total-activity scales
    genome: BinnedGenome
    copies: CopyNumberProfile
    bin_intensity: np.ndarray = None  # (n_bins, n_patients) expected totals per bin


def _substream(seed, *key):
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key))))


def gen_random_correlation(p, rng):
    """Random correlation matrix, uniform over the space (onion construction).

    Grown one dimension at a time: each new row is a point inside the unit
    ball of the current Cholesky geometry, with the radius Beta-distributed
    at the exponents that make the joint density flat.
    """
    if p < 2:
        raise ValueError("need p >= 2")
    beta = 1.0 + (p - 2) / 2.0
    r = 2.0 * rng.beta(beta, beta) - 1.0
    S = np.array([[1.0, r], [r, 1.0]])
    for k in range(2, p):
        beta -= 0.5
        y = rng.beta(k / 2.0, beta)
        u = rng.standard_normal(k)
        u /= np.linalg.norm(u)
        w = np.sqrt(y) * u
        L = np.linalg.cholesky(S)
        z = L @ w
        S = np.block([[S, z[:, None]], [z[None, :], np.array([[1.0]])]])
    return S


def gen_covariates(config, rng):
    """Autocorrelated standardized covariate tracks on a uniform binning.

    The latent signal follows z_q = ar_coeff * z_{q-1} + N(0, Sigma0) from
    z_0 = 0; each column is then shifted and scaled to mean 0, sd 1 over the
    bins. A constant column (e.g. from a zero covariance) is an error.
    """
    Q, p = config.n_bins, config.n_covariates
    cov = config.covariance
    if isinstance(cov, str):
        if cov == "identity":
            Sigma = np.eye(p)
        elif cov == "onion":
            Sigma = gen_random_correlation(p, rng)
        else:
            raise ValueError(f"unknown covariance mode {cov!r}")
    else:
        Sigma = np.asarray(cov, dtype=np.float64)
    try:
        chol = np.linalg.cholesky(Sigma)
    except np.linalg.LinAlgError:
        raise ValueError("covariance matrix is not positive definite") from None
    innov = rng.standard_normal((Q, p)) @ chol.T
    z = np.empty((Q, p))
    z[0] = innov[0]
    for q in range(1, Q):
        z[q] = config.ar_coeff * z[q - 1] + innov[q]
    mean = z.mean(axis=0)
    sd = z.std(axis=0, ddof=1)
    if np.any(sd == 0):
        bad = int(np.flatnonzero(sd == 0)[0])
        raise ValueError(f"covariate column {bad} is constant; cannot standardize")
    X = (z - mean) / sd
    width = int(config.bin_width)
    starts = np.arange(Q, dtype=np.int64) * width
    names = [f"cov{l + 1}" for l in range(p)]
    record = Standardization(cap=np.full(p, np.inf), mean=mean, sd=sd, cap_quantile=1.0)
    return BinnedGenome(np.asarray(["sim"] * Q, dtype=object), starts, starts + width,
                        np.full(Q, float(config.bin_width)), X, names, record)


def gen_copy_numbers(config, genome, rng):
    """Segment-wise copy numbers: per patient, a Poisson number of segments
    (floored at one) with boundaries drawn among bin edges and per-segment
    copies 2 + NegBin(copy_mean, copy_dispersion)."""
    Q, J = genome.n_bins, config.n_patients
    m, v = config.copy_mean, config.copy_dispersion
    nb_n = v
    nb_p = v / (v + m)
    C = np.empty((Q, J))
    for j in range(J):
        n_seg = max(1, int(rng.poisson(config.segment_rate)))
        n_cuts = min(n_seg - 1, Q - 1)
        cuts = np.sort(rng.choice(np.arange(1, Q), size=n_cuts, replace=False)) \
            if n_cuts else np.empty(0, dtype=np.int64)
        bounds = np.concatenate(([0], cuts, [Q]))
        values = 2.0 + rng.negative_binomial(nb_n, nb_p, size=len(bounds) - 1)
        for s in range(len(bounds) - 1):
            C[bounds[s]:bounds[s + 1], j] = values[s]
    return CopyNumberProfile(C, [f"P{j:03d}" for j in range(J)])


def gen_truth(config, genome, copies, rng):
    """Ground-truth parameters on a generated genome and copy profile.

    Signature columns are the configured fixed columns (if any) followed by
    sparse Dirichlet(0.1) draws. Baselines are relevance * gamma noise,
    normalized by each patient's copy integral so the relevance scale
    controls expected totals. Coefficients are zero beyond the active
    covariates.
    """
    I, K, J, p = config.n_channels, config.n_factors, config.n_patients, config.n_covariates
    cols = []
    if config.fixed_signatures is not None:
        F = np.asarray(config.fixed_signatures, dtype=np.float64)
        if F.shape[0] != I or np.any(np.abs(F.sum(axis=0) - 1.0) > 1e-6) or np.any(F < 0):
            raise ValueError("fixed signature columns must be length-I simplex vectors")
        if F.shape[1] > K:
            raise ValueError("more fixed signatures than factors")
        cols.append(F)
    n_random = K - (cols[0].shape[1] if cols else 0)
    if n_random:
        cols.append(rng.dirichlet(np.full(I, 0.1), size=n_random).T)
    R0 = np.hstack(cols)
    mu0 = rng.gamma(config.mu0_shape, 1.0 / config.mu0_rate, size=K)
    xi = rng.gamma(config.xi_shape, 1.0 / config.xi_rate, size=(K, J))
    ci = genome.weights @ copies.copies / 2.0
    Theta0 = mu0[:, None] * xi / ci[None, :]
    B0 = np.zeros((K, p))
    if config.n_active_covariates:
        B0[:, :config.n_active_covariates] = rng.normal(
            0.0, np.sqrt(config.coefficient_variance), size=(K, config.n_active_covariates))
    E = np.exp(genome.covariates @ B0.T)
    bin_intensity = (genome.weights[:, None] * copies.copies / 2.0) * (E @ Theta0)
    return SimTruth(R0, Theta0, B0, mu0, genome, copies, bin_intensity)


def _bin_masses(truth, j):
    """Per-bin per-channel expected counts for one patient, (Q, I)."""
    E = np.exp(truth.genome.covariates @ truth.coefficients.T)  # (Q, K)
    M = (truth.genome.weights[:, None] * truth.copies.copies[:, [j]] / 2.0) \
        * E * truth.baselines[:, j][None, :]
    return M @ truth.signatures.T


def sample_catalog(truth, rng, per_factor=False):
    """Draw an event catalog from the truth's intensities.

    For each (channel, patient) pair the total is Poisson with mean equal to
    the summed bin masses; events are then placed across bins by their mass
    shares and given uniform integer coordinates inside the bin. With
    ``per_factor=True`` each factor's process is sampled independently and
    the catalogs merged, which is distributionally identical by
    superposition.

    Returns a list of :class:`MutationRecord`, sorted by (patient, position,
    channel).
    """
    genome = truth.genome
    starts, ends = genome.starts, genome.ends
    records = []
    K = truth.signatures.shape[1]
    for j, patient in enumerate(truth.copies.patients):
        if per_factor:
            E = np.exp(genome.covariates @ truth.coefficients.T)
            base = (genome.weights[:, None] * truth.copies.copies[:, [j]] / 2.0) \
                * E * truth.baselines[:, j][None, :]  # (Q, K)
            masses = [np.outer(base[:, k], truth.signatures[:, k]) for k in range(K)]
        else:
            masses = [_bin_masses(truth, j)]
        for A in masses:
            totals = A.sum(axis=0)
            for i in np.flatnonzero(totals > 0):
                n = int(rng.poisson(totals[i]))
                if n == 0:
                    continue
                placed = rng.multinomial(n, A[:, i] / totals[i])
                for q in np.flatnonzero(placed):
                    pos = rng.integers(starts[q], ends[q], size=int(placed[q]))
                    records.extend(
                        MutationRecord(patient, str(genome.chroms[q]), int(t), int(i))
                        for t in pos)
    records.sort(key=lambda r: (r.patient, r.chrom, r.pos, r.channel))
    return records


def sample_count_tensor(truth, rng):
    """Draw binned counts directly: independent Poisson per (bin, channel,
    patient) cell, the sufficient-statistic form of :func:`sample_catalog`."""
    genome = truth.genome
    cells_q, cells_j, cells_i, cells_n = [], [], [], []
    I = truth.signatures.shape[0]
    J = len(truth.copies.patients)
    totals = np.zeros((I, J))
    for j in range(J):
        A = _bin_masses(truth, j)
        N = rng.poisson(A)
        qs, iis = np.nonzero(N)
        cells_q.append(qs)
        cells_j.append(np.full(qs.size, j, dtype=np.int64))
        cells_i.append(iis)
        cells_n.append(N[qs, iis])
        totals[:, j] = N.sum(axis=0)
    q = np.concatenate(cells_q) if cells_q else np.empty(0, np.int64)
    j_ = np.concatenate(cells_j) if cells_j else np.empty(0, np.int64)
    i = np.concatenate(cells_i) if cells_i else np.empty(0, np.int64)
    n = np.concatenate(cells_n) if cells_n else np.empty(0, np.int64)
    order = np.lexsort((i, j_, q))
    return CountTensor(q[order], j_[order], i[order], n[order], totals,
                       list(truth.copies.patients), I, 0)


def records_to_counts(records, genome, patients, n_channels):
    """Aggregate an in-memory catalog into a CountTensor (no dropping)."""
    cells = {}
    totals = np.zeros((n_channels, len(patients)))
    j_of = {p: j for j, p in enumerate(patients)}
    for r in records:
        q = genome.find_bin(r.chrom, r.pos)
        if q < 0 or genome.weights[q] <= 0:
            raise ValueError(f"record at {r.chrom}:{r.pos} falls outside the genome")
        key = (q, j_of[r.patient], r.channel)
        cells[key] = cells.get(key, 0) + 1
        totals[r.channel, j_of[r.patient]] += 1
    order = sorted(cells)
    return CountTensor(
        np.array([k[0] for k in order], np.int64),
        np.array([k[1] for k in order], np.int64),
        np.array([k[2] for k in order], np.int64),
        np.array([cells[k] for k in order], np.int64),
        totals, list(patients), n_channels, 0)


def simulate_dataset(config):
    """Full pipeline: covariates, copies, truth, catalog, bundled data.

    Returns ``(truth, data, records)``.
    """
    rng_x = _substream(config.seed, 0)
    rng_c = _substream(config.seed, 1)
    rng_t = _substream(config.seed, 2)
    rng_m = _substream(config.seed, 3)
    genome = gen_covariates(config, rng_x)
    copies = gen_copy_numbers(config, genome, rng_c)
    truth = gen_truth(config, genome, copies, rng_t)
    records = sample_catalog(truth, rng_m)
    counts = records_to_counts(records, genome, copies.patients, config.n_channels)
    return truth, PPFData(genome, copies, counts), records
