"""Binned coordinate system, covariate tracks, copy numbers, and event counts.

Input files are tab- or comma-delimited UTF-8 text with a header row;
gzip-compressed files are accepted. The three ingestion entry points are

* :func:`ingest_covariates` -- ``chrom, start, end, weight`` plus one column
  per covariate, sorted by (chrom, start), non-overlapping;
* :func:`ingest_copy_numbers` -- ``patient, chrom, start, end, copies``
  segments, possibly partially overlapping the bins;
* :func:`ingest_mutations` -- ``patient, chrom, pos, channel`` records.

Event positions are reduced to their containing bin on ingestion: with
piecewise-constant covariates and copy numbers the likelihood depends on a
position only through its bin, so per-base coordinates carry no extra
information. Records falling outside every bin, or into a bin with zero
weight, are dropped and counted, never silently ignored.
"""

from __future__ import annotations

import csv
import gzip
import io
from dataclasses import dataclass, field, replace

import numpy as np

from .channels import N_CHANNELS, parse_channel
from .errors import IngestError


@dataclass(frozen=True)
class Bin:
    """One genomic bin: half-open interval with an effective-length weight."""

    index: int
    chrom: str
    start: int
    end: int
    weight: float


@dataclass(frozen=True)
class Standardization:
    """Per-covariate affine transform: cap, then center and scale.

    Applying the stored record to the original raw matrix reproduces the
    standardized matrix bit-for-bit.
    """

    cap: np.ndarray
    mean: np.ndarray
    sd: np.ndarray
    cap_quantile: float

    def apply(self, X):
        X = np.asarray(X, dtype=np.float64)
        return (np.minimum(X, self.cap[None, :]) - self.mean[None, :]) / self.sd[None, :]


@dataclass
class BinnedGenome:
    """Ordered bins with piecewise-constant covariates.

    ``covariates`` has one row per bin; ``weights`` holds the effective number
    of bases per bin (zero means no event can be observed there). The total
    domain length is ``total_length = weights.sum()``.
    """

    chroms: np.ndarray
    starts: np.ndarray
    ends: np.ndarray
    weights: np.ndarray
    covariates: np.ndarray
    covariate_names: list[str]
    standardization: Standardization | None = None
    _lookup: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.starts = np.asarray(self.starts, dtype=np.int64)
        self.ends = np.asarray(self.ends, dtype=np.int64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.covariates = np.asarray(self.covariates, dtype=np.float64)
        if self.covariates.ndim != 2 or self.covariates.shape[0] != self.n_bins:
            raise ValueError("covariates must be a (n_bins, n_covariates) matrix")
        if len(self.covariate_names) != self.n_covariates:
            raise ValueError("covariate_names length does not match covariate columns")

    @property
    def n_bins(self):
        return len(self.starts)

    @property
    def n_covariates(self):
        return self.covariates.shape[1]

    @property
    def total_length(self):
        return float(self.weights.sum())

    def bins(self):
        """Iterate over :class:`Bin` views of the stored arrays."""
        for q in range(self.n_bins):
            yield Bin(q, str(self.chroms[q]), int(self.starts[q]), int(self.ends[q]),
                      float(self.weights[q]))

    def _chrom_lookup(self):
        if self._lookup is None:
            lookup = {}
            chroms = np.asarray(self.chroms)
            for chrom in dict.fromkeys(chroms.tolist()):
                idx = np.flatnonzero(chroms == chrom)
                lookup[chrom] = (self.starts[idx], self.ends[idx], idx)
            object.__setattr__(self, "_lookup", lookup)
        return self._lookup

    def find_bin(self, chrom, pos):
        """Index of the bin containing ``pos`` on ``chrom``, or -1 if none.

        Raises :class:`KeyError` for a chromosome absent from the genome.
        """
        starts, ends, idx = self._chrom_lookup()[chrom]
        i = np.searchsorted(starts, pos, side="right") - 1
        if i < 0 or pos >= ends[i]:
            return -1
        return int(idx[i])


@dataclass
class CopyNumberProfile:
    """Per-bin, per-patient copy counts; 2 is the diploid normal."""

    copies: np.ndarray  # (n_bins, n_patients)
    patients: list[str]

    def __post_init__(self):
        self.copies = np.asarray(self.copies, dtype=np.float64)
        if self.copies.ndim != 2 or self.copies.shape[1] != len(self.patients):
            raise ValueError("copies must be a (n_bins, n_patients) matrix")
        if not np.all(np.isfinite(self.copies)) or np.any(self.copies < 0):
            raise ValueError("copy numbers must be finite and non-negative")

    @property
    def n_patients(self):
        return len(self.patients)

    def reindex_patients(self, roster):
        """Same profile on a new roster; patients without data are diploid."""
        C = np.full((self.copies.shape[0], len(roster)), 2.0)
        j_of = {p: j for j, p in enumerate(roster)}
        for j, p in enumerate(self.patients):
            if p in j_of:
                C[:, j_of[p]] = self.copies[:, j]
        return CopyNumberProfile(C, list(roster))


@dataclass(frozen=True)
class MutationRecord:
    patient: str
    chrom: str
    pos: int
    channel: int


@dataclass
class CountTensor:
    """Sparse event counts over (bin, patient, channel) cells.

    ``bin_idx``, ``patient_idx``, ``channel_idx`` and ``counts`` are parallel
    arrays over the non-empty cells, sorted by (bin, patient, channel).
    ``totals`` is the dense per-(channel, patient) marginal; ``dropped``
    counts records discarded at ingestion.
    """

    bin_idx: np.ndarray
    patient_idx: np.ndarray
    channel_idx: np.ndarray
    counts: np.ndarray
    totals: np.ndarray  # (n_channels, n_patients)
    patients: list[str]
    n_channels: int
    dropped: int = 0

    def __post_init__(self):
        self.bin_idx = np.asarray(self.bin_idx, dtype=np.int64)
        self.patient_idx = np.asarray(self.patient_idx, dtype=np.int64)
        self.channel_idx = np.asarray(self.channel_idx, dtype=np.int64)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        self.totals = np.asarray(self.totals, dtype=np.float64)

    @property
    def n_patients(self):
        return len(self.patients)

    @property
    def n_cells(self):
        return len(self.counts)

    def reindex_patients(self, roster):
        """Same counts on a new patient roster (a superset of the current one)."""
        j_of = {p: j for j, p in enumerate(roster)}
        missing = [p for p in self.patients if p not in j_of]
        if missing:
            raise ValueError(f"roster is missing patients {missing}")
        remap = np.array([j_of[p] for p in self.patients], dtype=np.int64)
        totals = np.zeros((self.n_channels, len(roster)))
        totals[:, remap] = self.totals
        return CountTensor(self.bin_idx.copy(), remap[self.patient_idx],
                           self.channel_idx.copy(), self.counts.copy(), totals,
                           list(roster), self.n_channels, self.dropped)

    @property
    def total(self):
        return int(self.counts.sum())

    def entries(self):
        """Dict view {(bin, patient, channel): count} of the sparse cells."""
        return {
            (int(q), int(j), int(i)): int(n)
            for q, j, i, n in zip(self.bin_idx, self.patient_idx, self.channel_idx, self.counts)
        }


@dataclass
class PPFData:
    """Bundle of genome, copy numbers, and counts consumed by the solvers."""

    genome: BinnedGenome
    copies: CopyNumberProfile
    counts: CountTensor

    def __post_init__(self):
        if self.copies.copies.shape[0] != self.genome.n_bins:
            raise ValueError("copy-number profile does not match the genome's bin count")
        if self.copies.patients != self.counts.patients:
            raise ValueError("copy-number and count patients disagree")
        if self.counts.n_cells and self.counts.bin_idx.max() >= self.genome.n_bins:
            raise ValueError("count tensor references bins outside the genome")
        self._copy_integrals = None

    @property
    def n_patients(self):
        return self.counts.n_patients

    @property
    def n_channels(self):
        return self.counts.n_channels

    @property
    def n_bins(self):
        return self.genome.n_bins

    @property
    def n_covariates(self):
        return self.genome.n_covariates

    def copy_integrals(self):
        """Per-patient half copy-number mass: sum_q weight_q * c_qj / 2."""
        if self._copy_integrals is None:
            self._copy_integrals = self.genome.weights @ self.copies.copies / 2.0
        return self._copy_integrals


def patient_copy_integral(copies, genome, j):
    """sum_q weight_q * c_qj / 2 for one patient."""
    return float(genome.weights @ copies.copies[:, j] / 2.0)


# ---------------------------------------------------------------------------
# File parsing helpers
# ---------------------------------------------------------------------------

def _open_text(path):
    if str(path).endswith(".gz"):
        return io.TextIOWrapper(gzip.open(path, "rb"), encoding="utf-8", newline="")
    return open(path, "r", encoding="utf-8", newline="")


def _read_table(path, required, optional_extra=False):
    """Yield (line_number, row_dict) for a delimited file with a header.

    The delimiter is taken from the header line: tab when present, else comma.
    ``required`` columns must all appear; extra columns are returned in order
    when ``optional_extra`` is true.
    """
    with _open_text(path) as fh:
        header_line = fh.readline()
        if not header_line:
            raise IngestError("empty file", path=path)
        delim = "\t" if "\t" in header_line else ","
        header = [h.strip() for h in next(csv.reader([header_line], delimiter=delim))]
        missing = [c for c in required if c not in header]
        if missing:
            raise IngestError(f"missing required column(s) {missing}; header was {header}",
                              line=1, path=path)
        extra = [c for c in header if c not in required]
        reader = csv.reader(fh, delimiter=delim)
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(header):
                raise IngestError(
                    f"expected {len(header)} fields, found {len(row)}", line=lineno, path=path)
            rec = {h: v.strip() for h, v in zip(header, row)}
            yield lineno, rec, extra if optional_extra else None


def _parse_float(value, what, lineno, path):
    try:
        out = float(value)
    except ValueError:
        raise IngestError(f"non-numeric {what} {value!r}", line=lineno, path=path) from None
    if not np.isfinite(out):
        raise IngestError(f"non-finite {what} {value!r}", line=lineno, path=path)
    return out


def _parse_int(value, what, lineno, path):
    try:
        return int(value)
    except ValueError:
        raise IngestError(f"non-integer {what} {value!r}", line=lineno, path=path) from None


def ingest_covariates(path, covariates=None):
    """Read a binned covariate track into an (unstandardized) genome.

    Parameters
    ----------
    path : str or Path
        Delimited file with columns ``chrom, start, end, weight`` followed by
        one column per covariate. Rows must be sorted by (chrom, start) and
        bins within a chromosome must not overlap.
    covariates : sequence of str, optional
        Subset of covariate columns to keep, in the given order. Defaults to
        every extra column in file order.
    """
    chroms, starts, ends, weights, rows = [], [], [], [], []
    names = None
    prev = {}
    for lineno, rec, extra in _read_table(path, ["chrom", "start", "end", "weight"],
                                          optional_extra=True):
        if names is None:
            if covariates is not None:
                missing = [c for c in covariates if c not in extra]
                if missing:
                    raise IngestError(f"requested covariate(s) {missing} not in file", path=path)
                names = list(covariates)
            else:
                names = list(extra)
        chrom = rec["chrom"]
        start = _parse_int(rec["start"], "start", lineno, path)
        end = _parse_int(rec["end"], "end", lineno, path)
        weight = _parse_float(rec["weight"], "weight", lineno, path)
        if end <= start:
            raise IngestError(f"bin end {end} <= start {start}", line=lineno, path=path)
        if weight < 0:
            raise IngestError(f"negative weight {weight}", line=lineno, path=path)
        if weight > end - start:
            raise IngestError(f"weight {weight} exceeds bin length {end - start}",
                              line=lineno, path=path)
        if chrom in prev:
            p_start, p_end, p_last = prev[chrom]
            if not p_last:
                raise IngestError(f"rows not sorted by (chrom, start): chromosome {chrom!r} "
                                  "appears in more than one block", line=lineno, path=path)
            if start < p_start:
                raise IngestError("rows not sorted by (chrom, start)", line=lineno, path=path)
            if start < p_end:
                raise IngestError(f"bin [{start}, {end}) overlaps previous bin ending at {p_end}",
                                  line=lineno, path=path)
        for c in prev:
            if c != chrom:
                prev[c] = (prev[c][0], prev[c][1], False)
        prev[chrom] = (start, end, True)
        try:
            vals = [_parse_float(rec[name], f"covariate {name!r}", lineno, path) for name in names]
        except KeyError as exc:
            raise IngestError(f"missing covariate column {exc}", line=lineno, path=path) from None
        chroms.append(chrom)
        starts.append(start)
        ends.append(end)
        weights.append(weight)
        rows.append(vals)
    if not starts:
        raise IngestError("file contains no bins", path=path)
    if names is None:
        names = []
    X = np.asarray(rows, dtype=np.float64).reshape(len(starts), len(names))
    genome = BinnedGenome(np.asarray(chroms, dtype=object), starts, ends, weights, X, names)
    if genome.total_length <= 0:
        raise IngestError("all bins have zero weight; total length must be positive", path=path)
    return genome


def _sorted_quantile(values, q):
    # Linear-interpolation quantile on the sorted sample (numpy's default).
    return float(np.quantile(values, q))


def standardize_covariates(genome, cap_quantile=0.999):
    """Cap and z-score each covariate over the bins with positive weight.

    Each column is capped at its empirical ``cap_quantile`` over eligible
    bins, then shifted and scaled to mean 0 and standard deviation 1
    (computed with one delta degree of freedom) over the same bins. The
    transform is stored on the returned genome so it can be replayed on new
    data. Statistics are unweighted over eligible bins.
    """
    if not 0.5 < cap_quantile <= 1.0:
        raise ValueError(f"cap_quantile must be in (0.5, 1], got {cap_quantile}")
    eligible = genome.weights > 0
    if not eligible.any():
        raise ValueError("no bins with positive weight")
    p = genome.n_covariates
    cap = np.empty(p)
    mean = np.empty(p)
    sd = np.empty(p)
    for ell in range(p):
        col = genome.covariates[eligible, ell]
        cap[ell] = _sorted_quantile(col, cap_quantile)
        capped = np.minimum(col, cap[ell])
        mean[ell] = capped.mean()
        sd[ell] = capped.std(ddof=1)
        if sd[ell] == 0 or not np.isfinite(sd[ell]):
            raise ValueError(
                f"covariate {genome.covariate_names[ell]!r} is constant over weighted bins")
    record = Standardization(cap=cap, mean=mean, sd=sd, cap_quantile=cap_quantile)
    return replace(genome, covariates=record.apply(genome.covariates),
                   standardization=record, _lookup=None)


def ingest_copy_numbers(path, genome, patients=None):
    """Read copy-number segments and average them onto the genome's bins.

    Each bin value is the length-weighted mean of the overlapping segment
    copies, with any uncovered portion imputed at the diploid value 2. Bins
    (or whole patients) without data are therefore 2.

    ``patients`` fixes the roster and column order; segments for unknown
    patients then raise. Without it the roster is the sorted set of patient
    ids present in the file.
    """
    acc = {}  # patient -> (weighted sum, covered length) arrays
    Q = genome.n_bins
    bin_len = (genome.ends - genome.starts).astype(np.float64)
    known = set(patients) if patients is not None else None
    for lineno, rec, _ in _read_table(path, ["patient", "chrom", "start", "end", "copies"]):
        pat = rec["patient"]
        if known is not None and pat not in known:
            raise IngestError(f"unknown patient {pat!r}", line=lineno, path=path)
        start = _parse_int(rec["start"], "start", lineno, path)
        end = _parse_int(rec["end"], "end", lineno, path)
        copies = _parse_float(rec["copies"], "copies", lineno, path)
        if copies < 0:
            raise IngestError(f"negative copy number {copies}", line=lineno, path=path)
        if end <= start:
            raise IngestError(f"segment end {end} <= start {start}", line=lineno, path=path)
        chrom = rec["chrom"]
        try:
            starts_c, ends_c, idx_c = genome._chrom_lookup()[chrom]
        except KeyError:
            raise IngestError(f"unknown chromosome {chrom!r}", line=lineno, path=path) from None
        if pat not in acc:
            acc[pat] = (np.zeros(Q), np.zeros(Q))
        wsum, cov = acc[pat]
        lo = np.searchsorted(ends_c, start, side="right")
        hi = np.searchsorted(starts_c, end, side="left")
        if hi > lo:
            ov = (np.minimum(end, ends_c[lo:hi]) - np.maximum(start, starts_c[lo:hi])).astype(float)
            hit = ov > 0
            qs = idx_c[lo:hi][hit]
            wsum[qs] += ov[hit] * copies
            cov[qs] += ov[hit]
    roster = list(patients) if patients is not None else sorted(acc)
    C = np.full((Q, len(roster)), 2.0)
    for j, pat in enumerate(roster):
        if pat not in acc:
            continue
        wsum, cov = acc[pat]
        uncovered = np.maximum(bin_len - cov, 0.0)
        denom = cov + uncovered
        C[:, j] = (wsum + 2.0 * uncovered) / denom
    return CopyNumberProfile(C, roster)


def diploid_copy_numbers(genome, patients):
    """All-2 profile for runs without copy-number data."""
    return CopyNumberProfile(np.full((genome.n_bins, len(patients)), 2.0), list(patients))


def ingest_mutations(path, genome, n_channels=N_CHANNELS, patients=None):
    """Read mutation records and aggregate them into a :class:`CountTensor`.

    Records in bins with zero weight, or at positions outside every bin of a
    known chromosome, are dropped (and counted); an unknown chromosome or a
    malformed channel label is an error carrying the line number.

    ``patients`` fixes the roster (so zero-event patients keep a column);
    records for patients outside it then raise. Without it the roster is the
    sorted set of ids seen in the file.
    """
    cells = {}
    totals = {}
    seen = set()
    known = set(patients) if patients is not None else None
    dropped = 0
    lookup = genome._chrom_lookup()
    for lineno, rec, _ in _read_table(path, ["patient", "chrom", "pos", "channel"]):
        pat = rec["patient"]
        if known is not None and pat not in known:
            raise IngestError(f"unknown patient {pat!r}", line=lineno, path=path)
        seen.add(pat)
        chrom = rec["chrom"]
        if chrom not in lookup:
            raise IngestError(f"unknown chromosome {chrom!r}", line=lineno, path=path)
        pos = _parse_int(rec["pos"], "pos", lineno, path)
        try:
            channel = parse_channel(rec["channel"]) if n_channels == N_CHANNELS \
                else int(rec["channel"])
        except IngestError as exc:
            raise IngestError(str(exc), line=lineno, path=path) from None
        if not 0 <= channel < n_channels:
            raise IngestError(f"channel index {channel} out of range", line=lineno, path=path)
        q = genome.find_bin(chrom, pos)
        if q < 0 or genome.weights[q] <= 0:
            dropped += 1
            continue
        key = (q, pat, channel)
        cells[key] = cells.get(key, 0) + 1
        totals[(channel, pat)] = totals.get((channel, pat), 0) + 1
    roster = list(patients) if patients is not None else sorted(seen)
    j_of = {p: j for j, p in enumerate(roster)}
    order = sorted(cells)
    bin_idx = np.array([k[0] for k in order], dtype=np.int64)
    patient_idx = np.array([j_of[k[1]] for k in order], dtype=np.int64)
    channel_idx = np.array([k[2] for k in order], dtype=np.int64)
    counts = np.array([cells[k] for k in order], dtype=np.int64)
    N = np.zeros((n_channels, len(roster)))
    for (i, pat), n in totals.items():
        N[i, j_of[pat]] = n
    return CountTensor(bin_idx, patient_idx, channel_idx, counts, N, roster,
                       n_channels, dropped)


def counts_from_dense(N, bin_idx=0):
    """CountTensor for a dense channel-by-patient matrix on a single bin.

    Convenience for aggregate-count problems: every event is placed in
    ``bin_idx`` of whatever genome the tensor is later paired with.
    """
    N = np.asarray(N)
    if np.any(N < 0) or not np.all(N == np.floor(N)):
        raise ValueError("totals must be non-negative integers")
    I, J = N.shape
    ii, jj = np.nonzero(N.T)  # transpose so cells sort by (patient, channel)
    patients = [f"P{j:03d}" for j in range(J)]
    return CountTensor(
        np.full(ii.size, bin_idx, dtype=np.int64), ii.astype(np.int64), jj.astype(np.int64),
        N.T[ii, jj].astype(np.int64), N.astype(np.float64), patients, I, 0)


def unit_domain_data(N):
    """Wrap a dense totals matrix as data on a single unit-weight diploid bin.

    In this regime the factorization reduces to plain non-negative
    factorization of the totals, which is the baseline the compressive-NMF
    solver targets.
    """
    N = np.asarray(N, dtype=np.float64)
    I, J = N.shape
    genome = BinnedGenome(np.asarray(["sim"], dtype=object), [0], [1], [1.0],
                          np.zeros((1, 0)), [])
    counts = counts_from_dense(N)
    copies = CopyNumberProfile(np.full((1, J), 2.0), counts.patients)
    return PPFData(genome, copies, counts)
