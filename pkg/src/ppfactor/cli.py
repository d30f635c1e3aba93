"""Command-line entry points.

Subcommands: simulate | fit-map | fit-mcmc | refit | attribute | postprocess
| predict-track. Every run writes a ``manifest.json`` recording the resolved
configuration, seed, and input digests; with a fixed seed, re-running the
same command reproduces every output byte-for-byte.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import functools
import sys
from pathlib import Path

import click
import numpy as np

from . import io as pio
from .channels import N_CHANNELS, all_channels
from .errors import ConfigError, IngestError, NumericalError
from .gibbs import ChainOptions, run_chain
from .genome import (PPFData, diploid_copy_numbers, ingest_copy_numbers,
                     ingest_covariates, ingest_mutations, standardize_covariates)
from .mapfit import MapOptions, compnmf_fit, fit_map, init_random
from .model import Hyperparams, ModelState, intensity_track, observed_track
from .postprocess import (classify_mutations, confusion_counts, ess, f1,
                          match_signatures, prune, rmse)
from .simulate import SimConfig, simulate_dataset


def guarded(f):
    @functools.wraps(f)
    def wrapper(*args, **kwargs):
        try:
            return f(*args, **kwargs)
        except (ConfigError, ValueError) as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(2)
        except IngestError as exc:
            click.echo(f"data error: {exc}", err=True)
            sys.exit(3)
        except NumericalError as exc:
            click.echo(f"numerical failure: {exc}", err=True)
            sys.exit(4)
    return wrapper


@click.group()
def main():
    """Covariate-dependent Poisson factorization of binned event catalogs."""


# ---------------------------------------------------------------------------
# shared options
# ---------------------------------------------------------------------------

def data_options(f):
    opts = [
        click.option("--bins", "bins_path", required=True,
                     type=click.Path(exists=True, dir_okay=False),
                     help="Binned covariate track (chrom,start,end,weight,covariates...)."),
        click.option("--mutations", "mutations_path", required=True,
                     type=click.Path(exists=True, dir_okay=False),
                     help="Mutation records (patient,chrom,pos,channel)."),
        click.option("--copy-numbers", "copies_path", default=None,
                     type=click.Path(exists=True, dir_okay=False),
                     help="Copy-number segments (patient,chrom,start,end,copies); "
                          "defaults to diploid everywhere."),
        click.option("--standardize/--no-standardize", default=True,
                     help="Cap and z-score covariates over weighted bins."),
        click.option("--cap-quantile", default=0.999, show_default=True,
                     help="Capping quantile used by --standardize."),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


def hyper_options(f):
    opts = [
        click.option("-K", "--factors", default=15, show_default=True,
                     help="Upper bound on the factorization rank."),
        click.option("--a", default=1.01, show_default=True),
        click.option("--epsilon", default=1e-3, show_default=True),
        click.option("--alpha", default=1.01, show_default=True),
        click.option("--c0", default=100.0, show_default=True),
        click.option("--d0", default=1.0, show_default=True),
        click.option("--rho", default=0.5, show_default=True,
                     help="Cap on the root-mean-square Newton step."),
        click.option("--tol", default=1e-7, show_default=True,
                     help="Relative log-posterior convergence threshold."),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


def run_options(f):
    opts = [
        click.option("--seed", default=0, show_default=True),
        click.option("--threads", default=0, show_default=True,
                     help="Worker threads (0 = library default). Reductions are "
                          "ordered either way, so results do not depend on this."),
        click.option("--deterministic/--no-deterministic", default=True,
                     help="Force ordered reductions (currently always on)."),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


def _load_data(bins_path, mutations_path, copies_path, standardize, cap_quantile):
    genome = ingest_covariates(bins_path)
    if standardize and genome.n_covariates:
        genome = standardize_covariates(genome, cap_quantile)
    counts = ingest_mutations(mutations_path, genome)
    if copies_path:
        copies = ingest_copy_numbers(copies_path, genome)
        # keep zero-event patients from the copy-number file in the model:
        # they still contribute survival mass
        roster = sorted(set(counts.patients) | set(copies.patients))
        counts = counts.reindex_patients(roster)
        copies = copies.reindex_patients(roster)
    else:
        copies = diploid_copy_numbers(genome, counts.patients)
    return PPFData(genome, copies, counts)


def _factor_labels(K):
    return [f"factor{k + 1}" for k in range(K)]


def _write_state(outdir, state, data, keep=None):
    keep = np.arange(state.n_factors) if keep is None else np.asarray(keep)
    labels = _factor_labels(len(keep))
    channels = all_channels() if state.n_channels == N_CHANNELS \
        else [str(i) for i in range(state.n_channels)]
    pio.write_matrix(outdir / "signatures.csv", state.R[:, keep],
                     row_labels=channels, col_labels=labels, index_name="channel")
    pio.write_matrix(outdir / "exposures.csv", state.Theta[keep],
                     row_labels=labels, col_labels=data.counts.patients,
                     index_name="factor")
    if state.n_covariates:
        pio.write_matrix(outdir / "betas.csv", state.B[keep],
                         row_labels=labels, col_labels=data.genome.covariate_names,
                         index_name="factor")
    pio.write_matrix(outdir / "mu.csv", state.mu[keep],
                     row_labels=labels, col_labels=["mu"], index_name="factor")
    pio.write_matrix(outdir / "sigma2.csv", state.sigma2[keep],
                     row_labels=labels, col_labels=["sigma2"], index_name="factor")


def _read_state(fitdir, n_covariates):
    fitdir = Path(fitdir)
    R, _, _ = pio.read_matrix(fitdir / "signatures.csv")
    Theta, _, _ = pio.read_matrix(fitdir / "exposures.csv")
    mu, _, _ = pio.read_matrix(fitdir / "mu.csv")
    sigma2, _, _ = pio.read_matrix(fitdir / "sigma2.csv")
    K = R.shape[1]
    betas_path = fitdir / "betas.csv"
    if betas_path.exists():
        B, _, _ = pio.read_matrix(betas_path)
    else:
        B = np.zeros((K, n_covariates))
    return ModelState(R, Theta, B, mu.ravel(), sigma2.ravel())


def _write_pruning(outdir, report):
    pio.write_table(outdir / "pruning.csv",
                    ["factor", "mu", "cos_uniform", "discarded", "suspicious"],
                    [(f"factor{k + 1}", report.mu[k], report.cos_uniform[k],
                      int(report.discarded[k]), int(report.suspicious[k]))
                     for k in range(len(report.mu))])


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

@main.command()
@click.option("--out", "outdir", required=True, type=click.Path(file_okay=False))
@click.option("--scenario", type=click.Choice(["A", "B"]), default="A", show_default=True,
              help="A: independent covariates; B: random correlated covariates.")
@click.option("--total-length", default=200_000.0, show_default=True)
@click.option("--bin-width", default=100.0, show_default=True)
@click.option("--patients", default=40, show_default=True)
@click.option("--covariates", default=10, show_default=True)
@click.option("--active-covariates", default=5, show_default=True)
@click.option("--factors", default=8, show_default=True)
@click.option("--signatures", "signatures_path", default=None,
              type=click.Path(exists=True, dir_okay=False),
              help="Optional fixed signature columns (channel-by-factor CSV).")
@click.option("--coefficient-variance", default=0.5, show_default=True)
@run_options
@guarded
def simulate(outdir, scenario, total_length, bin_width, patients, covariates,
             active_covariates, factors, signatures_path, coefficient_variance,
             seed, threads, deterministic):
    """Generate a synthetic dataset plus its ground-truth bundle."""
    fixed = None
    if signatures_path:
        fixed, _, _ = pio.read_matrix(signatures_path)
    config = SimConfig(total_length=total_length, bin_width=bin_width,
                       n_patients=patients, n_covariates=covariates,
                       n_active_covariates=active_covariates, n_factors=factors,
                       fixed_signatures=fixed,
                       covariance="identity" if scenario == "A" else "onion",
                       coefficient_variance=coefficient_variance, seed=seed)
    truth, data, records = simulate_dataset(config)
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)

    genome = data.genome
    bin_rows = [(str(genome.chroms[q]), int(genome.starts[q]), int(genome.ends[q]),
                 genome.weights[q], *genome.covariates[q])
                for q in range(genome.n_bins)]
    pio.write_table(out / "bins.csv",
                    ["chrom", "start", "end", "weight"] + genome.covariate_names,
                    bin_rows)

    seg_rows = []
    C = data.copies.copies
    for j, pat in enumerate(data.copies.patients):
        run_start = 0
        for q in range(1, genome.n_bins + 1):
            if q == genome.n_bins or C[q, j] != C[run_start, j]:
                seg_rows.append((pat, str(genome.chroms[run_start]),
                                 int(genome.starts[run_start]),
                                 int(genome.ends[q - 1]), C[run_start, j]))
                run_start = q
    pio.write_table(out / "copynumbers.csv",
                    ["patient", "chrom", "start", "end", "copies"], seg_rows)

    channels = all_channels() if config.n_channels == N_CHANNELS \
        else [str(i) for i in range(config.n_channels)]
    pio.write_table(out / "mutations.csv", ["patient", "chrom", "pos", "channel"],
                    [(r.patient, r.chrom, r.pos, channels[r.channel]) for r in records])

    truthdir = out / "truth"
    truthdir.mkdir(exist_ok=True)
    labels = _factor_labels(config.n_factors)
    pio.write_matrix(truthdir / "signatures.csv", truth.signatures,
                     row_labels=channels, col_labels=labels, index_name="channel")
    pio.write_matrix(truthdir / "baselines.csv", truth.baselines,
                     row_labels=labels, col_labels=data.copies.patients, index_name="factor")
    pio.write_matrix(truthdir / "coefficients.csv", truth.coefficients,
                     row_labels=labels, col_labels=genome.covariate_names, index_name="factor")
    pio.write_matrix(truthdir / "relevance.csv", truth.relevance,
                     row_labels=labels, col_labels=["mu0"], index_name="factor")
    pio.write_matrix(truthdir / "bin_intensity.csv", truth.bin_intensity,
                     col_labels=data.copies.patients)

    pio.write_manifest(out, "simulate",
                       {"scenario": scenario, "total_length": total_length,
                        "bin_width": bin_width, "patients": patients,
                        "covariates": covariates, "active_covariates": active_covariates,
                        "factors": factors,
                        "coefficient_variance": coefficient_variance,
                        "deterministic": deterministic, "threads": threads},
                       inputs=[signatures_path] if signatures_path else [],
                       seed=seed)
    click.echo(f"simulated {data.counts.total} events over {genome.n_bins} bins "
               f"for {len(data.copies.patients)} patients -> {out}")


# ---------------------------------------------------------------------------
# fit-map
# ---------------------------------------------------------------------------

@main.command("fit-map")
@data_options
@hyper_options
@click.option("--out", "outdir", required=True, type=click.Path(file_okay=False))
@click.option("--max-iter", default=2000, show_default=True)
@click.option("--n-starts", default=3, show_default=True)
@click.option("--model", type=click.Choice(["ppf", "compnmf"]), default="ppf",
              show_default=True, help="compnmf ignores bins/copies and fits totals only.")
@click.option("--printed-updates", is_flag=True,
              help="Use the order-(a-1) update variant without the descent guarantee.")
@click.option("--prune/--no-prune", "do_prune", default=True, show_default=True)
@click.option("--prune-mu-factor", default=5.0, show_default=True)
@click.option("--prune-cos-threshold", default=0.975, show_default=True)
@click.option("--verbose", is_flag=True)
@run_options
@guarded
def cmd_fit_map(bins_path, mutations_path, copies_path, standardize, cap_quantile,
                factors, a, epsilon, alpha, c0, d0, rho, tol, outdir, max_iter,
                n_starts, model, printed_updates, do_prune, prune_mu_factor,
                prune_cos_threshold, verbose, seed, threads, deterministic):
    """Fit the maximum a posteriori factorization."""
    data = _load_data(bins_path, mutations_path, copies_path, standardize, cap_quantile)
    hyper = Hyperparams(n_factors=factors, a=a, epsilon=epsilon, alpha=alpha,
                        c0=c0, d0=d0, rho=rho, tol=tol)
    opts = MapOptions(max_iter=max_iter, tol=tol, n_starts=n_starts, seed=seed,
                      rho=rho, printed_updates=printed_updates, verbose=verbose)
    if model == "compnmf":
        fit = compnmf_fit(data.counts.totals, hyper, opts)
    else:
        fit = fit_map(data, hyper, opts)
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    report = prune(fit.state, epsilon, prune_mu_factor, prune_cos_threshold)
    keep = report.kept if do_prune else np.arange(fit.state.n_factors)
    _write_state(out, fit.state, data, keep=keep)
    _write_pruning(out, report)
    pio.write_table(out / "trace.csv", ["iteration", "logpost"],
                    list(enumerate(fit.trace)))
    pio.write_manifest(out, "fit-map",
                       {"model": model, "factors": factors, "a": a, "epsilon": epsilon,
                        "alpha": alpha, "c0": c0, "d0": d0, "rho": rho, "tol": tol,
                        "max_iter": max_iter, "n_starts": n_starts,
                        "printed_updates": printed_updates, "standardize": standardize,
                        "cap_quantile": cap_quantile, "prune": do_prune,
                        "prune_mu_factor": prune_mu_factor,
                        "prune_cos_threshold": prune_cos_threshold,
                        "deterministic": deterministic, "threads": threads},
                       inputs=[p for p in (bins_path, mutations_path, copies_path) if p],
                       seed=seed)
    click.echo(f"fit-map: start {fit.start_index} converged={fit.converged} "
               f"iterations={fit.iterations} logpost={fit.trace[-1]:.6f} "
               f"kept {len(keep)}/{fit.state.n_factors} factors -> {out}")


# ---------------------------------------------------------------------------
# fit-mcmc / refit
# ---------------------------------------------------------------------------

def _write_chain(out, output, data, hyper, state_template):
    K = state_template.n_factors
    I, J, p = state_template.n_channels, state_template.n_patients, state_template.n_covariates
    drawdir = out / "draws"
    drawdir.mkdir(exist_ok=True)
    meta = {
        "R": [f"r_{i}_{k}" for k in range(K) for i in range(I)],
        "Theta": [f"theta_{k}_{j}" for j in range(J) for k in range(K)],
        "B": [f"beta_{k}_{l}" for l in range(p) for k in range(K)],
        "mu": [f"mu_{k}" for k in range(K)],
        "sigma2": [f"sigma2_{k}" for k in range(K)],
    }
    for block, arr in output.draws.items():
        flat = arr.reshape(arr.shape[0], -1, order="F")
        if flat.shape[1] == 0:
            continue
        pio.write_matrix(drawdir / f"{block}.csv", flat,
                         row_labels=list(range(arr.shape[0])),
                         col_labels=meta[block], index_name="draw")
    pio.write_table(out / "logpost.csv", ["iteration", "logpost"],
                    list(enumerate(output.logpost)))
    pio.write_table(out / "summary.csv",
                    ["block", "index", "mean", "q2.5", "q97.5"],
                    output.summary_table())
    ess_rows = []
    for block, arr in output.draws.items():
        flat = arr.reshape(arr.shape[0], -1, order="F")
        for c in range(flat.shape[1]):
            if output.n_draws >= 10:
                ess_rows.append((block, meta[block][c], ess(flat[:, c])))
    if len(output.logpost) >= 10:
        ess_rows.append(("logpost", "logpost", ess(output.logpost)))
    pio.write_table(out / "ess.csv", ["block", "parameter", "ess"], ess_rows)
    # posterior-mean point estimate for downstream commands
    mean_state = ModelState(output.summaries["R"]["mean"],
                            output.summaries["Theta"]["mean"],
                            output.summaries["B"]["mean"],
                            output.summaries["mu"]["mean"],
                            output.summaries["sigma2"]["mean"])
    mean_state.R = mean_state.R / mean_state.R.sum(axis=0, keepdims=True)
    _write_state(out, mean_state, data)


@main.command("fit-mcmc")
@data_options
@hyper_options
@click.option("--out", "outdir", required=True, type=click.Path(file_okay=False))
@click.option("--init", "init_dir", default=None, type=click.Path(exists=True, file_okay=False),
              help="Warm-start from a fit-map output directory.")
@click.option("--n-iter", default=1000, show_default=True)
@click.option("--burn-in", default=0, show_default=True)
@click.option("--thin", default=1, show_default=True)
@run_options
@guarded
def cmd_fit_mcmc(bins_path, mutations_path, copies_path, standardize, cap_quantile,
                 factors, a, epsilon, alpha, c0, d0, rho, tol, outdir, init_dir,
                 n_iter, burn_in, thin, seed, threads, deterministic):
    """Sample the posterior with the Gibbs chain."""
    if burn_in >= n_iter:
        raise ConfigError(f"burn_in ({burn_in}) must be smaller than n_iter ({n_iter})")
    data = _load_data(bins_path, mutations_path, copies_path, standardize, cap_quantile)
    if init_dir:
        init = _read_state(init_dir, data.n_covariates)
        factors = init.n_factors
    else:
        hyper0 = Hyperparams(n_factors=factors, a=a, epsilon=epsilon, alpha=alpha,
                             c0=c0, d0=d0, rho=rho, tol=tol)
        init = init_random(data, hyper0, np.random.default_rng(seed))
    hyper = Hyperparams(n_factors=factors, a=a, epsilon=epsilon, alpha=alpha,
                        c0=c0, d0=d0, rho=rho, tol=tol)
    opts = ChainOptions(n_iter=n_iter, burn_in=burn_in, thin=thin, seed=seed)
    output = run_chain(data, hyper, init, opts)
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    _write_chain(out, output, data, hyper, init)
    pio.write_manifest(out, "fit-mcmc",
                       {"factors": factors, "a": a, "epsilon": epsilon, "alpha": alpha,
                        "c0": c0, "d0": d0, "n_iter": n_iter, "burn_in": burn_in,
                        "thin": thin, "init": bool(init_dir),
                        "standardize": standardize, "cap_quantile": cap_quantile,
                        "deterministic": deterministic, "threads": threads},
                       inputs=[p for p in (bins_path, mutations_path, copies_path) if p],
                       seed=seed)
    click.echo(f"fit-mcmc: {output.n_draws} stored draws, "
               f"final logpost={output.logpost[-1]:.6f} -> {out}")


@main.command()
@data_options
@hyper_options
@click.option("--out", "outdir", required=True, type=click.Path(file_okay=False))
@click.option("--reference", "reference_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Fixed signature catalog (channel-by-factor, columns sum to 1).")
@click.option("--n-iter", default=1000, show_default=True)
@click.option("--burn-in", default=0, show_default=True)
@click.option("--thin", default=1, show_default=True)
@click.option("--shrink-screen", default=1.5, show_default=True,
              help="Flag factors with posterior-mean relevance <= screen * epsilon.")
@run_options
@guarded
def refit(bins_path, mutations_path, copies_path, standardize, cap_quantile,
          factors, a, epsilon, alpha, c0, d0, rho, tol, outdir, reference_path,
          n_iter, burn_in, thin, shrink_screen, seed, threads, deterministic):
    """Re-estimate activities and coefficients with signatures held fixed."""
    if burn_in >= n_iter:
        raise ConfigError(f"burn_in ({burn_in}) must be smaller than n_iter ({n_iter})")
    data = _load_data(bins_path, mutations_path, copies_path, standardize, cap_quantile)
    R, _, ref_names = pio.read_matrix(reference_path)
    if R.shape[0] != data.n_channels:
        raise IngestError(f"reference has {R.shape[0]} channels, data has "
                          f"{data.n_channels}", path=reference_path)
    colsums = R.sum(axis=0)
    if np.any(np.abs(colsums - 1.0) > 1e-6):
        raise IngestError("reference signature columns must sum to 1 within 1e-6 "
                          f"(max deviation {np.abs(colsums - 1.0).max():.2e})",
                          path=reference_path)
    K = R.shape[1]
    hyper = Hyperparams(n_factors=K, a=a, epsilon=epsilon, alpha=alpha,
                        c0=c0, d0=d0, rho=rho, tol=tol)
    init = init_random(data, hyper, np.random.default_rng(seed))
    init.R = R / colsums
    init.fixed_signatures = True
    opts = ChainOptions(n_iter=n_iter, burn_in=burn_in, thin=thin, seed=seed,
                        fixed_signatures=True)
    output = run_chain(data, hyper, init, opts)
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    _write_chain(out, output, data, hyper, init)
    # per-signature relevance and coefficient report
    mu_mean = output.summaries["mu"]["mean"]
    rows = []
    names = ref_names[-K:] if ref_names and len(ref_names) >= K else _factor_labels(K)
    for k in range(K):
        rows.append((names[k], mu_mean[k], int(mu_mean[k] <= shrink_screen * epsilon)))
    pio.write_table(out / "relevance_flags.csv", ["signature", "mu_mean", "shrunk"], rows)
    beta_rows = []
    for k in range(K):
        for l, cov in enumerate(data.genome.covariate_names):
            lo = output.summaries["B"]["q2.5"][k, l]
            hi = output.summaries["B"]["q97.5"][k, l]
            mean = output.summaries["B"]["mean"][k, l]
            beta_rows.append((names[k], cov, mean, lo, hi, int(lo <= 0.0 <= hi)))
    pio.write_table(out / "coefficients_summary.csv",
                    ["signature", "covariate", "mean", "q2.5", "q97.5", "contains_zero"],
                    beta_rows)
    pio.write_manifest(out, "refit",
                       {"factors": K, "a": a, "epsilon": epsilon, "alpha": alpha,
                        "c0": c0, "d0": d0, "n_iter": n_iter, "burn_in": burn_in,
                        "thin": thin, "shrink_screen": shrink_screen,
                        "standardize": standardize, "cap_quantile": cap_quantile,
                        "deterministic": deterministic, "threads": threads},
                       inputs=[p for p in (bins_path, mutations_path, copies_path,
                                           reference_path) if p],
                       seed=seed)
    click.echo(f"refit: {K} fixed signatures, {output.n_draws} stored draws -> {out}")


# ---------------------------------------------------------------------------
# attribute / predict-track / postprocess
# ---------------------------------------------------------------------------

@main.command()
@data_options
@click.option("--fit", "fit_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--compare", "compare_dir", default=None,
              type=click.Path(exists=True, file_okay=False),
              help="Second fit directory for a cross-model confusion table.")
@click.option("--out", "outdir", required=True, type=click.Path(file_okay=False))
@guarded
def attribute(bins_path, mutations_path, copies_path, standardize, cap_quantile,
              fit_dir, compare_dir, outdir):
    """Assign observed events to factors by highest attribution probability."""
    data = _load_data(bins_path, mutations_path, copies_path, standardize, cap_quantile)
    state = _read_state(fit_dir, data.n_covariates)
    cls = classify_mutations(state, data)
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    c = data.counts
    genome = data.genome
    header = ["chrom", "start", "patient", "channel", "count", "assigned", "prob"] \
        + [f"p_{lab}" for lab in _factor_labels(state.n_factors)]
    channels = all_channels() if data.n_channels == N_CHANNELS \
        else [str(i) for i in range(data.n_channels)]
    rows = []
    for idx in range(c.n_cells):
        q = c.bin_idx[idx]
        rows.append((str(genome.chroms[q]), int(genome.starts[q]),
                     c.patients[c.patient_idx[idx]], channels[c.channel_idx[idx]],
                     int(c.counts[idx]), f"factor{cls.assignments[idx] + 1}",
                     cls.probabilities[idx].max(), *cls.probabilities[idx]))
    pio.write_table(out / "attributions.csv", header, rows)
    pio.write_table(out / "factor_counts.csv", ["factor", "events"],
                    [(f"factor{k + 1}", int(n)) for k, n in
                     enumerate(cls.counts_per_factor)])
    config = {"fit": str(Path(fit_dir).name), "standardize": standardize,
              "cap_quantile": cap_quantile}
    if compare_dir:
        other = _read_state(compare_dir, data.n_covariates)
        cls_b = classify_mutations(other, data)
        table = confusion_counts(cls, cls_b, c.counts, state.n_factors, other.n_factors)
        pio.write_matrix(out / "confusion.csv", table,
                         row_labels=_factor_labels(state.n_factors),
                         col_labels=_factor_labels(other.n_factors),
                         index_name="fit\\compare")
        config["compare"] = str(Path(compare_dir).name)
    pio.write_manifest(out, "attribute", config,
                       inputs=[p for p in (bins_path, mutations_path, copies_path) if p])
    click.echo(f"attribute: {c.n_cells} cells classified -> {out}")


@main.command("predict-track")
@data_options
@click.option("--fit", "fit_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--window-bins", default=500, show_default=True)
@click.option("--out", "outdir", required=True, type=click.Path(file_okay=False))
@guarded
def predict_track(bins_path, mutations_path, copies_path, standardize, cap_quantile,
                  fit_dir, window_bins, outdir):
    """Windowed predicted vs observed event totals per patient and pooled."""
    data = _load_data(bins_path, mutations_path, copies_path, standardize, cap_quantile)
    state = _read_state(fit_dir, data.n_covariates)
    edges, predicted = intensity_track(state, data, window_bins)
    _, observed = observed_track(data, window_bins)
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    patients = data.counts.patients
    for w in range(len(edges) - 1):
        for j, pat in enumerate(patients):
            rows.append((w, int(edges[w]), int(edges[w + 1]), pat,
                         predicted[w, j], observed[w, j]))
        rows.append((w, int(edges[w]), int(edges[w + 1]), "ALL",
                     predicted[w].sum(), observed[w].sum()))
    pio.write_table(out / "track.csv",
                    ["window", "start_bin", "end_bin", "patient", "predicted", "observed"],
                    rows)
    pio.write_manifest(out, "predict-track",
                       {"window_bins": window_bins, "fit": str(Path(fit_dir).name),
                        "standardize": standardize, "cap_quantile": cap_quantile},
                       inputs=[p for p in (bins_path, mutations_path, copies_path) if p])
    click.echo(f"predict-track: {len(edges) - 1} windows -> {out}")


@main.command()
@click.option("--fit", "fit_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--epsilon", default=1e-3, show_default=True)
@click.option("--prune-mu-factor", default=5.0, show_default=True)
@click.option("--prune-cos-threshold", default=0.975, show_default=True)
@click.option("--reference", "reference_path", default=None,
              type=click.Path(exists=True, dir_okay=False),
              help="Reference signatures to match and score against.")
@click.option("--f1-cosine", default=0.9, show_default=True)
@click.option("--out", "outdir", required=True, type=click.Path(file_okay=False))
@guarded
def postprocess(fit_dir, epsilon, prune_mu_factor, prune_cos_threshold,
                reference_path, f1_cosine, outdir):
    """Prune a fit and optionally score it against reference signatures."""
    state = _read_state(fit_dir, 0)
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    report = prune(state, epsilon, prune_mu_factor, prune_cos_threshold)
    _write_pruning(out, report)
    config = {"epsilon": epsilon, "prune_mu_factor": prune_mu_factor,
              "prune_cos_threshold": prune_cos_threshold, "f1_cosine": f1_cosine,
              "fit": str(Path(fit_dir).name)}
    inputs = []
    if reference_path:
        Rref, _, _ = pio.read_matrix(reference_path)
        Rhat = state.R[:, report.kept]
        match = match_signatures(Rhat, Rref)
        pio.write_table(out / "matching.csv", ["estimated", "reference", "cosine"],
                        [(int(a), int(b), c) for (a, b), c in
                         zip(match.pairs, match.cosines)])
        precision, sensitivity, score = f1(Rhat, Rref, f1_cosine)
        sig_rmse = rmse(*aligned_matrices(Rhat, Rref, match))
        pio.write_table(out / "metrics.csv", ["metric", "value"],
                        [("precision", precision), ("sensitivity", sensitivity),
                         ("f1", score), ("rmse_signatures", sig_rmse),
                         ("n_kept", len(report.kept))])
        inputs.append(reference_path)
    pio.write_manifest(out, "postprocess", config, inputs=inputs)
    click.echo(f"postprocess: kept {len(report.kept)}/{state.n_factors} factors -> {out}")


def aligned_matrices(A_hat, A_ref, match):
    """Zero-pad both matrices to a shared rank and order estimated columns
    onto their matched reference slots; unmatched estimates fill the spare
    padded slots in index order."""
    ka, kr = A_hat.shape[1], A_ref.shape[1]
    n = max(ka, kr)
    out_hat = np.zeros((A_hat.shape[0], n))
    out_ref = np.zeros((A_ref.shape[0], n))
    out_ref[:, :kr] = A_ref
    by_ref = {b: a for a, b in match.pairs}
    for b, a in by_ref.items():
        out_hat[:, b] = A_hat[:, a]
    spare = iter(range(kr, n))
    for a in match.unmatched_estimated:
        out_hat[:, next(spare)] = A_hat[:, a]
    return out_hat, out_ref


if __name__ == "__main__":
    main()
