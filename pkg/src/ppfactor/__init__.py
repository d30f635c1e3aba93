"""Covariate-dependent Poisson process factorization of binned event catalogs."""

from .channels import all_channels, format_channel, parse_channel
from .errors import ConfigError, IngestError, NumericalError, PPFError
from .estimators import CompressiveNMF, PoissonProcessFactorization
from .genome import (Bin, BinnedGenome, CopyNumberProfile, CountTensor,
                     MutationRecord, PPFData, Standardization,
                     diploid_copy_numbers, ingest_copy_numbers, ingest_covariates,
                     ingest_mutations, patient_copy_integral,
                     standardize_covariates, unit_domain_data)
from .gibbs import (AttributionCounts, ChainOptions, ChainOutput, run_chain,
                    sample_attributions, sample_baselines, sample_beta_ess,
                    sample_hyper, sample_signatures)
from .mapfit import (MapFit, MapOptions, beta_gradient_hessian, compnmf_fit,
                     fit_map, init_random, update_baselines_map,
                     update_coefficients_map, update_hyper_map,
                     update_signatures_map)
from .model import (EffectMatrix, Hyperparams, ModelState, attribution_probs,
                    covariate_effects, expected_counts, integrals,
                    intensity_track, log_posterior, observed_track)
from .postprocess import (MatchResult, PrunedFit, classify_mutations,
                          confusion_counts, cosine, ess, f1, match_signatures,
                          prune, rmse)
from .simulate import (SimConfig, SimTruth, gen_copy_numbers, gen_covariates,
                       gen_random_correlation, gen_truth, sample_catalog,
                       sample_count_tensor, simulate_dataset)

__version__ = "0.1.0"
