"""Likelihood-weighted active learning for the tails of response distributions."""
from . import _backend as backend
from .acquisition import (AcquisitionParams, glw_scores, integral_lw_criterion,
                          integral_lw_scores, lw_scores, shifted_pdfs)
from .density import DensityEstimate, estimate_pdf, log_pdf_at, log_pdf_error, pdf_at
from .experiment import (ErrorTrace, ExperimentConfig, load_config, run_ensemble, run_experiment,
                         sweep)
from .gp import (Dataset, KernelConfig, PoolPredictionCache, PosteriorState, build_posterior,
                 fit_hyperparameters, init_pool_cache, kernel_eval, predict_batch,
                 recursive_append, sample_prior_realization)
from .inputs import HalfPlaneTruncatedNormal, IndependentNormal, StandardNormal, Uniform
from .mcdo import CandidatePool, benchmark_update_paths, build_pool, select_next
from .systems import (get_system, ground_truth_pdf, kl_expand, list_systems,
                      make_synthetic_function, oscillator_response, ship_response, sir_response)

__version__ = "0.1.0"

__all__ = [
    "AcquisitionParams", "CandidatePool", "Dataset", "DensityEstimate", "ErrorTrace",
    "ExperimentConfig", "HalfPlaneTruncatedNormal", "IndependentNormal", "KernelConfig",
    "PoolPredictionCache", "PosteriorState", "StandardNormal", "Uniform", "backend",
    "benchmark_update_paths", "build_pool", "build_posterior", "estimate_pdf",
    "fit_hyperparameters", "get_system", "glw_scores", "ground_truth_pdf", "init_pool_cache",
    "integral_lw_criterion", "integral_lw_scores", "kernel_eval", "kl_expand", "list_systems",
    "load_config", "log_pdf_at", "log_pdf_error", "lw_scores", "make_synthetic_function",
    "oscillator_response", "pdf_at", "predict_batch", "recursive_append", "run_ensemble",
    "run_experiment", "sample_prior_realization", "select_next", "shifted_pdfs", "ship_response",
    "sir_response", "sweep",
]
