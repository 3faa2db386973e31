"""Calibration concordance: multiplicative shrinkage estimation of instrument
effective areas and source fluxes from a shared log-linear model."""

from .domain import (
    V_MIN,
    CalibrationPrior,
    DrawSequence,
    LogScaleData,
    ObservationTable,
    ParameterState,
    expected_count,
    hvc_mean,
    log_likelihood,
    log_posterior,
    log_posterior_grad,
    log_transform,
)
from .errors import (
    ConcordanceError,
    ConfigurationError,
    DataError,
    DegenerateConditionalError,
    IngestError,
    SamplerError,
)
from .estimators import (
    ModeFitResult,
    RatioEstimates,
    fit_mode,
    ratio_estimates,
    shrinkage_factor,
    update_means,
    update_variance,
)
from .diagnostics import ParameterSummary, agreement_report, ess, split_rhat, summarize
from .samplers import (
    GigParams,
    SamplerConfig,
    chain_seed,
    conditional_mean_draw,
    marginal_log_density_v,
    run_block_gibbs,
    run_exact_iid,
    run_hmc,
    run_vanilla_gibbs,
    sample_gig,
    update_variance_conditional,
)
from .synth import TruthSpec, apply_pileup, gen_lognormal, gen_poisson

__version__ = "0.1.0"

__all__ = [
    "V_MIN",
    "CalibrationPrior",
    "ConcordanceError",
    "ConfigurationError",
    "DataError",
    "DegenerateConditionalError",
    "DrawSequence",
    "GigParams",
    "IngestError",
    "LogScaleData",
    "ModeFitResult",
    "ObservationTable",
    "ParameterState",
    "ParameterSummary",
    "RatioEstimates",
    "SamplerConfig",
    "SamplerError",
    "TruthSpec",
    "agreement_report",
    "apply_pileup",
    "chain_seed",
    "conditional_mean_draw",
    "ess",
    "expected_count",
    "fit_mode",
    "gen_lognormal",
    "gen_poisson",
    "hvc_mean",
    "log_likelihood",
    "log_posterior",
    "log_posterior_grad",
    "log_transform",
    "marginal_log_density_v",
    "ratio_estimates",
    "run_block_gibbs",
    "run_exact_iid",
    "run_hmc",
    "run_vanilla_gibbs",
    "sample_gig",
    "shrinkage_factor",
    "split_rhat",
    "summarize",
    "update_means",
    "update_variance",
    "update_variance_conditional",
    "__version__",
]
