from .base import SamplerConfig, chain_seed
from .gig import GigParams, gig_logpdf, sample_gig, update_variance_conditional
from .gaussian import conditional_mean_draw
from .gibbs import block_cycle, run_block_gibbs, run_vanilla_gibbs, vanilla_cycle
from .hmc import run_hmc
from .exact import envelope_audit, marginal_log_density_v, run_exact_iid

__all__ = [
    "GigParams",
    "SamplerConfig",
    "block_cycle",
    "chain_seed",
    "conditional_mean_draw",
    "envelope_audit",
    "gig_logpdf",
    "marginal_log_density_v",
    "run_block_gibbs",
    "run_exact_iid",
    "run_hmc",
    "run_vanilla_gibbs",
    "sample_gig",
    "update_variance_conditional",
    "vanilla_cycle",
]
