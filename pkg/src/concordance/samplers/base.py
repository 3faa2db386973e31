"""Shared sampler configuration and seed derivation."""
from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import ConfigurationError

METHODS = ("vanilla-gibbs", "block-gibbs", "hmc", "exact-iid")

# Odd multiplier (golden-ratio hash constant) keeps per-chain streams decorrelated
# while staying reproducible from a single user-facing seed.
_CHAIN_STRIDE = 0x9E3779B9


def chain_seed(seed: int, chain_index: int) -> int:
    """Derive the per-chain RNG seed: (seed + stride * index) mod 2**64."""
    return (int(seed) + _CHAIN_STRIDE * int(chain_index)) % (1 << 64)


@dataclass(frozen=True)
class SamplerConfig:
    """Run-level knobs common to every posterior sampler.

    HMC fields are ignored by the Gibbs and rejection samplers; rejection fields
    are ignored by the MCMC samplers.  step_size None means auto-tune by dual
    averaging during warmup.
    """

    iterations: int = 4000
    warmup: int = 1000
    chains: int = 1
    seed: int = 0
    # convergence tolerance for the mode fit used as the chain start
    tolerance: float = 1e-8
    # HMC
    step_size: float | None = None
    leapfrog_steps: int = 32
    target_accept: float = 0.8
    # exact-iid rejection
    envelope_margin: float = 0.5
    envelope_prior_mix: float = 0.15
    max_proposals: int = 10_000_000
    max_escalations: int = 3

    def __post_init__(self):
        if self.iterations <= 0:
            raise ConfigurationError("iterations must be positive")
        if not 0 <= self.warmup < self.iterations:
            raise ConfigurationError("warmup must satisfy 0 <= warmup < iterations")
        if self.chains <= 0:
            raise ConfigurationError("chains must be positive")
        if self.tolerance <= 0:
            raise ConfigurationError("tolerance must be positive")
        if self.step_size is not None and self.step_size <= 0:
            raise ConfigurationError("step_size must be positive when given")
        if self.leapfrog_steps < 0:
            raise ConfigurationError("leapfrog_steps must be nonnegative")
        if not 0.0 < self.target_accept < 1.0:
            raise ConfigurationError("target_accept must lie in (0, 1)")
        if self.envelope_margin < 0:
            raise ConfigurationError("envelope_margin must be nonnegative")
        if not 0.0 <= self.envelope_prior_mix < 1.0:
            raise ConfigurationError("envelope_prior_mix must lie in [0, 1)")
        if self.max_proposals <= 0 or self.max_escalations < 0:
            raise ConfigurationError("rejection limits must be positive")
