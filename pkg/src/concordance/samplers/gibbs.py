"""Scalar and blocked Gibbs samplers for the log-scale concordance model."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..domain import CalibrationPrior, DrawSequence, LogScaleData
from ..errors import DegenerateConditionalError
from ..estimators import fit_mode
from .base import SamplerConfig, chain_seed
from .gaussian import conditional_mean_draw
from .gig import sample_gig, update_variance_conditional


@dataclass(frozen=True)
class GibbsPlan:
    """Index lists and prior arrays precomputed once per run."""

    by_instrument: list
    by_source: list
    prec_b: np.ndarray
    prec_g: np.ndarray
    alpha: object
    beta: object

    @classmethod
    def build(cls, data: LogScaleData, prior: CalibrationPrior):
        N, M = data.n_instruments, data.n_sources
        prec_b = np.where(np.isfinite(prior.tau), 1.0 / prior.tau ** 2, 0.0)
        if prior.flux_tau is not None:
            prec_g = np.where(np.isfinite(prior.flux_tau), 1.0 / prior.flux_tau ** 2, 0.0)
        else:
            prec_g = np.zeros(M)
        if prior.variance_prior_improper:
            alpha = beta = [None] * N
        else:
            alpha, beta = prior.alpha, prior.beta
        return cls(
            by_instrument=[np.flatnonzero(data.instrument_idx == i) for i in range(N)],
            by_source=[np.flatnonzero(data.source_idx == j) for j in range(M)],
            prec_b=prec_b,
            prec_g=prec_g,
            alpha=alpha,
            beta=beta,
        )


def _draw_variances(data, plan, B, G, v, rng):
    out = np.empty_like(v)
    resid = data.y - B[data.instrument_idx] - G[data.source_idx]
    for i, rows in enumerate(plan.by_instrument):
        try:
            params = update_variance_conditional(resid[rows], rows.size,
                                          alpha=plan.alpha[i], beta=plan.beta[i])
        except DegenerateConditionalError as exc:
            raise DegenerateConditionalError(f"instrument {i}: {exc}")
        out[i] = sample_gig(params, rng)
    return out


def vanilla_cycle(data: LogScaleData, prior: CalibrationPrior, B, G, v,
                  rng: np.random.Generator, plan: GibbsPlan | None = None):
    """One full sweep of scalar conditional draws: each B_i, each G_j, each v_i.

    Means are Normal conditionals of the half-variance-corrected regression;
    variances are generalized inverse Gaussian.  Returns new (B, G, v) arrays.
    """
    if plan is None:
        plan = GibbsPlan.build(data, prior)
    B = B.copy()
    G = G.copy()
    fm = np.isfinite(prior.b)
    b0 = np.where(fm, prior.b, 0.0)
    i_idx, j_idx = data.instrument_idx, data.source_idx

    for i, rows in enumerate(plan.by_instrument):
        w = 1.0 / v[i]
        prec = plan.prec_b[i] + rows.size * w
        lin = plan.prec_b[i] * b0[i] + w * np.sum(data.y[rows] - G[j_idx[rows]] + 0.5 * v[i])
        B[i] = lin / prec + rng.standard_normal() / math.sqrt(prec)
    for j, rows in enumerate(plan.by_source):
        wi = 1.0 / v[i_idx[rows]]
        prec = plan.prec_g[j] + np.sum(wi)
        lin = np.sum(wi * (data.y[rows] - B[i_idx[rows]] + 0.5 * v[i_idx[rows]]))
        if prior.flux_mean is not None:
            lin += plan.prec_g[j] * np.where(np.isfinite(prior.flux_mean[j]),
                                             prior.flux_mean[j], 0.0)
        G[j] = lin / prec + rng.standard_normal() / math.sqrt(prec)

    v = _draw_variances(data, plan, B, G, v, rng)
    return B, G, v


def block_cycle(data: LogScaleData, prior: CalibrationPrior, B, G, v,
                rng: np.random.Generator, plan: GibbsPlan | None = None):
    """One blocked sweep: joint Gaussian draw of (B, G), then each variance."""
    if plan is None:
        plan = GibbsPlan.build(data, prior)
    B, G = conditional_mean_draw(data, v, prior, rng)
    v = _draw_variances(data, plan, B, G, v, rng)
    return B, G, v


def _run_gibbs(data, prior, config, cycle, method):
    plan = GibbsPlan.build(data, prior)
    start = fit_mode(data, prior, tolerance=config.tolerance).state
    kept = config.iterations - config.warmup
    sequences = []
    for c in range(config.chains):
        seed = chain_seed(config.seed, c)
        rng = np.random.default_rng(seed)
        B, G, v = start.B.copy(), start.G.copy(), start.v.copy()
        kB = np.empty((kept, data.n_instruments))
        kG = np.empty((kept, data.n_sources))
        kv = np.empty((kept, data.n_instruments))
        for t in range(config.iterations):
            B, G, v = cycle(data, prior, B, G, v, rng, plan)
            k = t - config.warmup
            if k >= 0:
                kB[k], kG[k], kv[k] = B, G, v
        sequences.append(DrawSequence(
            method=method, chain_id=c, seed=seed, warmup=config.warmup,
            B=kB, G=kG, v=kv, stats={"iterations": config.iterations}))
    return sequences


def run_vanilla_gibbs(data: LogScaleData, prior: CalibrationPrior,
                      config: SamplerConfig) -> list:
    """Scalar Gibbs chains started from the posterior mode."""
    return _run_gibbs(data, prior, config, vanilla_cycle, "vanilla-gibbs")


def run_block_gibbs(data: LogScaleData, prior: CalibrationPrior,
                    config: SamplerConfig) -> list:
    """Blocked Gibbs chains ((B, G) jointly, then variances) from the mode."""
    return _run_gibbs(data, prior, config, block_cycle, "block-gibbs")
