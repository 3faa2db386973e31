"""Shared fixtures-by-hand: dataset builders and the joint-simulation harness."""
from __future__ import annotations

import numpy as np

from concordance import (
    CalibrationPrior,
    LogScaleData,
    ObservationTable,
    TruthSpec,
    gen_lognormal,
    log_transform,
)
from concordance.diagnostics import ess
from concordance.samplers.gibbs import GibbsPlan, block_cycle, vanilla_cycle
from concordance.samplers.hmc import hmc_step


def make_truth(N=3, M=5, seed=0, v_lo=0.03, v_hi=0.08):
    """Moderate-variance lognormal ground truth with spread-out fluxes."""
    rng = np.random.default_rng(seed)
    a = np.exp(rng.normal(0.0, 0.1, N))
    f = np.exp(rng.normal(7.0, 1.2, M))
    v = rng.uniform(v_lo, v_hi, N)
    return TruthSpec.uniform_adjustments(a=a, f=f, v=v, adjustment=2.0)


def make_instance(N=3, M=5, seed=0, tau=0.05, alpha=2.0, beta=0.1, **kw):
    """(data, prior, truth) triple drawn from the model itself."""
    truth = make_truth(N, M, seed, **kw)
    table = gen_lognormal(truth, seed + 1)
    prior = CalibrationPrior.from_area_estimates(a=truth.a, tau=tau, alpha=alpha, beta=beta)
    return log_transform(table), prior, truth


def complete_grid_data(N, M, y):
    """LogScaleData over the full N x M grid with the given y values (row-major)."""
    ii, jj = np.meshgrid(np.arange(N), np.arange(M), indexing="ij")
    return LogScaleData(
        n_instruments=N, n_sources=M,
        instrument_idx=ii.ravel(), source_idx=jj.ravel(),
        y=np.asarray(y, dtype=float).ravel(),
    )


def tiny_table():
    """2 instruments x 2 sources, 3 entries (one pair unobserved)."""
    return ObservationTable.from_records(2, 2, [
        (0, 0, 120.0, 2.0),
        (0, 1, 40.0, 1.0),
        (1, 0, 300.0, 5.0),
    ])


# ---------------------------------------------------------------------------
# Joint-simulation (successive-conditional vs marginal-conditional) harness.
# A correct transition kernel leaves the joint law of (parameters, data)
# invariant, so moments of the parameter chain must match fresh prior draws.
# ---------------------------------------------------------------------------

def geweke_prior():
    """Fully proper N=2, M=3 prior: every tau finite, IG with alpha > 2."""
    return CalibrationPrior(
        b=np.array([0.0, 0.1]),
        tau=np.array([0.3, 0.25]),
        alpha=np.array([3.0, 3.5]),
        beta=np.array([0.5, 0.4]),
        flux_mean=np.array([1.0, 0.2, 1.7]),
        flux_tau=np.array([0.4, 0.35, 0.5]),
    )


def prior_draw(prior, rng):
    B = prior.b + prior.tau * rng.standard_normal(prior.b.shape[0])
    G = prior.flux_mean + prior.flux_tau * rng.standard_normal(prior.flux_mean.shape[0])
    v = prior.beta / rng.standard_gamma(prior.alpha)
    return B, G, v


def data_draw(prior, B, G, v, rng, N, M):
    mu = B[:, None] + G[None, :] - 0.5 * v[:, None]
    y = rng.normal(mu, np.sqrt(v)[:, None])
    return complete_grid_data(N, M, y)


def _gibbs_kernel(cycle):
    def step(B, G, v, data, prior, rng):
        return cycle(data, prior, B, G, v, rng)
    return step


def _hmc_kernel(eps=0.1, steps=8):
    def step(B, G, v, data, prior, rng):
        q = np.concatenate([B, G, np.log(v)])
        mass = np.ones(q.shape[0])
        q, _, _ = hmc_step(q, eps, steps, data, prior, rng, mass)
        N, M = data.n_instruments, data.n_sources
        return q[:N], q[N:N + M], np.exp(q[N + M:])
    return step


GEWEKE_KERNELS = {
    "vanilla-gibbs": _gibbs_kernel(vanilla_cycle),
    "block-gibbs": _gibbs_kernel(block_cycle),
    "hmc": _hmc_kernel(),
}


def geweke_chain(kernel, prior, n_cycles, seed, N=2, M=3):
    """Successive-conditional simulation: alternate theta | y and y | theta."""
    rng = np.random.default_rng(seed)
    B, G, v = prior_draw(prior, rng)
    data = data_draw(prior, B, G, v, rng, N, M)
    out = np.empty((n_cycles, 2 * N + M))
    for t in range(n_cycles):
        B, G, v = kernel(B, G, v, data, prior, rng)
        data = data_draw(prior, B, G, v, rng, N, M)
        out[t] = np.concatenate([B, G, v])
    return out


def geweke_marginal(prior, n_draws, seed, N=2, M=3):
    rng = np.random.default_rng(seed)
    out = np.empty((n_draws, 2 * N + M))
    for t in range(n_draws):
        B, G, v = prior_draw(prior, rng)
        out[t] = np.concatenate([B, G, v])
    return out


def geweke_zscores(chain, marginal):
    """|z| per (coordinate, moment): chain SE uses ESS, marginal draws are iid."""
    zs = []
    for mom in (1, 2):
        xc = chain ** mom
        xm = marginal ** mom
        for k in range(chain.shape[1]):
            se = np.sqrt(np.var(xc[:, k], ddof=1) / ess(xc[:, k])
                         + np.var(xm[:, k], ddof=1) / xm.shape[0])
            zs.append(abs(xc[:, k].mean() - xm[:, k].mean()) / se)
    return np.asarray(zs)
