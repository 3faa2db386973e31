"""Hamiltonian Monte Carlo on (B, G, log v) with dual-averaging step size."""
from __future__ import annotations

import math
from types import SimpleNamespace

import numpy as np

from ..domain import CalibrationPrior, DrawSequence, LogScaleData, log_posterior, log_posterior_grad
from ..errors import SamplerError
from ..estimators import fit_mode
from .base import SamplerConfig, chain_seed

# Energy error treated as a divergent transition.
_DIVERGENCE_THRESHOLD = 1000.0
_W_MAX = 500.0  # |log v| beyond this is treated as divergent rather than evaluated


def _unpack(q, N, M):
    # Evaluation happens off the constrained manifold (v can drift below the domain
    # floor mid-trajectory), so duck-type the state instead of ParameterState.
    with np.errstate(over="ignore"):
        v = np.exp(q[N + M:])
    return SimpleNamespace(B=q[:N], G=q[N:N + M], v=v)


def log_target(q, data: LogScaleData, prior: CalibrationPrior) -> float:
    """Log posterior in (B, G, w = log v) including the Jacobian term sum(w)."""
    N, M = data.n_instruments, data.n_sources
    w = q[N + M:]
    if np.any(np.abs(w) > _W_MAX):
        return -np.inf
    with np.errstate(all="ignore"):
        lp = log_posterior(_unpack(q, N, M), data, prior) + float(np.sum(w))
    return lp if math.isfinite(lp) else -np.inf


def log_target_grad(q, data: LogScaleData, prior: CalibrationPrior) -> np.ndarray:
    N, M = data.n_instruments, data.n_sources
    state = _unpack(q, N, M)
    with np.errstate(all="ignore"):
        dB, dG, dv = log_posterior_grad(state, data, prior)
    return np.concatenate([dB, dG, state.v * dv + 1.0])


def leapfrog(q, p, eps, steps, grad, inv_mass):
    """Standard velocity leapfrog; returns the proposed (q, p)."""
    q = q.copy()
    p = p + 0.5 * eps * grad(q)
    for s in range(steps):
        q = q + eps * inv_mass * p
        g = grad(q)
        if not np.all(np.isfinite(g)):
            return q, np.full_like(p, np.nan)
        p = p + (eps if s < steps - 1 else 0.5 * eps) * g
    return q, p


def _hamiltonian(q, p, data, prior, inv_mass):
    return -log_target(q, data, prior) + 0.5 * float(np.sum(p * p * inv_mass))


def hmc_step(q, eps, steps, data, prior, rng, mass):
    """One proposal + Metropolis correction.  Returns (q', accept_prob, divergent)."""
    inv_mass = 1.0 / mass
    if steps == 0:
        # empty trajectory: the proposal is the current point, always accepted
        return q, 1.0, False
    p0 = rng.standard_normal(q.shape[0]) * np.sqrt(mass)
    h0 = _hamiltonian(q, p0, data, prior, inv_mass)
    q1, p1 = leapfrog(q, p0, eps, steps, lambda x: log_target_grad(x, data, prior), inv_mass)
    if not np.all(np.isfinite(p1)):
        return q, 0.0, True
    h1 = _hamiltonian(q1, p1, data, prior, inv_mass)
    delta = h0 - h1
    if not math.isfinite(delta) or abs(delta) > _DIVERGENCE_THRESHOLD:
        return q, 0.0, True
    alpha = min(1.0, math.exp(min(0.0, delta)))
    if rng.random() < alpha:
        return q1, alpha, False
    return q, alpha, False


def find_reasonable_epsilon(q, data, prior, rng, mass) -> float:
    """Double or halve eps until a single leapfrog step crosses 50% acceptance."""
    inv_mass = 1.0 / mass
    eps = 1.0
    p0 = rng.standard_normal(q.shape[0]) * np.sqrt(mass)
    h0 = _hamiltonian(q, p0, data, prior, inv_mass)

    def ratio(eps):
        q1, p1 = leapfrog(q, p0, eps, 1, lambda x: log_target_grad(x, data, prior), inv_mass)
        if not np.all(np.isfinite(p1)):
            return -np.inf
        d = h0 - _hamiltonian(q1, p1, data, prior, inv_mass)
        return d if math.isfinite(d) else -np.inf

    a = 1.0 if ratio(eps) > math.log(0.5) else -1.0
    for _ in range(60):
        if a * ratio(eps) <= -a * math.log(2.0):
            break
        eps *= 2.0 ** a
    else:
        raise SamplerError("step size search failed to terminate")
    return eps


class _DualAveraging:
    """Nesterov-style dual averaging of log step size toward a target acceptance."""

    def __init__(self, eps0, target, gamma=0.05, t0=10.0, kappa=0.75):
        self.mu = math.log(10.0 * eps0)
        self.target = target
        self.gamma, self.t0, self.kappa = gamma, t0, kappa
        self.m = 0
        self.h_bar = 0.0
        self.log_eps = math.log(eps0)
        self.log_eps_bar = 0.0

    def update(self, accept_prob) -> float:
        self.m += 1
        frac = 1.0 / (self.m + self.t0)
        self.h_bar = (1.0 - frac) * self.h_bar + frac * (self.target - accept_prob)
        self.log_eps = self.mu - math.sqrt(self.m) / self.gamma * self.h_bar
        w = self.m ** -self.kappa
        self.log_eps_bar = w * self.log_eps + (1.0 - w) * self.log_eps_bar
        return math.exp(self.log_eps)

    @property
    def adapted(self) -> float:
        return math.exp(self.log_eps_bar)


def run_hmc(data: LogScaleData, prior: CalibrationPrior, config: SamplerConfig) -> list:
    """HMC chains from the posterior mode.

    Warmup runs under an identity mass matrix with the step size dual-averaged
    toward ``target_accept`` (skipped when ``step_size`` is pinned); coordinate
    variances accumulated over the second warmup half set the diagonal mass for
    the sampling phase, which uses the averaged step size.  Transitions with
    energy error beyond the divergence threshold are rejected and counted; more
    than 1% divergent sampling iterations flags the chain.
    """
    N, M = data.n_instruments, data.n_sources
    D = N + M + N
    start = fit_mode(data, prior, tolerance=config.tolerance).state
    q0 = np.concatenate([start.B, start.G, np.log(start.v)])
    kept = config.iterations - config.warmup
    L = config.leapfrog_steps
    sequences = []

    for c in range(config.chains):
        seed = chain_seed(config.seed, c)
        rng = np.random.default_rng(seed)
        q = q0.copy()
        mass = np.ones(D)

        if config.step_size is not None:
            eps = eps_final = config.step_size
            da = None
        else:
            eps = find_reasonable_epsilon(q, data, prior, rng, mass)
            da = _DualAveraging(eps, config.target_accept)

        half = config.warmup // 2
        welford_n = 0
        mean = np.zeros(D)
        m2 = np.zeros(D)
        for t in range(config.warmup):
            q, alpha, _ = hmc_step(q, eps, L, data, prior, rng, mass)
            if da is not None:
                eps = da.update(alpha)
            if t >= half:
                welford_n += 1
                delta = q - mean
                mean += delta / welford_n
                m2 += delta * (q - mean)
        if da is not None:
            eps_final = da.adapted if da.m > 0 else eps
        if welford_n >= 10:
            var = m2 / (welford_n - 1)
            ok = var > 1e-12
            mass = np.where(ok, 1.0 / np.where(ok, var, 1.0), 1.0)

        kB = np.empty((kept, N))
        kG = np.empty((kept, M))
        kv = np.empty((kept, N))
        divergences = 0
        accept_sum = 0.0
        for k in range(kept):
            q, alpha, div = hmc_step(q, eps_final, L, data, prior, rng, mass)
            divergences += div
            accept_sum += alpha
            kB[k] = q[:N]
            kG[k] = q[N:N + M]
            kv[k] = np.maximum(np.exp(q[N + M:]), 1e-12)

        div_rate = divergences / kept
        sequences.append(DrawSequence(
            method="hmc", chain_id=c, seed=seed, warmup=config.warmup,
            B=kB, G=kG, v=kv,
            stats={
                "step_size": eps_final,
                "accept_rate": accept_sum / kept,
                "divergences": divergences,
                "divergence_rate": div_rate,
                "divergence_warning": div_rate > 0.01,
                "mass": mass.tolist(),
            }))
    return sequences
