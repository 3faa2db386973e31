"""Closed-form shrinkage machinery, the conditional-maximization mode fitter,
and the ratio-estimator baseline."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg, optimize

from .domain import (
    V_MIN,
    CalibrationPrior,
    LogScaleData,
    ObservationTable,
    ParameterState,
    area_prior_log_density,
    flux_prior_log_density,
    log_likelihood,
    variance_prior_log_density,
)
from .errors import ConfigurationError, DataError


def shrinkage_factor(S2) -> float:
    """Self-weighted shrinkage multiplier R = 2 / (1 + sqrt(1 + S2)).

    R = 1 exactly at S2 = 0 and decreases strictly toward 0; the variance MLE of
    the half-variance-corrected model is R(S2) * S2.
    """
    S2 = np.asarray(S2, dtype=float)
    if np.any(S2 < 0):
        raise DataError("S2 must be nonnegative")
    out = 2.0 / (1.0 + np.sqrt(1.0 + S2))
    return float(out) if out.ndim == 0 else out


def _variance_profile_root(S2: float, n: int, alpha: float, beta: float, v_min: float) -> float:
    # Stationarity of the conditional log-posterior in v:
    #   -(n/2 + alpha + 1)/v + (n*S2 + 2*beta)/(2 v^2) - n/8 = 0,
    # a quadratic v^2 + (4 + 8(alpha+1)/n) v - (4 S2 + 8 beta/n) = 0 whose positive
    # root we bracket and solve numerically (safeguarded, per the documented scheme).
    c1 = n / 2.0 + alpha + 1.0
    c2 = (n * S2 + 2.0 * beta) / 2.0

    def deriv(v):
        return -c1 / v + c2 / (v * v) - n / 8.0

    hi = S2 + 4.0 * beta + 4.0
    if deriv(hi) >= 0:  # pragma: no cover - bracket chosen to exclude this
        raise RuntimeError("variance bracket failed")
    if deriv(v_min) <= 0:
        # stationary point sits at or below the floor
        return v_min
    root = optimize.brentq(deriv, v_min, hi, xtol=1e-15, rtol=8.9e-16)
    return max(v_min, root)


def update_variance(residuals, n=None, *, alpha=None, beta=None, v_min=V_MIN) -> float:
    """Conditional maximizer in v given residuals r = y - B - G (no HVC term applied).

    With a flat/improper variance prior (alpha is None) this is the shrinkage MLE
    R(S2) * S2 = 2 (sqrt(1 + S2) - 1) with S2 = mean(r^2).  With an inverse-gamma
    prior the corresponding stationarity condition is solved by safeguarded
    root-finding on the derivative.  Result is floored at v_min.
    """
    r = np.asarray(residuals, dtype=float)
    if r.size == 0:
        raise DataError("update_variance needs at least one residual")
    if n is None:
        n = r.size
    S2 = float(np.sum(r * r)) / n
    if alpha is None:
        return max(v_min, 2.0 * (np.sqrt(1.0 + S2) - 1.0))
    return _variance_profile_root(S2, n, float(alpha), float(beta), v_min)


def mean_system(data: LogScaleData, v, prior: CalibrationPrior):
    """Normal equations of the penalized weighted least squares for (B, G) given v.

    Minimizes sum_e (y_e + v_i/2 - B_i - G_j)^2 / v_i plus the configured Normal
    penalties on B (and optionally G).  Returns (P, rhs, quad_const) with P the
    (N+M) x (N+M) precision, rhs the linear term, and quad_const the constant so
    that the quadratic form equals quad_const - 2 rhs.x + x.P.x.
    """
    N, M = data.n_instruments, data.n_sources
    v = np.asarray(v, dtype=float)
    if v.shape[0] != N:
        raise DataError("v must have one entry per instrument")
    i_idx, j_idx = data.instrument_idx, data.source_idx
    w = 1.0 / v[i_idx]
    ytil = data.y + 0.5 * v[i_idx]

    d = N + M
    P = np.zeros((d, d))
    rhs = np.zeros(d)
    np.add.at(P, (i_idx, i_idx), w)
    np.add.at(P, (N + j_idx, N + j_idx), w)
    np.add.at(P, (i_idx, N + j_idx), w)
    np.add.at(P, (N + j_idx, i_idx), w)
    np.add.at(rhs, i_idx, w * ytil)
    np.add.at(rhs, N + j_idx, w * ytil)
    quad_const = float(np.sum(w * ytil * ytil))

    finite = np.isfinite(prior.tau)
    pw = np.zeros(N)
    pw[finite] = 1.0 / prior.tau[finite] ** 2
    P[np.arange(N), np.arange(N)] += pw
    rhs[:N] += pw * prior.b
    quad_const += float(np.sum(pw * prior.b ** 2))

    if prior.flux_tau is not None:
        fin = np.isfinite(prior.flux_tau)
        gw = np.zeros(M)
        gw[fin] = 1.0 / prior.flux_tau[fin] ** 2
        P[N + np.arange(M), N + np.arange(M)] += gw
        rhs[N:] += gw * prior.flux_mean
        quad_const += float(np.sum(gw * prior.flux_mean ** 2))

    return P, rhs, quad_const


def update_means(data: LogScaleData, v, prior: CalibrationPrior):
    """Solve the penalized weighted least-squares system for (B, G) at fixed v."""
    N = data.n_instruments
    P, rhs, _ = mean_system(data, v, prior)
    try:
        cf = linalg.cho_factor(P, lower=True)
    except linalg.LinAlgError as exc:
        raise ConfigurationError(f"singular mean system (non-identifiable configuration): {exc}")
    x = linalg.cho_solve(cf, rhs)
    return x[:N], x[N:]


@dataclass(frozen=True)
class ModeFitResult:
    """Outcome of the cyclic conditional-maximization fit."""

    state: ParameterState
    iterations: int
    converged: bool
    final_max_update: float
    boundary_flags: np.ndarray          # True where v sits at the floor
    objective_trace: np.ndarray


def mode_objective(state: ParameterState, data: LogScaleData, prior: CalibrationPrior) -> float:
    """The objective fit_mode ascends: log-likelihood plus all proper prior terms.

    Under the improper 1/v prior the variance update is the plain shrinkage MLE, so
    the 1/v factor is deliberately not part of the mode objective (it belongs to the
    samplers' target only).
    """
    out = (
        log_likelihood(state, data)
        + area_prior_log_density(state.B, prior)
        + flux_prior_log_density(state.G, prior)
    )
    if not prior.variance_prior_improper:
        out += variance_prior_log_density(state.v, prior)
    return out


def fit_mode(data: LogScaleData, prior: CalibrationPrior, *, tolerance=1e-8,
             max_iters=500, v_min=V_MIN) -> ModeFitResult:
    """Cyclic conditional maximization alternating update_means and update_variance.

    Each sweep is two exact conditional maximizations, so the objective is
    nondecreasing; convergence is declared when the max absolute change over
    (B, G, log v) drops below ``tolerance``.  Exceeding max_iters returns
    converged=False rather than raising.
    """
    N = data.n_instruments
    if prior.variance_prior_improper:
        alpha = beta = [None] * N
    else:
        alpha, beta = prior.alpha, prior.beta

    by_instrument = [np.flatnonzero(data.instrument_idx == i) for i in range(N)]
    v = np.full(N, v_min)
    B = np.where(np.isfinite(prior.tau), prior.b, 0.0)
    G = np.zeros(data.n_sources)

    trace = []
    converged = False
    max_update = np.inf
    it = 0
    prev_obj = -np.inf
    while it < max_iters:
        it += 1
        B_new, G_new = update_means(data, v, prior)
        fitted = B_new[data.instrument_idx] + G_new[data.source_idx]
        resid = data.y - fitted
        v_new = np.array([
            update_variance(resid[by_instrument[i]], alpha=alpha[i], beta=beta[i], v_min=v_min)
            for i in range(N)
        ])
        max_update = max(
            float(np.max(np.abs(B_new - B))),
            float(np.max(np.abs(G_new - G))),
            float(np.max(np.abs(np.log(v_new) - np.log(v)))),
        )
        B, G, v = B_new, G_new, v_new
        obj = mode_objective(ParameterState(B=B, G=G, v=v), data, prior)
        if obj < prev_obj - 1e-9 * (1.0 + abs(prev_obj)):
            raise RuntimeError(f"mode objective decreased at sweep {it}: {prev_obj} -> {obj}")
        prev_obj = obj
        trace.append(obj)
        if max_update < tolerance:
            converged = True
            break

    return ModeFitResult(
        state=ParameterState(B=B, G=G, v=v),
        iterations=it,
        converged=converged,
        final_max_update=float(max_update),
        boundary_flags=(v <= v_min),
        objective_trace=np.asarray(trace),
    )


@dataclass(frozen=True)
class RatioEstimates:
    """Raw per-(i, j) ratio estimates and the per-source combined values."""

    raw_instrument_idx: np.ndarray
    raw_source_idx: np.ndarray
    raw: np.ndarray        # f_j^(i) = c_ij / (T_ij * a_i)
    combined: np.ndarray   # per-source estimate across contributing instruments


def ratio_estimates(table: ObservationTable, a, combine="geometric") -> RatioEstimates:
    """Baseline flux estimates f_j = c_ij / (T_ij a_i), combined across instruments.

    The combined estimate is the geometric mean (matching the multiplicative model);
    an arithmetic mean is available behind the ``combine`` flag.
    """
    a = np.asarray(a, dtype=float)
    if np.any(a <= 0):
        raise DataError("area estimates must be positive")
    if a.shape[0] != table.n_instruments:
        raise DataError("need one area estimate per instrument")
    raw = table.counts / (table.adjustments * a[table.instrument_idx])
    combined = np.zeros(table.n_sources)
    for j in range(table.n_sources):
        vals = raw[table.source_idx == j]
        if combine == "geometric":
            combined[j] = float(np.exp(np.mean(np.log(vals))))
        elif combine == "arithmetic":
            combined[j] = float(np.mean(vals))
        else:
            raise ConfigurationError(f"unknown combine rule {combine!r}")
    return RatioEstimates(
        raw_instrument_idx=table.instrument_idx,
        raw_source_idx=table.source_idx,
        raw=raw,
        combined=combined,
    )
