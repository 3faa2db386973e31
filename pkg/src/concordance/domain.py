"""Core data types and density evaluators for the concordance model.

The model: counts c_ij from instrument i on source j, with known multiplicative
adjustments T_ij, follow on the log scale

    y_ij = log(c_ij / T_ij) ~ Normal(B_i + G_j - v_i / 2,  v_i)

where B_i = log A_i (log effective area), G_j = log F_j (log flux) and v_i is a
per-instrument variance.  The -v/2 term is the half-variance correction that
keeps E[c_ij / T_ij] = A_i * F_j on the natural scale.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DataError

# Floor applied to variance parameters to guard degenerate zero-residual data.
V_MIN = 1e-12

_LOG_2PI = math.log(2.0 * math.pi)


def _readonly(a) -> np.ndarray:
    out = np.array(a, dtype=float, copy=True)
    out.flags.writeable = False
    return out


def _readonly_int(a) -> np.ndarray:
    out = np.array(a, dtype=np.intp, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class ObservationTable:
    """Observed counts and fixed adjustments over an instrument x source incidence set.

    Counts are positive reals, not necessarily integers: preprocessed data
    c' = c / T_hat generally are not counts anymore.
    """

    n_instruments: int
    n_sources: int
    instrument_idx: np.ndarray  # (n_entries,) int
    source_idx: np.ndarray      # (n_entries,) int
    counts: np.ndarray          # (n_entries,) positive float
    adjustments: np.ndarray     # (n_entries,) positive float

    def __post_init__(self):
        object.__setattr__(self, "instrument_idx", _readonly_int(self.instrument_idx))
        object.__setattr__(self, "source_idx", _readonly_int(self.source_idx))
        object.__setattr__(self, "counts", _readonly(self.counts))
        object.__setattr__(self, "adjustments", _readonly(self.adjustments))
        n = self.instrument_idx.shape[0]
        if not (self.source_idx.shape[0] == self.counts.shape[0] == self.adjustments.shape[0] == n):
            raise DataError("entry arrays must have equal length")
        if n == 0:
            raise DataError("observation table has no entries")
        if self.n_instruments < 1 or self.n_sources < 1:
            raise DataError("need at least one instrument and one source")
        if self.instrument_idx.min() < 0 or self.instrument_idx.max() >= self.n_instruments:
            raise DataError("instrument index out of range")
        if self.source_idx.min() < 0 or self.source_idx.max() >= self.n_sources:
            raise DataError("source index out of range")
        if not np.all(self.counts > 0):
            raise DataError("all counts must be strictly positive")
        if not np.all(self.adjustments > 0):
            raise DataError("all adjustments must be strictly positive")
        pairs = set(zip(self.instrument_idx.tolist(), self.source_idx.tolist()))
        if len(pairs) != n:
            raise DataError("duplicate (instrument, source) pair in observation table")
        if len(set(self.instrument_idx.tolist())) != self.n_instruments:
            raise DataError("every instrument must appear in at least one entry")
        if len(set(self.source_idx.tolist())) != self.n_sources:
            raise DataError("every source must appear in at least one entry")

    @property
    def n_entries(self) -> int:
        return self.counts.shape[0]

    @classmethod
    def from_records(cls, n_instruments, n_sources, records) -> "ObservationTable":
        """Build from an iterable of (instrument, source, count, adjustment) tuples."""
        recs = list(records)
        return cls(
            n_instruments=n_instruments,
            n_sources=n_sources,
            instrument_idx=[r[0] for r in recs],
            source_idx=[r[1] for r in recs],
            counts=[r[2] for r in recs],
            adjustments=[r[3] for r in recs],
        )


@dataclass(frozen=True)
class CalibrationPrior:
    """Per-instrument prior location/spread for log-areas plus variance-prior hyperparameters.

    b_i is the log of the externally calibrated area estimate a_i, tau_i its spread
    (np.inf means flat).  The variance prior is inverse-gamma(alpha_i, beta_i) unless
    ``variance_prior_improper``, in which case p(v_i) is taken proportional to 1/v_i and
    alpha/beta are ignored.

    ``flux_mean``/``flux_tau`` optionally place a Normal prior on the log-fluxes G_j;
    both default to the flat prior (flux_tau = inf).  A fully proper configuration is
    required by joint-simulation correctness checks.
    """

    b: np.ndarray
    tau: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    variance_prior_improper: bool = False
    flux_mean: np.ndarray | None = None
    flux_tau: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "b", _readonly(self.b))
        object.__setattr__(self, "tau", _readonly(self.tau))
        object.__setattr__(self, "alpha", _readonly(self.alpha))
        object.__setattr__(self, "beta", _readonly(self.beta))
        if self.flux_mean is not None:
            object.__setattr__(self, "flux_mean", _readonly(self.flux_mean))
        if self.flux_tau is not None:
            object.__setattr__(self, "flux_tau", _readonly(self.flux_tau))
        n = self.b.shape[0]
        if not (self.tau.shape[0] == self.alpha.shape[0] == self.beta.shape[0] == n):
            raise ConfigurationError("prior arrays must have equal length")
        if np.any(self.tau <= 0):
            raise ConfigurationError("tau must be positive (np.inf allowed)")
        if not self.variance_prior_improper:
            if np.any(self.alpha <= 0) or np.any(self.beta <= 0):
                raise ConfigurationError("inverse-gamma hyperparameters must be positive")
        if (self.flux_mean is None) != (self.flux_tau is None):
            raise ConfigurationError("flux_mean and flux_tau must be given together")
        if self.flux_tau is not None and np.any(self.flux_tau <= 0):
            raise ConfigurationError("flux_tau must be positive (np.inf allowed)")
        any_finite_tau = bool(np.any(np.isfinite(self.tau)))
        any_finite_flux = self.flux_tau is not None and bool(np.any(np.isfinite(self.flux_tau)))
        if not (any_finite_tau or any_finite_flux):
            raise ConfigurationError(
                "at least one finite tau_i is required: the additive two-way model has "
                "a free shift (B_i + d, G_j - d) that only a proper location prior pins down"
            )

    @property
    def n_instruments(self) -> int:
        return self.b.shape[0]

    @classmethod
    def from_area_estimates(cls, a, tau, alpha=2.0, beta=0.1,
                            variance_prior_improper=False) -> "CalibrationPrior":
        """Prior located at log(a_i); scalar alpha/beta are broadcast."""
        a = np.asarray(a, dtype=float)
        if np.any(a <= 0):
            raise ConfigurationError("area estimates must be positive")
        n = a.shape[0]
        return cls(
            b=np.log(a),
            tau=np.broadcast_to(np.asarray(tau, dtype=float), (n,)),
            alpha=np.broadcast_to(np.asarray(alpha, dtype=float), (n,)),
            beta=np.broadcast_to(np.asarray(beta, dtype=float), (n,)),
            variance_prior_improper=variance_prior_improper,
        )


@dataclass(frozen=True)
class LogScaleData:
    """Log-scale observables y_ij = log c_ij - log T_ij, bijective with the source table."""

    n_instruments: int
    n_sources: int
    instrument_idx: np.ndarray
    source_idx: np.ndarray
    y: np.ndarray
    entries_per_instrument: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        object.__setattr__(self, "instrument_idx", _readonly_int(self.instrument_idx))
        object.__setattr__(self, "source_idx", _readonly_int(self.source_idx))
        object.__setattr__(self, "y", _readonly(self.y))
        counts = np.bincount(self.instrument_idx, minlength=self.n_instruments)
        object.__setattr__(self, "entries_per_instrument", _readonly_int(counts))
        if np.any(counts == 0):
            raise DataError("every instrument needs at least one entry")
        if self.y.shape[0] != self.instrument_idx.shape[0]:
            raise DataError("y and index arrays must have equal length")

    @property
    def n_entries(self) -> int:
        return self.y.shape[0]


@dataclass(frozen=True)
class ParameterState:
    """One point (B, G, v): log-areas, log-fluxes and per-instrument variances."""

    B: np.ndarray
    G: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "B", _readonly(self.B))
        object.__setattr__(self, "G", _readonly(self.G))
        object.__setattr__(self, "v", _readonly(self.v))
        if self.v.shape != self.B.shape:
            raise DataError("v must have one entry per instrument")
        if np.any(self.v < V_MIN):
            raise DataError(f"variances must be >= v_min = {V_MIN}")


@dataclass(frozen=True)
class DrawSequence:
    """Ordered post-warmup posterior draws from one chain.

    B has shape (n_draws, N), G (n_draws, M), v (n_draws, N).  ``warmup`` records how
    many initial draws were discarded before storage.  ``stats`` carries sampler-specific
    counters (acceptance rates, divergences, envelope bookkeeping).
    """

    method: str
    chain_id: int
    seed: int
    warmup: int
    B: np.ndarray
    G: np.ndarray
    v: np.ndarray
    stats: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in ("vanilla-gibbs", "block-gibbs", "hmc", "exact-iid"):
            raise ConfigurationError(f"unknown method tag {self.method!r}")
        if self.B.ndim != 2 or self.B.shape[0] == 0:
            raise DataError("draw sequence must be nonempty after warmup removal")
        if self.G.shape[0] != self.B.shape[0] or self.v.shape != self.B.shape:
            raise DataError("inconsistent draw array shapes")
        if np.any(self.v < V_MIN):
            raise DataError("all stored variance draws must respect the v_min floor")

    @property
    def n_draws(self) -> int:
        return self.B.shape[0]

    def state(self, k: int) -> ParameterState:
        return ParameterState(B=self.B[k], G=self.G[k], v=self.v[k])

    def parameter_names(self):
        names = [f"B[{i}]" for i in range(self.B.shape[1])]
        names += [f"G[{j}]" for j in range(self.G.shape[1])]
        names += [f"v[{i}]" for i in range(self.v.shape[1])]
        return names

    def parameter_matrix(self) -> np.ndarray:
        """Draws as a (n_draws, N + M + N) matrix in parameter_names() order."""
        return np.concatenate([self.B, self.G, self.v], axis=1)


# ---------------------------------------------------------------------------
# Transforms and densities
# ---------------------------------------------------------------------------

def log_transform(table: ObservationTable) -> LogScaleData:
    """Map counts to the log scale: y_ij = log c_ij - log T_ij, entry order preserved."""
    return LogScaleData(
        n_instruments=table.n_instruments,
        n_sources=table.n_sources,
        instrument_idx=table.instrument_idx,
        source_idx=table.source_idx,
        y=np.log(table.counts) - np.log(table.adjustments),
    )


def hvc_mean(B_i, G_j, v_i):
    """Log-scale mean with the half-variance correction: B + G - v/2.

    Adding v/2 back recovers B + G, so the natural-scale mean of exp(y) stays
    exp(B + G) = A * F.
    """
    return B_i + G_j - 0.5 * v_i


def expected_count(T, A, F):
    """Natural-scale mean count T * A * F; inputs must be positive."""
    T, A, F = np.asarray(T, dtype=float), np.asarray(A, dtype=float), np.asarray(F, dtype=float)
    if np.any(T <= 0) or np.any(A <= 0) or np.any(F <= 0):
        raise DataError("expected_count requires strictly positive T, A, F")
    out = T * A * F
    return float(out) if out.ndim == 0 else out


def _check_dims(state: ParameterState, data: LogScaleData):
    if state.B.shape[0] != data.n_instruments or state.G.shape[0] != data.n_sources:
        raise DataError(
            f"state dims ({state.B.shape[0]}, {state.G.shape[0]}) do not match data "
            f"({data.n_instruments}, {data.n_sources})"
        )


def log_likelihood(state: ParameterState, data: LogScaleData) -> float:
    """Sum over entries of the Normal(hvc_mean, v_i) log-density at y_ij."""
    _check_dims(state, data)
    v_e = state.v[data.instrument_idx]
    mu = state.B[data.instrument_idx] + state.G[data.source_idx] - 0.5 * v_e
    resid = data.y - mu
    return float(np.sum(-0.5 * (_LOG_2PI + np.log(v_e)) - resid * resid / (2.0 * v_e)))


def area_prior_log_density(B: np.ndarray, prior: CalibrationPrior) -> float:
    """Normal(b_i, tau_i^2) log-density summed over instruments; infinite tau contributes zero."""
    finite = np.isfinite(prior.tau)
    if not np.any(finite):
        return 0.0
    t2 = prior.tau[finite] ** 2
    d = B[finite] - prior.b[finite]
    return float(np.sum(-0.5 * (_LOG_2PI + np.log(t2)) - d * d / (2.0 * t2)))


def flux_prior_log_density(G: np.ndarray, prior: CalibrationPrior) -> float:
    """Optional Normal log-density on log-fluxes; zero under the default flat prior."""
    if prior.flux_tau is None:
        return 0.0
    finite = np.isfinite(prior.flux_tau)
    if not np.any(finite):
        return 0.0
    t2 = prior.flux_tau[finite] ** 2
    d = G[finite] - prior.flux_mean[finite]
    return float(np.sum(-0.5 * (_LOG_2PI + np.log(t2)) - d * d / (2.0 * t2)))


def variance_prior_log_density(v: np.ndarray, prior: CalibrationPrior) -> float:
    """Inverse-gamma(alpha, beta) log-density on each v_i, or log(1/v_i) when improper."""
    if prior.variance_prior_improper:
        return float(np.sum(-np.log(v)))
    a, b = prior.alpha, prior.beta
    import scipy.special as sp
    return float(np.sum(a * np.log(b) - sp.gammaln(a) - (a + 1.0) * np.log(v) - b / v))


def log_posterior(state: ParameterState, data: LogScaleData, prior: CalibrationPrior) -> float:
    """Unnormalized log posterior: likelihood plus all configured prior terms."""
    _check_dims(state, data)
    if prior.n_instruments != data.n_instruments:
        raise DataError("prior covers a different number of instruments than the data")
    return (
        log_likelihood(state, data)
        + area_prior_log_density(state.B, prior)
        + flux_prior_log_density(state.G, prior)
        + variance_prior_log_density(state.v, prior)
    )


def log_posterior_grad(state: ParameterState, data: LogScaleData, prior: CalibrationPrior):
    """Gradient of log_posterior with respect to (B, G, v), natural parameterization."""
    _check_dims(state, data)
    i_idx, j_idx = data.instrument_idx, data.source_idx
    v_e = state.v[i_idx]
    d = data.y - (state.B[i_idx] + state.G[j_idx] - 0.5 * v_e)

    dB = np.zeros_like(state.B)
    np.add.at(dB, i_idx, d / v_e)
    dG = np.zeros_like(state.G)
    np.add.at(dG, j_idx, d / v_e)
    # per-entry d/dv: -1/(2v) - d/(2v) + d^2/(2v^2), the middle term from the HVC shift
    dv = np.zeros_like(state.v)
    np.add.at(dv, i_idx, -0.5 / v_e - d / (2.0 * v_e) + d * d / (2.0 * v_e * v_e))

    finite = np.isfinite(prior.tau)
    dB[finite] -= (state.B[finite] - prior.b[finite]) / prior.tau[finite] ** 2
    if prior.flux_tau is not None:
        fin = np.isfinite(prior.flux_tau)
        dG[fin] -= (state.G[fin] - prior.flux_mean[fin]) / prior.flux_tau[fin] ** 2

    if prior.variance_prior_improper:
        dv -= 1.0 / state.v
    else:
        dv += -(prior.alpha + 1.0) / state.v + prior.beta / state.v ** 2
    return dB, dG, dv
