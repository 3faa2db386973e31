"""Synthetic observation generators for calibration studies."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .domain import ObservationTable
from .errors import ConfigurationError, DataError

# Poisson cells that come up empty are redrawn at most this many times before
# the cell is dropped from the table.
_ZERO_RESAMPLE_LIMIT = 100


@dataclass(frozen=True)
class TruthSpec:
    """Ground-truth areas, fluxes, variances and the exposure-like adjustments.

    ``adjustments`` is a dense (N, M) matrix; complete incidence is assumed by the
    generators (every instrument observes every source).
    """

    a: np.ndarray
    f: np.ndarray
    v: np.ndarray
    adjustments: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        f = np.asarray(self.f, dtype=float)
        v = np.asarray(self.v, dtype=float)
        T = np.asarray(self.adjustments, dtype=float)
        if T.ndim != 2 or T.shape != (a.shape[0], f.shape[0]):
            raise ConfigurationError("adjustments must be an (instruments, sources) matrix")
        if np.any(a <= 0) or np.any(f <= 0) or np.any(T <= 0):
            raise ConfigurationError("areas, fluxes and adjustments must be positive")
        if np.any(v <= 0) or v.shape != a.shape:
            raise ConfigurationError("need one positive variance per instrument")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "adjustments", T)

    @property
    def n_instruments(self) -> int:
        return self.a.shape[0]

    @property
    def n_sources(self) -> int:
        return self.f.shape[0]

    @classmethod
    def uniform_adjustments(cls, a, f, v, adjustment=1.0) -> "TruthSpec":
        a = np.asarray(a, dtype=float)
        f = np.asarray(f, dtype=float)
        T = np.full((a.shape[0], f.shape[0]), float(adjustment))
        return cls(a=a, f=f, v=v, adjustments=T)

    def to_config_lines(self) -> list:
        """key=value serialization understood by the command-line simulator."""
        def fmt(arr):
            return ",".join(repr(float(x)) for x in np.ravel(arr))
        return [
            f"n_instruments={self.n_instruments}",
            f"n_sources={self.n_sources}",
            f"a={fmt(self.a)}",
            f"f={fmt(self.f)}",
            f"v={fmt(self.v)}",
            f"adjustments={fmt(self.adjustments)}",
        ]

    @classmethod
    def from_config_lines(cls, lines) -> "TruthSpec":
        kv = {}
        for raw in lines:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"expected key=value, got {line!r}")
            key, val = line.split("=", 1)
            kv[key.strip()] = val.strip()
        missing = {"n_instruments", "n_sources", "a", "f", "v"} - set(kv)
        if missing:
            raise ConfigurationError(f"truth config missing keys: {sorted(missing)}")
        n = int(kv["n_instruments"])
        m = int(kv["n_sources"])
        def parse(key, size):
            vals = np.array([float(x) for x in kv[key].split(",")])
            if vals.size != size:
                raise ConfigurationError(f"{key} must have {size} values, got {vals.size}")
            return vals
        T = (parse("adjustments", n * m).reshape(n, m)
             if "adjustments" in kv else np.ones((n, m)))
        return cls(a=parse("a", n), f=parse("f", m), v=parse("v", n), adjustments=T)


def _assemble(truth, counts, keep) -> ObservationTable:
    N, M = truth.n_instruments, truth.n_sources
    ii, jj = np.meshgrid(np.arange(N), np.arange(M), indexing="ij")
    keep = keep & (counts > 0)
    dropped = int(np.size(keep) - np.count_nonzero(keep))
    if dropped:
        warnings.warn(f"dropped {dropped} empty cells from the synthetic table")
    i_idx, j_idx = ii[keep], jj[keep]
    if len(set(i_idx.tolist())) != N or len(set(j_idx.tolist())) != M:
        raise DataError("zero-count cells wiped out an entire instrument or source")
    return ObservationTable(
        n_instruments=N, n_sources=M,
        instrument_idx=i_idx, source_idx=j_idx,
        counts=counts[keep], adjustments=truth.adjustments[keep],
    )


def gen_poisson(truth: TruthSpec, seed) -> ObservationTable:
    """Poisson counts with mean T_ij a_i f_j.

    ``seed`` is anything ``np.random.default_rng`` accepts (an int seed or an
    existing Generator).  The log-scale model needs positive counts, so zero
    draws are resampled per cell up to a fixed limit and the cell is dropped
    (with a warning) if still empty; dropping an entire instrument or source
    raises instead.
    """
    rng = np.random.default_rng(seed)
    lam = truth.adjustments * truth.a[:, None] * truth.f[None, :]
    counts = rng.poisson(lam).astype(float)
    keep = np.ones_like(counts, dtype=bool)
    for _ in range(_ZERO_RESAMPLE_LIMIT):
        zero = counts == 0
        if not zero.any():
            break
        counts[zero] = rng.poisson(lam[zero])
    return _assemble(truth, counts, keep)


def gen_lognormal(truth: TruthSpec, seed) -> ObservationTable:
    """Exact model draws: c = T exp(Normal(B + G - v/2, v)), always positive."""
    rng = np.random.default_rng(seed)
    B = np.log(truth.a)[:, None]
    G = np.log(truth.f)[None, :]
    v = truth.v[:, None]
    y = rng.normal(B + G - 0.5 * v, np.sqrt(v))
    counts = truth.adjustments * np.exp(y)
    return _assemble(truth, counts, np.ones_like(counts, dtype=bool))


def apply_pileup(table: ObservationTable, rate: float, scale: float,
                 seed) -> ObservationTable:
    """Count-dependent thinning: detected ~ Binomial(round(c), exp(-rate c / scale)).

    Models detector saturation where bright cells lose proportionally more
    events; ``scale`` is the reference count at which the survival fraction is
    exp(-rate).  rate = 0 keeps the table unchanged up to rounding.  Cells
    thinned to zero are dropped with a warning.
    """
    if rate < 0:
        raise ConfigurationError("pileup rate must be nonnegative")
    if scale <= 0:
        raise ConfigurationError("pileup reference scale must be positive")
    rng = np.random.default_rng(seed)
    c = np.round(table.counts).astype(np.int64)
    if np.any(c <= 0):
        raise DataError("pileup thinning needs integer-like positive counts")
    p = np.exp(-rate * table.counts / scale)
    detected = rng.binomial(c, p).astype(float)
    keep = detected > 0
    dropped = int(np.size(keep) - np.count_nonzero(keep))
    if dropped:
        warnings.warn(f"pileup thinning emptied {dropped} cells; dropping them")
    i_idx = table.instrument_idx[keep]
    j_idx = table.source_idx[keep]
    if (len(set(i_idx.tolist())) != table.n_instruments
            or len(set(j_idx.tolist())) != table.n_sources):
        raise DataError("pileup thinning wiped out an entire instrument or source")
    return ObservationTable(
        n_instruments=table.n_instruments, n_sources=table.n_sources,
        instrument_idx=i_idx, source_idx=j_idx,
        counts=detected[keep], adjustments=table.adjustments[keep],
    )
