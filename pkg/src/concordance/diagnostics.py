"""Chain diagnostics: effective sample size, split-chain R-hat, summaries, agreement."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

from .errors import DataError

# Antithetic chains can push the initial-sequence estimator past n; the report is
# capped at this multiple rather than left unbounded.
ESS_CAP_FACTOR = 10.0


def _autocovariance(x: np.ndarray) -> np.ndarray:
    n = x.shape[0]
    xc = x - x.mean()
    size = int(2 ** np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(xc, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n].real / n
    return acov


def ess(x) -> float:
    """Effective sample size by Geyer's initial monotone sequence estimator.

    Lag pair sums Gamma_m = rho_2m + rho_2m+1 are truncated at the first
    nonpositive value and forced nonincreasing; the result is capped at
    ESS_CAP_FACTOR * n.  A constant sequence has no defined ESS.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] < 4:
        raise DataError("ess needs a 1-d sequence of length >= 4")
    acov = _autocovariance(x)
    if acov[0] <= 0:
        raise DataError("ess is undefined for a constant sequence")
    rho = acov / acov[0]
    n = x.shape[0]

    tau = -1.0
    prev = np.inf
    m = 0
    while 2 * m + 1 < n:
        gamma = rho[2 * m] + rho[2 * m + 1]
        if gamma <= 0:
            break
        gamma = min(gamma, prev)
        prev = gamma
        tau += 2.0 * gamma
        m += 1
    tau = max(tau, 1.0 / ESS_CAP_FACTOR)
    return float(min(n / tau, ESS_CAP_FACTOR * n))


def split_rhat(chains) -> float:
    """Potential scale reduction with each chain split in half.

    Accepts a (n_chains, n_draws) array; a single chain is allowed since the
    split still yields two sequences.
    """
    chains = np.atleast_2d(np.asarray(chains, dtype=float))
    n = chains.shape[1]
    if n < 8:
        raise DataError("split_rhat needs at least 8 draws per chain")
    half = n // 2
    seqs = np.concatenate([chains[:, :half], chains[:, half:2 * half]], axis=0)
    L = seqs.shape[1]
    w = float(np.mean(np.var(seqs, axis=1, ddof=1)))
    b_over_l = float(np.var(np.mean(seqs, axis=1), ddof=1))
    if w == 0:
        raise DataError("split_rhat is undefined for constant chains")
    var_plus = (L - 1) / L * w + b_over_l
    return float(np.sqrt(var_plus / w))


@dataclass(frozen=True)
class ParameterSummary:
    name: str
    scale: str          # "log" or "natural"
    mean: float
    sd: float
    q025: float
    q500: float
    q975: float
    mcse: float
    ess: float
    rhat: float


def _summary_row(name, scale, per_chain) -> ParameterSummary:
    pooled = np.concatenate(per_chain)
    # ess() can exceed a chain's length for antithetic chains; a reported
    # effective size must never exceed the number of draws behind the row.
    total_ess = min(float(sum(ess(c) for c in per_chain)), float(pooled.shape[0]))
    sd = float(np.std(pooled, ddof=1))
    try:
        rhat = split_rhat(np.stack(per_chain))
    except DataError:
        rhat = float("nan")
    q = np.quantile(pooled, [0.025, 0.5, 0.975])
    return ParameterSummary(
        name=name, scale=scale, mean=float(np.mean(pooled)), sd=sd,
        q025=float(q[0]), q500=float(q[1]), q975=float(q[2]),
        mcse=sd / np.sqrt(total_ess), ess=total_ess, rhat=rhat)


def summarize(sequences) -> list:
    """Per-parameter summaries over one or more chains of a single method.

    Log-scale parameters are reported as-is; areas and fluxes additionally get
    natural-scale rows (A, F) computed from the exponentiated draws, and the
    variances are natural scale already.
    """
    if not sequences:
        raise DataError("summarize needs at least one draw sequence")
    if len({s.method for s in sequences}) != 1:
        raise DataError("summarize mixes draw sequences from different methods")
    N = sequences[0].B.shape[1]
    M = sequences[0].G.shape[1]
    rows = []
    for i in range(N):
        rows.append(_summary_row(f"B[{i}]", "log", [s.B[:, i] for s in sequences]))
        rows.append(_summary_row(f"A[{i}]", "natural", [np.exp(s.B[:, i]) for s in sequences]))
    for j in range(M):
        rows.append(_summary_row(f"G[{j}]", "log", [s.G[:, j] for s in sequences]))
        rows.append(_summary_row(f"F[{j}]", "natural", [np.exp(s.G[:, j]) for s in sequences]))
    for i in range(N):
        rows.append(_summary_row(f"v[{i}]", "natural", [s.v[:, i] for s in sequences]))
    return rows


def _method_draws(sequences):
    mats = [s.parameter_matrix() for s in sequences]
    mat = np.concatenate(mats, axis=0)
    names = sequences[0].parameter_names()
    ess_by_param = np.array([
        sum(ess(m[:, k]) for m in mats) for k in range(mat.shape[1])
    ])
    return names, mat, ess_by_param


def agreement_report(sequences_a, sequences_b, *, z_limit=3.0, ks_alpha=0.01) -> dict:
    """Cross-method concordance of two sets of chains targeting the same posterior.

    Per parameter: the mean difference in combined Monte Carlo standard error
    units, and a two-sample KS test on draws thinned to their effective size.
    PASS requires every |z| below z_limit and every KS p-value above ks_alpha.
    """
    names, mat_a, ess_a = _method_draws(sequences_a)
    names_b, mat_b, ess_b = _method_draws(sequences_b)
    if names != names_b:
        raise DataError("agreement_report needs identical parameter spaces")

    rows = []
    for k, name in enumerate(names):
        xa, xb = mat_a[:, k], mat_b[:, k]
        se = np.sqrt(np.var(xa, ddof=1) / ess_a[k] + np.var(xb, ddof=1) / ess_b[k])
        z = (xa.mean() - xb.mean()) / se
        ta = xa[::max(1, int(np.ceil(xa.shape[0] / ess_a[k])))]
        tb = xb[::max(1, int(np.ceil(xb.shape[0] / ess_b[k])))]
        ks = sps.ks_2samp(ta, tb)
        rows.append({"name": name, "z": float(z), "ks_p": float(ks.pvalue)})
    max_z = max(abs(r["z"]) for r in rows)
    min_p = min(r["ks_p"] for r in rows)
    return {
        "method_a": sequences_a[0].method,
        "method_b": sequences_b[0].method,
        "parameters": rows,
        "max_abs_z": max_z,
        "min_ks_p": min_p,
        "pass": bool(max_z < z_limit and min_p > ks_alpha),
    }
