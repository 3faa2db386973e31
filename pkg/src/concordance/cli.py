"""Command-line interface: fit observed tables, simulate synthetic ones."""
from __future__ import annotations

import csv
import json
import math
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import reporting
from .diagnostics import ParameterSummary, agreement_report, summarize
from .domain import CalibrationPrior, ObservationTable, log_transform
from .errors import ConcordanceError, ConfigurationError, DataError, IngestError
from .estimators import fit_mode
from .samplers import (SamplerConfig, chain_seed, run_block_gibbs, run_exact_iid,
                       run_hmc, run_vanilla_gibbs)
from .synth import TruthSpec, apply_pileup, gen_lognormal, gen_poisson

_RUNNERS = {
    "vanilla-gibbs": run_vanilla_gibbs,
    "block-gibbs": run_block_gibbs,
    "hmc": run_hmc,
    "exact-iid": run_exact_iid,
}

_METHODS = ("mle",) + tuple(sorted(_RUNNERS))

_RHAT_WARN = 1.05

_CONFIG_KEYS = {
    "method": str,
    "iterations": int,
    "warmup": int,
    "chains": int,
    "seed": int,
    "tolerance": float,
    "step_size": float,
    "leapfrog_steps": int,
    "target_accept": float,
    "envelope_margin": float,
    "envelope_prior_mix": float,
    "max_proposals": int,
    "max_escalations": int,
}


def _read_config_file(path) -> dict:
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"{path} line {lineno}: expected key=value, got {line!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in _CONFIG_KEYS:
                raise ConfigurationError(f"{path} line {lineno}: unknown option {key!r}")
            try:
                out[key] = _CONFIG_KEYS[key](val)
            except ValueError:
                raise ConfigurationError(f"{path} line {lineno}: bad value for {key}: {val!r}")
    return out


def _positive_float(raw, what, where):
    try:
        val = float(raw)
    except ValueError:
        raise IngestError(f"{where}: {what} is not a number: {raw!r}")
    if not val > 0 or math.isnan(val):
        raise IngestError(f"{where}: {what} must be positive, got {raw!r}")
    return val


def read_observations(path):
    """Parse instrument,source,count,adjustment rows into a dense-index table.

    String identifiers are mapped to contiguous indices in order of first
    appearance; the maps are returned for the report.  All structural problems
    are collected and reported together with their row numbers.
    """
    instruments: dict = {}
    sources: dict = {}
    rows = []
    problems = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError(f"{path}: file is empty")
        expected = ["instrument", "source", "count", "adjustment"]
        if [h.strip().lower() for h in header] != expected:
            raise IngestError(f"{path}: header must be {','.join(expected)}, got {','.join(header)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            where = f"{path} row {lineno}"
            if len(row) != 4:
                problems.append(f"{where}: expected 4 fields, got {len(row)}")
                continue
            ins, src, cnt, adj = (c.strip() for c in row)
            if not ins or not src:
                problems.append(f"{where}: empty instrument or source identifier")
                continue
            try:
                cnt = _positive_float(cnt, "count", where)
                adj = _positive_float(adj, "adjustment", where)
            except IngestError as exc:
                problems.append(str(exc))
                continue
            i = instruments.setdefault(ins, len(instruments))
            j = sources.setdefault(src, len(sources))
            rows.append((lineno, i, j, cnt, adj))

    seen = {}
    for lineno, i, j, cnt, adj in rows:
        if (i, j) in seen:
            problems.append(
                f"{path} row {lineno}: duplicate entry for ({_label(instruments, i)}, "
                f"{_label(sources, j)}), first at row {seen[(i, j)]}")
        else:
            seen[(i, j)] = lineno
    if problems:
        raise IngestError("; ".join(problems[:20]))
    if not rows:
        raise IngestError(f"{path}: no data rows")
    table = ObservationTable(
        n_instruments=len(instruments), n_sources=len(sources),
        instrument_idx=[r[1] for r in rows], source_idx=[r[2] for r in rows],
        counts=[r[3] for r in rows], adjustments=[r[4] for r in rows],
    )
    return table, instruments, sources


def _label(mapping, idx):
    for name, k in mapping.items():
        if k == idx:
            return name
    return str(idx)


def read_calibration(path, instruments, improper_variance_prior=False) -> CalibrationPrior:
    """Parse instrument,a,tau[,alpha,beta] rows; tau accepts 'inf' for flat."""
    n = len(instruments)
    b = np.full(n, np.nan)
    tau = np.full(n, np.nan)
    alpha = np.full(n, 2.0)
    beta = np.full(n, 0.1)
    seen = set()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip().lower() for h in next(reader)]
        except StopIteration:
            raise IngestError(f"{path}: file is empty")
        if header not in (["instrument", "a", "tau"],
                          ["instrument", "a", "tau", "alpha", "beta"]):
            raise IngestError(
                f"{path}: header must be instrument,a,tau or instrument,a,tau,alpha,beta")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            where = f"{path} row {lineno}"
            if len(row) != len(header):
                raise IngestError(f"{where}: expected {len(header)} fields, got {len(row)}")
            name = row[0].strip()
            if name not in instruments:
                raise IngestError(f"{where}: instrument {name!r} does not appear in the observations")
            i = instruments[name]
            if i in seen:
                raise IngestError(f"{where}: duplicate calibration for instrument {name!r}")
            seen.add(i)
            a_val = _positive_float(row[1], "a", where)
            t_raw = row[2].strip().lower()
            t_val = np.inf if t_raw in ("inf", "infinity") else _positive_float(row[2], "tau", where)
            b[i] = np.log(a_val)
            tau[i] = t_val
            if len(header) == 5:
                alpha[i] = _positive_float(row[3], "alpha", where)
                beta[i] = _positive_float(row[4], "beta", where)
    missing = [name for name, i in instruments.items() if i not in seen]
    if missing:
        raise IngestError(f"{path}: missing calibration rows for instruments {missing}")
    try:
        return CalibrationPrior(b=b, tau=tau, alpha=alpha, beta=beta,
                                variance_prior_improper=improper_variance_prior)
    except ConfigurationError as exc:
        raise IngestError(f"{path}: {exc}")


def ingest(observations, calibration, improper_variance_prior=False):
    """Read and cross-validate the observation and calibration files.

    Returns the validated (ObservationTable, CalibrationPrior) pair; identifier
    maps are available through read_observations when the caller needs them.
    """
    table, instruments, _ = read_observations(observations)
    prior = read_calibration(calibration, instruments,
                             improper_variance_prior=improper_variance_prior)
    return table, prior


def _parse_methods(method: str) -> list:
    if method.startswith("compare:"):
        methods = [m.strip() for m in method[len("compare:"):].split(",") if m.strip()]
        if len(methods) < 2:
            raise ConfigurationError("compare: needs at least two methods")
        if "mle" in methods:
            raise ConfigurationError("compare: needs posterior draws; mle cannot take part")
    else:
        methods = [method]
    for m in methods:
        if m not in _METHODS:
            raise ConfigurationError(
                f"unknown method {m!r}; choose from {', '.join(_METHODS)}")
    if len(set(methods)) != len(methods):
        raise ConfigurationError("compare: lists a method twice")
    return methods


def _point_rows(state) -> list:
    """Summary rows for a mode fit: point estimates only, no spread columns."""
    nan = float("nan")
    rows = []
    def row(name, scale, value):
        rows.append(ParameterSummary(
            name=name, scale=scale, mean=float(value), sd=nan,
            q025=nan, q500=nan, q975=nan, mcse=nan, ess=nan, rhat=nan))
    for i, b in enumerate(state.B):
        row(f"B[{i}]", "log", b)
        row(f"A[{i}]", "natural", math.exp(b))
    for j, g in enumerate(state.G):
        row(f"G[{j}]", "log", g)
        row(f"F[{j}]", "natural", math.exp(g))
    for i, v in enumerate(state.v):
        row(f"v[{i}]", "natural", v)
    return rows


@click.group()
def main():
    """Calibration concordance: shrinkage estimation of instrument effective areas."""


@main.command()
@click.argument("observations", type=click.Path(exists=True, dir_okay=False))
@click.argument("calibration", type=click.Path(exists=True, dir_okay=False))
@click.option("--method", default=None,
              help="mle for the posterior mode, or a sampler: vanilla-gibbs, "
                   "block-gibbs, hmc, exact-iid, or compare:m1,m2[,...] to "
                   "cross-check several samplers. [default: block-gibbs]")
@click.option("--iterations", type=int, default=None, help="Total draws per chain. [default: 4000]")
@click.option("--warmup", type=int, default=None, help="Discarded initial draws. [default: 1000]")
@click.option("--chains", type=int, default=None, help="Independent chains. [default: 2]")
@click.option("--seed", type=int, default=None, help="Base RNG seed. [default: 0]")
@click.option("--tolerance", type=float, default=None,
              help="Mode-fit convergence tolerance. [default: 1e-8]")
@click.option("--improper-variance-prior", is_flag=True,
              help="Use p(v) ~ 1/v instead of the inverse-gamma prior.")
@click.option("--step-size", type=float, default=None,
              help="Fixed leapfrog step size (hmc); default is warmup adaptation.")
@click.option("--leapfrog-steps", type=int, default=None, help="Leapfrog steps (hmc). [default: 32]")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="key=value file with sampler options; flags take precedence.")
@click.option("--output-dir", type=click.Path(file_okay=False), default="concordance-out",
              show_default=True)
@click.option("--emit-draws", is_flag=True, help="Also write every post-warmup draw to draws.csv.")
@click.option("--emit-plot-data", is_flag=True,
              help="Also write per-parameter histogram tables under plot_data/.")
@click.option("--no-figures", is_flag=True, help="Skip rendering PNG figures.")
def fit(observations, calibration, method, iterations, warmup, chains, seed,
        tolerance, improper_variance_prior, step_size, leapfrog_steps, config_path,
        output_dir, emit_draws, emit_plot_data, no_figures):
    """Fit the concordance model to OBSERVATIONS using CALIBRATION priors.

    OBSERVATIONS is a CSV with header instrument,source,count,adjustment and one
    row per measured pair.  CALIBRATION is a CSV with header instrument,a,tau
    (optionally alpha,beta) giving the prior location and spread of each
    effective area; tau=inf means a flat prior.  Outputs are written only under
    --output-dir: summary.csv, report.json, and figures/ unless disabled.
    """
    try:
        _run_fit(observations, calibration, method, iterations, warmup, chains, seed,
                 tolerance, improper_variance_prior, step_size, leapfrog_steps,
                 config_path, output_dir, emit_draws, emit_plot_data, no_figures)
    except (IngestError, ConfigurationError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    except DataError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    except ConcordanceError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(3)


def _run_fit(observations, calibration, method, iterations, warmup, chains, seed,
             tolerance, improper_variance_prior, step_size, leapfrog_steps,
             config_path, output_dir, emit_draws, emit_plot_data, no_figures):
    t_start = time.perf_counter()
    file_cfg = _read_config_file(config_path) if config_path else {}

    def resolve(flag_value, key, default):
        if flag_value is not None:
            return flag_value
        return file_cfg.get(key, default)

    method = resolve(method, "method", "block-gibbs")
    iterations = resolve(iterations, "iterations", 4000)
    warmup = resolve(warmup, "warmup", 1000)
    chains = resolve(chains, "chains", 2)
    seed = resolve(seed, "seed", 0)
    tolerance = resolve(tolerance, "tolerance", 1e-8)
    step_size = resolve(step_size, "step_size", None)
    leapfrog_steps = resolve(leapfrog_steps, "leapfrog_steps", 32)

    methods = _parse_methods(method)
    point_only = methods == ["mle"]
    if point_only and (emit_draws or emit_plot_data):
        raise ConfigurationError("--emit-draws/--emit-plot-data need posterior draws; "
                                 "mle produces a point estimate")
    config = SamplerConfig(
        iterations=iterations, warmup=warmup, chains=chains, seed=seed,
        tolerance=tolerance, step_size=step_size, leapfrog_steps=leapfrog_steps,
        target_accept=file_cfg.get("target_accept", 0.8),
        envelope_margin=file_cfg.get("envelope_margin", 0.5),
        envelope_prior_mix=file_cfg.get("envelope_prior_mix", 0.15),
        max_proposals=file_cfg.get("max_proposals", 10_000_000),
        max_escalations=file_cfg.get("max_escalations", 3),
    )

    table, instruments, sources = read_observations(observations)
    prior = read_calibration(calibration, instruments,
                             improper_variance_prior=improper_variance_prior)
    data = log_transform(table)

    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)

    runs = {}
    runtimes = {}
    summaries = {}
    warnings_list = []
    mode_stats = None
    if point_only:
        t0 = time.perf_counter()
        result = fit_mode(data, prior, tolerance=tolerance)
        runtimes["mle"] = round(time.perf_counter() - t0, 3)
        summaries["mle"] = _point_rows(result.state)
        mode_stats = {
            "iterations": result.iterations,
            "converged": bool(result.converged),
            "final_max_update": float(result.final_max_update),
            "variance_floor_active": [bool(f) for f in result.boundary_flags],
        }
        if not result.converged:
            warnings_list.append(
                f"mle: mode fit stopped at the iteration limit "
                f"(last update {result.final_max_update:.3g} > tolerance {tolerance:.3g})")
    else:
        for m in methods:
            t0 = time.perf_counter()
            runs[m] = _RUNNERS[m](data, prior, config)
            runtimes[m] = round(time.perf_counter() - t0, 3)
        summaries = {m: summarize(runs[m]) for m in methods}

    primary = methods[0]
    reporting.write_summary_csv(out / "summary.csv", summaries[primary])
    per_method_paths = {}
    if len(methods) > 1:
        for m in methods:
            p = out / f"summary_{m}.csv"
            reporting.write_summary_csv(p, summaries[m])
            per_method_paths[m] = str(p)

    agreements = []
    if len(methods) > 1:
        for x in range(len(methods)):
            for y in range(x + 1, len(methods)):
                agreements.append(agreement_report(runs[methods[x]], runs[methods[y]]))

    for m in methods:
        finite_rhats = [r.rhat for r in summaries[m] if math.isfinite(r.rhat)]
        worst = max(finite_rhats) if finite_rhats else float("nan")
        if math.isfinite(worst) and worst > _RHAT_WARN:
            warnings_list.append(f"{m}: max split R-hat {worst:.3f} exceeds {_RHAT_WARN}")
        for s in runs.get(m, ()):
            if s.stats.get("divergence_warning"):
                warnings_list.append(
                    f"{m} chain {s.chain_id}: divergence rate "
                    f"{s.stats['divergence_rate']:.3%} exceeds 1%")
    for rep in agreements:
        if not rep["pass"]:
            warnings_list.append(
                f"agreement {rep['method_a']} vs {rep['method_b']} failed "
                f"(max |z| {rep['max_abs_z']:.2f}, min KS p {rep['min_ks_p']:.4f})")

    artifacts = {"summary_csv": str(out / "summary.csv")}
    if per_method_paths:
        artifacts["summary_by_method"] = per_method_paths
    if emit_draws:
        reporting.write_draws_csv(out / "draws.csv", runs[primary])
        artifacts["draws_csv"] = str(out / "draws.csv")
    if emit_plot_data:
        artifacts["plot_data"] = reporting.write_plot_data(out / "plot_data", runs[primary])
    if not no_figures and not point_only:
        artifacts["figures"] = reporting.render_figures(out / "figures", runs[primary])

    status = "WARN" if warnings_list else "OK"
    report = {
        "command": "fit",
        "status": status,
        "warnings": warnings_list,
        "inputs": {
            "observations": {"path": str(observations),
                             "sha256": reporting.file_sha256(observations)},
            "calibration": {"path": str(calibration),
                            "sha256": reporting.file_sha256(calibration)},
        },
        "config": {
            "methods": methods, "iterations": config.iterations, "warmup": config.warmup,
            "chains": config.chains, "seed": config.seed,
            "tolerance": config.tolerance,
            "improper_variance_prior": bool(improper_variance_prior),
            "step_size": config.step_size, "leapfrog_steps": config.leapfrog_steps,
            "target_accept": config.target_accept,
            "envelope_margin": config.envelope_margin,
            "envelope_prior_mix": config.envelope_prior_mix,
        },
        "index_maps": {"instruments": instruments, "sources": sources},
        "chain_seeds": {m: [s.seed for s in runs[m]] for m in runs},
        "sampler_stats": {m: [_json_safe(s.stats) for s in runs[m]] for m in runs},
        "mode_fit": mode_stats,
        "diagnostics": {
            m: [{"name": r.name, "scale": r.scale, "ess": _json_float(r.ess),
                 "rhat": _json_float(r.rhat)} for r in summaries[m]]
            for m in methods
        },
        "agreement": [_json_safe(a) for a in agreements] if agreements else None,
        "artifacts": artifacts,
        "summary_sha256": reporting.file_sha256(out / "summary.csv"),
        "runtime_seconds": {**runtimes, "total": round(time.perf_counter() - t_start, 3)},
    }
    reporting.write_report_json(out / "report.json", report)

    click.echo(f"status: {status}")
    for w in warnings_list:
        click.echo(f"warning: {w}")
    click.echo(f"wrote {out / 'summary.csv'}")
    click.echo(f"wrote {out / 'report.json'}")


def _json_float(x):
    x = float(x)
    return x if math.isfinite(x) else None


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return _json_float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return [_json_safe(v) for v in obj.tolist()]
    return obj


@main.command()
@click.argument("truth_config", type=click.Path(exists=True, dir_okay=False))
@click.option("--generator", type=click.Choice(["poisson", "lognormal"]), default="poisson",
              show_default=True)
@click.option("--pileup-rate", type=float, default=0.0, show_default=True,
              help="Count-dependent thinning rate applied after generation.")
@click.option("--pileup-scale", type=float, default=None,
              help="Reference count at which the pileup survival fraction is "
                   "exp(-rate); defaults to the mean generated count.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--tau", type=float, default=0.1, show_default=True,
              help="Prior spread written into the emitted calibration file.")
@click.option("--output-dir", type=click.Path(file_okay=False), default="concordance-sim",
              show_default=True)
def simulate(truth_config, generator, pileup_rate, pileup_scale, seed, tau, output_dir):
    """Generate a synthetic observation table from a TRUTH_CONFIG key=value file.

    The config needs n_instruments, n_sources and comma-separated a, f, v (and
    optionally a flattened adjustments matrix).  Writes observations.csv plus a
    matching calibration.csv and truth.json under --output-dir.
    """
    try:
        _run_simulate(truth_config, generator, pileup_rate, pileup_scale, seed, tau,
                      output_dir)
    except (IngestError, ConfigurationError, DataError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    except ConcordanceError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(3)


def _run_simulate(truth_config, generator, pileup_rate, pileup_scale, seed, tau,
                  output_dir):
    with open(truth_config) as fh:
        truth = TruthSpec.from_config_lines(fh.readlines())
    rng = np.random.default_rng(seed)
    table = gen_poisson(truth, rng) if generator == "poisson" else gen_lognormal(truth, rng)
    if pileup_rate > 0:
        if pileup_scale is None:
            pileup_scale = float(table.counts.mean())
        table = apply_pileup(table, pileup_rate, pileup_scale, rng)

    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    obs_path = out / "observations.csv"
    with open(obs_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["instrument", "source", "count", "adjustment"])
        for k in range(table.n_entries):
            writer.writerow([
                f"ins{table.instrument_idx[k]}", f"src{table.source_idx[k]}",
                f"{table.counts[k]:.10g}", f"{table.adjustments[k]:.10g}",
            ])
    cal_path = out / "calibration.csv"
    with open(cal_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["instrument", "a", "tau", "alpha", "beta"])
        for i in range(truth.n_instruments):
            writer.writerow([f"ins{i}", f"{truth.a[i]:.10g}", f"{tau:.10g}", "2", "0.1"])
    truth_path = out / "truth.json"
    with open(truth_path, "w") as fh:
        json.dump({
            "a": truth.a.tolist(), "f": truth.f.tolist(), "v": truth.v.tolist(),
            "adjustments": truth.adjustments.tolist(),
            "generator": generator, "pileup_rate": pileup_rate,
            "pileup_scale": pileup_scale, "seed": seed,
        }, fh, indent=2, sort_keys=True)
        fh.write("\n")
    click.echo(f"wrote {obs_path}")
    click.echo(f"wrote {cal_path}")
    click.echo(f"wrote {truth_path}")


if __name__ == "__main__":
    main()
