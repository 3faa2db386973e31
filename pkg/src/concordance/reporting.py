"""Report artifacts: delimited summaries, the JSON run report, and figures."""
from __future__ import annotations

import csv
import hashlib
import json
import re
from pathlib import Path

import numpy as np

SUMMARY_COLUMNS = ("name", "scale", "mean", "sd", "q2.5", "q50", "q97.5", "ess", "rhat")


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.10g}"
    return str(x)


def write_summary_csv(path, rows) -> None:
    """Fixed-column summary table; identical inputs produce identical bytes."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SUMMARY_COLUMNS)
        for r in rows:
            writer.writerow([
                r.name, r.scale, _fmt(r.mean), _fmt(r.sd), _fmt(r.q025),
                _fmt(r.q500), _fmt(r.q975), _fmt(r.ess), _fmt(r.rhat),
            ])


def write_draws_csv(path, sequences) -> None:
    names = sequences[0].parameter_names()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["chain", "draw"] + names)
        for s in sequences:
            mat = s.parameter_matrix()
            for k in range(mat.shape[0]):
                writer.writerow([s.chain_id, k] + [_fmt(float(x)) for x in mat[k]])


def _safe_name(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "_", name).strip("_")


def write_plot_data(directory, sequences, bins=60) -> list:
    """Per-parameter histogram tables (bin_left, bin_right, count)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = sequences[0].parameter_names()
    mat = np.concatenate([s.parameter_matrix() for s in sequences], axis=0)
    written = []
    for k, name in enumerate(names):
        counts, edges = np.histogram(mat[:, k], bins=bins)
        out = directory / f"hist_{_safe_name(name)}.csv"
        with open(out, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["bin_left", "bin_right", "count"])
            for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
                writer.writerow([_fmt(float(lo)), _fmt(float(hi)), int(c)])
        written.append(str(out))
    return written


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_report_json(path, report: dict) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


def render_figures(directory, sequences) -> list:
    """Posterior histograms (natural scale) and per-chain traces as PNG files."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    N = sequences[0].B.shape[1]
    M = sequences[0].G.shape[1]
    panels = []
    for i in range(N):
        panels.append((f"A[{i}]", [np.exp(s.B[:, i]) for s in sequences]))
    for j in range(M):
        panels.append((f"F[{j}]", [np.exp(s.G[:, j]) for s in sequences]))
    for i in range(N):
        panels.append((f"v[{i}]", [s.v[:, i] for s in sequences]))

    ncol = 3
    nrow = (len(panels) + ncol - 1) // ncol
    fig, axes = plt.subplots(nrow, ncol, figsize=(4 * ncol, 2.6 * nrow), squeeze=False)
    for ax in axes.ravel():
        ax.set_visible(False)
    for ax, (name, chains) in zip(axes.ravel(), panels):
        ax.set_visible(True)
        ax.hist(np.concatenate(chains), bins=50, color="#4878b0", alpha=0.85)
        ax.set_title(name, fontsize=9)
        ax.tick_params(labelsize=7)
    fig.tight_layout()
    post_path = directory / "posteriors.png"
    fig.savefig(post_path, dpi=110)
    plt.close(fig)

    fig, axes = plt.subplots(nrow, ncol, figsize=(4 * ncol, 2.0 * nrow), squeeze=False)
    for ax in axes.ravel():
        ax.set_visible(False)
    for ax, (name, chains) in zip(axes.ravel(), panels):
        ax.set_visible(True)
        for c in chains:
            ax.plot(c, lw=0.4, alpha=0.8)
        ax.set_title(name, fontsize=9)
        ax.tick_params(labelsize=7)
    fig.tight_layout()
    trace_path = directory / "traces.png"
    fig.savefig(trace_path, dpi=110)
    plt.close(fig)
    return [str(post_path), str(trace_path)]
