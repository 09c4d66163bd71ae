"""CSV and figure emitters for analysis runs.

Every delimited file starts with '# key=value' metadata lines (config hash,
seed, tolerances, package version) so runs are reproducible from their
outputs alone; report figures are rendered next to the delimited files.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from . import __version__
from .evaluation import NormDistribution, TrajectoryStats


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def run_metadata(config: dict, **extra) -> dict:
    meta = {
        "tool": f"pchinf {__version__}",
        "config_hash": config_hash(config),
    }
    meta.update({k: config[k] for k in sorted(config)})
    meta.update(extra)
    return meta


def write_csv(path, columns: dict, meta: dict | None = None) -> Path:
    """Write named columns with a '#' metadata header; returns the path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(columns)
    cols = [np.atleast_1d(np.asarray(columns[k])) for k in names]
    n = len(cols[0])
    if any(len(c) != n for c in cols):
        raise ValueError("columns have unequal lengths")
    with path.open("w", newline="") as f:
        for k, v in (meta or {}).items():
            f.write(f"# {k}={v}\n")
        w = csv.writer(f)
        w.writerow(names)
        for i in range(n):
            w.writerow([_fmt(c[i]) for c in cols])
    return path


def write_matrix_csv(path, M: np.ndarray, meta: dict | None = None) -> Path:
    """Dense matrix dump, one row per line, with metadata header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    M = np.atleast_2d(np.asarray(M))
    with path.open("w", newline="") as f:
        for k, v in (meta or {}).items():
            f.write(f"# {k}={v}\n")
        w = csv.writer(f)
        for row in M:
            w.writerow([_fmt(v) for v in row])
    return path


def read_matrix_csv(path) -> np.ndarray:
    rows = []
    with Path(path).open() as f:
        for line in f:
            if line.startswith("#") or not line.strip():
                continue
            rows.append([float(tok) for tok in line.strip().split(",")])
    return np.array(rows)


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return int(v)
    return v


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def fig_norm_distribution(dists: list[tuple[str, NormDistribution]], path) -> Path:
    """Per-parameter H-infinity norm curves for one or more gains."""
    plt = _pyplot()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    for label, nd in dists:
        if nd.xi.shape[1] == 1:
            ax.plot(nd.xi[:, 0], nd.gamma, label=label, lw=1.2)
        else:
            ax.plot(nd.gamma, label=label, lw=1.2)
    ax.set_xlabel(r"$\xi$" if dists and dists[0][1].xi.shape[1] == 1 else "sample")
    ax.set_ylabel(r"$H_\infty$ norm")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def fig_trajectory_stats(stats: list[TrajectoryStats], path) -> Path:
    """Mean and variance trajectories per state, one panel row per statistic."""
    plt = _pyplot()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n_x = stats[0].mean.shape[1]
    fig, axes = plt.subplots(2, n_x, figsize=(4.0 * n_x, 5.4), squeeze=False)
    for st in stats:
        for i in range(n_x):
            axes[0][i].plot(st.t, st.mean[:, i], label=st.source, lw=1.1)
            axes[1][i].plot(st.t, st.var[:, i], label=st.source, lw=1.1)
    for i in range(n_x):
        axes[0][i].set_title(f"state {i + 1}")
        axes[0][i].set_ylabel("mean" if i == 0 else "")
        axes[1][i].set_ylabel("variance" if i == 0 else "")
        axes[1][i].set_xlabel("t")
        for ax in (axes[0][i], axes[1][i]):
            ax.grid(alpha=0.3)
    axes[0][0].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
