"""Static figures for run reports (Agg backend, no timestamps in output)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)
    return path


def field_map(path, grid, values, title: str, label: str = "") -> Path:
    """Space-time colour map of a real field."""
    fig, ax = plt.subplots(figsize=(6, 4))
    im = ax.pcolormesh(grid.x, grid.t, values, shading="auto", cmap="viridis")
    fig.colorbar(im, ax=ax, label=label)
    ax.set_xlabel("x")
    ax.set_ylabel("t")
    ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def trajectories(path, te, grid=None, rho=None, max_paths: int = 60) -> Path:
    """World-lines over an optional density background."""
    fig, ax = plt.subplots(figsize=(6, 4))
    if grid is not None and rho is not None:
        ax.pcolormesh(grid.x, grid.t, rho, shading="auto", cmap="Greys")
    idx = np.linspace(0, te.n_seeds - 1, min(max_paths, te.n_seeds)).astype(int)
    for i in np.unique(idx):
        path_i = te.path(i)
        ax.plot(path_i, te.t[: path_i.size], lw=0.8, color="tab:red" if te.truncated[i] else "tab:blue")
    ax.set_xlabel("x")
    ax.set_ylabel("t")
    ax.set_title(f"{te.n_seeds} trajectories")
    fig.tight_layout()
    return _save(fig, path)


def residual_curves(path, t, series: dict, title: str) -> Path:
    """Per-slice maxima of several residual fields on a log scale."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, vals in series.items():
        vals = np.asarray(vals, dtype=float)
        ax.semilogy(t, np.maximum(vals, 1e-300), label=name)
    ax.set_xlabel("t")
    ax.set_ylabel("max |residual|")
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def lowspeed_scaling(path, speeds, columns: dict) -> Path:
    """Discrepancies against v/c on log-log axes."""
    fig, ax = plt.subplots(figsize=(5, 4))
    for name, vals in columns.items():
        ax.loglog(speeds, vals, "o-", label=name)
    s = np.asarray(speeds, dtype=float)
    ref = np.asarray(next(iter(columns.values())), dtype=float)
    ax.loglog(s, ref[0] * (s / s[0]) ** 2, "k--", lw=0.8, label="slope 2")
    ax.set_xlabel("v/c")
    ax.set_ylabel("discrepancy")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def check_bars(path, checks: dict, title: str) -> Path:
    """Residual values of named checks on a log scale."""
    names = sorted(checks)
    vals = [max(abs(float(checks[n])), 1e-300) for n in names]
    fig, ax = plt.subplots(figsize=(6, 0.25 * len(names) + 1.5))
    ax.barh(range(len(names)), vals)
    ax.set_xscale("log")
    ax.set_yticks(range(len(names)))
    ax.set_yticklabels(names, fontsize=6)
    ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)
