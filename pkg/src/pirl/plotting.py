"""Matplotlib figures for run and comparison reports (Agg backend, files only)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .env import EpisodeLog  # noqa: E402

_DT = 0.1


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    # fixed metadata keeps reruns byte-identical
    fig.savefig(path, dpi=110, metadata={"Software": None})
    plt.close(fig)
    return path


def trajectories(logs: dict, path, dt: float = _DT, title: str = "") -> Path:
    """Error and state-rate traces, one line per labelled ``EpisodeLog``."""
    fig, (ax_e, ax_r) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    for label, log in logs.items():
        t = dt * np.arange(1, len(log) + 1)
        ax_e.plot(t, log.errors, label=label, lw=1.2)
        ax_r.plot(t, log.rates, label=label, lw=1.0)
    ax_e.axhline(0.0, color="k", lw=0.5)
    ax_e.set_ylabel("error [m]")
    ax_r.set_ylabel("state rate")
    ax_r.set_xlabel("time [s]")
    ax_e.legend(fontsize=8)
    if title:
        ax_e.set_title(title)
    return _save(fig, path)


def tail_errors(logs: dict, path, window: int = 200, dt: float = _DT) -> Path:
    """Zoom on the last ``window`` steps with a log-scaled |error| axis."""
    fig, ax = plt.subplots(figsize=(7, 3.5))
    for label, log in logs.items():
        e = np.abs(log.errors[-window:])
        t = dt * np.arange(len(log) - len(e) + 1, len(log) + 1)
        ax.semilogy(t, np.maximum(e, 1e-12), label=label, lw=1.2)
    ax.set_ylabel("|error| [m]")
    ax.set_xlabel("time [s]")
    ax.legend(fontsize=8)
    return _save(fig, path)


def learning_curves(curves: dict, path) -> Path:
    """``curves`` maps a label to rows with ``episode`` and ``undiscounted_return``."""
    fig, (ax_r, ax_s) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    for label, rows in curves.items():
        ep = [r["episode"] for r in rows]
        ax_r.plot(ep, [r["undiscounted_return"] for r in rows], label=label, lw=1.0)
        ax_s.semilogy(ep, [max(r["steady_state_error"], 1e-12) for r in rows], label=label, lw=1.0)
    ax_r.set_ylabel("undiscounted return")
    ax_r.set_yscale("symlog")
    ax_s.set_ylabel("steady-state error [m]")
    ax_s.set_xlabel("episode")
    ax_r.legend(fontsize=8)
    return _save(fig, path)


def cost_curve(costs, path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.semilogy(np.arange(len(costs)), costs, lw=1.0)
    ax.set_xlabel("iteration")
    ax.set_ylabel("accepted cost")
    return _save(fig, path)


def load_logs(paths: dict) -> dict:
    return {k: EpisodeLog.from_csv(p) for k, p in paths.items()}
