"""Figure rendering for exported runs (all files, no interactive backends)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .harness import LoadedRun

__all__ = [
    "save_accuracy_figure",
    "save_loss_figure",
    "save_participation_figure",
    "save_selection_events_figure",
    "render_report_figures",
]


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_accuracy_figure(runs: list[LoadedRun], path) -> Path:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for run in runs:
        rounds = range(1, len(run.record.accuracy) + 1)
        ax.plot(rounds, run.record.accuracy, label=run.label, linewidth=1.2)
    ax.set_xlabel("round")
    ax.set_ylabel("global test accuracy")
    ax.set_title("Accuracy per round")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    return _save(fig, Path(path))


def save_loss_figure(runs: list[LoadedRun], path) -> Path:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for run in runs:
        rounds = range(1, len(run.record.loss) + 1)
        ax.plot(rounds, run.record.loss, label=run.label, linewidth=1.2)
    ax.set_xlabel("round")
    ax.set_ylabel("global test loss")
    ax.set_title("Loss per round")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    return _save(fig, Path(path))


def save_participation_figure(runs: list[LoadedRun], path) -> Path:
    fig, axes = plt.subplots(
        len(runs), 1, figsize=(7, 2.2 * len(runs)), sharex=True, squeeze=False
    )
    for ax, run in zip(axes.ravel(), runs):
        ids = [rec.client_id for rec in run.tracker]
        counts = [rec.times_selected for rec in run.tracker]
        ax.bar(ids, counts, width=1.0, color="#4878a8")
        ax.set_ylabel("selections")
        ax.set_title(f"{run.label}  (JFI {run.jfi:.3f})", fontsize=9)
    axes.ravel()[-1].set_xlabel("client id")
    return _save(fig, Path(path))


def save_selection_events_figure(runs: list[LoadedRun], path) -> Path:
    """Selection timeline per run; suspension events marked in red."""
    fig, axes = plt.subplots(
        len(runs), 1, figsize=(7, 2.6 * len(runs)), sharex=True, squeeze=False
    )
    for ax, run in zip(axes.ravel(), runs):
        sel_x = [r for r, kind, _, _ in run.events if kind == "SELECT"]
        sel_y = [c for _, kind, c, _ in run.events if kind == "SELECT"]
        sus_x = [r for r, kind, _, _ in run.events if kind == "SUSPEND"]
        sus_y = [c for _, kind, c, _ in run.events if kind == "SUSPEND"]
        ax.scatter(sel_x, sel_y, s=3, color="0.6", label="selected")
        if sus_x:
            ax.scatter(sus_x, sus_y, s=30, color="red", marker="x", label="suspended")
        ax.set_ylabel("client id")
        ax.set_title(run.label, fontsize=9)
        ax.legend(fontsize=7, loc="upper right")
    axes.ravel()[-1].set_xlabel("round")
    return _save(fig, Path(path))


def render_report_figures(runs: list[LoadedRun], out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return [
        save_accuracy_figure(runs, out / "accuracy_vs_round.png"),
        save_loss_figure(runs, out / "loss_vs_round.png"),
        save_participation_figure(runs, out / "participation.png"),
        save_selection_events_figure(runs, out / "selection_events.png"),
    ]
