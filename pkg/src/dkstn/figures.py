"""Figure rendering for the report path.

Every CSV the CLI emits gets a matplotlib rendering written next to it:
skill curves with their thresholds, training/validation loss curves, and
the index-plane trajectory.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import SkillReport


def render_skill_report(report: SkillReport, path, seasons: dict | None = None) -> str:
    """Four panels: correlation, error, amplitude error, phase error by lead."""
    fig, axes = plt.subplots(2, 2, figsize=(10, 7))
    leads = report.leads
    ax = axes[0, 0]
    ax.plot(leads, report.cor, "o-", ms=3, label="all")
    ax.axhline(report.cor_threshold, color="r", ls="--", lw=1,
               label=f"threshold {report.cor_threshold}")
    ax.set_ylabel("COR")
    ax.set_title(f"skill {report.skill_days_cor} d")
    ax = axes[0, 1]
    ax.plot(leads, report.rmse, "o-", ms=3, color="tab:orange", label="all")
    ax.axhline(report.rmse_threshold, color="r", ls="--", lw=1,
               label=f"threshold {report.rmse_threshold}")
    ax.set_ylabel("RMSE")
    ax.set_title(f"skill {report.skill_days_rmse} d")
    ax = axes[1, 0]
    ax.plot(leads, report.amp_error, "o-", ms=3, color="tab:green")
    ax.axhline(0.0, color="k", lw=0.5)
    ax.set_ylabel("amplitude error")
    ax = axes[1, 1]
    ax.plot(leads, report.phase_error, "o-", ms=3, color="tab:purple")
    ax.axhline(0.0, color="k", lw=0.5)
    ax.set_ylabel("phase error (rad)")
    if seasons:
        for name, rep in seasons.items():
            axes[0, 0].plot(rep.leads, rep.cor, lw=1, alpha=0.7, label=name)
            axes[0, 1].plot(rep.leads, rep.rmse, lw=1, alpha=0.7, label=name)
    for ax in axes.flat:
        ax.set_xlabel("lead (days)")
        ax.grid(alpha=0.3)
    axes[0, 0].legend(fontsize=8)
    axes[0, 1].legend(fontsize=8)
    fig.suptitle(f"combined skill: {report.skill_days_combined} days")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)


def render_loss_curves(train_loss, valid_loss, path) -> str:
    fig, ax = plt.subplots(figsize=(6, 4))
    epochs = np.arange(1, len(train_loss) + 1)
    ax.plot(epochs, train_loss, "o-", ms=3, label="train")
    ax.plot(epochs, valid_loss, "s-", ms=3, label="valid")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)


def render_phase_diagram(rmm1, rmm2, path, title: str = "index trajectory") -> str:
    """Trajectory in the (rmm1, rmm2) plane with the unit circle and octants."""
    fig, ax = plt.subplots(figsize=(5.5, 5.5))
    theta = np.linspace(0, 2 * np.pi, 200)
    ax.plot(np.cos(theta), np.sin(theta), "k-", lw=0.8)
    lim = max(2.0, 1.1 * float(np.max(np.hypot(rmm1, rmm2))))
    for angle in np.arange(0, 2 * np.pi, np.pi / 4):
        ax.plot(
            [np.cos(angle), lim * np.cos(angle)],
            [np.sin(angle), lim * np.sin(angle)],
            color="gray", lw=0.5,
        )
    labels_at = np.arange(-np.pi + np.pi / 8, np.pi, np.pi / 4)
    for phase, angle in enumerate(labels_at, start=1):
        ax.text(0.92 * lim * np.cos(angle), 0.92 * lim * np.sin(angle),
                str(phase), ha="center", va="center", fontsize=9, color="gray")
    ax.plot(rmm1, rmm2, "-", lw=1, color="tab:blue")
    ax.plot(rmm1[0], rmm2[0], "go", ms=5, label="start")
    ax.plot(rmm1[-1], rmm2[-1], "r^", ms=5, label="end")
    ax.set_xlim(-lim, lim)
    ax.set_ylim(-lim, lim)
    ax.set_aspect("equal")
    ax.set_xlabel("rmm1")
    ax.set_ylabel("rmm2")
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)
