"""Figure rendering for run reports. All figures go to files, never a UI."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .evalattack import EvalReport
from .trainer import MetricRow


def _save(fig, path) -> str:
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    os.makedirs(d, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_training_curves(history: tuple[MetricRow, ...], path) -> str:
    """Inner/outer loss and batch accuracies over steps."""
    steps = [r.step for r in history]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 3.6))
    ax1.plot(steps, [r.l_inner for r in history], label="L_inner", lw=1.2)
    outer = [(r.step, r.l_outer) for r in history if r.l_outer is not None]
    if outer:
        ax1.plot([s for s, _ in outer], [v for _, v in outer], label="L_outer", lw=1.2)
    ax1.set_xlabel("step")
    ax1.set_ylabel("loss")
    ax1.legend()
    ax1.set_title("losses")
    src = [(r.step, r.psrc_acc) for r in history if r.psrc_acc is not None]
    trg = [(r.step, r.ptrg_acc) for r in history if r.ptrg_acc is not None]
    if src:
        ax2.plot([s for s, _ in src], [v for _, v in src], label="pseudo-source", lw=1.2)
    if trg:
        ax2.plot([s for s, _ in trg], [v for _, v in trg], label="pseudo-target", lw=1.2)
    ax2.set_xlabel("step")
    ax2.set_ylabel("batch accuracy (%)")
    ax2.set_ylim(0, 100)
    ax2.legend()
    ax2.set_title("batch accuracy")
    fig.suptitle(history[0].mode if history else "empty run")
    return _save(fig, path)


def plot_accuracy_bars(report: EvalReport, path, title: str = "held-out accuracy") -> str:
    """Per-domain accuracy bars with the average drawn as a line."""
    fig, ax = plt.subplots(figsize=(1.2 * max(4, len(report.domain_ids)), 3.6))
    xs = range(len(report.domain_ids))
    ax.bar(xs, report.per_domain, color="#4878b0")
    ax.axhline(report.average, color="#b04848", ls="--", lw=1.2, label=f"average {report.display()['average']}")
    ax.set_xticks(list(xs))
    ax.set_xticklabels(report.domain_ids)
    ax.set_ylabel("accuracy (%)")
    ax.set_ylim(0, 100)
    ax.set_title(title)
    ax.legend()
    return _save(fig, path)


def plot_attack_curves(curves: dict[str, list[tuple[float, float]]], path) -> str:
    """FGSM success rate vs epsilon, one line per labeled model."""
    fig, ax = plt.subplots(figsize=(5.6, 3.6))
    for label, pts in curves.items():
        ax.plot([e for e, _ in pts], [r for _, r in pts], marker="o", ms=3.5, lw=1.2, label=label)
    ax.set_xlabel("epsilon")
    ax.set_ylabel("attack success rate (%)")
    ax.set_ylim(0, 100)
    ax.set_title("FGSM sweep")
    ax.legend()
    return _save(fig, path)
