"""Figures written next to the run logs."""
from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .experiment import read_rounds  # noqa: E402


def _style(ax):
    ax.spines["right"].set_visible(False)
    ax.spines["top"].set_visible(False)
    ax.grid(alpha=0.3, linewidth=0.5)


def plot_curves(rounds_path, out_path=None, title: str | None = None) -> Path:
    rounds_path = Path(rounds_path)
    out_path = Path(out_path) if out_path else rounds_path.with_name("curves.png")
    recs = [r for r in read_rounds(rounds_path) if "acc" in r]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    xs = [r["round"] for r in recs]
    ax.plot(xs, [r["acc"] for r in recs], marker="o", ms=3, label="ACC")
    if any("asr" in r for r in recs):
        ax.plot(xs, [r.get("asr", float("nan")) for r in recs], marker="s", ms=3, label="ASR")
    ax.set_xlabel("round")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(frameon=False)
    ax.set_title(title or rounds_path.parent.name, fontsize=9)
    _style(ax)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def plot_summary(summary_path, out_path=None) -> Path | None:
    summary_path = Path(summary_path)
    with open(summary_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return None
    out_path = Path(out_path) if out_path else summary_path.with_name("summary.png")
    labels = [f"{r['attack']}/{r['defense']}\n{r['algorithm']}" for r in rows]
    acc = [float(r["acc"]) for r in rows]
    asr = [float(r["asr"]) if r["asr"] else 0.0 for r in rows]
    fig, ax = plt.subplots(figsize=(max(4, 0.7 * len(rows) + 2), 3.4))
    idx = range(len(rows))
    ax.bar([i - 0.2 for i in idx], acc, width=0.4, label="ACC")
    ax.bar([i + 0.2 for i in idx], asr, width=0.4, label="ASR")
    ax.set_xticks(list(idx))
    ax.set_xticklabels(labels, fontsize=6, rotation=60, ha="right")
    ax.set_ylim(0, 1.05)
    ax.legend(frameon=False, fontsize=8)
    _style(ax)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def render_report(root) -> list[Path]:
    """Render ``curves.png`` beside every ``rounds.jsonl`` under ``root`` and a bar chart per ``summary.csv``."""
    root = Path(root)
    made = []
    for path in sorted(root.rglob("rounds.jsonl")):
        if any("acc" in r for r in read_rounds(path)):
            made.append(plot_curves(path))
    for path in sorted(root.rglob("summary.csv")):
        fig = plot_summary(path)
        if fig is not None:
            made.append(fig)
    return made
