"""Figure rendering for CLI reports.

Metric and timing computation lives in the evaluation module and emits
CSV; this module turns those tables into PNG figures saved next to the
delimited output. Kept separate so nothing else in the library imports
matplotlib.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)


def plot_metric_summary(summary: Mapping, path: str | Path) -> None:
    """Grouped bars of mean recall and NDCG per k."""
    per_k = summary["per_k"]
    ks = sorted(per_k, key=int)
    recalls = [per_k[k]["mean_recall"] for k in ks]
    ndcgs = [per_k[k]["mean_ndcg"] for k in ks]
    positions = range(len(ks))
    fig, ax = plt.subplots(figsize=(6, 4))
    width = 0.38
    ax.bar([p - width / 2 for p in positions], recalls, width,
           label="mean recall", color="#4878a8")
    ax.bar([p + width / 2 for p in positions], ndcgs, width,
           label="mean NDCG", color="#e08214")
    ax.set_xticks(list(positions))
    ax.set_xticklabels([f"k={k}" for k in ks])
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("score")
    ax.set_title("Retrieval quality vs exact oracle")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_training_log(log: Sequence[tuple[int, int, float]],
                      path: str | Path) -> None:
    """Loss per update step with epoch boundaries marked."""
    if not log:
        raise ValueError("empty training log")
    steps = [step for _, step, _ in log]
    losses = [loss for _, _, loss in log]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(steps, losses, lw=1.0, color="#4878a8")
    seen = set()
    for epoch, step, _ in log:
        if epoch not in seen:
            seen.add(epoch)
            if epoch > 1:
                ax.axvline(step, color="#bbbbbb", lw=0.6, ls=":")
    ax.set_xlabel("update step")
    ax.set_ylabel("mean batch loss")
    ax.set_title("Training loss")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_latency(rows: Sequence[tuple[int, float, float]],
                 path: str | Path) -> None:
    """Encode and search medians against repository size."""
    if not rows:
        raise ValueError("no timing rows")
    sizes = [size for size, _, _ in rows]
    encode = [e for _, e, _ in rows]
    search = [s for _, _, s in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(sizes, encode, marker="o", label="encode", color="#4878a8")
    ax.plot(sizes, search, marker="s", label="search", color="#e08214")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("size")
    ax.set_ylabel("median latency (ms)")
    ax.set_title("Latency scaling")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
