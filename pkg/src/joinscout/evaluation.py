"""Retrieval-quality metrics and a small timing harness.

Recall@k compares id sets; NDCG@k weighs positions by true joinability
with raw (unexponentiated) gains; the rank-shift statistic is the
Spearman-style 6*sum(d^2)/(s(s^2-1)) distance between two rankings of the
same ids. Timing helpers report medians, which are robust to scheduler
jitter at the run counts used here.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence


@dataclass(frozen=True)
class RankedResult:
    """Ordered retrieval result for one query."""

    query_id: str
    items: tuple[tuple[str, float], ...]

    def __post_init__(self) -> None:
        ids = [cid for cid, _ in self.items]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate ids in result for {self.query_id}")
        scores = [score for _, score in self.items]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise ValueError(
                f"scores must be non-increasing for {self.query_id}")

    def top_ids(self, k: int) -> list[str]:
        return [cid for cid, _ in self.items[:k]]


def recall_at_k(approx: RankedResult, truth: RankedResult, k: int) -> float:
    """|top-k id intersection| / k."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    shared = set(approx.top_ids(k)) & set(truth.top_ids(k))
    return len(shared) / k


def _dcg(ids: Sequence[str], gains: Mapping[str, float], k: int) -> float:
    total = 0.0
    for i, cid in enumerate(ids[:k], start=1):
        if cid not in gains:
            raise ValueError(f"missing joinability for column {cid!r}")
        total += gains[cid] / math.log2(i + 1)
    return total


def ndcg_at_k(approx: RankedResult, truth: RankedResult,
              joinability: Mapping[str, float], k: int) -> float:
    """DCG of the approximate list over DCG of the true list.

    Gains are raw joinability values. A zero ideal DCG makes the measure
    undefined; it is pinned to 1 when the approximate DCG is also zero
    (nothing joinable to find) and 0 otherwise.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    dcg = _dcg(approx.top_ids(k), joinability, k)
    idcg = _dcg(truth.top_ids(k), joinability, k)
    if idcg == 0.0:
        return 1.0 if dcg == 0.0 else 0.0
    return dcg / idcg


def spearman_shift(ranking1: Sequence[str], ranking2: Sequence[str]) -> float:
    """6*sum(d_i^2) / (s(s^2-1)) over rank differences of a shared id set.

    0 means identical rankings; a full reversal reaches 2.
    """
    if len(ranking1) < 2:
        raise ValueError("rankings need at least 2 entries")
    if len(set(ranking1)) != len(ranking1):
        raise ValueError("ranking1 contains duplicate ids")
    if set(ranking1) != set(ranking2) or len(ranking1) != len(ranking2):
        raise ValueError("rankings must cover the same id set")
    position2 = {cid: i for i, cid in enumerate(ranking2)}
    s = len(ranking1)
    total = sum((i - position2[cid]) ** 2
                for i, cid in enumerate(ranking1))
    return 6.0 * total / (s * (s * s - 1))


# -- reports ---------------------------------------------------------


def write_metric_report(rows: Sequence[tuple[str, int, float, float]],
                        csv_path: str | Path,
                        json_path: str | Path | None = None) -> dict:
    """Persist per-query metrics and return the aggregate summary.

    rows are (query_id, k, recall, ndcg); the JSON summary holds means
    per k over queries.
    """
    with open(csv_path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["query_id", "k", "recall", "ndcg"])
        for query_id, k, recall, ndcg in rows:
            writer.writerow([query_id, k, f"{recall:.10g}", f"{ndcg:.10g}"])
    summary: dict = {"per_k": {}}
    ks = sorted({k for _, k, _, _ in rows})
    for k in ks:
        recalls = [r for _, kk, r, _ in rows if kk == k]
        ndcgs = [n for _, kk, _, n in rows if kk == k]
        summary["per_k"][str(k)] = {
            "mean_recall": sum(recalls) / len(recalls),
            "mean_ndcg": sum(ndcgs) / len(ndcgs),
            "n_queries": len(recalls),
        }
    if json_path is not None:
        with open(json_path, "w", encoding="utf-8") as handle:
            json.dump(summary, handle, indent=2)
    return summary


def median_ms(fn: Callable[[], object], runs: int = 50) -> float:
    """Median wall-clock milliseconds of fn over the given runs."""
    if runs < 1:
        raise ValueError("runs must be >= 1")
    samples = []
    for _ in range(runs):
        start = time.perf_counter()
        fn()
        samples.append((time.perf_counter() - start) * 1000.0)
    samples.sort()
    mid = len(samples) // 2
    if len(samples) % 2:
        return samples[mid]
    return 0.5 * (samples[mid - 1] + samples[mid])


def write_timing_csv(rows: Sequence[tuple[int, float, float]],
                     path: str | Path) -> None:
    """Persist (size, encode_ms, search_ms) rows."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["size", "encode_ms", "search_ms"])
        for size, encode, search in rows:
            writer.writerow([size, f"{encode:.6g}", f"{search:.6g}"])
