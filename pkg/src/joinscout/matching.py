"""Cell matching and exact column joinability.

Joinability from a query column to a candidate column is the fraction of
query cells that have at least one candidate cell within distance ``tau``
in embedding space. The top-k scan here is a deliberately unpruned
O(|query| * |candidate|) reference in float64: it serves as ground truth
for everything built on top of it, not as the fast path.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

# Row block size for pairwise distance computation; bounds peak memory.
_BLOCK = 256


@dataclass(frozen=True)
class MatchConfig:
    """Distance threshold for cell matching (euclidean only)."""

    tau: float = 0.2
    distance: str = "euclidean"

    def __post_init__(self) -> None:
        if self.tau < 0:
            raise ValueError(f"tau must be >= 0, got {self.tau}")
        if self.distance != "euclidean":
            raise ValueError(f"unsupported distance: {self.distance!r}")

    @property
    def sim_threshold_alpha(self) -> float:
        """Dot-product threshold equivalent to tau on unit vectors."""
        return 1.0 - self.tau * self.tau / 2.0


@dataclass(frozen=True)
class JoinabilityScore:
    """Count of matched query cells over the query size."""

    matched: int
    query_size: int
    value: float = field(init=False)

    def __post_init__(self) -> None:
        if self.query_size <= 0:
            raise ValueError("query_size must be positive")
        if not 0 <= self.matched <= self.query_size:
            raise ValueError("matched must lie in [0, query_size]")
        object.__setattr__(self, "value", self.matched / self.query_size)


def _check_dims(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(
            f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}")


def cells_match(a: np.ndarray, b: np.ndarray, cfg: MatchConfig) -> bool:
    """True iff the euclidean distance between a and b is <= tau."""
    _check_dims(a, b)
    diff = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return float(diff @ diff) <= cfg.tau * cfg.tau


def _min_sq_dists(query: np.ndarray, candidate: np.ndarray) -> np.ndarray:
    """Per query row, the squared distance to its nearest candidate row."""
    out = np.empty(query.shape[0], dtype=np.float64)
    for start in range(0, query.shape[0], _BLOCK):
        block = query[start:start + _BLOCK]
        diff = block[:, None, :] - candidate[None, :, :]
        out[start:start + _BLOCK] = np.einsum("ijk,ijk->ij", diff, diff).min(axis=1)
    return out


def joinability(query: np.ndarray, candidate: np.ndarray,
                cfg: MatchConfig) -> JoinabilityScore:
    """Exact joinability from query to candidate under cfg.tau."""
    query = np.asarray(query, dtype=np.float64)
    candidate = np.asarray(candidate, dtype=np.float64)
    if query.size == 0 or candidate.size == 0:
        raise ValueError("both column matrices must be non-empty")
    _check_dims(query, candidate)
    matched = int((_min_sq_dists(query, candidate) <= cfg.tau * cfg.tau).sum())
    return JoinabilityScore(matched=matched, query_size=query.shape[0])


def joinability_sim_form(query: np.ndarray, candidate: np.ndarray,
                         alpha: float) -> JoinabilityScore:
    """Joinability with the similarity threshold form.

    A query row counts as matched when its maximum dot product against
    candidate rows is strictly greater than ``alpha``. On unit vectors this
    agrees with the distance form at alpha = 1 - tau^2/2 away from the
    boundary; the boundary itself is excluded here and included there.
    """
    query = np.asarray(query, dtype=np.float64)
    candidate = np.asarray(candidate, dtype=np.float64)
    if query.size == 0 or candidate.size == 0:
        raise ValueError("both column matrices must be non-empty")
    _check_dims(query, candidate)
    best = (query @ candidate.T).max(axis=1)
    return JoinabilityScore(matched=int((best > alpha).sum()),
                            query_size=query.shape[0])


def exact_topk(query: np.ndarray,
               columns: Iterable[tuple[str, np.ndarray]],
               k: int, cfg: MatchConfig) -> list[tuple[str, JoinabilityScore]]:
    """Brute-force ground-truth top-k columns by joinability.

    Returns min(k, #columns) entries sorted by value descending with ties
    broken by column id ascending.
    """
    if k <= 0:
        raise ValueError(f"k must be >= 1, got {k}")
    scored = [(cid, joinability(query, mat, cfg)) for cid, mat in columns]
    if not scored:
        raise ValueError("column repository is empty")
    scored.sort(key=lambda item: (-item[1].matched, item[0]))
    return scored[:k]


def write_oracle_csv(results: dict[str, list[tuple[str, JoinabilityScore]]],
                     path: str | Path) -> None:
    """Dump per-query oracle rankings as CSV rows."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["query_id", "rank", "column_id", "matched",
                         "query_size", "value"])
        for query_id, ranking in results.items():
            for rank, (column_id, score) in enumerate(ranking, start=1):
                writer.writerow([query_id, rank, column_id, score.matched,
                                 score.query_size, f"{score.value:.10g}"])


def read_oracle_csv(path: str | Path) -> dict[str, list[tuple[str, JoinabilityScore]]]:
    """Inverse of write_oracle_csv; rows must be grouped by query."""
    results: dict[str, list[tuple[str, JoinabilityScore]]] = {}
    with open(path, "r", newline="", encoding="utf-8") as handle:
        for row in csv.DictReader(handle):
            score = JoinabilityScore(matched=int(row["matched"]),
                                     query_size=int(row["query_size"]))
            results.setdefault(row["query_id"], []).append(
                (row["column_id"], score))
    return results
