"""Self-supervised synthesis of training positives with target joinability.

Each anchor column is split once into a kept part and a residual part. A
positive with target joinability x% keeps a sampled x% of the kept part's
cells, perturbs each sampled cell slightly (validated against the match
threshold, falling back to the original cell when the perturbation drifts
too far), and pads with the residual part so the rest of the positive
looks like unrelated content. Ranked lists stack several such positives
with strictly decreasing targets and are audited with the exact
joinability oracle.

Two synthesis modes exist: text mode perturbs cell strings with one
character edit and re-embeds them; embedding mode perturbs cell vectors
with Gaussian noise and renormalizes. A match threshold of zero disables
perturbation entirely, which is the equi-join setting.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .embedder import EmbeddingError
from .matching import MatchConfig, joinability
from .training import TrainingExample

_RESYNTH_ATTEMPTS = 5
_AUG_OPS = ("swap", "delete", "duplicate", "case_flip")


@dataclass(frozen=True)
class SynthConfig:
    """Knobs for positive-column synthesis."""

    split_ratio: float = 0.5
    score_range: tuple[float, float] = (0.6, 0.9)
    sigma: float = 0.1
    gamma: float = 0.5
    max_shrink: int = 10
    mode: str = "text"
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0 < self.split_ratio < 1:
            raise ValueError(
                f"split_ratio must lie in (0, 1), got {self.split_ratio}")
        lo, hi = self.score_range
        if not (0 < lo < hi <= 1):
            raise ValueError(
                f"score_range must be an interval within (0, 1], got "
                f"{self.score_range}")
        if self.sigma <= 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")
        if not 0 < self.gamma < 1:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.max_shrink < 1:
            raise ValueError(f"max_shrink must be >= 1, got {self.max_shrink}")
        if self.mode not in ("text", "embedding"):
            raise ValueError(f"mode must be 'text' or 'embedding', got "
                             f"{self.mode!r}")


@dataclass(frozen=True)
class RankingList:
    """Ordered synthesized positives for one anchor."""

    anchor_id: str
    anchor: np.ndarray
    positives: tuple[np.ndarray, ...]
    target_scores: tuple[float, ...]
    measured_scores: tuple[float, ...]
    resynth_attempts: int
    ordered: bool

    def to_example(self) -> TrainingExample:
        return TrainingExample(anchor=self.anchor, positives=self.positives,
                               target_scores=self.target_scores)


def split_indices(n: int, ratio: float,
                  rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Disjoint index partition: kept part sized max(1, round(ratio*n)).

    The kept size is clamped so the residual is never empty.
    """
    if n < 4:
        raise ValueError(f"column too small to split: {n} cells (need >= 4)")
    size_a = min(max(1, round(ratio * n)), n - 1)
    perm = rng.permutation(n)
    return perm[:size_a], perm[size_a:]


def split_column(cells: Sequence[str], ratio: float,
                 rng: np.random.Generator) -> tuple[list[str], list[str]]:
    """Partition cell strings into kept and residual parts."""
    idx_a, idx_b = split_indices(len(cells), ratio, rng)
    return [cells[i] for i in idx_a], [cells[i] for i in idx_b]


def _sample_count(x_percent: float, n: int) -> int:
    # ceil with a tolerance: x arrives as score*100 and the product can
    # land a hair above an integer.
    count = math.ceil(x_percent * n / 100.0 - 1e-9)
    return min(max(count, 0), n)


def _augment_text(cell: str, rng: np.random.Generator) -> str:
    """One uniformly chosen character edit; may return the cell unchanged."""
    op = _AUG_OPS[int(rng.integers(len(_AUG_OPS)))]
    if op == "swap":
        if len(cell) < 2:
            return cell
        i = int(rng.integers(len(cell) - 1))
        return cell[:i] + cell[i + 1] + cell[i] + cell[i + 2:]
    i = int(rng.integers(len(cell)))
    if op == "delete":
        return cell[:i] + cell[i + 1:]
    if op == "duplicate":
        return cell[:i] + cell[i] + cell[i:]
    return cell[:i] + cell[i].swapcase() + cell[i + 1:]


def synth_text_positive(kept: Sequence[str], residual: Sequence[str],
                        x_percent: float, embedder, match_cfg: MatchConfig,
                        rng: np.random.Generator) -> list[str]:
    """Positive column of cell strings with target joinability x%.

    Samples ceil(x% * |kept|) cells without replacement, applies one edit
    per cell, keeps the edit only if the edited cell still matches its
    source under the threshold, then shuffles the sample together with the
    residual cells. Threshold zero skips editing so sampled cells are
    verbatim copies.
    """
    if len(kept) == 0:
        raise ValueError("kept part must be non-empty")
    count = _sample_count(x_percent, len(kept))
    picks = rng.choice(len(kept), size=count, replace=False)
    sampled = []
    for i in picks:
        cell = kept[int(i)]
        if match_cfg.tau == 0:
            sampled.append(cell)
            continue
        edited = _augment_text(cell, rng)
        if edited == cell:
            sampled.append(cell)
            continue
        try:
            before = embedder.embed_cell(cell)
            after = embedder.embed_cell(edited)
        except EmbeddingError:
            sampled.append(cell)
            continue
        diff = before - after
        if float(diff @ diff) <= match_cfg.tau * match_cfg.tau:
            sampled.append(edited)
        else:
            sampled.append(cell)
    out = sampled + list(residual)
    order = rng.permutation(len(out))
    return [out[i] for i in order]


def synth_embed_positive(kept: np.ndarray, residual: np.ndarray,
                         x_percent: float, cfg: SynthConfig,
                         match_cfg: MatchConfig,
                         rng: np.random.Generator) -> np.ndarray:
    """Positive column of cell vectors with target joinability x%.

    Sampled rows get Gaussian noise and are renormalized to unit length;
    the noise scale shrinks geometrically up to max_shrink times until the
    perturbed row lies within the match threshold, falling back to the
    unperturbed row. Threshold zero copies rows verbatim.
    """
    kept = np.asarray(kept, dtype=np.float64)
    residual = np.asarray(residual, dtype=np.float64).reshape(
        -1, kept.shape[1])
    if kept.shape[0] == 0:
        raise ValueError("kept part must be non-empty")
    count = _sample_count(x_percent, kept.shape[0])
    picks = rng.choice(kept.shape[0], size=count, replace=False)
    base = kept[picks]
    chosen = base.copy()
    if match_cfg.tau > 0 and count > 0:
        # All still-unperturbed rows retry together at the current scale.
        tau_sq = match_cfg.tau * match_cfg.tau
        pending = np.arange(count)
        sigma = cfg.sigma
        for _ in range(cfg.max_shrink + 1):
            rows = base[pending]
            noisy = rows + rng.normal(0.0, sigma, size=rows.shape)
            norms = np.linalg.norm(noisy, axis=1)
            good = norms > 0
            noisy[good] /= norms[good, None]
            diff = noisy - rows
            ok = good & (np.einsum("ij,ij->i", diff, diff) <= tau_sq)
            chosen[pending[ok]] = noisy[ok]
            pending = pending[~ok]
            if pending.size == 0:
                break
            sigma *= cfg.gamma
    stacked = np.vstack([chosen, residual])
    return stacked[rng.permutation(stacked.shape[0])]


def _draw_scores(s: int, score_range: tuple[float, float],
                 rng: np.random.Generator) -> tuple[float, ...]:
    # One draw per equal-width stratum of the range, so ranked targets are
    # well separated instead of occasionally near-duplicate.
    lo, hi = score_range
    width = (hi - lo) / s
    while True:
        scores = lo + width * (np.arange(s) + rng.uniform(0.0, 1.0, size=s))
        scores = np.sort(scores)[::-1]
        if s == 1 or np.all(np.diff(scores) < 0):
            return tuple(float(v) for v in scores)


def build_ranking_list(anchor_id: str, cells: Sequence[str] | None,
                       matrix: np.ndarray, s: int, cfg: SynthConfig,
                       match_cfg: MatchConfig, embedder,
                       rng: np.random.Generator) -> RankingList:
    """Ordered positives for one anchor, audited with the exact oracle.

    One split is shared by all s positives. If the measured joinabilities
    come out increasing anywhere, the list is resynthesized with fresh
    scores up to 5 times and then accepted as-is with ordered=False.
    """
    if s < 1:
        raise ValueError(f"rank list length must be >= 1, got {s}")
    matrix = np.asarray(matrix, dtype=np.float64)
    idx_a, idx_b = split_indices(matrix.shape[0], cfg.split_ratio, rng)
    anchor = matrix[idx_a]
    for attempt in range(1, _RESYNTH_ATTEMPTS + 1):
        targets = _draw_scores(s, cfg.score_range, rng)
        positives = []
        for score in targets:
            x_percent = score * 100.0
            if cfg.mode == "text":
                if cells is None or embedder is None:
                    raise ValueError(
                        "text mode needs cell strings and an embedder")
                kept = [cells[i] for i in idx_a]
                residual = [cells[i] for i in idx_b]
                texts = synth_text_positive(kept, residual, x_percent,
                                            embedder, match_cfg, rng)
                positives.append(np.stack([embedder.embed_cell(t)
                                           for t in texts]))
            else:
                positives.append(synth_embed_positive(
                    matrix[idx_a], matrix[idx_b], x_percent, cfg, match_cfg,
                    rng))
        measured = tuple(joinability(anchor, pos, match_cfg).value
                         for pos in positives)
        ordered = all(measured[j] >= measured[j + 1]
                      for j in range(len(measured) - 1))
        if ordered or attempt == _RESYNTH_ATTEMPTS:
            return RankingList(anchor_id=anchor_id, anchor=anchor,
                               positives=tuple(positives),
                               target_scores=targets,
                               measured_scores=measured,
                               resynth_attempts=attempt, ordered=ordered)
    raise AssertionError("unreachable")


def _anchor_rng(seed: int, anchor_id: str, epoch: int) -> np.random.Generator:
    digest = hashlib.blake2b(anchor_id.encode("utf-8"),
                             digest_size=8).digest()
    key = int.from_bytes(digest, "little")
    return np.random.default_rng(
        np.random.SeedSequence((seed % (1 << 64), key, epoch)))


def make_example_provider(matrix_by_id: Mapping[str, np.ndarray],
                          cells_by_id: Mapping[str, Sequence[str]] | None,
                          s: int, cfg: SynthConfig, match_cfg: MatchConfig,
                          embedder=None):
    """Provider of (anchor, ranked positives) for the training loop.

    A fresh ranking list is derived per (anchor, epoch) from the synthesis
    seed, so repeated runs are reproducible and each epoch sees new
    positives.
    """

    def provider(anchor_id: str, epoch: int) -> TrainingExample:
        rng = _anchor_rng(cfg.seed, anchor_id, epoch)
        cells = None if cells_by_id is None else cells_by_id[anchor_id]
        ranking = build_ranking_list(anchor_id, cells,
                                     matrix_by_id[anchor_id], s, cfg,
                                     match_cfg, embedder, rng)
        return ranking.to_example()

    return provider


def write_pairs_jsonl(lists: Sequence[RankingList], path: str | Path) -> None:
    """Dump generated lists as JSON lines for offline inspection."""
    with open(path, "w", encoding="utf-8") as handle:
        for ranking in lists:
            for rank, (target, measured) in enumerate(
                    zip(ranking.target_scores, ranking.measured_scores),
                    start=1):
                handle.write(json.dumps({
                    "anchor_id": ranking.anchor_id,
                    "rank": rank,
                    "target_score": target,
                    "measured_score": measured,
                }) + "\n")
