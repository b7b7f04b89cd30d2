"""Column repository: CSV ingestion and a synthetic benchmark generator.

Ingestion turns every CSV column into a cleaned cell list: cells are
trimmed, internal whitespace runs collapse to single spaces, empties are
dropped, duplicates are removed. Columns that are mostly numeric or have
too few distinct cells are excluded; joinability over numbers or tiny
domains is meaningless for discovery.

The benchmark generator plants, for each query column and each requested
joinability level, a repository column sharing exactly the right number of
query cells. Every token in the benchmark is drawn from a small shared set
of prefix families: tokens of the same family share a long character
prefix, so their cell embeddings are near each other (though never within
a sensible match threshold) while tokens of different families are almost
orthogonal. Padding and distractor cells come from the same family pool
as the query cells. That crowding makes naively pooled column embeddings
nearly useless, because the family mass dominates the pooled direction
and drowns the exact-overlap signal; only a representation that keeps
same-family tokens apart can rank columns by true joinability. Ground
truth is always recomputed with the exact oracle, never taken from the
planting plan.
"""

from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

_NUMERIC_RE = re.compile(r"^[+-]?(\d+(\.\d*)?|\.\d+)$")
_MIN_DISTINCT = 5          # columns need strictly more distinct cells
_NUMERIC_FRACTION = 0.5    # columns with more numeric cells are excluded


def normalize_cell(text: str) -> str:
    """Trim and collapse internal whitespace runs to single spaces."""
    return " ".join(text.split())


def is_numeric_cell(text: str) -> bool:
    """True when the cell parses as an integer or decimal.

    Thousands separators and a leading sign are stripped first.
    """
    return bool(_NUMERIC_RE.match(text.replace(",", "")))


def clean_cells(raw_cells: Iterable[str]) -> list[str]:
    """Normalized, non-empty, deduplicated cells in first-seen order."""
    seen: dict[str, None] = {}
    for raw in raw_cells:
        cell = normalize_cell(raw)
        if cell and cell not in seen:
            seen[cell] = None
    return list(seen)


def column_passes_filter(cells: Sequence[str]) -> bool:
    if len(cells) <= _MIN_DISTINCT:
        return False
    numeric = sum(1 for c in cells if is_numeric_cell(c))
    return numeric <= _NUMERIC_FRACTION * len(cells)


@dataclass(frozen=True)
class Column:
    """One repository column: distinct normalized cells plus provenance."""

    id: str
    cells: tuple[str, ...]
    table: str


class Repository:
    """Immutable-after-build collection of columns, appendable by id."""

    def __init__(self, columns: Sequence[Column] = ()) -> None:
        self.columns: list[Column] = []
        self._by_id: dict[str, Column] = {}
        self.warnings: list[str] = []
        for column in columns:
            self._append(column)

    def _append(self, column: Column) -> None:
        if column.id in self._by_id:
            raise ValueError(f"duplicate column id: {column.id!r}")
        self._by_id[column.id] = column
        self.columns.append(column)

    def __len__(self) -> int:
        return len(self.columns)

    def __contains__(self, column_id: str) -> bool:
        return column_id in self._by_id

    def get(self, column_id: str) -> Column:
        return self._by_id[column_id]

    def add_columns(self, new_columns: Sequence[Column]) -> "Repository":
        """Append columns; existing entries are untouched."""
        for column in new_columns:
            self._append(column)
        return self

    def manifest(self) -> dict:
        return {
            "n_columns": len(self.columns),
            "columns": [{"id": c.id, "table": c.table,
                         "n_cells": len(c.cells)} for c in self.columns],
        }


def _columns_from_rows(table_id: str, header: Sequence[str],
                       rows: Sequence[Sequence[str]]) -> list[Column]:
    used_ids: set[str] = set()
    out = []
    for j in range(len(header)):
        name = normalize_cell(header[j]) or f"col{j}"
        column_id = f"{table_id}:{name}"
        if column_id in used_ids:
            column_id = f"{table_id}:{name}#{j}"
        used_ids.add(column_id)
        cells = clean_cells(row[j] if j < len(row) else "" for row in rows)
        if column_passes_filter(cells):
            out.append(Column(id=column_id, cells=tuple(cells),
                              table=table_id))
    return out


def ingest_tables(directory: str | Path) -> Repository:
    """Build a repository from every readable CSV in a directory.

    Files must carry a header row. Unreadable files are recorded as
    warnings and skipped; an ingest that yields no surviving column is an
    error.
    """
    directory = Path(directory)
    paths = sorted(directory.glob("*.csv"))
    if not paths:
        raise ValueError(f"no CSV files found under {directory}")
    repo = Repository()
    for path in paths:
        try:
            with open(path, "r", newline="", encoding="utf-8") as handle:
                rows = list(csv.reader(handle))
        except (OSError, UnicodeDecodeError, csv.Error) as exc:
            repo.warnings.append(f"{path.name}: {exc}")
            continue
        if not rows:
            repo.warnings.append(f"{path.name}: empty file")
            continue
        repo.add_columns(_columns_from_rows(path.stem, rows[0], rows[1:]))
    if len(repo) == 0:
        raise ValueError("no column survived ingestion filters")
    return repo


def save_columns(columns: Sequence[Column], path: str | Path) -> None:
    """Full-fidelity JSON dump (cells included) for later reload."""
    payload = {"columns": [{"id": c.id, "table": c.table,
                            "cells": list(c.cells)} for c in columns]}
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, ensure_ascii=False)


def load_columns(path: str | Path) -> list[Column]:
    with open(path, "r", encoding="utf-8") as handle:
        payload = json.load(handle)
    return [Column(id=c["id"], cells=tuple(c["cells"]), table=c["table"])
            for c in payload["columns"]]


def save_repository(repo: Repository, path: str | Path) -> None:
    save_columns(repo.columns, path)


def load_repository(path: str | Path) -> Repository:
    return Repository(load_columns(path))


def write_manifest(repo: Repository, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(repo.manifest(), handle, indent=2)


def embed_all(columns: Sequence[Column],
              embedder) -> dict[str, np.ndarray]:
    """Cell-embedding matrix per column id."""
    return {c.id: embedder.embed_column(list(c.cells)) for c in columns}


# -- synthetic benchmark ---------------------------------------------


@dataclass(frozen=True)
class SynthBenchSpec:
    """Recipe for a desk-scale benchmark with planted ground truth."""

    n_columns: int = 2000
    n_queries: int = 40
    query_cells: int = 20
    cells_per_column: tuple[int, int] = (40, 40)
    levels: tuple[float, ...] = (0.9, 0.8, 0.7, 0.65, 0.6, 0.55,
                                 0.5, 0.45, 0.4, 0.35)
    vocab_size: int = 120_000
    seed: int = 0
    n_families: int = 4        # token prefix families shared repo-wide
    lures_per_query: int = 5
    lure_overlap: int = 2

    def __post_init__(self) -> None:
        if not all(0 < lam <= 1 for lam in self.levels):
            raise ValueError("levels must lie in (0, 1]")
        if self.n_queries < 1 or self.n_columns < 1:
            raise ValueError("n_columns and n_queries must be >= 1")
        if self.query_cells < 1:
            raise ValueError("query_cells must be >= 1")
        if self.n_families < 1:
            raise ValueError("n_families must be >= 1")
        lo, hi = self.cells_per_column
        if not _MIN_DISTINCT < lo <= hi:
            raise ValueError(
                f"cells_per_column must satisfy {_MIN_DISTINCT} < lo <= hi")
        planted = self.n_queries * (len(self.levels) + self.lures_per_query)
        if self.n_columns < planted:
            raise ValueError(
                f"n_columns={self.n_columns} cannot hold "
                f"{planted} planted and lure columns")
        if self.lures_per_query > 0 and not (
                0 <= self.lure_overlap < self.query_cells):
            raise ValueError(
                "lure_overlap must lie in [0, query_cells)")


@dataclass
class SynthBenchmark:
    repo: Repository
    queries: list[Column]
    planted_levels: dict[str, float] = field(default_factory=dict)


class _FamilyPool:
    """Distinct random tokens grouped into shared-prefix families.

    Tokens are prefix + suffix; the prefix is long relative to the suffix,
    so same-family tokens embed near each other under a character n-gram
    embedder without ever being close enough to count as cell matches.
    """

    _LETTERS = "abcdefghijklmnopqrstuvwxyz"
    _PREFIX_LEN = 9
    _SUFFIX_LEN = 4

    def __init__(self, n_families: int, vocab_size: int,
                 rng: np.random.Generator) -> None:
        self._rng = rng
        self._budget = vocab_size
        self._seen: set[str] = set()
        prefixes: dict[str, None] = {}
        while len(prefixes) < n_families:
            prefixes.setdefault(self._word(self._PREFIX_LEN))
        self._families = list(prefixes)

    def _word(self, length: int) -> str:
        picks = self._rng.integers(0, len(self._LETTERS), size=length)
        return "".join(self._LETTERS[p] for p in picks)

    def draw(self, count: int) -> list[str]:
        """Fresh tokens, each from a uniformly random family."""
        out: list[str] = []
        attempts = 0
        while len(out) < count:
            family = self._families[
                int(self._rng.integers(len(self._families)))]
            token = family + self._word(self._SUFFIX_LEN)
            if token not in self._seen:
                self._seen.add(token)
                out.append(token)
            attempts += 1
            if len(self._seen) > self._budget or attempts > 100 * count + 1000:
                raise ValueError(
                    "vocabulary too small to guarantee disjointness; "
                    "increase vocab_size")
        return out


def _ceil_tolerant(value: float) -> int:
    return math.ceil(value - 1e-9)


def synth_benchmark(spec: SynthBenchSpec) -> SynthBenchmark:
    """Generate a repository, query columns, and the planting record.

    The planted column for level lam shares exactly ceil(lam * |query|)
    cells with its query and is padded to full size with fresh tokens.
    All tokens, query and padding alike, come from the same small pool of
    prefix families, so the only exact overlaps are the planted ones while
    every column looks family-similar in aggregate. Lure columns overlap
    the query by a few cells only, giving them joinability below every
    planted level.
    """
    rng = np.random.default_rng(
        np.random.SeedSequence(spec.seed % (1 << 64)))
    pool = _FamilyPool(spec.n_families, spec.vocab_size, rng)
    lo, hi = spec.cells_per_column
    queries: list[Column] = []
    repo_columns: list[Column] = []
    planted_levels: dict[str, float] = {}

    for qi in range(spec.n_queries):
        n = spec.query_cells
        q_cells = pool.draw(n)
        query_id = f"query:q{qi:03d}"
        queries.append(Column(id=query_id, cells=tuple(q_cells),
                              table="query"))
        for li, lam in enumerate(spec.levels):
            overlap = min(_ceil_tolerant(lam * n), n)
            picks = rng.choice(n, size=overlap, replace=False)
            shared = [q_cells[int(i)] for i in picks]
            total = max(int(rng.integers(lo, hi + 1)), overlap)
            cells = shared + pool.draw(total - overlap)
            order = rng.permutation(len(cells))
            cid = f"bench:q{qi:03d}_level{li}"
            repo_columns.append(Column(
                id=cid, cells=tuple(cells[i] for i in order),
                table="bench"))
            planted_levels[cid] = lam
        for wi in range(spec.lures_per_query):
            picks = rng.choice(n, size=spec.lure_overlap, replace=False)
            shared = [q_cells[int(i)] for i in picks]
            total = max(int(rng.integers(lo, hi + 1)), spec.lure_overlap)
            cells = shared + pool.draw(total - spec.lure_overlap)
            order = rng.permutation(len(cells))
            repo_columns.append(Column(
                id=f"bench:q{qi:03d}_lure{wi:02d}",
                cells=tuple(cells[i] for i in order), table="bench"))

    fresh_needed = spec.n_columns - len(repo_columns)
    for di in range(fresh_needed):
        n = int(rng.integers(lo, hi + 1))
        repo_columns.append(Column(
            id=f"bench:noise{di:05d}", cells=tuple(pool.draw(n)),
            table="bench"))

    return SynthBenchmark(repo=Repository(repo_columns), queries=queries,
                          planted_levels=planted_levels)
