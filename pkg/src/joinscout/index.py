"""Column-embedding storage and top-k similarity search.

The vector store keeps unit-norm 32-bit embeddings keyed by column id and
persists to a small binary format. Search comes in two flavors: an exact
scan used as ground truth and below a size threshold, and a hierarchical
small-world graph (HNSW-style) for large stores. Graph construction is
deterministic: node levels come from an RNG keyed by (seed, insertion
index), and all heap ties break on node index. Vectors are stored in
32-bit; every dot product accumulates in 64-bit so exact and approximate
search agree on similarity values.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

_STORE_MAGIC = b"SNPY"
_STORE_VERSION = 1


class VectorStore:
    """Append-only store of (column id, unit vector) pairs."""

    def __init__(self, dimension: int) -> None:
        if dimension < 1:
            raise ValueError(f"dimension must be >= 1, got {dimension}")
        self.dimension = dimension
        self.ids: list[str] = []
        self._index_of: dict[str, int] = {}
        self._vectors = np.zeros((0, dimension), dtype=np.float32)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def vectors(self) -> np.ndarray:
        return self._vectors

    def add(self, column_id: str, vector: np.ndarray) -> None:
        if column_id in self._index_of:
            raise ValueError(f"duplicate column id: {column_id!r}")
        vec = np.asarray(vector, dtype=np.float32).reshape(-1)
        if vec.shape[0] != self.dimension:
            raise ValueError(
                f"dimension mismatch: {vec.shape[0]} vs {self.dimension}")
        norm = float(np.linalg.norm(vec.astype(np.float64)))
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(
                f"vector for {column_id!r} is not unit-norm: {norm}")
        self._index_of[column_id] = len(self.ids)
        self.ids.append(column_id)
        self._vectors = np.vstack([self._vectors, vec[None, :]])

    def add_many(self, items: Sequence[tuple[str, np.ndarray]]) -> None:
        """Append a batch in one allocation instead of one copy per row."""
        if not items:
            return
        ids = [column_id for column_id, _ in items]
        rows = np.stack([np.asarray(v, dtype=np.float32).reshape(-1)
                         for _, v in items])
        if rows.shape[1] != self.dimension:
            raise ValueError(
                f"dimension mismatch: {rows.shape[1]} vs {self.dimension}")
        seen = set(self._index_of)
        for column_id in ids:
            if column_id in seen:
                raise ValueError(f"duplicate column id: {column_id!r}")
            seen.add(column_id)
        norms = np.linalg.norm(rows.astype(np.float64), axis=1)
        off = np.flatnonzero(np.abs(norms - 1.0) > 1e-6)
        if off.size:
            raise ValueError(f"vector for {ids[off[0]]!r} is not "
                             f"unit-norm: {norms[off[0]]}")
        start = len(self.ids)
        for j, column_id in enumerate(ids):
            self._index_of[column_id] = start + j
        self.ids.extend(ids)
        self._vectors = np.vstack([self._vectors, rows])

    def get(self, column_id: str) -> np.ndarray:
        return self._vectors[self._index_of[column_id]]

    def save(self, path: str | Path) -> None:
        """Write the store: magic, version, dimension, count, entries."""
        with open(path, "wb") as handle:
            handle.write(_STORE_MAGIC)
            handle.write(np.uint32(_STORE_VERSION).tobytes())
            handle.write(np.uint32(self.dimension).tobytes())
            handle.write(np.uint64(len(self.ids)).tobytes())
            for i, column_id in enumerate(self.ids):
                encoded = column_id.encode("utf-8")
                handle.write(np.uint32(len(encoded)).tobytes())
                handle.write(encoded)
                handle.write(self._vectors[i].astype("<f4").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "VectorStore":
        with open(path, "rb") as handle:
            raw = handle.read()
        if raw[:4] != _STORE_MAGIC:
            raise ValueError(f"bad store magic: {raw[:4]!r}")
        version = int(np.frombuffer(raw, dtype="<u4", count=1, offset=4)[0])
        if version != _STORE_VERSION:
            raise ValueError(f"unsupported store version: {version}")
        dimension = int(np.frombuffer(raw, dtype="<u4", count=1, offset=8)[0])
        count = int(np.frombuffer(raw, dtype="<u8", count=1, offset=12)[0])
        store = cls(dimension)
        vectors = np.zeros((count, dimension), dtype=np.float32)
        offset = 20
        for i in range(count):
            if offset + 4 > len(raw):
                raise ValueError("truncated store file")
            id_len = int(np.frombuffer(raw, dtype="<u4", count=1,
                                       offset=offset)[0])
            offset += 4
            end = offset + id_len + dimension * 4
            if end > len(raw):
                raise ValueError("truncated store file")
            column_id = raw[offset:offset + id_len].decode("utf-8")
            offset += id_len
            vectors[i] = np.frombuffer(raw, dtype="<f4", count=dimension,
                                       offset=offset)
            offset += dimension * 4
            if column_id in store._index_of:
                raise ValueError(f"duplicate column id: {column_id!r}")
            store._index_of[column_id] = i
            store.ids.append(column_id)
        if offset != len(raw):
            raise ValueError("trailing bytes after store entries")
        store._vectors = vectors
        return store


def _ranked(sims: np.ndarray, ids: Sequence[str],
            k: int) -> list[tuple[str, float]]:
    """Top-k by similarity descending, ids ascending on ties."""
    order = sorted(range(len(ids)), key=lambda i: (-sims[i], ids[i]))
    return [(ids[i], float(sims[i])) for i in order[:k]]


def knn_exact(store: VectorStore, query: np.ndarray,
              k: int) -> list[tuple[str, float]]:
    """Exact top-k by dot product over the whole store."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if len(store) == 0:
        raise ValueError("store is empty")
    query = np.asarray(query, dtype=np.float64).reshape(-1)
    if query.shape[0] != store.dimension:
        raise ValueError(
            f"dimension mismatch: {query.shape[0]} vs {store.dimension}")
    sims = store.vectors @ query
    if k >= len(store):
        return _ranked(sims, store.ids, k)
    # Partition first, then rank only the candidate region. Ties at the
    # boundary are resolved by widening to all equal similarities.
    cut = np.argpartition(-sims, k - 1)[:k]
    threshold = sims[cut].min()
    region = np.flatnonzero(sims >= threshold)
    ranked = _ranked(sims[region], [store.ids[i] for i in region], k)
    return ranked


@dataclass(frozen=True)
class AnnIndexConfig:
    """Graph-index parameters; defaults are conventional."""

    max_neighbors: int = 16
    ef_construction: int = 200
    ef_search: int = 64
    exact_fallback_threshold: int = 2048
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("max_neighbors", "ef_construction", "ef_search"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.exact_fallback_threshold < 0:
            raise ValueError("exact_fallback_threshold must be >= 0")


class AnnIndex:
    """Layered small-world graph over a vector store.

    Below the configured size threshold no graph is built and queries
    delegate to the exact scan, so small repositories always get exact
    results. Layer 0 allows 2 * max_neighbors edges per node, upper
    layers max_neighbors, as is conventional for this family of graphs.
    """

    def __init__(self, store: VectorStore, cfg: AnnIndexConfig) -> None:
        self.store = store
        self.cfg = cfg
        self.exact_mode = len(store) < cfg.exact_fallback_threshold
        self._levels: list[int] = []
        self._layers: list[dict[int, list[int]]] = []
        self._entry = -1
        self._level_scale = 1.0 / math.log(max(cfg.max_neighbors, 2))
        if not self.exact_mode:
            for i in range(len(store)):
                self._insert(i)

    # -- construction ------------------------------------------------

    def _node_level(self, i: int) -> int:
        rng = np.random.default_rng(
            np.random.SeedSequence((self.cfg.seed % (1 << 64), i)))
        u = float(rng.random())
        # u in [0, 1); guard the log at the open end
        return int(-math.log(max(u, 1e-18)) * self._level_scale)

    def _dist_many(self, nodes: list[int], query: np.ndarray) -> np.ndarray:
        return 1.0 - self.store.vectors[nodes] @ query

    def _search_layer(self, query: np.ndarray,
                      entries: list[tuple[float, int]], ef: int,
                      layer: int) -> list[tuple[float, int]]:
        """Beam search within one layer; returns (distance, node) ascending."""
        graph = self._layers[layer]
        visited = {node for _, node in entries}
        candidates = list(entries)
        heapq.heapify(candidates)
        # results as a max-heap via negated distance
        results = [(-d, node) for d, node in entries]
        heapq.heapify(results)
        while candidates:
            dist, node = heapq.heappop(candidates)
            if dist > -results[0][0] and len(results) >= ef:
                break
            fresh = [n for n in graph.get(node, ()) if n not in visited]
            if not fresh:
                continue
            visited.update(fresh)
            dists = self._dist_many(fresh, query)
            worst = -results[0][0]
            for d, n in zip(dists, fresh):
                if len(results) < ef or d < worst:
                    heapq.heappush(candidates, (float(d), n))
                    heapq.heappush(results, (-float(d), n))
                    if len(results) > ef:
                        heapq.heappop(results)
                    worst = -results[0][0]
        return sorted((-nd, node) for nd, node in results)

    def _greedy_descend(self, query: np.ndarray, node: int, dist: float,
                        layer: int) -> tuple[float, int]:
        """Follow strictly improving edges to a local minimum."""
        graph = self._layers[layer]
        while True:
            nbrs = graph.get(node, ())
            if not nbrs:
                return dist, node
            dists = self._dist_many(list(nbrs), query)
            best = int(dists.argmin())
            if dists[best] >= dist:
                return dist, node
            dist, node = float(dists[best]), nbrs[best]

    def _cap(self, layer: int) -> int:
        return self.cfg.max_neighbors * (2 if layer == 0 else 1)

    def _shrink(self, node: int, layer: int) -> None:
        nbrs = self._layers[layer][node]
        cap = self._cap(layer)
        if len(nbrs) <= cap:
            return
        dists = self._dist_many(nbrs, self.store.vectors[node]
                                .astype(np.float64))
        keep = sorted(zip(dists, nbrs))[:cap]
        self._layers[layer][node] = [n for _, n in keep]

    def _insert(self, i: int) -> None:
        level = self._node_level(i)
        while len(self._layers) <= level:
            self._layers.append({})
        for layer in range(level + 1):
            self._layers[layer].setdefault(i, [])
        if self._entry < 0:
            self._entry = i
            self._levels.append(level)
            return
        query = self.store.vectors[i].astype(np.float64)
        entry_level = self._levels[self._entry] if self._levels else 0
        dist = float(1.0 - self.store.vectors[self._entry] @ query)
        node = self._entry
        for layer in range(entry_level, level, -1):
            dist, node = self._greedy_descend(query, node, dist, layer)
        entries = [(dist, node)]
        for layer in range(min(level, entry_level), -1, -1):
            found = self._search_layer(query, entries,
                                       self.cfg.ef_construction, layer)
            neighbors = [n for _, n in found[:self._cap(layer)]]
            self._layers[layer][i] = neighbors
            for n in neighbors:
                self._layers[layer][n].append(i)
                self._shrink(n, layer)
            entries = found
        self._levels.append(level)
        if level > entry_level:
            self._entry = i

    # -- search ------------------------------------------------------

    def query(self, query: np.ndarray, k: int,
              ef: int | None = None) -> list[tuple[str, float]]:
        """Top-k (column id, similarity), approximate above the threshold."""
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        if self.exact_mode:
            return knn_exact(self.store, query, k)
        ef = self.cfg.ef_search if ef is None else ef
        if ef < k:
            raise ValueError(f"ef ({ef}) must be >= k ({k})")
        q = np.asarray(query, dtype=np.float64).reshape(-1)
        if q.shape[0] != self.store.dimension:
            raise ValueError(
                f"dimension mismatch: {q.shape[0]} vs {self.store.dimension}")
        dist = float(1.0 - self.store.vectors[self._entry] @ q)
        node = self._entry
        for layer in range(len(self._layers) - 1, 0, -1):
            dist, node = self._greedy_descend(q, node, dist, layer)
        found = self._search_layer(q, [(dist, node)], max(ef, k), 0)
        ids = [self.store.ids[n] for _, n in found]
        sims = np.array([1.0 - d for d, _ in found])
        return _ranked(sims, ids, k)

    # -- persistence ---------------------------------------------------

    def save(self, path: str | Path) -> None:
        """Persist graph structure; vectors live in the store file."""
        meta = {
            "max_neighbors": self.cfg.max_neighbors,
            "ef_construction": self.cfg.ef_construction,
            "ef_search": self.cfg.ef_search,
            "exact_fallback_threshold": self.cfg.exact_fallback_threshold,
            "seed": self.cfg.seed,
            "count": len(self.store),
            "exact_mode": self.exact_mode,
            "entry": self._entry,
        }
        arrays: dict[str, np.ndarray] = {
            "meta": np.frombuffer(json.dumps(meta).encode("utf-8"),
                                  dtype=np.uint8),
            "levels": np.asarray(self._levels, dtype=np.int64),
        }
        for layer, graph in enumerate(self._layers):
            nodes = sorted(graph)
            offsets = np.zeros(len(nodes) + 1, dtype=np.int64)
            flat: list[int] = []
            for j, node in enumerate(nodes):
                flat.extend(graph[node])
                offsets[j + 1] = len(flat)
            arrays[f"layer{layer}_nodes"] = np.asarray(nodes, dtype=np.int64)
            arrays[f"layer{layer}_offsets"] = offsets
            arrays[f"layer{layer}_targets"] = np.asarray(flat, dtype=np.int64)
        with open(path, "wb") as handle:
            np.savez_compressed(handle, **arrays)

    @classmethod
    def load(cls, path: str | Path, store: VectorStore) -> "AnnIndex":
        with np.load(path) as data:
            meta = json.loads(bytes(data["meta"]).decode("utf-8"))
            if meta["count"] != len(store):
                raise ValueError(
                    f"index was built over {meta['count']} vectors but the "
                    f"store holds {len(store)}")
            cfg = AnnIndexConfig(
                max_neighbors=meta["max_neighbors"],
                ef_construction=meta["ef_construction"],
                ef_search=meta["ef_search"],
                exact_fallback_threshold=meta["exact_fallback_threshold"],
                seed=meta["seed"])
            index = cls.__new__(cls)
            index.store = store
            index.cfg = cfg
            index.exact_mode = bool(meta["exact_mode"])
            index._entry = int(meta["entry"])
            index._levels = [int(v) for v in data["levels"]]
            index._level_scale = 1.0 / math.log(max(cfg.max_neighbors, 2))
            index._layers = []
            layer = 0
            while f"layer{layer}_nodes" in data:
                nodes = data[f"layer{layer}_nodes"]
                offsets = data[f"layer{layer}_offsets"]
                targets = data[f"layer{layer}_targets"]
                graph = {int(node): [int(t) for t in
                                     targets[offsets[j]:offsets[j + 1]]]
                         for j, node in enumerate(nodes)}
                index._layers.append(graph)
                layer += 1
        return index


def build_ann(store: VectorStore, cfg: AnnIndexConfig) -> AnnIndex:
    if len(store) == 0:
        raise ValueError("store is empty")
    return AnnIndex(store, cfg)


def knn_approx(index: AnnIndex, query: np.ndarray, k: int,
               ef: int | None = None) -> list[tuple[str, float]]:
    return index.query(query, k, ef)
