"""Proxy-column projections and column embeddings.

A proxy column is a small learned matrix of vectors. Projecting a data
column onto it scores how well the column's cells line up with the proxies:

* exact_matching_score solves the 1:1 partial matching between cells and
  proxies that maximizes the summed dot products (negative pairs are left
  unmatched rather than forced).
* pooled_projection is the O(n*m) relaxation used everywhere else: each
  cell independently takes its best proxy, and proxies may be reused.

Stacking the pooled projection against l proxy columns and L2-normalizing
gives a fixed-size column embedding that is invariant to cell order and
column size. The backward helpers implement the analytic gradient of that
pipeline for the trainer; cells route gradient only to their argmax proxy
(ties go to the lowest proxy index, matching numpy argmax).
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment

from .embedder import EmbeddingError

# Cell-count block size for the (l, n, m) score tensor; bounds peak memory.
_BLOCK = 512


def exact_matching_score(column: np.ndarray, proxies: np.ndarray) -> float:
    """Maximum-weight 1:1 partial matching between cells and proxies.

    Each cell matches at most one proxy and vice versa. Because the
    matching is partial, edges with negative weight are never taken:
    solving the assignment on weights clipped at zero yields the same
    optimum, since dropping a clipped pair costs nothing.
    """
    column = np.asarray(column, dtype=np.float64)
    proxies = np.asarray(proxies, dtype=np.float64)
    weights = column @ proxies.T
    rows, cols = linear_sum_assignment(np.maximum(weights, 0.0), maximize=True)
    return float(np.maximum(weights[rows, cols], 0.0).sum())


def pooled_projection(column: np.ndarray, proxies: np.ndarray) -> float:
    """Sum over cells of the best dot product against any proxy."""
    column = np.asarray(column, dtype=np.float64)
    proxies = np.asarray(proxies, dtype=np.float64)
    if column.ndim != 2 or proxies.ndim != 2:
        raise ValueError("column and proxies must be 2-d matrices")
    if column.shape[1] != proxies.shape[1]:
        raise ValueError(
            f"dimension mismatch: {column.shape[1]} vs {proxies.shape[1]}")
    return float((column @ proxies.T).max(axis=1).sum())


def project_forward(column: np.ndarray,
                    proxy_sets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pooled projections of one column against l proxy columns.

    Returns (values, assignments): values has shape (l,) and assignments
    has shape (l, n) holding each cell's argmax proxy index per proxy
    column. Ties resolve to the lowest index so gradient routing is
    deterministic.
    """
    column = np.asarray(column, dtype=np.float64)
    proxy_sets = np.asarray(proxy_sets, dtype=np.float64)
    if column.ndim != 2 or proxy_sets.ndim != 3:
        raise ValueError("expected column (n, d) and proxy_sets (l, m, d)")
    if column.shape[0] == 0:
        raise ValueError("column has no cells")
    if column.shape[1] != proxy_sets.shape[2]:
        raise ValueError(
            f"dimension mismatch: {column.shape[1]} vs {proxy_sets.shape[2]}")
    n = column.shape[0]
    l, m, _ = proxy_sets.shape
    flat = proxy_sets.reshape(l * m, -1)
    values = np.zeros(l, dtype=np.float64)
    assignments = np.empty((l, n), dtype=np.int64)
    for start in range(0, n, _BLOCK):
        block = column[start:start + _BLOCK]
        scores = (block @ flat.T).reshape(block.shape[0], l, m)
        assignments[:, start:start + _BLOCK] = scores.argmax(axis=2).T
        values += scores.max(axis=2).sum(axis=0)
    return values, assignments


def normalize_embedding(values: np.ndarray) -> np.ndarray:
    """L2-normalize a raw projection vector into a column embedding."""
    norm = float(np.linalg.norm(values))
    if norm == 0.0 or not np.isfinite(norm):
        raise EmbeddingError("degenerate embedding: projection norm is zero "
                             "or non-finite")
    return values / norm


def column_embedding(column: np.ndarray, proxy_sets: np.ndarray) -> np.ndarray:
    """Unit-length embedding of a column under the given proxy columns."""
    values, _ = project_forward(column, proxy_sets)
    return normalize_embedding(values)


def normalize_backward(values: np.ndarray,
                       grad_unit: np.ndarray) -> np.ndarray:
    """Gradient through L2 normalization.

    Given u = v / ||v|| and d loss / d u, returns d loss / d v:
    (g - (g . u) u) / ||v||.
    """
    norm = float(np.linalg.norm(values))
    unit = values / norm
    return (grad_unit - float(grad_unit @ unit) * unit) / norm


def scatter_backward(column: np.ndarray, assignments: np.ndarray,
                     grad_values: np.ndarray, m: int) -> np.ndarray:
    """Gradient of the pooled projections w.r.t. the proxy vectors.

    d value_k / d P[k, j] is the sum of cells whose argmax in proxy
    column k is j; grad_values scales each proxy column's contribution.
    Returns an (l, m, d) array.
    """
    l, n = assignments.shape
    grad = np.zeros((l, m, column.shape[1]), dtype=np.float64)
    for k in range(l):
        np.add.at(grad[k], assignments[k], grad_values[k] * column)
    return grad


def embed_many(columns: list[np.ndarray], proxy_sets: np.ndarray) -> np.ndarray:
    """Unit embeddings for several columns as one (len(columns), l) matrix.

    Equivalent to stacking column_embedding over the list, but the cells
    of all columns are scored against the proxies in shared blocks, which
    is substantially faster when many small columns are encoded at once
    (the training loop re-encodes every queued negative each step).
    """
    if len(columns) == 0:
        raise ValueError("no columns to embed")
    proxy_sets = np.asarray(proxy_sets, dtype=np.float64)
    lengths = [np.asarray(c).shape[0] for c in columns]
    if min(lengths) == 0:
        raise ValueError("column has no cells")
    packed = np.concatenate([np.asarray(c, dtype=np.float64)
                             for c in columns], axis=0)
    if packed.shape[1] != proxy_sets.shape[2]:
        raise ValueError(
            f"dimension mismatch: {packed.shape[1]} vs {proxy_sets.shape[2]}")
    l, m, _ = proxy_sets.shape
    flat = proxy_sets.reshape(l * m, -1)
    best = np.empty((packed.shape[0], l), dtype=np.float64)
    for start in range(0, packed.shape[0], _BLOCK):
        block = packed[start:start + _BLOCK]
        scores = (block @ flat.T).reshape(block.shape[0], l, m)
        best[start:start + block.shape[0]] = scores.max(axis=2)
    starts = np.concatenate(([0], np.cumsum(lengths)[:-1]))
    values = np.add.reduceat(best, starts, axis=0)
    norms = np.linalg.norm(values, axis=1)
    if np.any(norms == 0.0) or not np.all(np.isfinite(norms)):
        raise EmbeddingError("degenerate embedding: projection norm is zero "
                             "or non-finite")
    return values / norms[:, None]


# Checkpoint file layout: magic, version, shape header, target proxy block,
# momentum proxy block, RNG seed. All integers little-endian.
_MAGIC = b"SNPX"
_VERSION = 1


def save_proxy_checkpoint(path, target: np.ndarray, momentum: np.ndarray,
                          seed: int) -> None:
    """Write target and momentum proxy sets plus the training seed.

    Layout: "SNPX", u32 version, u32 l, u32 m, u32 d, l*m*d float64
    target values, l*m*d float64 momentum values, u64 seed.
    """
    target = np.asarray(target, dtype=np.float64)
    momentum = np.asarray(momentum, dtype=np.float64)
    if target.ndim != 3:
        raise ValueError("proxy sets must have shape (l, m, d)")
    if target.shape != momentum.shape:
        raise ValueError("target and momentum shapes differ")
    l, m, d = target.shape
    with open(path, "wb") as handle:
        handle.write(_MAGIC)
        handle.write(np.uint32(_VERSION).tobytes())
        handle.write(np.array([l, m, d], dtype="<u4").tobytes())
        handle.write(target.astype("<f8").tobytes())
        handle.write(momentum.astype("<f8").tobytes())
        # Two's complement keeps negative seeds round-trippable as u64.
        handle.write(np.uint64(seed % (1 << 64)).tobytes())


def load_proxy_checkpoint(path) -> tuple[np.ndarray, np.ndarray, int]:
    """Read a checkpoint back as (target, momentum, seed)."""
    with open(path, "rb") as handle:
        raw = handle.read()
    if raw[:4] != _MAGIC:
        raise ValueError(f"bad checkpoint magic: {raw[:4]!r}")
    version = int(np.frombuffer(raw, dtype="<u4", count=1, offset=4)[0])
    if version != _VERSION:
        raise ValueError(f"unsupported checkpoint version: {version}")
    l, m, d = (int(v) for v in np.frombuffer(raw, dtype="<u4", count=3,
                                             offset=8))
    block = l * m * d * 8
    expected = 20 + 2 * block + 8
    if len(raw) != expected:
        raise ValueError(
            f"truncated checkpoint: expected {expected} bytes, got {len(raw)}")
    target = np.frombuffer(raw, dtype="<f8", count=l * m * d,
                           offset=20).reshape(l, m, d).copy()
    momentum = np.frombuffer(raw, dtype="<f8", count=l * m * d,
                             offset=20 + block).reshape(l, m, d).copy()
    seed = int(np.frombuffer(raw, dtype="<u8", count=1,
                             offset=20 + 2 * block)[0])
    if seed >= 1 << 63:
        seed -= 1 << 64
    return target, momentum, seed
