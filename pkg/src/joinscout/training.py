"""Rank-aware contrastive training of proxy-column parameters.

Two parameter sets of identical shape are kept: a target set updated by
Adam on the analytic gradient, and a momentum set that trails it as an
exponential moving average. Per training step the oldest enqueued batch
becomes the current batch; its columns are the anchors, every column still
in the queue is a shared negative, and each anchor carries an ordered list
of synthesized positives. Anchors are encoded with the target parameters
(gradient flows only there); positives and negatives are re-encoded with
the current momentum parameters each step.

The per-anchor loss treats lower-ranked positives as extra negatives for
the ranks above them, so a single anchor pushes its best positive hardest.
With a rank list of length one it reduces exactly to the standard
contrastive (InfoNCE) objective.
"""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from . import projection


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for the contrastive training loop."""

    temperature: float = 0.08
    momentum_alpha: float = 0.9999
    queue_len: int = 32          # batches of negatives kept behind the head
    batch_size: int = 64
    rank_list_len: int = 3
    learning_rate: float = 0.01
    epochs: int = 1
    seed: int = 0
    num_proxy_sets: int = 90     # l
    proxies_per_set: int = 50    # m
    dimension: int = 64          # d, must match the cell embedder
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8

    def __post_init__(self) -> None:
        if self.temperature <= 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if not 0 <= self.momentum_alpha < 1:
            raise ValueError(
                f"momentum_alpha must lie in [0, 1), got {self.momentum_alpha}")
        for name in ("queue_len", "batch_size", "rank_list_len",
                     "num_proxy_sets", "proxies_per_set", "dimension"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass
class TrainState:
    """Target and momentum parameters plus Adam moments."""

    target_params: np.ndarray
    momentum_params: np.ndarray
    adam_m: np.ndarray
    adam_v: np.ndarray
    step: int = 0


@dataclass(frozen=True)
class TrainingExample:
    """Anchor sub-column with its ordered positives, best first."""

    anchor: np.ndarray
    positives: tuple[np.ndarray, ...]
    target_scores: tuple[float, ...] = ()


# Provider contract: (column_id, epoch) -> TrainingExample, deterministic
# for a fixed seed so training runs are reproducible bit for bit.
ExampleProvider = Callable[[str, int], TrainingExample]


@dataclass
class TrainResult:
    state: TrainState
    log: list[tuple[int, int, float]] = field(default_factory=list)

    def epoch_mean_loss(self, epoch: int) -> float:
        losses = [loss for ep, _, loss in self.log if ep == epoch]
        if not losses:
            raise ValueError(f"no update steps recorded for epoch {epoch}")
        return float(np.mean(losses))


def init_proxies(l: int, m: int, d: int, seed: int) -> np.ndarray:
    """Seeded i.i.d. Gaussian proxy rows, each scaled to unit norm."""
    rng = np.random.default_rng(np.random.SeedSequence(seed % (1 << 64)))
    params = rng.standard_normal((l, m, d))
    norms = np.linalg.norm(params, axis=2, keepdims=True)
    return params / norms


def init_state(cfg: TrainConfig) -> TrainState:
    params = init_proxies(cfg.num_proxy_sets, cfg.proxies_per_set,
                          cfg.dimension, cfg.seed)
    return TrainState(target_params=params,
                      momentum_params=params.copy(),
                      adam_m=np.zeros_like(params),
                      adam_v=np.zeros_like(params))


def infonce_loss(anchor_emb: np.ndarray, pos_emb: np.ndarray,
                 neg_embs: Sequence[np.ndarray] | np.ndarray,
                 temperature: float) -> float:
    """Contrastive loss with one positive against a set of negatives."""
    return rank_aware_loss(anchor_emb, [pos_emb], neg_embs, temperature)


def rank_aware_loss(anchor_emb: np.ndarray,
                    ranked_pos_embs: Sequence[np.ndarray],
                    neg_embs: Sequence[np.ndarray] | np.ndarray,
                    temperature: float) -> float:
    """Sum of per-rank contrastive terms over an ordered positive list.

    Term j contrasts positive j against the true negatives plus every
    positive ranked after j. Computed with log-sum-exp in 64-bit: at the
    default temperature raw exponentials overflow.
    """
    loss, _ = _rank_aware_core(anchor_emb, ranked_pos_embs, neg_embs,
                               temperature)
    return loss


def _as_matrix(embs: Sequence[np.ndarray] | np.ndarray,
               length: int) -> np.ndarray:
    if isinstance(embs, np.ndarray) and embs.ndim == 2:
        return np.asarray(embs, dtype=np.float64)
    if len(embs) == 0:
        return np.zeros((0, length), dtype=np.float64)
    return np.asarray(np.stack([np.asarray(e, dtype=np.float64)
                                for e in embs]))


def _rank_aware_core(anchor_emb: np.ndarray,
                     ranked_pos_embs: Sequence[np.ndarray],
                     neg_embs: Sequence[np.ndarray] | np.ndarray,
                     temperature: float) -> tuple[float, np.ndarray]:
    """Loss and its gradient with respect to the anchor embedding."""
    if temperature <= 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    if len(ranked_pos_embs) == 0:
        raise ValueError("at least one ranked positive is required")
    anchor = np.asarray(anchor_emb, dtype=np.float64)
    pos = _as_matrix(ranked_pos_embs, anchor.shape[0])
    neg = _as_matrix(neg_embs, anchor.shape[0])
    pos_scores = pos @ anchor / temperature
    neg_scores = neg @ anchor / temperature

    total = 0.0
    grad = np.zeros_like(anchor)
    s = pos.shape[0]
    for j in range(s):
        # Participants of term j: positive j, all true negatives, and the
        # positives ranked strictly after j acting as extra negatives.
        scores = np.concatenate(([pos_scores[j]], neg_scores,
                                 pos_scores[j + 1:]))
        vectors = np.concatenate((pos[j:j + 1], neg, pos[j + 1:]), axis=0)
        log_denom = logsumexp(scores)
        total += float(log_denom - pos_scores[j])
        weights = np.exp(scores - log_denom)
        grad += (weights @ vectors - pos[j]) / temperature
    return total, grad


def anchor_loss_and_grad(state_params: np.ndarray, anchor: np.ndarray,
                         pos_embs: Sequence[np.ndarray],
                         neg_embs: np.ndarray,
                         temperature: float) -> tuple[float, np.ndarray]:
    """Per-anchor loss and its gradient w.r.t. the target parameters.

    The chain runs loss -> unit embedding -> raw projection vector ->
    proxy rows; each anchor cell routes gradient only to its argmax proxy
    in every proxy column. Positives and negatives are constants here.
    """
    values, assignments = projection.project_forward(anchor, state_params)
    unit = projection.normalize_embedding(values)
    loss, grad_unit = _rank_aware_core(unit, pos_embs, neg_embs, temperature)
    grad_values = projection.normalize_backward(values, grad_unit)
    grad_params = projection.scatter_backward(
        anchor, assignments, grad_values, state_params.shape[1])
    return loss, grad_params


def momentum_update(momentum_params: np.ndarray, target_params: np.ndarray,
                    alpha: float) -> np.ndarray:
    """Exponential moving average: alpha*momentum + (1-alpha)*target."""
    if not 0 <= alpha < 1:
        raise ValueError(f"alpha must lie in [0, 1), got {alpha}")
    return alpha * momentum_params + (1.0 - alpha) * target_params


def _adam_step(state: TrainState, grad: np.ndarray, cfg: TrainConfig) -> None:
    state.step += 1
    state.adam_m = cfg.adam_beta1 * state.adam_m + (1 - cfg.adam_beta1) * grad
    state.adam_v = (cfg.adam_beta2 * state.adam_v
                    + (1 - cfg.adam_beta2) * grad * grad)
    m_hat = state.adam_m / (1 - cfg.adam_beta1 ** state.step)
    v_hat = state.adam_v / (1 - cfg.adam_beta2 ** state.step)
    state.target_params = (state.target_params
                           - cfg.learning_rate * m_hat
                           / (np.sqrt(v_hat) + cfg.adam_epsilon))


def train(columns: Sequence[tuple[str, np.ndarray]], cfg: TrainConfig,
          provider: ExampleProvider) -> TrainResult:
    """Run the full contrastive training loop and return learned parameters.

    columns are (id, cell-embedding matrix) pairs; provider supplies each
    anchor's split sub-column and ranked positives when its batch reaches
    the head of the queue. No parameter update happens until queue_len + 1
    batches have been enqueued; the trailing partial batch of an epoch is
    dropped. Deterministic for a fixed cfg.seed and provider.
    """
    min_columns = cfg.batch_size * (cfg.queue_len + 1)
    if len(columns) < min_columns:
        raise ValueError(
            f"need at least {min_columns} columns "
            f"(batch_size * (queue_len + 1)), got {len(columns)}")
    state = init_state(cfg)
    result = TrainResult(state=state)
    # Queue entries: (epoch, [(id, matrix), ...]) in arrival order.
    queue: deque[tuple[int, list[tuple[str, np.ndarray]]]] = deque()
    shuffle_rng = np.random.default_rng(
        np.random.SeedSequence((cfg.seed % (1 << 64), 0xA11CE)))

    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(len(columns))
        n_batches = len(columns) // cfg.batch_size
        for b in range(n_batches):
            picks = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            queue.append((epoch, [columns[i] for i in picks]))
            if len(queue) < cfg.queue_len + 1:
                continue
            _, current = queue.popleft()
            neg_embs = projection.embed_many(
                [mat for _, batch in queue for _, mat in batch],
                state.momentum_params)
            batch_loss = 0.0
            batch_grad = np.zeros_like(state.target_params)
            for cid, _ in current:
                example = provider(cid, epoch)
                pos_embs = projection.embed_many(
                    list(example.positives), state.momentum_params)
                loss, grad = anchor_loss_and_grad(
                    state.target_params, example.anchor, pos_embs,
                    neg_embs, cfg.temperature)
                batch_loss += loss
                batch_grad += grad
            batch_loss /= len(current)
            batch_grad /= len(current)
            _adam_step(state, batch_grad, cfg)
            state.momentum_params = momentum_update(
                state.momentum_params, state.target_params,
                cfg.momentum_alpha)
            result.log.append((epoch, state.step, batch_loss))
    return result


def write_training_log(log: Sequence[tuple[int, int, float]],
                       path: str | Path) -> None:
    """Persist update-step losses as CSV: epoch, step, mean_loss."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["epoch", "step", "mean_loss"])
        for epoch, step, loss in log:
            writer.writerow([epoch, step, f"{loss:.10g}"])
