"""Top-K ranking metrics (Recall@K, NDCG@K) over all items.

Every item is a candidate except the user's training positives, which are
excluded from the ranking.  Scores are computed in float64; ties are
broken toward the lower item id, and users with empty test sets are left
out of the averages.  Matrices are only read, so evaluation can overlap
nothing and runs blocked over users with deterministic user-id-order
reduction.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .dataset import InteractionSet
from .embeddings import EmbeddingMatrix


class EmptyTestSetError(ValueError):
    """No user has any test item; metrics are undefined."""


@dataclass(frozen=True)
class MetricsReport:
    """Mean ranking quality over all evaluated users."""

    recall_at_k: float
    ndcg_at_k: float
    k: int
    users_evaluated: int


def metrics_json(epoch: int, m: MetricsReport) -> str:
    """One evaluation as a stable JSON line."""
    return json.dumps({
        "epoch": epoch,
        f"recall@{m.k}": m.recall_at_k,
        f"ndcg@{m.k}": m.ndcg_at_k,
        "users": m.users_evaluated,
    })


def _score_row(user_vec: np.ndarray, item_values64: np.ndarray,
               item_norms: np.ndarray, similarity: str) -> np.ndarray:
    u = np.asarray(user_vec, dtype=np.float64)
    scores = item_values64 @ u
    if similarity == "cosine":
        unorm = math.sqrt(float(u @ u))
        if unorm == 0.0:
            return np.zeros(len(scores))
        with np.errstate(invalid="ignore", divide="ignore"):
            scores = scores / (unorm * item_norms)
        scores[item_norms == 0.0] = 0.0
    return scores


def _topk_from_scores(scores: np.ndarray, exclude: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k best scores, excluded ids skipped, ties to lower id."""
    scores = scores.copy()
    if len(exclude):
        scores[exclude] = -np.inf
    n_cand = len(scores) - len(exclude)
    kk = min(k, n_cand)
    if kk <= 0:
        return np.empty(0, dtype=np.int64)
    thresh = np.partition(scores, len(scores) - kk)[len(scores) - kk]
    cand = np.flatnonzero(scores >= thresh)
    order = np.lexsort((cand, -scores[cand]))
    return cand[order][:kk]


def topk_items(user_vec: np.ndarray, T: EmbeddingMatrix, exclude, k: int,
               similarity: str = "cosine") -> np.ndarray:
    """The k items most similar to user_vec, skipping excluded ids.

    Ties break toward the lower item id; if fewer than k candidates exist,
    all of them are returned in rank order.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    item64 = T.values.astype(np.float64)
    norms = np.sqrt(np.einsum("ij,ij->i", item64, item64))
    scores = _score_row(user_vec, item64, norms, similarity)
    return _topk_from_scores(scores, np.asarray(exclude, dtype=np.int64), k)


def _aggregated_user_vectors(S: EmbeddingMatrix, T: EmbeddingMatrix,
                             train: InteractionSet, weights: np.ndarray,
                             gamma: float, max_history: int) -> np.ndarray:
    """Batched aggregation forward for every user (float64)."""
    nu = S.rows
    K = S.dim
    counts = np.minimum(np.diff(train.offsets), max_history).astype(np.int64)
    counts = np.concatenate([counts, np.zeros(nu - train.num_users, dtype=np.int64)])
    ids = np.concatenate([
        train.slice(u)[: counts[u]] for u in range(train.num_users)
    ]) if train.num_pairs else np.empty(0, dtype=np.int32)
    pooled = np.zeros((nu, K), dtype=np.float64)
    nz = np.flatnonzero(counts)
    if len(nz):
        bounds = np.concatenate([[0], np.cumsum(counts)])[nz]
        sums = np.add.reduceat(T.values[ids].astype(np.float64), bounds, axis=0)
        pooled[nz] = sums / counts[nz, None]
    return gamma * S.values.astype(np.float64) + (1.0 - gamma) * (
        pooled @ weights.astype(np.float64)
    )


def evaluate(S: EmbeddingMatrix, T: EmbeddingMatrix, train: InteractionSet,
             test: InteractionSet, cfg, weights: np.ndarray | None = None,
             k: int = 20, block_users: int = 512) -> MetricsReport:
    """Recall@k and NDCG@k averaged over users with at least one test item.

    Per user: recall = |top-k hits| / |test items|; NDCG = DCG/IDCG with
    DCG = sum over hits of 1/log2(rank+1) (ranks 1-based) and IDCG the sum
    over the first min(k, |test items|) ranks.  Training positives never
    appear in the ranking.  When cfg.aggregator.enabled, the query vector
    is the aggregation output instead of the raw user embedding.
    """
    if test.num_users > S.rows:
        raise ValueError(f"test has {test.num_users} users but matrix {S.rows} rows")
    if max(train.num_items, test.num_items) > T.rows:
        raise ValueError("item universe exceeds item matrix rows")
    if test.num_pairs == 0:
        raise EmptyTestSetError("no user has a test item")

    agg = getattr(cfg, "aggregator", None)
    similarity = getattr(cfg, "similarity", "cosine")
    if agg is not None and agg.enabled:
        if weights is None:
            raise ValueError("aggregator enabled but no weight matrix given")
        users_mat = _aggregated_user_vectors(S, T, train, weights, agg.gamma, agg.max_history)
    else:
        users_mat = S.values.astype(np.float64)

    item64 = T.values.astype(np.float64)
    item_norms = np.sqrt(np.einsum("ij,ij->i", item64, item64))
    eval_users = [u for u in range(test.num_users) if len(test.slice(u))]

    idcg_table = []
    acc = 0.0
    for r in range(1, k + 1):
        acc += 1.0 / math.log2(r + 1)
        idcg_table.append(acc)
    recall_sum = 0.0
    ndcg_sum = 0.0
    for bstart in range(0, len(eval_users), block_users):
        block = eval_users[bstart:bstart + block_users]
        sub = users_mat[block]
        scores = sub @ item64.T
        if similarity == "cosine":
            unorms = np.sqrt(np.einsum("ij,ij->i", sub, sub))
            with np.errstate(invalid="ignore", divide="ignore"):
                scores = scores / (unorms[:, None] * item_norms[None, :])
            scores[unorms == 0.0, :] = 0.0
            scores[:, item_norms == 0.0] = 0.0
        for row, u in enumerate(block):
            exclude = train.slice(u) if u < train.num_users else np.empty(0, dtype=np.int64)
            top = _topk_from_scores(scores[row], np.asarray(exclude, dtype=np.int64), k)
            test_items = set(int(i) for i in test.slice(u))
            dcg = 0.0
            hits = 0
            for rank, item in enumerate(top, start=1):
                if int(item) in test_items:
                    hits += 1
                    dcg += 1.0 / math.log2(rank + 1)
            recall_sum += hits / len(test_items)
            ndcg_sum += dcg / idcg_table[min(k, len(test_items)) - 1]
    n = len(eval_users)
    return MetricsReport(
        recall_at_k=recall_sum / n,
        ndcg_at_k=ndcg_sum / n,
        k=k,
        users_evaluated=n,
    )
