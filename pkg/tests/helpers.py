"""Independent reference implementations used as test oracles.

Everything here is deliberately naive: plain loops, full sorts, and
textbook formulas, kept free of the library's own kernel code so the two
sides of every comparison stay independent.
"""

from __future__ import annotations

import math

import numpy as np


def naive_dot(u, v) -> float:
    acc = 0.0
    for a, b in zip(u, v):
        acc += float(a) * float(b)
    return acc


def naive_cosine(u, v) -> float:
    ss = naive_dot(u, u)
    tt = naive_dot(v, v)
    if ss <= 0.0 or tt <= 0.0:
        return 0.0
    return naive_dot(u, v) / (math.sqrt(ss) * math.sqrt(tt))


def naive_ccl_loss(sim_pos: float, sim_negs, mu: float, theta: float) -> float:
    total = 1.0 - sim_pos
    for s in sim_negs:
        total += (mu / len(sim_negs)) * max(0.0, s - theta)
    return total


def _cosine_batch(U: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Cosine of each row of U against v, float64."""
    U = U.astype(np.float64)
    v = v.astype(np.float64)
    un = np.sqrt(np.sum(U * U, axis=1))
    vn = math.sqrt(float(v @ v))
    out = U @ v
    good = (un > 0) & (vn > 0)
    out[good] /= un[good] * vn
    out[~good] = 0.0
    return out


def fd_cosine_grads(u, v, step: float = 1e-6) -> tuple[np.ndarray, np.ndarray]:
    """Central finite differences of cosine similarity w.r.t. u and v."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    k = len(u)
    eye = np.eye(k) * step
    gu = (_cosine_batch(u[None, :] + eye, v) - _cosine_batch(u[None, :] - eye, v)) / (2 * step)
    gv = (_cosine_batch(v[None, :] + eye, u) - _cosine_batch(v[None, :] - eye, u)) / (2 * step)
    return gu, gv


def full_sort_topk(scores, exclude, k: int) -> list[int]:
    """Rank every candidate by (score desc, id asc) and take the first k."""
    excluded = set(int(e) for e in exclude)
    ranked = sorted(
        (i for i in range(len(scores)) if i not in excluded),
        key=lambda i: (-float(scores[i]), i),
    )
    return ranked[:k]


def brute_force_metrics(S, T, train, test, k: int, similarity: str = "cosine",
                        user_vectors=None) -> tuple[float, float, int]:
    """Reference Recall@k / NDCG@k via full sorts; returns (recall, ndcg, users)."""
    recalls, ndcgs = [], []
    for u in range(test.num_users):
        test_items = set(int(i) for i in test.slice(u))
        if not test_items:
            continue
        uvec = user_vectors[u] if user_vectors is not None else S.values[u]
        if similarity == "cosine":
            scores = _cosine_batch(T.values, np.asarray(uvec))
        else:
            scores = T.values.astype(np.float64) @ np.asarray(uvec, dtype=np.float64)
        exclude = train.slice(u) if u < train.num_users else []
        top = full_sort_topk(scores, exclude, k)
        hits = 0
        dcg = 0.0
        for rank, item in enumerate(top, start=1):
            if item in test_items:
                hits += 1
                dcg += 1.0 / math.log2(rank + 1)
        idcg = sum(1.0 / math.log2(r + 1) for r in range(1, min(k, len(test_items)) + 1))
        recalls.append(hits / len(test_items))
        ndcgs.append(dcg / idcg)
    return (
        sum(recalls) / len(recalls),
        sum(ndcgs) / len(ndcgs),
        len(recalls),
    )


def random_interactions(rng: np.random.Generator, num_users: int, num_items: int,
                        max_per_user: int):
    """Random user -> item-list dict (possibly with empty users)."""
    lists = {}
    for u in range(num_users):
        n = int(rng.integers(0, max_per_user + 1))
        if n:
            lists[u] = np.unique(rng.integers(0, num_items, size=n))
    return lists
