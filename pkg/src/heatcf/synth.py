"""Synthetic clustered implicit-feedback datasets for demos and benchmarks.

Users and items are partitioned into the same number of clusters; each
interaction lands inside the user's own cluster with probability
`affinity`, otherwise anywhere.  The planted structure gives a trained
model a stable, non-trivial Recall@K, which makes these sets useful as
offline stand-ins when no public dataset is on disk.
"""

from __future__ import annotations

import numpy as np

from .dataset import InteractionSet, from_user_lists


def make_clustered(num_users: int, num_items: int, clusters: int,
                   interactions_per_user: int, *, affinity: float = 0.95,
                   test_fraction: float = 0.2, seed: int = 0,
                   ) -> tuple[InteractionSet, InteractionSet]:
    """Build (train, test) sets with planted user/item cluster structure."""
    if clusters < 1 or num_items < clusters:
        raise ValueError("need at least one item per cluster")
    rng = np.random.Generator(np.random.PCG64(seed))
    block = num_items // clusters
    train_lists: dict[int, np.ndarray] = {}
    test_lists: dict[int, np.ndarray] = {}
    for u in range(num_users):
        c = u % clusters
        lo = c * block
        hi = num_items if c == clusters - 1 else lo + block
        n = interactions_per_user
        in_cluster = rng.random(n) < affinity
        items = np.where(
            in_cluster,
            rng.integers(lo, hi, size=n),
            rng.integers(0, num_items, size=n),
        )
        items = np.unique(items)
        rng.shuffle(items)
        n_test = int(len(items) * test_fraction)
        if len(items) - n_test < 1:
            n_test = max(0, len(items) - 1)
        test_lists[u] = np.sort(items[:n_test])
        train_lists[u] = np.sort(items[n_test:])
    train = from_user_lists(train_lists, num_users=num_users, num_items=num_items)
    test = from_user_lists(test_lists, num_users=num_users, num_items=num_items)
    return train, test
