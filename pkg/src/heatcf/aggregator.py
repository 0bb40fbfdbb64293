"""Behavior aggregation: augment the user vector with pooled history items.

The aggregated user vector is a convex mix of the user's own embedding and
a learned K x K transform of the average-pooled embeddings of the user's
historical items:

    pooled = mean(history rows)            (zero vector for empty history)
    h      = gamma * user + (1 - gamma) * (pooled @ W)

W is stored input-major: W[k, j] maps pooled component k to output
component j, so the weight gradient's row k is pooled[k] * h_grad.  W is
one matrix shared by all trainer threads and updated without locks; each
thread accumulates its weight gradients locally and folds the average into
W once per `mini_batch_size` steps, which keeps shared-memory write
conflicts off the per-step path.

By default gradients stop at W: history item rows are not updated through
the aggregation path (`history_grad` turns that on).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embeddings import InitSpec, init_matrix


@dataclass(frozen=True)
class AggregatorConfig:
    """Mixing weight, history cap, and local-accumulation batch size."""

    enabled: bool = False
    gamma: float = 0.5
    max_history: int = 100
    mini_batch_size: int = 32
    history_grad: bool = False
    learning_rate: float | None = None  # None: share the embedding learning rate

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must be in [0, 1], got {self.gamma}")
        if self.max_history < 0:
            raise ValueError(f"max_history must be >= 0, got {self.max_history}")
        if self.mini_batch_size < 1:
            raise ValueError(f"mini_batch_size must be >= 1, got {self.mini_batch_size}")


def init_weights(dim: int, seed: int) -> np.ndarray:
    """Xavier-uniform K x K aggregation weights (float32)."""
    return init_matrix(dim, dim, InitSpec(kind="xavier", seed=seed)).values


class LocalGradState:
    """One thread's weight-gradient accumulator and flush counter."""

    def __init__(self, dim: int, mini_batch_size: int):
        self.accu = np.zeros((dim, dim), dtype=np.float64)
        self.count = 0
        self.mini_batch_size = mini_batch_size


def aggregate_forward(user_vec: np.ndarray, history_vecs, w: np.ndarray,
                      cfg: AggregatorConfig) -> tuple[np.ndarray, np.ndarray]:
    """Aggregated user vector h and the pooled history mean (for backward reuse)."""
    user_vec = np.asarray(user_vec, dtype=np.float64)
    dim = user_vec.shape[0]
    if w.shape != (dim, dim):
        raise ValueError(f"weights must be {dim}x{dim}, got {w.shape}")
    pooled = np.zeros(dim, dtype=np.float64)
    n = 0
    for vec in history_vecs:
        vec = np.asarray(vec)
        if vec.shape[0] != dim:
            raise ValueError(f"history vector has dim {vec.shape[0]}, expected {dim}")
        pooled += vec
        n += 1
    if n:
        pooled /= n
    h = cfg.gamma * user_vec + (1.0 - cfg.gamma) * (pooled @ w.astype(np.float64))
    return h, pooled


def aggregate_backward(h_grad: np.ndarray, pooled: np.ndarray, w: np.ndarray,
                       cfg: AggregatorConfig, local: LocalGradState,
                       learning_rate: float) -> np.ndarray:
    """Backward step through the aggregation mix.

    Returns the gradient reaching the user's own embedding (gamma *
    h_grad).  The weight gradient (1 - gamma) * outer(pooled, h_grad) is
    added to the thread-local accumulator; every `mini_batch_size` steps
    the averaged accumulation is applied to the shared weight matrix in
    place, without locks, and the accumulator is zeroed.
    """
    h_grad = np.asarray(h_grad, dtype=np.float64)
    pooled = np.asarray(pooled, dtype=np.float64)
    local.accu += (1.0 - cfg.gamma) * np.outer(pooled, h_grad)
    local.count += 1
    if local.count >= local.mini_batch_size:
        w -= (learning_rate * (local.accu / local.mini_batch_size)).astype(np.float32)
        local.accu[:] = 0.0
        local.count = 0
    return cfg.gamma * h_grad


def history_gradient(h_grad: np.ndarray, w: np.ndarray, cfg: AggregatorConfig,
                     history_len: int) -> np.ndarray:
    """Gradient reaching each history item row when history_grad is enabled."""
    if history_len == 0:
        return np.zeros(w.shape[0], dtype=np.float64)
    scale = (1.0 - cfg.gamma) / history_len
    return scale * (w.astype(np.float64) @ np.asarray(h_grad, dtype=np.float64))
