"""Negative-item samplers and the tiling size / refresh interval tuner.

Two samplers produce negative item ids per training pair:

* uniform — i.i.d. draws over the whole item universe.  Duplicates are
  allowed and a user's positives are not filtered out (filtering would put
  a per-user membership test in the hot loop for a vanishingly small bias
  change at real catalog sizes).

* tiled — each trainer thread keeps a private tile: the embeddings of
  `tile_size` (N1) randomly chosen items copied into one contiguous,
  cache-resident buffer.  Negatives are drawn from tile slots and their
  embeddings read from the buffer, not from the item matrix.  Every
  `refresh_interval` (N2) draws-per-pair the tile is resampled, which
  enlarges the effective sampling space to (iterations / N2) * N1 while
  keeping almost all negative reads inside the cache.

`tune_tiling` picks (N1, N2) from machine and workload parameters;
`estimate_speedup` predicts the read-phase gain those values buy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .embeddings import EmbeddingMatrix
from .rng import SplitMix64, rng_below

BETA = 0.85  # fraction of the expected speedup budgeted to negative reads
ALPHA = 0.15  # fraction budgeted to positive reads (diagnostic only)


def sample_uniform(num_items: int, n: int, rng: SplitMix64) -> np.ndarray:
    """n i.i.d. uniform item ids in [0, num_items); duplicates allowed."""
    if num_items < 1:
        raise ValueError(f"num_items must be >= 1, got {num_items}")
    out = np.empty(n, dtype=np.int32)
    for i in range(n):
        out[i] = rng.below(num_items)
    return out


class TileState:
    """Per-thread tile of negative-item embeddings plus refresh bookkeeping.

    Not shared between threads.  `tile_embeddings[j]` is the snapshot of
    the item matrix row `tile[j]` taken at the most recent refresh.
    """

    def __init__(self, item_matrix: EmbeddingMatrix, n1: int, n2: int, rng: SplitMix64):
        if n1 < 1 or n2 < 1:
            raise ValueError(f"tile size and refresh interval must be >= 1, got ({n1}, {n2})")
        self.n1 = n1
        self.n2 = n2
        self.rng = rng
        self.num_items = item_matrix.rows
        self.tile = np.empty(n1, dtype=np.int32)
        self.tile_embeddings = np.empty((n1, item_matrix.dim), dtype=np.float32)
        self.iter_count = 0
        self._refresh(item_matrix)

    def _refresh(self, item_matrix: EmbeddingMatrix) -> None:
        for j in range(self.n1):
            tid = self.rng.below(self.num_items)
            self.tile[j] = tid
            self.tile_embeddings[j] = item_matrix.values[tid]
        self.iter_count = 0


def sample_tiled(state: TileState, item_matrix: EmbeddingMatrix, n: int) -> np.ndarray:
    """n uniform draws of tile slots for one training pair.

    Counts one iteration against the refresh interval; when `iter_count`
    reaches N2 the tile ids are resampled and their rows re-copied, so the
    next call observes a fresh tile.  Returns slot indices in [0, n1);
    callers read ids from `state.tile` and embeddings from
    `state.tile_embeddings`.
    """
    slots = np.empty(n, dtype=np.int32)
    for i in range(n):
        slots[i] = state.rng.below(state.n1)
    state.iter_count += 1
    if state.iter_count >= state.n2:
        state._refresh(item_matrix)
    return slots


@njit(nogil=True, cache=True)
def refresh_tile(rng_state, tile_ids, tile_emb, item_values):
    """Kernel-side tile refresh: resample ids, snapshot rows. Counted as read time."""
    num_items = item_values.shape[0]
    for j in range(tile_ids.shape[0]):
        tid = rng_below(rng_state, num_items)
        tile_ids[j] = tid
        for k in range(tile_emb.shape[1]):
            tile_emb[j, k] = item_values[tid, k]


@dataclass(frozen=True)
class TuneInputs:
    """Machine and workload parameters consumed by the tuner.

    Latencies are relative units; only their ratios matter.  The defaults
    (memory 100, L3 20, L2 5) are typical published ratios and can be
    replaced with measured values.
    """

    num_items: int
    total_iterations: int
    num_negatives: int
    num_threads: int
    emb_dim: int
    l2_bytes: int
    l3_bytes: int
    num_positives: int = 1
    positive_hit_ratio: float = 0.0
    latency_mem: float = 100.0
    latency_l3: float = 20.0
    latency_l2: float = 5.0
    expected_speedup: float = 1.5

    def __post_init__(self):
        for name in ("num_items", "total_iterations", "num_negatives", "num_threads",
                     "emb_dim", "l2_bytes", "l3_bytes", "num_positives"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not (0.0 < self.latency_l2 <= self.latency_l3 <= self.latency_mem):
            raise ValueError("latencies must satisfy 0 < l2 <= l3 <= mem")
        if not 0.0 <= self.positive_hit_ratio <= 1.0:
            raise ValueError("positive_hit_ratio must be in [0, 1]")


@dataclass(frozen=True)
class SpeedupEstimate:
    """Predicted read-phase gains for a (n1, n2) choice."""

    neg_speedup: float
    pos_speedup: float
    tier: str  # which cache level holds all threads' tiles: "l2" | "l3" | "mem"
    alpha: float  # pos_speedup / expected_speedup, reported for inspection
    beta: float   # neg_speedup / expected_speedup, reported for inspection


def _cache_tier(inputs: TuneInputs, n1: int) -> tuple[str, float]:
    row_bytes = inputs.emb_dim * 4
    total = n1 * row_bytes * inputs.num_threads
    if total < inputs.l2_bytes:
        return "l2", inputs.latency_l2
    if total < inputs.l3_bytes:
        return "l3", inputs.latency_l3
    return "mem", inputs.latency_mem


def tile_size_for_l2(l2_bytes: int, num_threads: int, emb_dim: int) -> int:
    """Largest power-of-two tile such that all threads' tiles fill at most
    half of L2, leaving the other half for working data."""
    budget = l2_bytes // 2
    per_row = num_threads * emb_dim * 4
    n1 = 1
    while n1 * 2 * per_row <= budget:
        n1 *= 2
    return n1


def tune_tiling(inputs: TuneInputs) -> tuple[int, int]:
    """Choose (tile size N1, refresh interval N2) for an expected speedup P.

    N1 comes from the L2 budget rule above (clamped to the item count).
    Two candidate intervals are computed: N20 = M*N1/I keeps the effective
    sampling space at least the item count, N21 = N1/(BETA*P) targets the
    negative-read share of the requested speedup (read speedup is
    approximately N2/N1).  The smaller wins, favoring accuracy: a smaller
    interval means a larger effective sampling space.
    """
    if inputs.expected_speedup <= 0:
        raise ValueError(f"expected speedup must be positive, got {inputs.expected_speedup}")
    n1 = tile_size_for_l2(inputs.l2_bytes, inputs.num_threads, inputs.emb_dim)
    while n1 > inputs.num_items and n1 > 1:
        n1 //= 2
    n20 = inputs.total_iterations * n1 / inputs.num_items
    n21 = n1 / (BETA * inputs.expected_speedup)
    n2 = max(1, int(min(n20, n21)))
    return n1, n2


def estimate_speedup(inputs: TuneInputs, n1: int, n2: int) -> SpeedupEstimate:
    """Predict negative- and positive-read speedups for a given (n1, n2).

    Negative reads: uniform sampling pays the memory latency for every
    draw (M * n_n * t_m); tiling pays the tile-tier latency except for the
    N1 rows re-fetched from memory at each refresh.  As the tier latency
    approaches zero the ratio tends to N2/N1.  Positive reads: a fraction
    r of positives is found in cache.
    """
    if n1 < 1 or n2 < 1:
        raise ValueError(f"n1 and n2 must be >= 1, got ({n1}, {n2})")
    tier, t_c = _cache_tier(inputs, n1)
    t_m = inputs.latency_mem
    m = inputs.total_iterations
    n_n = inputs.num_negatives
    neg_time_random = m * n_n * t_m
    neg_time_tiling = n_n * (m / n2) * ((n2 - n1) * t_c + n1 * t_m)
    neg_speedup = neg_time_random / neg_time_tiling
    r = inputs.positive_hit_ratio
    pos_speedup = t_m / (r * t_c + (1.0 - r) * t_m)
    p = inputs.expected_speedup
    return SpeedupEstimate(
        neg_speedup=neg_speedup,
        pos_speedup=pos_speedup,
        tier=tier,
        alpha=pos_speedup / p,
        beta=neg_speedup / p,
    )
