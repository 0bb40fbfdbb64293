"""Fused forward/backward multithreaded SGD over shared embedding matrices.

Each worker thread repeatedly claims a contiguous chunk of the epoch's
(user, positive) pair permutation from a shared counter, then runs the
compiled per-pair loop over its chunk: sample negatives, read the involved
embeddings into a fixed per-thread scratch buffer, compute similarities
and the contrastive loss, form analytical gradients from the cached
forward reductions, and immediately write the updated rows back in place.
No batch tensors are materialized; per-pair state is O(n_negatives * K)
per thread.

Embedding matrices (and aggregator weights) are shared mutable state
updated without locks.  Concurrent row writes may race; torn 32-bit lanes
are accepted as benign, so multi-threaded runs are not bit-reproducible.
Single-threaded runs are fully deterministic: one thread claims chunks in
order and all randomness comes from streams derived from (seed, epoch,
thread).

The chunk counter is the only inter-thread synchronization inside an
epoch; per-thread partial results are reduced after a join barrier at
epoch end.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .aggregator import AggregatorConfig
from .dataset import InteractionSet, epoch_pairs
from .embeddings import EmbeddingMatrix
from .kernels import LossParams
from .rng import rng_below, stream_state
from .sampler import refresh_tile
from .timing import cycles, cycles_per_second

PHASE_NAMES = ("read_emb", "similarity", "loss", "gradient", "update", "aggregate")

_EPOCH_SALT = 0x45504F43  # stream domain tag for epoch-level derivations
_SHUFFLE_SALT = 0x53485546


@dataclass(frozen=True)
class SamplerConfig:
    """Negative sampler choice: uniform over all items, or per-thread tiling."""

    kind: str = "uniform"
    tile_size: int = 1024
    refresh_interval: int = 4096

    def __post_init__(self):
        if self.kind not in ("uniform", "tiling"):
            raise ValueError(f"unknown sampler kind: {self.kind!r}")
        if self.kind == "tiling" and (self.tile_size < 1 or self.refresh_interval < 1):
            raise ValueError("tiling needs tile_size >= 1 and refresh_interval >= 1")


@dataclass(frozen=True)
class TrainingConfig:
    """All training hyperparameters."""

    emb_dim: int = 128
    num_negatives: int = 64
    learning_rate: float = 0.05
    epochs: int = 100
    num_threads: int = 1
    similarity: str = "cosine"
    loss: LossParams = field(default_factory=LossParams)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    aggregator: AggregatorConfig = field(default_factory=AggregatorConfig)
    seed: int = 0
    l2_reg: float = 0.0
    chunk_pairs: int = 2048

    def __post_init__(self):
        if self.num_negatives < 1:
            raise ValueError(f"num_negatives must be >= 1, got {self.num_negatives}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.num_threads < 1:
            raise ValueError(f"num_threads must be >= 1, got {self.num_threads}")
        if self.similarity not in ("cosine", "dot"):
            raise ValueError(f"unknown similarity: {self.similarity!r}")


@dataclass
class EpochReport:
    """Per-epoch training telemetry."""

    epoch: int
    mean_loss: float
    wall_time: float
    phase_times: dict[str, float]  # seconds, averaged across threads
    degenerate_count: int
    num_pairs: int
    num_threads: int


@njit(nogil=True, cache=True)
def _train_chunk(S, T, ep_users, ep_items, start, stop,
                 tiled, num_items, rng_state, tile_ids, tile_emb, tile_ctr, n2,
                 use_cosine, n_neg, lr, l2, mu, theta,
                 agg_on, W, gamma, agg_lr, mb_size, hist_prop,
                 tr_offsets, tr_items, max_history, agg_accu, agg_ctr,
                 ubuf, pooled, ugrad, wh, pos_buf, neg_buf, neg_ids,
                 tts, sts, sims, dnegs,
                 loss_out, degen_out, phase_cycles, collect_phases):
    K = S.shape[1]
    inv_n = 1.0 / n_neg
    for i in range(start, stop):
        u = ep_users[i]
        pos = ep_items[i]

        # read: fetch the user row, positive row, and sampled negative rows
        # into per-thread scratch; tile refresh cost lands here too.
        t0 = cycles() if collect_phases else 0
        for k in range(K):
            pos_buf[k] = T[pos, k]
        if tiled:
            n1 = tile_ids.shape[0]
            for j in range(n_neg):
                slot = rng_below(rng_state, n1)
                neg_ids[j] = tile_ids[slot]
                for k in range(K):
                    neg_buf[j, k] = tile_emb[slot, k]
            tile_ctr[0] += 1
            if tile_ctr[0] >= n2:
                refresh_tile(rng_state, tile_ids, tile_emb, T)
                tile_ctr[0] = 0
        else:
            for j in range(n_neg):
                nid = rng_below(rng_state, num_items)
                neg_ids[j] = nid
                for k in range(K):
                    neg_buf[j, k] = T[nid, k]
        if not agg_on:
            for k in range(K):
                ubuf[k] = np.float64(S[u, k])
        if collect_phases:
            t1 = cycles()
            phase_cycles[0] += np.float64(t1 - t0)
            t0 = t1

        # aggregate forward: pooled history mean through the shared weights
        hist_len = 0
        if agg_on:
            hb = tr_offsets[u]
            he = tr_offsets[u + 1]
            if he - hb > max_history:
                he = hb + max_history
            hist_len = he - hb
            for k in range(K):
                pooled[k] = 0.0
            for idx in range(hb, he):
                hid = tr_items[idx]
                for k in range(K):
                    pooled[k] += np.float64(T[hid, k])
            if hist_len > 0:
                for k in range(K):
                    pooled[k] /= hist_len
            for j in range(K):
                acc = 0.0
                for k in range(K):
                    acc += pooled[k] * np.float64(W[k, j])
                ubuf[j] = gamma * np.float64(S[u, j]) + (1.0 - gamma) * acc
            if collect_phases:
                t1 = cycles()
                phase_cycles[5] += np.float64(t1 - t0)
                t0 = t1

        # similarity: one self-dot for the query, then per item (v.v, u.v)
        ss = 0.0
        for k in range(K):
            ss += ubuf[k] * ubuf[k]
        tt_p = 0.0
        st_p = 0.0
        for k in range(K):
            tt_p += np.float64(pos_buf[k]) * np.float64(pos_buf[k])
            st_p += ubuf[k] * np.float64(pos_buf[k])
        if use_cosine:
            if ss <= 0.0 or tt_p <= 0.0:
                sim_p = 0.0
                degen_out[0] += 1
            else:
                sim_p = st_p / (np.sqrt(ss) * np.sqrt(tt_p))
        else:
            sim_p = st_p
        for j in range(n_neg):
            tt = 0.0
            st = 0.0
            for k in range(K):
                tt += np.float64(neg_buf[j, k]) * np.float64(neg_buf[j, k])
                st += ubuf[k] * np.float64(neg_buf[j, k])
            tts[j] = tt
            sts[j] = st
            if use_cosine:
                if ss <= 0.0 or tt <= 0.0:
                    sims[j] = 0.0
                    degen_out[0] += 1
                else:
                    sims[j] = st / (np.sqrt(ss) * np.sqrt(tt))
            else:
                sims[j] = st
        if collect_phases:
            t1 = cycles()
            phase_cycles[1] += np.float64(t1 - t0)
            t0 = t1

        # loss: contrastive objective and its per-similarity derivative
        hinge = 0.0
        for j in range(n_neg):
            d = sims[j] - theta
            if d > 0.0:
                hinge += d
                dnegs[j] = mu * inv_n
            else:
                dnegs[j] = 0.0
        loss_out[0] += (1.0 - sim_p) + mu * inv_n * hinge
        dpos = -1.0
        if collect_phases:
            t1 = cycles()
            phase_cycles[2] += np.float64(t1 - t0)
            t0 = t1

        # gradient: query-side gradient accumulated from cached reductions
        rs = np.sqrt(ss) if ss > 0.0 else 0.0
        for k in range(K):
            ugrad[k] = 0.0
        if use_cosine:
            if ss > 0.0 and tt_p > 0.0:
                denom = ss * rs * np.sqrt(tt_p)
                for k in range(K):
                    ugrad[k] += dpos * (np.float64(pos_buf[k]) * ss - st_p * ubuf[k]) / denom
            for j in range(n_neg):
                if dnegs[j] != 0.0 and ss > 0.0 and tts[j] > 0.0:
                    denom = ss * rs * np.sqrt(tts[j])
                    wj = dnegs[j]
                    for k in range(K):
                        ugrad[k] += wj * (np.float64(neg_buf[j, k]) * ss - sts[j] * ubuf[k]) / denom
        else:
            for k in range(K):
                ugrad[k] += dpos * np.float64(pos_buf[k])
            for j in range(n_neg):
                if dnegs[j] != 0.0:
                    wj = dnegs[j]
                    for k in range(K):
                        ugrad[k] += wj * np.float64(neg_buf[j, k])
        if collect_phases:
            t1 = cycles()
            phase_cycles[3] += np.float64(t1 - t0)
            t0 = t1

        # update: item rows in place from snapshots; user row unless the
        # aggregation chain owns that write.
        if use_cosine:
            if ss > 0.0 and tt_p > 0.0:
                denom = tt_p * np.sqrt(tt_p) * rs
                for k in range(K):
                    g = dpos * (ubuf[k] * tt_p - st_p * np.float64(pos_buf[k])) / denom
                    T[pos, k] = np.float32(np.float64(T[pos, k]) - lr * (g + l2 * np.float64(T[pos, k])))
            elif l2 != 0.0:
                for k in range(K):
                    T[pos, k] = np.float32(np.float64(T[pos, k]) - lr * l2 * np.float64(T[pos, k]))
        else:
            for k in range(K):
                g = dpos * ubuf[k]
                T[pos, k] = np.float32(np.float64(T[pos, k]) - lr * (g + l2 * np.float64(T[pos, k])))
        for j in range(n_neg):
            if dnegs[j] != 0.0:
                nid = neg_ids[j]
                if use_cosine:
                    if ss > 0.0 and tts[j] > 0.0:
                        denom = tts[j] * np.sqrt(tts[j]) * rs
                        wj = dnegs[j]
                        for k in range(K):
                            g = wj * (ubuf[k] * tts[j] - sts[j] * np.float64(neg_buf[j, k])) / denom
                            T[nid, k] = np.float32(np.float64(T[nid, k]) - lr * (g + l2 * np.float64(T[nid, k])))
                else:
                    wj = dnegs[j]
                    for k in range(K):
                        g = wj * ubuf[k]
                        T[nid, k] = np.float32(np.float64(T[nid, k]) - lr * (g + l2 * np.float64(T[nid, k])))
            elif l2 != 0.0:
                nid = neg_ids[j]
                for k in range(K):
                    T[nid, k] = np.float32(np.float64(T[nid, k]) - lr * l2 * np.float64(T[nid, k]))
        if not agg_on:
            for k in range(K):
                S[u, k] = np.float32(np.float64(S[u, k]) - lr * (ugrad[k] + l2 * np.float64(S[u, k])))
        if collect_phases:
            t1 = cycles()
            phase_cycles[4] += np.float64(t1 - t0)
            t0 = t1

        # aggregate backward: chain to the user row, accumulate the weight
        # gradient locally, flush to shared weights every mb_size steps.
        if agg_on:
            for k in range(K):
                S[u, k] = np.float32(np.float64(S[u, k]) - lr * (gamma * ugrad[k] + l2 * np.float64(S[u, k])))
            for a in range(K):
                pa = (1.0 - gamma) * pooled[a]
                if pa != 0.0:
                    for b in range(K):
                        agg_accu[a, b] += pa * ugrad[b]
            agg_ctr[0] += 1
            if agg_ctr[0] >= mb_size:
                inv_m = 1.0 / mb_size
                for a in range(K):
                    for b in range(K):
                        W[a, b] = np.float32(np.float64(W[a, b]) - agg_lr * agg_accu[a, b] * inv_m)
                        agg_accu[a, b] = 0.0
                agg_ctr[0] = 0
            if hist_prop and hist_len > 0:
                scale = (1.0 - gamma) / hist_len
                for k in range(K):
                    acc = 0.0
                    for b in range(K):
                        acc += np.float64(W[k, b]) * ugrad[b]
                    wh[k] = scale * acc
                hb = tr_offsets[u]
                for idx in range(hb, hb + hist_len):
                    hid = tr_items[idx]
                    for k in range(K):
                        T[hid, k] = np.float32(np.float64(T[hid, k]) - lr * (wh[k] + l2 * np.float64(T[hid, k])))
            if collect_phases:
                t1 = cycles()
                phase_cycles[5] += np.float64(t1 - t0)


class _ThreadState:
    """Scratch buffers, RNG stream, tile, and accumulators for one worker."""

    def __init__(self, cfg: TrainingConfig, T: EmbeddingMatrix, seed_words: tuple[int, ...]):
        K = cfg.emb_dim
        n = cfg.num_negatives
        self.rng_state = stream_state(cfg.seed, *seed_words)
        tiled = cfg.sampler.kind == "tiling"
        n1 = cfg.sampler.tile_size if tiled else 1
        self.tile_ids = np.zeros(n1, dtype=np.int32)
        self.tile_emb = np.zeros((n1, K), dtype=np.float32)
        self.tile_ctr = np.zeros(1, dtype=np.int64)
        if tiled:
            refresh_tile(self.rng_state, self.tile_ids, self.tile_emb, T.values)
        self.agg_accu = np.zeros((K, K) if cfg.aggregator.enabled else (1, 1), dtype=np.float64)
        self.agg_ctr = np.zeros(1, dtype=np.int64)
        self.ubuf = np.zeros(K, dtype=np.float64)
        self.pooled = np.zeros(K, dtype=np.float64)
        self.ugrad = np.zeros(K, dtype=np.float64)
        self.wh = np.zeros(K, dtype=np.float64)
        self.pos_buf = np.zeros(K, dtype=np.float32)
        self.neg_buf = np.zeros((n, K), dtype=np.float32)
        self.neg_ids = np.zeros(n, dtype=np.int32)
        self.tts = np.zeros(n, dtype=np.float64)
        self.sts = np.zeros(n, dtype=np.float64)
        self.sims = np.zeros(n, dtype=np.float64)
        self.dnegs = np.zeros(n, dtype=np.float64)
        self.loss_out = np.zeros(1, dtype=np.float64)
        self.degen_out = np.zeros(1, dtype=np.int64)
        self.phase_cycles = np.zeros(len(PHASE_NAMES), dtype=np.float64)


def _check_shapes(S: EmbeddingMatrix, T: EmbeddingMatrix, train: InteractionSet,
                  cfg: TrainingConfig, weights: np.ndarray | None) -> None:
    if S.dim != cfg.emb_dim or T.dim != cfg.emb_dim:
        raise ValueError(
            f"matrix dims ({S.dim}, {T.dim}) do not match config emb_dim {cfg.emb_dim}"
        )
    if S.rows < train.num_users:
        raise ValueError(f"user matrix has {S.rows} rows for {train.num_users} users")
    if T.rows < train.num_items:
        raise ValueError(f"item matrix has {T.rows} rows for {train.num_items} items")
    if cfg.aggregator.enabled:
        if weights is None:
            raise ValueError("aggregator enabled but no weight matrix given")
        if weights.shape != (cfg.emb_dim, cfg.emb_dim):
            raise ValueError(
                f"aggregator weights shape {weights.shape} != ({cfg.emb_dim}, {cfg.emb_dim})"
            )


def train_epoch(S: EmbeddingMatrix, T: EmbeddingMatrix, train: InteractionSet,
                cfg: TrainingConfig, weights: np.ndarray | None = None,
                epoch: int = 0, collect_phases: bool = False) -> EpochReport:
    """Run one epoch: every train pair processed exactly once by one thread."""
    _check_shapes(S, T, train, cfg, weights)
    ep_users, ep_items = epoch_pairs(
        train, stream_state(cfg.seed, _SHUFFLE_SALT, epoch)[0] >> 1
    )
    npairs = len(ep_users)
    agg = cfg.aggregator
    w = weights if weights is not None else np.zeros((1, 1), dtype=np.float32)
    agg_lr = agg.learning_rate if agg.learning_rate is not None else cfg.learning_rate

    states = [
        _ThreadState(cfg, T, (_EPOCH_SALT, epoch, tid)) for tid in range(cfg.num_threads)
    ]
    chunk = max(1, min(cfg.chunk_pairs, npairs))
    nchunks = (npairs + chunk - 1) // chunk
    counter_lock = threading.Lock()
    next_chunk = [0]
    failures: list[BaseException] = []

    def worker(st: _ThreadState) -> None:
        while True:
            with counter_lock:
                c = next_chunk[0]
                next_chunk[0] += 1
            if c >= nchunks:
                return
            start = c * chunk
            stop = min(npairs, start + chunk)
            _train_chunk(
                S.values, T.values, ep_users, ep_items, start, stop,
                cfg.sampler.kind == "tiling", T.rows,
                st.rng_state, st.tile_ids, st.tile_emb, st.tile_ctr,
                cfg.sampler.refresh_interval,
                cfg.similarity == "cosine", cfg.num_negatives,
                cfg.learning_rate, cfg.l2_reg, cfg.loss.mu, cfg.loss.theta,
                agg.enabled, w, agg.gamma, agg_lr, agg.mini_batch_size,
                agg.history_grad, train.offsets, train.items, agg.max_history,
                st.agg_accu, st.agg_ctr,
                st.ubuf, st.pooled, st.ugrad, st.wh, st.pos_buf, st.neg_buf,
                st.neg_ids, st.tts, st.sts, st.sims, st.dnegs,
                st.loss_out, st.degen_out, st.phase_cycles, collect_phases,
            )

    def guarded(st: _ThreadState) -> None:
        try:
            worker(st)
        except BaseException as exc:  # surfaced after join
            failures.append(exc)

    t_start = time.perf_counter()
    if cfg.num_threads == 1:
        worker(states[0])
    else:
        threads = [threading.Thread(target=guarded, args=(st,)) for st in states]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        if failures:
            raise failures[0]
    wall = time.perf_counter() - t_start

    total_loss = sum(float(st.loss_out[0]) for st in states)
    degen = sum(int(st.degen_out[0]) for st in states)
    if collect_phases:
        per_s = cycles_per_second()
        mean_cycles = np.mean([st.phase_cycles for st in states], axis=0)
        phase_times = {name: float(c) / per_s for name, c in zip(PHASE_NAMES, mean_cycles)}
    else:
        phase_times = {name: 0.0 for name in PHASE_NAMES}
    return EpochReport(
        epoch=epoch,
        mean_loss=total_loss / npairs,
        wall_time=wall,
        phase_times=phase_times,
        degenerate_count=degen,
        num_pairs=npairs,
        num_threads=cfg.num_threads,
    )


@dataclass
class TrainResult:
    """Outcome of a full training run."""

    reports: list[EpochReport]
    evaluations: list[tuple[int, "MetricsReport"]]  # (epoch, metrics)
    final_metrics: "MetricsReport"
    best_recall: float
    best_epoch: int


def train(S: EmbeddingMatrix, T: EmbeddingMatrix, train_set: InteractionSet,
          test_set: InteractionSet, cfg: TrainingConfig,
          weights: np.ndarray | None = None, *, eval_interval: int = 0,
          k: int = 20, out_dir: str | None = None,
          on_epoch=None, on_eval=None) -> TrainResult:
    """Train for cfg.epochs epochs with periodic evaluation and checkpoints.

    Evaluates after every `eval_interval` epochs (0 disables in-run
    evaluation) and once more after the last epoch.  When `out_dir` is
    given, writes a model bundle at the best-recall point (best.ckpt) and
    at the end (final.ckpt).
    """
    from .embeddings import save_model
    from .evaluator import evaluate

    _check_shapes(S, T, train_set, cfg, weights)
    reports: list[EpochReport] = []
    evaluations: list[tuple[int, object]] = []
    best_recall = -1.0
    best_epoch = -1

    def run_eval(epoch: int):
        nonlocal best_recall, best_epoch
        metrics = evaluate(S, T, train_set, test_set, cfg, weights=weights, k=k)
        evaluations.append((epoch, metrics))
        if on_eval is not None:
            on_eval(epoch, metrics)
        if metrics.recall_at_k > best_recall:
            best_recall = metrics.recall_at_k
            best_epoch = epoch
            if out_dir is not None:
                agg_w = weights if cfg.aggregator.enabled else None
                save_model(f"{out_dir}/best.ckpt", S, T, agg_w)
        return metrics

    for epoch in range(cfg.epochs):
        report = train_epoch(S, T, train_set, cfg, weights, epoch=epoch)
        reports.append(report)
        if on_epoch is not None:
            on_epoch(report)
        if eval_interval and (epoch + 1) % eval_interval == 0:
            run_eval(epoch + 1)

    final_metrics = run_eval(cfg.epochs)
    if out_dir is not None:
        agg_w = weights if cfg.aggregator.enabled else None
        save_model(f"{out_dir}/final.ckpt", S, T, agg_w)
    return TrainResult(
        reports=reports,
        evaluations=evaluations,
        final_metrics=final_metrics,
        best_recall=best_recall,
        best_epoch=best_epoch,
    )
