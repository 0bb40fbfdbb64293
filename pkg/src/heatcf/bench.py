"""Benchmark harness: per-phase timing across configuration variants.

Runs a fixed number of epochs for each requested combination of negative
sampler, aggregator setting, and thread count, with warm-up epochs
excluded from the reported means.  Emits one CSV row per variant holding
the epoch time and the per-phase breakdown (read embeddings, similarity,
loss, gradient, update, aggregate), the read-phase speedup of tiling over
uniform at matching settings, and a monotonicity flag for thread sweeps
(epoch times are expected non-increasing in threads; violations are
flagged, not fatal).  Figures for the phase breakdown and the thread
scaling are rendered next to the CSV.
"""

from __future__ import annotations

import csv
import os
from dataclasses import replace

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .aggregator import init_weights
from .config import RunConfig
from .dataset import InteractionSet
from .embeddings import InitSpec, init_matrix
from .rng import derive_stream
from .trainer import PHASE_NAMES, train_epoch

CSV_HEADER = (
    "variant", "sampler", "aggregator", "threads", "epochs_timed",
    "epoch_time_s", *(f"{name}_s" for name in PHASE_NAMES),
    "pairs_per_s", "read_speedup_vs_uniform", "time_monotone",
)

_AGG_SEED_SALT = 0x41474757


def _variant_name(sampler: str, agg: str, threads: int) -> str:
    return f"{sampler}-agg_{agg}-t{threads}"


def run_bench(train: InteractionSet, cfg: RunConfig,
              log=None) -> tuple[list[dict], list[str]]:
    """Run the bench matrix; returns (rows, warnings)."""
    rows: list[dict] = []
    warnings: list[str] = []

    for sampler in cfg.bench_samplers:
        for agg in cfg.bench_aggregator:
            for threads in cfg.bench_threads:
                run_cfg = replace(
                    cfg, sampler=sampler, aggregator=agg == "on", threads=threads,
                ).training_config()
                spec = InitSpec(kind=cfg.init, mean=cfg.init_mean,
                                std=cfg.init_std, seed=cfg.seed)
                S = init_matrix(max(train.num_users, 1), cfg.dim, spec)
                T = init_matrix(max(train.num_items, 1), cfg.dim, spec)
                weights = (
                    init_weights(cfg.dim, derive_stream(cfg.seed, _AGG_SEED_SALT))
                    if agg == "on" else None
                )
                if log:
                    log(f"bench: {_variant_name(sampler, agg, threads)}")
                for w in range(cfg.bench_warmup):
                    train_epoch(S, T, train, run_cfg, weights, epoch=w)
                reports = [
                    train_epoch(S, T, train, run_cfg, weights,
                                epoch=cfg.bench_warmup + e, collect_phases=True)
                    for e in range(cfg.bench_epochs)
                ]
                epoch_time = float(np.mean([r.wall_time for r in reports]))
                row = {
                    "variant": _variant_name(sampler, agg, threads),
                    "sampler": sampler,
                    "aggregator": agg,
                    "threads": threads,
                    "epochs_timed": cfg.bench_epochs,
                    "epoch_time_s": epoch_time,
                    "pairs_per_s": train.num_pairs / epoch_time,
                }
                for name in PHASE_NAMES:
                    row[f"{name}_s"] = float(
                        np.mean([r.phase_times[name] for r in reports])
                    )
                rows.append(row)

    # read-phase speedup of tiling over uniform at matching settings
    by_key = {(r["sampler"], r["aggregator"], r["threads"]): r for r in rows}
    for row in rows:
        base = by_key.get(("uniform", row["aggregator"], row["threads"]))
        if row["sampler"] == "tiling" and base and row["read_emb_s"] > 0:
            row["read_speedup_vs_uniform"] = base["read_emb_s"] / row["read_emb_s"]
        else:
            row["read_speedup_vs_uniform"] = ""

    # thread sweeps should not slow down as threads increase
    for sampler in cfg.bench_samplers:
        for agg in cfg.bench_aggregator:
            sweep = sorted(
                (r for r in rows if r["sampler"] == sampler and r["aggregator"] == agg),
                key=lambda r: r["threads"],
            )
            for prev, cur in zip(sweep, sweep[1:]):
                ok = cur["epoch_time_s"] <= prev["epoch_time_s"]
                cur["time_monotone"] = cur.get("time_monotone", True) and ok
                if not ok:
                    warnings.append(
                        f"{cur['variant']}: epoch time {cur['epoch_time_s']:.4f}s "
                        f"exceeds {prev['variant']} ({prev['epoch_time_s']:.4f}s)"
                    )
    for row in rows:
        row.setdefault("time_monotone", True)
    return rows, warnings


def write_csv(rows: list[dict], path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=CSV_HEADER)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def render_figures(rows: list[dict], out_dir: str) -> list[str]:
    """Phase-breakdown and thread-scaling figures next to the CSV."""
    paths = []

    fig, ax = plt.subplots(figsize=(max(6, 1.2 * len(rows)), 4))
    bottoms = np.zeros(len(rows))
    labels = [r["variant"] for r in rows]
    for name in PHASE_NAMES:
        values = np.array([r[f"{name}_s"] for r in rows])
        ax.bar(labels, values, bottom=bottoms, label=name)
        bottoms += values
    ax.set_ylabel("per-thread time per epoch (s)")
    ax.set_title("epoch phase breakdown")
    ax.legend(fontsize=8)
    plt.setp(ax.get_xticklabels(), rotation=30, ha="right", fontsize=8)
    fig.tight_layout()
    path = os.path.join(out_dir, "bench_phases.png")
    fig.savefig(path, dpi=120)
    plt.close(fig)
    paths.append(path)

    fig, ax = plt.subplots(figsize=(6, 4))
    series: dict[tuple[str, str], list[tuple[int, float]]] = {}
    for r in rows:
        series.setdefault((r["sampler"], r["aggregator"]), []).append(
            (r["threads"], r["epoch_time_s"])
        )
    for (sampler, agg), points in series.items():
        points.sort()
        ax.plot([p[0] for p in points], [p[1] for p in points],
                marker="o", label=f"{sampler}, agg {agg}")
    ax.set_xlabel("threads")
    ax.set_ylabel("epoch time (s)")
    ax.set_title("epoch time vs threads")
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = os.path.join(out_dir, "bench_scaling.png")
    fig.savefig(path, dpi=120)
    plt.close(fig)
    paths.append(path)
    return paths
