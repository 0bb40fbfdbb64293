"""Command-line interface: train, eval, tune, bench, synth.

Exit codes: 0 on success, 2 for usage/config errors (missing files, bad
flags, corrupt checkpoints), 3 for runtime failures.  The HEAT_THREADS
environment variable overrides any configured or flagged thread count.
"""

from __future__ import annotations

import functools
import json
import os
import sys

import click

from . import bench as bench_mod
from .aggregator import init_weights
from .config import (
    RunConfig, apply_overrides, detect_cache_bytes, load_config,
    resolve_thread_count, write_manifest,
)
from .dataset import parse_interactions, serialize_interactions, with_universe
from .embeddings import CorruptCheckpointError, InitSpec, init_matrix, load_model
from .evaluator import evaluate, metrics_json
from .rng import derive_stream
from .sampler import TuneInputs, estimate_speedup, tune_tiling
from .synth import make_clustered
from .trainer import train as run_train

_AGG_SEED_SALT = 0x41474757


def _runtime_guard(fn):
    """Map unexpected failures to exit code 3; usage errors stay at 2."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except click.ClickException:
            raise
        except (ValueError, OSError, RuntimeError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(3)

    return wrapper


def _load_run_config(config_path: str | None, **overrides) -> RunConfig:
    if config_path is not None:
        if not os.path.exists(config_path):
            raise click.UsageError(f"config not found: {config_path}")
        try:
            cfg = load_config(config_path)
        except ValueError as exc:
            raise click.UsageError(str(exc)) from None
    else:
        cfg = RunConfig()
    cfg = apply_overrides(cfg, **overrides)
    return apply_overrides(cfg, threads=resolve_thread_count(cfg.threads))


def _load_datasets(cfg: RunConfig):
    for path in (cfg.train_path, cfg.test_path):
        if not path or not os.path.exists(path):
            raise click.UsageError(f"dataset not found: {path}")
    train = parse_interactions(cfg.train_path, cfg.data_format)
    test = parse_interactions(cfg.test_path, cfg.data_format)
    num_users = max(train.num_users, test.num_users)
    num_items = max(train.num_items, test.num_items)
    return (
        with_universe(train, num_users, num_items),
        with_universe(test, num_users, num_items),
    )


@click.group()
def main():
    """Collaborative-filtering trainer for multi-core CPUs."""


@main.command(name="train")
@click.option("-c", "--config", "config_path", type=str, default=None,
              help="Config file; flags override file values.")
@click.option("--train", "train_path", type=str, default=None)
@click.option("--test", "test_path", type=str, default=None)
@click.option("--format", "data_format", type=click.Choice(["adjacency", "pairs"]),
              default=None)
@click.option("--out", "out_dir", type=str, default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--dim", type=int, default=None)
@click.option("--negatives", type=int, default=None)
@click.option("--lr", "learning_rate", type=float, default=None)
@click.option("--mu", type=float, default=None)
@click.option("--theta", type=float, default=None)
@click.option("--threads", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--similarity", type=click.Choice(["cosine", "dot"]), default=None)
@click.option("--sampler", type=click.Choice(["uniform", "tiling"]), default=None)
@click.option("--tile", "tile_size", type=int, default=None)
@click.option("--interval", "refresh_interval", type=int, default=None)
@click.option("--aggregator/--no-aggregator", default=None)
@click.option("--eval-interval", type=int, default=None)
@click.option("--eval-k", type=int, default=None)
@click.option("--resume", "resume_path", type=str, default=None,
              help="Model bundle to continue from.")
@click.option("--figures/--no-figures", default=None)
@_runtime_guard
def cmd_train(config_path, resume_path, **overrides):
    """Train a model; writes metrics, checkpoints, manifest, and figures."""
    cfg = _load_run_config(config_path, **overrides)
    train_set, test_set = _load_datasets(cfg)
    tcfg = cfg.training_config()

    os.makedirs(cfg.out_dir, exist_ok=True)
    write_manifest(cfg, cfg.out_dir)

    if resume_path is not None:
        if not os.path.exists(resume_path):
            raise click.UsageError(f"checkpoint not found: {resume_path}")
        try:
            S, T, weights = load_model(resume_path)
        except CorruptCheckpointError as exc:
            raise click.UsageError(str(exc)) from None
        if cfg.aggregator and weights is None:
            weights = init_weights(cfg.dim, derive_stream(cfg.seed, _AGG_SEED_SALT))
    else:
        spec = InitSpec(kind=cfg.init, mean=cfg.init_mean, std=cfg.init_std,
                        seed=cfg.seed)
        S = init_matrix(train_set.num_users, cfg.dim, spec)
        T = init_matrix(train_set.num_items, cfg.dim, spec)
        weights = (init_weights(cfg.dim, derive_stream(cfg.seed, _AGG_SEED_SALT))
                   if cfg.aggregator else None)

    metrics_path = os.path.join(cfg.out_dir, "metrics.jsonl")
    epochs_path = os.path.join(cfg.out_dir, "epochs.jsonl")
    metrics_f = open(metrics_path, "w", encoding="utf-8")
    epochs_f = open(epochs_path, "w", encoding="utf-8")

    def on_epoch(report):
        line = json.dumps({
            "epoch": report.epoch,
            "mean_loss": report.mean_loss,
            "wall_time_s": report.wall_time,
            "degenerate": report.degenerate_count,
        })
        epochs_f.write(line + "\n")
        click.echo(
            f"epoch {report.epoch}: loss {report.mean_loss:.6f} "
            f"({report.wall_time:.2f}s)", err=True,
        )

    def on_eval(epoch, metrics):
        line = metrics_json(epoch, metrics)
        metrics_f.write(line + "\n")
        metrics_f.flush()
        click.echo(line)

    try:
        result = run_train(
            S, T, train_set, test_set, tcfg, weights,
            eval_interval=cfg.eval_interval, k=cfg.eval_k, out_dir=cfg.out_dir,
            on_epoch=on_epoch, on_eval=on_eval,
        )
    finally:
        metrics_f.close()
        epochs_f.close()

    if cfg.figures:
        _render_train_figures(result, cfg.out_dir)


def _render_train_figures(result, out_dir: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if result.reports:
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot([r.epoch for r in result.reports],
                [r.mean_loss for r in result.reports], marker=".")
        ax.set_xlabel("epoch")
        ax.set_ylabel("mean loss")
        ax.set_title("training loss")
        fig.tight_layout()
        fig.savefig(os.path.join(out_dir, "train_loss.png"), dpi=120)
        plt.close(fig)
    if result.evaluations:
        fig, ax = plt.subplots(figsize=(6, 4))
        epochs = [e for e, _ in result.evaluations]
        k = result.final_metrics.k
        ax.plot(epochs, [m.recall_at_k for _, m in result.evaluations],
                marker="o", label=f"recall@{k}")
        ax.plot(epochs, [m.ndcg_at_k for _, m in result.evaluations],
                marker="s", label=f"ndcg@{k}")
        ax.set_xlabel("epoch")
        ax.set_ylabel("metric")
        ax.set_title("ranking quality")
        ax.legend()
        fig.tight_layout()
        fig.savefig(os.path.join(out_dir, "train_metrics.png"), dpi=120)
        plt.close(fig)


@main.command(name="eval")
@click.option("--checkpoint", required=True, type=str)
@click.option("--train", "train_path", required=True, type=str)
@click.option("--test", "test_path", required=True, type=str)
@click.option("--format", "data_format", type=click.Choice(["adjacency", "pairs"]),
              default="adjacency")
@click.option("-k", type=int, default=20, show_default=True)
@click.option("--similarity", type=click.Choice(["cosine", "dot"]), default="cosine")
@click.option("--gamma", type=float, default=0.5)
@click.option("--max-history", type=int, default=100)
@_runtime_guard
def cmd_eval(checkpoint, train_path, test_path, data_format, k, similarity,
             gamma, max_history):
    """Evaluate a model bundle; prints one metrics JSON object."""
    if not os.path.exists(checkpoint):
        raise click.UsageError(f"checkpoint not found: {checkpoint}")
    try:
        S, T, weights = load_model(checkpoint)
    except CorruptCheckpointError as exc:
        raise click.UsageError(f"bad checkpoint: {exc}") from None
    cfg = apply_overrides(
        RunConfig(), train_path=train_path, test_path=test_path,
        data_format=data_format, similarity=similarity,
        aggregator=weights is not None, gamma=gamma, max_history=max_history,
        dim=S.dim,
    )
    train_set, test_set = _load_datasets(cfg)
    metrics = evaluate(S, T, train_set, test_set, cfg.training_config(),
                       weights=weights, k=k)
    click.echo(metrics_json(-1, metrics))


@main.command(name="tune")
@click.option("-c", "--config", "config_path", type=str, default=None)
@click.option("--items", "num_items", type=int, default=None,
              help="Item count; parsed from the train set if omitted.")
@click.option("--iterations", type=int, default=None,
              help="Total training iterations; pairs x epochs if omitted.")
@click.option("--negatives", type=int, default=None)
@click.option("--threads", type=int, default=None)
@click.option("--dim", type=int, default=None)
@click.option("--expected-speedup", "expected_speedup", type=float, default=None)
@click.option("--hit-ratio", "positive_hit_ratio", type=float, default=None)
@click.option("--l2-bytes", type=int, default=None)
@click.option("--l3-bytes", type=int, default=None)
@click.option("--save-config", type=str, default=None,
              help="Write the resolved config with tuned tile values here.")
@_runtime_guard
def cmd_tune(config_path, num_items, iterations, save_config, **overrides):
    """Pick tile size and refresh interval; prints a JSON decision."""
    cfg = _load_run_config(config_path, **{k: v for k, v in overrides.items()
                                           if k in RunConfig.__dataclass_fields__})
    if cfg.expected_speedup <= 0:
        raise click.UsageError(
            f"expected speedup must be positive, got {cfg.expected_speedup}"
        )
    if num_items is None or iterations is None:
        if not cfg.train_path or not os.path.exists(cfg.train_path):
            raise click.UsageError(
                "give --items and --iterations, or a config with a train set"
            )
        train_set = parse_interactions(cfg.train_path, cfg.data_format)
        if num_items is None:
            num_items = train_set.num_items
        if iterations is None:
            iterations = train_set.num_pairs * cfg.epochs
    l2 = cfg.l2_bytes
    l3 = cfg.l3_bytes
    if not l2 or not l3:
        det_l2, det_l3, _ = detect_cache_bytes()
        l2 = l2 or det_l2
        l3 = l3 or det_l3
    try:
        inputs = TuneInputs(
            num_items=num_items,
            total_iterations=iterations,
            num_negatives=cfg.negatives,
            num_threads=cfg.threads,
            emb_dim=cfg.dim,
            l2_bytes=l2,
            l3_bytes=l3,
            positive_hit_ratio=cfg.positive_hit_ratio,
            latency_mem=cfg.latency_mem,
            latency_l3=cfg.latency_l3,
            latency_l2=cfg.latency_l2,
            expected_speedup=cfg.expected_speedup,
        )
        n1, n2 = tune_tiling(inputs)
        est = estimate_speedup(inputs, n1, n2)
    except ValueError as exc:
        raise click.UsageError(str(exc)) from None
    click.echo(json.dumps({
        "n1": n1,
        "n2": n2,
        "neg_speedup": est.neg_speedup,
        "pos_speedup": est.pos_speedup,
        "tier": est.tier,
        "alpha": est.alpha,
        "beta": est.beta,
    }))
    if save_config is not None:
        from .config import dump_config

        tuned = apply_overrides(cfg, sampler="tiling", tile_size=n1,
                                refresh_interval=n2)
        with open(save_config, "w", encoding="utf-8") as f:
            f.write(dump_config(tuned))


@main.command(name="bench")
@click.option("-c", "--config", "config_path", type=str, default=None)
@click.option("--out", "out_dir", type=str, default=None)
@click.option("--train", "train_path", type=str, default=None)
@click.option("--test", "test_path", type=str, default=None)
@click.option("--figures/--no-figures", default=None)
@_runtime_guard
def cmd_bench(config_path, **overrides):
    """Time configuration variants; writes a CSV table and figures."""
    cfg = _load_run_config(config_path, **overrides)
    if os.environ.get("HEAT_THREADS"):
        cfg = apply_overrides(cfg, bench_threads=(cfg.threads,))
    if not cfg.train_path or not os.path.exists(cfg.train_path):
        raise click.UsageError(f"dataset not found: {cfg.train_path}")
    train_set = parse_interactions(cfg.train_path, cfg.data_format)
    os.makedirs(cfg.out_dir, exist_ok=True)
    rows, warnings = bench_mod.run_bench(
        train_set, cfg, log=lambda msg: click.echo(msg, err=True)
    )
    csv_path = os.path.join(cfg.out_dir, "bench.csv")
    bench_mod.write_csv(rows, csv_path)
    for warning in warnings:
        click.echo(f"warning: {warning}", err=True)
    if cfg.figures:
        bench_mod.render_figures(rows, cfg.out_dir)
    click.echo(csv_path)


@main.command(name="synth")
@click.option("--users", type=int, default=500, show_default=True)
@click.option("--items", type=int, default=2000, show_default=True)
@click.option("--clusters", type=int, default=10, show_default=True)
@click.option("--per-user", type=int, default=40, show_default=True)
@click.option("--affinity", type=float, default=0.95, show_default=True)
@click.option("--test-fraction", type=float, default=0.2, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", type=str, default="data/synth", show_default=True)
@_runtime_guard
def cmd_synth(users, items, clusters, per_user, affinity, test_fraction, seed, out_dir):
    """Generate a clustered synthetic dataset (train.txt / test.txt)."""
    train_set, test_set = make_clustered(
        users, items, clusters, per_user,
        affinity=affinity, test_fraction=test_fraction, seed=seed,
    )
    os.makedirs(out_dir, exist_ok=True)
    train_path = os.path.join(out_dir, "train.txt")
    test_path = os.path.join(out_dir, "test.txt")
    serialize_interactions(train_set, train_path)
    serialize_interactions(test_set, test_path)
    click.echo(json.dumps({
        "train": train_path,
        "test": test_path,
        "users": users,
        "items": items,
        "train_pairs": train_set.num_pairs,
        "test_pairs": test_set.num_pairs,
    }))


if __name__ == "__main__":
    main()
