"""Run configuration files, reproducibility manifests, and machine probing.

Config files are flat key = value text with [sections] (configparser
syntax); command-line flags override file values, and the HEAT_THREADS
environment variable overrides every other thread-count source.  Each run
writes a manifest holding the fully resolved config, the seed, and a
git-style content hash of every input file, which is enough to replay the
run exactly in single-thread mode.
"""

from __future__ import annotations

import configparser
import hashlib
import os
import subprocess
from dataclasses import dataclass, replace

from .aggregator import AggregatorConfig
from .kernels import LossParams
from .trainer import SamplerConfig, TrainingConfig

DEFAULT_L2_BYTES = 32 * 2**20
DEFAULT_L3_BYTES = 256 * 2**20


@dataclass(frozen=True)
class RunConfig:
    """Everything a train/eval/bench run needs, with defaults for all but paths."""

    train_path: str = ""
    test_path: str = ""
    data_format: str = "adjacency"
    out_dir: str = "runs/out"
    figures: bool = True

    dim: int = 64
    init: str = "normal"
    init_mean: float = 0.0
    init_std: float = 0.01

    mu: float = 1.0
    theta: float = 0.8

    sampler: str = "uniform"
    tile_size: int = 1024
    refresh_interval: int = 4096

    aggregator: bool = False
    gamma: float = 0.5
    max_history: int = 100
    mini_batch: int = 32
    history_grad: bool = False
    agg_learning_rate: float = 0.0  # 0: share the embedding learning rate

    epochs: int = 10
    learning_rate: float = 0.05
    negatives: int = 64
    threads: int = 1
    seed: int = 0
    l2_reg: float = 0.0
    similarity: str = "cosine"
    eval_interval: int = 0
    eval_k: int = 20

    bench_epochs: int = 2
    bench_warmup: int = 1
    bench_threads: tuple[int, ...] = (1, 2)
    bench_samplers: tuple[str, ...] = ("uniform", "tiling")
    bench_aggregator: tuple[str, ...] = ("off",)

    expected_speedup: float = 1.5
    positive_hit_ratio: float = 0.0
    latency_mem: float = 100.0
    latency_l3: float = 20.0
    latency_l2: float = 5.0
    l2_bytes: int = 0  # 0: detect at runtime
    l3_bytes: int = 0

    def training_config(self) -> TrainingConfig:
        return TrainingConfig(
            emb_dim=self.dim,
            num_negatives=self.negatives,
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            num_threads=self.threads,
            similarity=self.similarity,
            loss=LossParams(mu=self.mu, theta=self.theta),
            sampler=SamplerConfig(
                kind=self.sampler,
                tile_size=self.tile_size,
                refresh_interval=self.refresh_interval,
            ),
            aggregator=AggregatorConfig(
                enabled=self.aggregator,
                gamma=self.gamma,
                max_history=self.max_history,
                mini_batch_size=self.mini_batch,
                history_grad=self.history_grad,
                learning_rate=self.agg_learning_rate or None,
            ),
            seed=self.seed,
            l2_reg=self.l2_reg,
        )


_SECTIONS: dict[str, dict[str, str]] = {
    "data": {"train": "train_path", "test": "test_path", "format": "data_format"},
    "model": {"dim": "dim", "init": "init", "init_mean": "init_mean", "init_std": "init_std"},
    "loss": {"mu": "mu", "theta": "theta"},
    "sampler": {
        "kind": "sampler", "tile_size": "tile_size", "refresh_interval": "refresh_interval",
    },
    "aggregator": {
        "enabled": "aggregator", "gamma": "gamma", "max_history": "max_history",
        "mini_batch": "mini_batch", "history_grad": "history_grad",
        "learning_rate": "agg_learning_rate",
    },
    "train": {
        "epochs": "epochs", "learning_rate": "learning_rate", "negatives": "negatives",
        "threads": "threads", "seed": "seed", "l2_reg": "l2_reg",
        "similarity": "similarity", "eval_interval": "eval_interval", "eval_k": "eval_k",
    },
    "output": {"dir": "out_dir", "figures": "figures"},
    "bench": {
        "epochs": "bench_epochs", "warmup": "bench_warmup", "threads": "bench_threads",
        "samplers": "bench_samplers", "aggregator": "bench_aggregator",
    },
    "tune": {
        "expected_speedup": "expected_speedup", "positive_hit_ratio": "positive_hit_ratio",
        "latency_mem": "latency_mem", "latency_l3": "latency_l3", "latency_l2": "latency_l2",
        "l2_bytes": "l2_bytes", "l3_bytes": "l3_bytes",
    },
}

def _convert(attr: str, raw: str):
    kind = RunConfig.__dataclass_fields__[attr].type
    raw = raw.strip()
    if kind == "bool":
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{attr}: expected a boolean, got {raw!r}")
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    if kind == "tuple[int, ...]":
        return tuple(int(tok) for tok in raw.replace(",", " ").split())
    if kind == "tuple[str, ...]":
        return tuple(tok for tok in raw.replace(",", " ").split())
    return raw


def load_config(path: str) -> RunConfig:
    """Parse a config file into a RunConfig (unknown keys are an error)."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    with open(path, "r", encoding="utf-8") as f:
        parser.read_file(f)
    values = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ValueError(f"{path}: unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SECTIONS[section]:
                raise ValueError(f"{path}: unknown key {key!r} in [{section}]")
            attr = _SECTIONS[section][key]
            values[attr] = _convert(attr, raw)
    return RunConfig(**values)


def apply_overrides(cfg: RunConfig, **overrides) -> RunConfig:
    """Return cfg with non-None override values applied."""
    updates = {k: v for k, v in overrides.items() if v is not None}
    return replace(cfg, **updates) if updates else cfg


def dump_config(cfg: RunConfig) -> str:
    """Serialize a RunConfig back to config-file text (fully resolved)."""
    parser = configparser.ConfigParser()
    for section, keys in _SECTIONS.items():
        parser[section] = {}
        for key, attr in keys.items():
            value = getattr(cfg, attr)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            parser[section][key] = str(value)
    out = []
    for section in parser.sections():
        out.append(f"[{section}]")
        for key, value in parser[section].items():
            out.append(f"{key} = {value}")
        out.append("")
    return "\n".join(out)


def content_hash(path: str) -> str:
    """Git-style blob hash (sha1 over 'blob <size>\\0' + contents)."""
    with open(path, "rb") as f:
        data = f.read()
    h = hashlib.sha1()
    h.update(b"blob %d\0" % len(data))
    h.update(data)
    return h.hexdigest()


def write_manifest(cfg: RunConfig, out_dir: str) -> str:
    """Write the run manifest; returns its path."""
    lines = ["[inputs]"]
    for name, path in (("train", cfg.train_path), ("test", cfg.test_path)):
        if path:
            lines.append(f"{name} = {path}")
            lines.append(f"{name}_hash = {content_hash(path)}")
    lines.append("")
    manifest = "\n".join(lines) + dump_config(cfg)
    path = os.path.join(out_dir, "manifest.ini")
    with open(path, "w", encoding="utf-8") as f:
        f.write(manifest)
    return path


def _sysfs_cache_bytes(level: int) -> int | None:
    base = "/sys/devices/system/cpu/cpu0/cache"
    try:
        for entry in sorted(os.listdir(base)):
            if not entry.startswith("index"):
                continue
            with open(os.path.join(base, entry, "level")) as f:
                if int(f.read().strip()) != level:
                    continue
            with open(os.path.join(base, entry, "size")) as f:
                raw = f.read().strip()
            if raw.endswith("K"):
                return int(raw[:-1]) * 1024
            if raw.endswith("M"):
                return int(raw[:-1]) * 2**20
            return int(raw)
    except OSError:
        pass
    return None


def _getconf_cache_bytes(level: int) -> int | None:
    try:
        out = subprocess.run(
            ["getconf", f"LEVEL{level}_CACHE_SIZE"],
            capture_output=True, text=True, timeout=5,
        )
        value = int(out.stdout.strip())
        return value if value > 0 else None
    except (OSError, ValueError, subprocess.TimeoutExpired):
        return None


def detect_cache_bytes() -> tuple[int, int, bool]:
    """(l2_bytes, l3_bytes, detected); falls back to defaults when unknown."""
    l2 = _sysfs_cache_bytes(2) or _getconf_cache_bytes(2)
    l3 = _sysfs_cache_bytes(3) or _getconf_cache_bytes(3)
    detected = l2 is not None and l3 is not None
    return l2 or DEFAULT_L2_BYTES, l3 or DEFAULT_L3_BYTES, detected


def resolve_thread_count(requested: int) -> int:
    """Apply the HEAT_THREADS environment override if present."""
    env = os.environ.get("HEAT_THREADS")
    if env:
        try:
            value = int(env)
        except ValueError:
            raise ValueError(f"HEAT_THREADS must be an integer, got {env!r}") from None
        if value < 1:
            raise ValueError(f"HEAT_THREADS must be >= 1, got {value}")
        return value
    return requested
