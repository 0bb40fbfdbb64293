import hashlib

import pytest

from heatcf.config import (
    RunConfig, apply_overrides, content_hash, detect_cache_bytes, dump_config,
    load_config, resolve_thread_count, write_manifest,
)


SAMPLE = """
[data]
train = data/train.txt
test = data/test.txt
format = adjacency

[model]
dim = 32
init = xavier

[sampler]
kind = tiling
tile_size = 512
refresh_interval = 2048

[train]
epochs = 3
threads = 4
seed = 99
similarity = dot

[bench]
threads = 1, 2, 4
samplers = uniform,tiling
"""


class TestLoad:
    def test_values_parsed(self, tmp_path):
        path = tmp_path / "run.ini"
        path.write_text(SAMPLE, encoding="utf-8")
        cfg = load_config(str(path))
        assert cfg.dim == 32
        assert cfg.init == "xavier"
        assert cfg.sampler == "tiling"
        assert cfg.tile_size == 512
        assert cfg.threads == 4
        assert cfg.similarity == "dot"
        assert cfg.bench_threads == (1, 2, 4)
        assert cfg.bench_samplers == ("uniform", "tiling")

    def test_defaults_fill_missing(self, tmp_path):
        path = tmp_path / "run.ini"
        path.write_text("[train]\nepochs = 1\n", encoding="utf-8")
        cfg = load_config(str(path))
        assert cfg.epochs == 1
        assert cfg.negatives == 64
        assert cfg.eval_k == 20

    def test_unknown_section_rejected(self, tmp_path):
        path = tmp_path / "run.ini"
        path.write_text("[nonsense]\nx = 1\n", encoding="utf-8")
        with pytest.raises(ValueError):
            load_config(str(path))

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "run.ini"
        path.write_text("[train]\nwat = 1\n", encoding="utf-8")
        with pytest.raises(ValueError):
            load_config(str(path))

    def test_bad_bool_rejected(self, tmp_path):
        path = tmp_path / "run.ini"
        path.write_text("[aggregator]\nenabled = maybe\n", encoding="utf-8")
        with pytest.raises(ValueError):
            load_config(str(path))

    def test_inline_comments(self, tmp_path):
        path = tmp_path / "run.ini"
        path.write_text("[train]\nepochs = 5 ; keep it short\n", encoding="utf-8")
        assert load_config(str(path)).epochs == 5

    def test_dump_load_round_trip(self, tmp_path):
        cfg = apply_overrides(RunConfig(), dim=48, sampler="tiling", aggregator=True,
                              bench_threads=(1, 8))
        path = tmp_path / "out.ini"
        path.write_text(dump_config(cfg), encoding="utf-8")
        assert load_config(str(path)) == cfg


class TestOverridesAndEnv:
    def test_overrides_win(self):
        cfg = apply_overrides(RunConfig(), threads=9, seed=None)
        assert cfg.threads == 9
        assert cfg.seed == RunConfig().seed  # None override ignored

    def test_heat_threads_env(self, monkeypatch):
        monkeypatch.setenv("HEAT_THREADS", "6")
        assert resolve_thread_count(2) == 6

    def test_heat_threads_absent(self, monkeypatch):
        monkeypatch.delenv("HEAT_THREADS", raising=False)
        assert resolve_thread_count(2) == 2

    def test_heat_threads_invalid(self, monkeypatch):
        monkeypatch.setenv("HEAT_THREADS", "many")
        with pytest.raises(ValueError):
            resolve_thread_count(2)

    def test_training_config_conversion(self):
        cfg = apply_overrides(RunConfig(), sampler="tiling", tile_size=64,
                              refresh_interval=128, aggregator=True, mu=0.7)
        tcfg = cfg.training_config()
        assert tcfg.sampler.kind == "tiling"
        assert tcfg.sampler.tile_size == 64
        assert tcfg.aggregator.enabled
        assert tcfg.loss.mu == 0.7

    def test_aggregator_learning_rate_shared_by_default(self):
        tcfg = RunConfig().training_config()
        assert tcfg.aggregator.learning_rate is None  # falls back to embedding lr
        tcfg = apply_overrides(RunConfig(), agg_learning_rate=0.2).training_config()
        assert tcfg.aggregator.learning_rate == 0.2


class TestManifest:
    def test_git_style_blob_hash(self, tmp_path):
        path = tmp_path / "f.txt"
        path.write_bytes(b"hello")
        expect = hashlib.sha1(b"blob 5\0hello").hexdigest()
        assert content_hash(str(path)) == expect

    def test_manifest_contains_hashes_and_config(self, tmp_path):
        train = tmp_path / "train.txt"
        test = tmp_path / "test.txt"
        train.write_text("0 1\n")
        test.write_text("0 2\n")
        cfg = apply_overrides(RunConfig(), train_path=str(train), test_path=str(test),
                              seed=123, sampler="tiling", tile_size=1024,
                              refresh_interval=4096)
        manifest_path = write_manifest(cfg, str(tmp_path))
        text = open(manifest_path).read()
        assert content_hash(str(train)) in text
        assert "seed = 123" in text
        assert "tile_size = 1024" in text
        assert "refresh_interval = 4096" in text


def test_cache_detection_returns_positive_sizes():
    l2, l3, _ = detect_cache_bytes()
    assert l2 > 0 and l3 >= l2
