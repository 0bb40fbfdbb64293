"""Embedding matrices: initialization and binary checkpoint persistence.

A model holds two dense row-major float32 matrices, one row per user and
one per item, each row a K-dimensional embedding.  Rows are mutated in
place by concurrent trainer threads (see `trainer`); checkpoint save/load
must only be called while no trainer threads are active.

Checkpoint format (little-endian throughout):

    magic  8 bytes  b"HEATEMB1"
    rows   u32
    dim    u32
    data   rows*dim float32, row-major

A model bundle file is the user block followed by the item block in the
same format, optionally followed by an aggregator-weights section:

    tag    4 bytes  b"AGGW"
    rows   u32      (== dim)
    dim    u32
    data   rows*dim float32
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import BinaryIO

import numpy as np

MAGIC = b"HEATEMB1"
AGG_TAG = b"AGGW"


class CorruptCheckpointError(Exception):
    """Checkpoint file is malformed: bad magic, truncated, or size mismatch."""


@dataclass
class EmbeddingMatrix:
    """Dense row-major matrix of per-entity embedding vectors."""

    values: np.ndarray  # (rows, dim) float32, C-contiguous

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float32)
        if v.ndim != 2:
            raise ValueError(f"embedding matrix must be 2-D, got shape {v.shape}")
        self.values = v

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def copy(self) -> "EmbeddingMatrix":
        return EmbeddingMatrix(self.values.copy())


@dataclass(frozen=True)
class InitSpec:
    """How to fill a fresh embedding matrix.

    kind "normal" draws i.i.d. from N(mean, std^2); kind "xavier" draws
    uniform from [-b, b] with b = sqrt(6 / (rows + dim)) (Xavier-uniform,
    fan_in = rows, fan_out = dim).  The seed fully determines the output.
    """

    kind: str = "normal"
    mean: float = 0.0
    std: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("normal", "xavier"):
            raise ValueError(f"unknown init kind: {self.kind!r}")
        if self.kind == "normal" and not self.std > 0:
            raise ValueError(f"normal init requires std > 0, got {self.std}")


def init_matrix(rows: int, dim: int, spec: InitSpec) -> EmbeddingMatrix:
    """Create and fill a rows x dim float32 embedding matrix."""
    if rows < 1 or dim < 1:
        raise ValueError(f"matrix must have at least one row and column, got {rows}x{dim}")
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    if spec.kind == "normal":
        data = rng.normal(spec.mean, spec.std, size=(rows, dim))
    else:
        bound = np.sqrt(6.0 / (rows + dim))
        data = rng.uniform(-bound, bound, size=(rows, dim))
    return EmbeddingMatrix(data.astype(np.float32))


def _write_block(f: BinaryIO, m: EmbeddingMatrix) -> None:
    f.write(MAGIC)
    f.write(struct.pack("<II", m.rows, m.dim))
    f.write(np.ascontiguousarray(m.values, dtype="<f4").tobytes())


def _read_block(f: BinaryIO, path: str) -> EmbeddingMatrix:
    magic = f.read(len(MAGIC))
    if magic != MAGIC:
        raise CorruptCheckpointError(f"{path}: bad magic {magic!r}")
    header = f.read(8)
    if len(header) != 8:
        raise CorruptCheckpointError(f"{path}: truncated header")
    rows, dim = struct.unpack("<II", header)
    if rows < 1 or dim < 1:
        raise CorruptCheckpointError(f"{path}: invalid shape {rows}x{dim}")
    body = f.read(rows * dim * 4)
    if len(body) != rows * dim * 4:
        raise CorruptCheckpointError(
            f"{path}: body has {len(body)} bytes, expected {rows * dim * 4}"
        )
    data = np.frombuffer(body, dtype="<f4").reshape(rows, dim)
    return EmbeddingMatrix(data.copy())


def save_checkpoint(m: EmbeddingMatrix, path: str) -> None:
    """Write one matrix as a single-block checkpoint file."""
    with open(path, "wb") as f:
        _write_block(f, m)


def load_checkpoint(path: str) -> EmbeddingMatrix:
    """Read a single-block checkpoint; round-trips save_checkpoint bit-exactly."""
    with open(path, "rb") as f:
        m = _read_block(f, path)
        if f.read(1):
            raise CorruptCheckpointError(f"{path}: trailing bytes after matrix body")
    return m


def save_model(path: str, user: EmbeddingMatrix, item: EmbeddingMatrix,
               agg_weights: np.ndarray | None = None) -> None:
    """Write a model bundle: user block, item block, optional AGGW section."""
    with open(path, "wb") as f:
        _write_block(f, user)
        _write_block(f, item)
        if agg_weights is not None:
            w = np.ascontiguousarray(agg_weights, dtype="<f4")
            if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] != user.dim:
                raise ValueError(
                    f"aggregator weights must be {user.dim}x{user.dim}, got {w.shape}"
                )
            f.write(AGG_TAG)
            f.write(struct.pack("<II", w.shape[0], w.shape[1]))
            f.write(w.tobytes())


def load_model(path: str) -> tuple[EmbeddingMatrix, EmbeddingMatrix, np.ndarray | None]:
    """Read a model bundle written by save_model."""
    with open(path, "rb") as f:
        user = _read_block(f, path)
        item = _read_block(f, path)
        if user.dim != item.dim:
            raise CorruptCheckpointError(
                f"{path}: user dim {user.dim} != item dim {item.dim}"
            )
        agg = None
        tag = f.read(4)
        if tag:
            if tag != AGG_TAG:
                raise CorruptCheckpointError(f"{path}: unknown section tag {tag!r}")
            header = f.read(8)
            if len(header) != 8:
                raise CorruptCheckpointError(f"{path}: truncated AGGW header")
            rows, dim = struct.unpack("<II", header)
            if rows != dim or rows != user.dim:
                raise CorruptCheckpointError(
                    f"{path}: AGGW shape {rows}x{dim} does not match embedding dim {user.dim}"
                )
            body = f.read(rows * dim * 4)
            if len(body) != rows * dim * 4:
                raise CorruptCheckpointError(f"{path}: truncated AGGW body")
            agg = np.frombuffer(body, dtype="<f4").reshape(rows, dim).copy()
        if f.read(1):
            raise CorruptCheckpointError(f"{path}: trailing bytes after bundle")
    return user, item, agg
