"""Similarity, loss, and analytical-gradient kernels with forward-value reuse.

The cosine forward pass produces three K-length reductions (sum of squares
of each vector and their dot product).  Those same three scalars are all
the backward pass needs, so they are carried in a `ForwardCache` from
forward to backward instead of being recomputed.

Numerical contract: embeddings are float32, every K-length reduction
accumulates in float64 in fixed sequential order (no pairwise or tree
reduction), so results are reproducible for a fixed visit order.  The
public functions delegate to numba kernels; the compiled training loop
reuses the same kernels, which keeps both paths bit-identical.

Zero-norm vectors make cosine singular; they are mapped to similarity 0
with a degenerate flag, and gradients through a degenerate pair are zero.
Trainers count degenerate hits per epoch as a collapse diagnostic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit


@dataclass(frozen=True)
class ForwardCache:
    """Reusable scalars from one cosine forward evaluation.

    ss = sum of squares of the user-side vector, tt = sum of squares of
    the item-side vector, st = their dot product, sim = st/sqrt(ss*tt)
    (0 when degenerate).
    """

    ss: float
    tt: float
    st: float
    sim: float
    degenerate: bool = False


@dataclass(frozen=True)
class LossParams:
    """Contrastive-loss hyperparameters: negative weight, margin, negatives count."""

    mu: float = 1.0
    theta: float = 0.8

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError(f"mu must be >= 0, got {self.mu}")
        if not -1.0 <= self.theta <= 1.0:
            raise ValueError(f"theta must be in [-1, 1], got {self.theta}")


@njit(nogil=True, cache=True)
def _dot(u, v):
    acc = 0.0
    for k in range(u.shape[0]):
        acc += np.float64(u[k]) * np.float64(v[k])
    return acc


@njit(nogil=True, cache=True)
def _cosine_forward(u, v):
    """Returns (ss, tt, st, sim, degenerate)."""
    ss = _dot(u, u)
    tt = _dot(v, v)
    st = _dot(u, v)
    if ss <= 0.0 or tt <= 0.0:
        return ss, tt, st, 0.0, True
    return ss, tt, st, st / (np.sqrt(ss) * np.sqrt(tt)), False


@njit(nogil=True, cache=True)
def _grad_user_into(u, v, ss, tt, st, out):
    """out = d(cosine)/d(u) from cached reductions; zero when degenerate."""
    if ss <= 0.0 or tt <= 0.0:
        for k in range(out.shape[0]):
            out[k] = 0.0
        return
    denom = ss * np.sqrt(ss) * np.sqrt(tt)
    for k in range(out.shape[0]):
        out[k] = (np.float64(v[k]) * ss - st * np.float64(u[k])) / denom


@njit(nogil=True, cache=True)
def _ccl_loss(sim_pos, sim_negs, mu, theta):
    hinge = 0.0
    for j in range(sim_negs.shape[0]):
        d = sim_negs[j] - theta
        if d > 0.0:
            hinge += d
    return (1.0 - sim_pos) + (mu / sim_negs.shape[0]) * hinge


def dot_similarity(u: np.ndarray, v: np.ndarray) -> float:
    """Dot product of two equal-length vectors, accumulated in float64."""
    u = np.asarray(u)
    v = np.asarray(v)
    if u.shape != v.shape:
        raise ValueError(f"length mismatch: {u.shape} vs {v.shape}")
    return float(_dot(u, v))


def cosine_forward(u: np.ndarray, v: np.ndarray) -> ForwardCache:
    """Cosine similarity of u and v plus the three reusable reductions."""
    u = np.asarray(u)
    v = np.asarray(v)
    if u.shape != v.shape:
        raise ValueError(f"length mismatch: {u.shape} vs {v.shape}")
    ss, tt, st, sim, degenerate = _cosine_forward(u, v)
    return ForwardCache(ss=ss, tt=tt, st=st, sim=sim, degenerate=degenerate)


def ccl_loss(sim_pos: float, sim_negs, p: LossParams) -> float:
    """Contrastive loss: (1 - sim_pos) + (mu/|N|) * sum(max(0, sim_neg - theta))."""
    sim_negs = np.asarray(sim_negs, dtype=np.float64)
    if sim_negs.size == 0:
        raise ValueError("need at least one negative similarity")
    return float(_ccl_loss(float(sim_pos), sim_negs, p.mu, p.theta))


def ccl_loss_grad(sim_pos: float, sim_negs, p: LossParams) -> tuple[float, np.ndarray]:
    """Derivative of ccl_loss per similarity.

    The positive term is linear, so dpos is always -1.  Each negative gets
    mu/|N| when its similarity strictly exceeds theta, else 0 (max(0, .)
    subgradient; exactly-at-theta counts as inactive).
    """
    sim_negs = np.asarray(sim_negs, dtype=np.float64)
    if sim_negs.size == 0:
        raise ValueError("need at least one negative similarity")
    dnegs = np.where(sim_negs > p.theta, p.mu / sim_negs.size, 0.0)
    return -1.0, dnegs


def cosine_grad_user(u: np.ndarray, v: np.ndarray, c: ForwardCache) -> np.ndarray:
    """Gradient of cosine similarity w.r.t. u, reusing the cached reductions.

    (v * ss - st * u) / (ss * sqrt(ss) * sqrt(tt)); no K-length reduction
    is recomputed.  Returns float64; zero vector when the cache is
    degenerate.
    """
    u = np.asarray(u)
    v = np.asarray(v)
    out = np.empty(u.shape[0], dtype=np.float64)
    _grad_user_into(u, v, c.ss, c.tt, c.st, out)
    return out


def cosine_grad_item(u: np.ndarray, v: np.ndarray, c: ForwardCache) -> np.ndarray:
    """Gradient of cosine similarity w.r.t. v: the mirror of cosine_grad_user."""
    u = np.asarray(u)
    v = np.asarray(v)
    out = np.empty(v.shape[0], dtype=np.float64)
    _grad_user_into(v, u, c.tt, c.ss, c.st, out)
    return out
