"""Multi-core collaborative-filtering trainer with cosine contrastive loss.

Matrix-factorization training on shared-memory CPUs: per-thread negative
sampling (uniform or cache-tiled), fused forward/backward passes that
reuse the cosine forward reductions in the analytical gradients, lock-free
in-place embedding updates, an optional behavior-aggregation layer, top-K
ranking evaluation, binary checkpoints, and a benchmarking CLI.
"""

from .aggregator import AggregatorConfig
from .dataset import InteractionSet, epoch_pairs, history_of, parse_interactions
from .embeddings import (
    EmbeddingMatrix, InitSpec, init_matrix, load_checkpoint, load_model,
    save_checkpoint, save_model,
)
from .evaluator import MetricsReport, evaluate, topk_items
from .kernels import (
    ForwardCache, LossParams, ccl_loss, ccl_loss_grad, cosine_forward,
    cosine_grad_item, cosine_grad_user, dot_similarity,
)
from .sampler import (
    TileState, TuneInputs, estimate_speedup, sample_tiled, sample_uniform,
    tune_tiling,
)
from .trainer import (
    EpochReport, SamplerConfig, TrainingConfig, TrainResult, train, train_epoch,
)

__version__ = "0.1.0"

__all__ = [
    "AggregatorConfig",
    "EmbeddingMatrix",
    "EpochReport",
    "ForwardCache",
    "InitSpec",
    "InteractionSet",
    "LossParams",
    "MetricsReport",
    "SamplerConfig",
    "TileState",
    "TrainResult",
    "TrainingConfig",
    "TuneInputs",
    "ccl_loss",
    "ccl_loss_grad",
    "cosine_forward",
    "cosine_grad_item",
    "cosine_grad_user",
    "dot_similarity",
    "epoch_pairs",
    "estimate_speedup",
    "evaluate",
    "history_of",
    "init_matrix",
    "load_checkpoint",
    "load_model",
    "parse_interactions",
    "sample_tiled",
    "sample_uniform",
    "save_checkpoint",
    "save_model",
    "topk_items",
    "train",
    "train_epoch",
    "tune_tiling",
]
