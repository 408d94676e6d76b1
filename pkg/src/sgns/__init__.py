"""Word embedding training with skip-gram negative sampling.

Three execution strategies over one model: a per-pair lock-free baseline, a
minibatched kernel that shares negatives and runs on dense matrix products,
and data-parallel training across workers with periodic sub-model row
averaging.  Includes corpus ingestion, similarity/analogy evaluation, and a
command-line front end (``sgns``).
"""

from .corpus import (
    NegativeTable,
    Vocabulary,
    WindowContext,
    build_negative_table,
    build_vocab,
    encode_corpus,
    iterate_windows,
    keep_probability,
    sample_negative,
    subsample_sentence,
)
from .distributed import (
    InProcessGroup,
    SocketTransport,
    SyncPolicy,
    Transport,
    distributed_train,
    partition_corpus,
    scaled_alpha0,
    select_sync_rows,
)
from .evaluate import cosine, eval_analogy, eval_similarity, spearman
from .kernel_batched import Minibatch, assemble_batches, process_batch
from .kernel_scalar import process_context_scalar
from .model import EmbeddingModel, init_model, load_model, save_model, sigmoid
from .trainer import TrainingConfig, TrainingStats, train, update_alpha

__version__ = "0.1.0"

__all__ = [
    "EmbeddingModel",
    "InProcessGroup",
    "Minibatch",
    "NegativeTable",
    "SocketTransport",
    "SyncPolicy",
    "TrainingConfig",
    "TrainingStats",
    "Transport",
    "Vocabulary",
    "WindowContext",
    "assemble_batches",
    "build_negative_table",
    "build_vocab",
    "cosine",
    "distributed_train",
    "encode_corpus",
    "eval_analogy",
    "eval_similarity",
    "init_model",
    "iterate_windows",
    "keep_probability",
    "load_model",
    "partition_corpus",
    "process_batch",
    "process_context_scalar",
    "sample_negative",
    "save_model",
    "scaled_alpha0",
    "select_sync_rows",
    "sigmoid",
    "spearman",
    "subsample_sentence",
    "train",
    "update_alpha",
]
