"""Inverted-file ANN search with a data-independent residual quantizer.

The index pairs a trained coarse partition (spherical k-means, the only
data-dependent layer) with a compression layer that never retrains: a fixed
random orthogonal rotation followed by a precomputed Lloyd-Max scalar
quantizer with one sign bit of half-bin refinement per coordinate. An
IVF-PQ baseline and a benchmark harness for streaming-ingestion experiments
are included.
"""

from .lloydmax import (
    QuantizerConvergenceError,
    ScalarQuantizer,
    design_quantizer,
    eval_distortion_oracle,
    quantize_coord,
    reconstruct_coord,
)
from .rotation import RotationMatrix, generate_rotation, rotate, rotate_back
from .partition import CoarsePartition, assign, train_partition
from .index import (
    IndexConfig,
    IvfTqIndex,
    SearchResult,
    VectorCode,
    bit_accounting,
    bit_flip_ablation,
    build,
    pack_fields,
    search_flat_tq,
    unpack_fields,
)
from .storage import IndexFormatError, load_index, save_index
from .refresh import RefreshPolicy, RefreshReport, reconstruct_vector, refresh
from .pq import IvfPqIndex, PqCodebook, pq_train
from .evaluation import (
    GroundTruth,
    SeedStats,
    exact_topk,
    recall_at_k,
    verify_amplification,
    verify_marginal,
    verify_theorem1,
)
from . import data_io, harness

__version__ = "0.1.0"

__all__ = [
    "ScalarQuantizer",
    "QuantizerConvergenceError",
    "design_quantizer",
    "quantize_coord",
    "reconstruct_coord",
    "eval_distortion_oracle",
    "RotationMatrix",
    "generate_rotation",
    "rotate",
    "rotate_back",
    "CoarsePartition",
    "train_partition",
    "assign",
    "IndexConfig",
    "VectorCode",
    "SearchResult",
    "IvfTqIndex",
    "build",
    "search_flat_tq",
    "bit_accounting",
    "bit_flip_ablation",
    "pack_fields",
    "unpack_fields",
    "save_index",
    "load_index",
    "IndexFormatError",
    "RefreshPolicy",
    "RefreshReport",
    "refresh",
    "reconstruct_vector",
    "PqCodebook",
    "IvfPqIndex",
    "pq_train",
    "GroundTruth",
    "SeedStats",
    "exact_topk",
    "recall_at_k",
    "verify_marginal",
    "verify_theorem1",
    "verify_amplification",
    "data_io",
    "harness",
]
