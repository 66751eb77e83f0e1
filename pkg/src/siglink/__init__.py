"""siglink: movement-signature extraction, weighted R-tree indexing, and
k-NN entity linking across trajectory datasets."""

from .errors import ConfigError, EmptySignatureError, EmptyTraceError, SiglinkError
from .traces import (
    AnchorSet,
    RawPoint,
    SplitResult,
    SplitStrategy,
    Trace,
    calibrate_trace,
    filter_min_points,
    split_dataset,
)
from .synth import generate_synthetic
from .signatures import (
    CorpusStats,
    Signature,
    TemporalHistogram,
    build_corpus_stats,
    build_sequential_corpus,
    build_sequential_signature,
    build_spatial_signature,
    build_spatiotemporal_corpus,
    build_spatiotemporal_signature,
    build_temporal_histogram,
    cosine_similarity,
    emd,
    emd_similarity,
    temporal_cost,
)
from .reduction import LshPlanes, LshSketch, Mbr, cut_reduce, lsh_sketch, mbr_of
from .wrtree import (
    WrTree,
    aggregate_signatures,
    bulk_load,
    bulk_load_rtree,
    insert,
    knn_search,
    linear_knn,
    load_index,
    merge_node,
    rtree_baseline_knn,
    save_index,
    validate,
)
from .linking import (
    LinkingRun,
    Matching,
    accuracy_at_k,
    link_all,
    matching_accuracy,
    rerank,
    stable_marriage,
)
from .privacy import ClosureReport, UtilityMetrics, signature_closure, utility_metrics

__version__ = "0.1.0"

__all__ = [
    "AnchorSet",
    "ClosureReport",
    "ConfigError",
    "CorpusStats",
    "EmptySignatureError",
    "EmptyTraceError",
    "LinkingRun",
    "LshPlanes",
    "LshSketch",
    "Matching",
    "Mbr",
    "RawPoint",
    "Signature",
    "SiglinkError",
    "SplitResult",
    "SplitStrategy",
    "TemporalHistogram",
    "Trace",
    "UtilityMetrics",
    "WrTree",
    "accuracy_at_k",
    "aggregate_signatures",
    "build_corpus_stats",
    "build_sequential_corpus",
    "build_sequential_signature",
    "build_spatial_signature",
    "build_spatiotemporal_corpus",
    "build_spatiotemporal_signature",
    "build_temporal_histogram",
    "bulk_load",
    "bulk_load_rtree",
    "calibrate_trace",
    "cosine_similarity",
    "cut_reduce",
    "emd",
    "emd_similarity",
    "filter_min_points",
    "generate_synthetic",
    "insert",
    "knn_search",
    "linear_knn",
    "link_all",
    "load_index",
    "lsh_sketch",
    "matching_accuracy",
    "mbr_of",
    "merge_node",
    "rerank",
    "rtree_baseline_knn",
    "save_index",
    "signature_closure",
    "split_dataset",
    "stable_marriage",
    "temporal_cost",
    "utility_metrics",
    "validate",
]
