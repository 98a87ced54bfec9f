"""Knowledge graph embedding engine for constrained deployments.

Train translational, bilinear, and rotational triple-scoring models over
an entity/relation store, rank link completions with filtered metrics,
screen incoming triples by score standardization, prune trained models by
gradient sensitivity, and serve the result over a small local HTTP API.
"""

from .errors import (
    ConfigError,
    DegenerateDistributionError,
    EmptyStoreError,
    FormatError,
    GenerationError,
    IdError,
    KGEngineError,
    NonFiniteLossError,
    ParseError,
    SchemaError,
    ShapeError,
    UndefinedMetricError,
)
from .store import (
    Dictionary,
    FusionKey,
    Triple,
    TripleStore,
    canonicalize,
    export_graph,
    fuse_entities,
    ingest,
    load_dir,
    save_dir,
    split,
)
from .synth import (
    CorruptionLabel,
    SynthConfig,
    expected_triple_count,
    generate,
    inject_corruptions,
    read_corruption_labels,
    write_corruption_labels,
)
from .models import (
    EmbeddingModel,
    MODEL_KINDS,
    grad,
    init_model,
    project_constraints,
    score,
    score_all_heads,
    score_all_tails,
)
from .optim import AdamState
from .training import KnownTriples, PROFILES, TrainConfig, TrainReport, profile, sample_negatives, train
from .evaluation import EvalOptions, RankingReport, amri, amri_raw, evaluate, hits_at_n, rank_queries
from .quality import (
    AnomalyRecord,
    AnomalyReport,
    ScoreDistribution,
    assess,
    assess_streaming,
    fit_distribution,
    load_distribution,
    save_distribution,
    zscores,
)
from .checkpoint import dense_byte_size, load, save_dense, save_sparse, sparse_byte_size
from .pruning import (
    PruneMask,
    PruneReport,
    apply_mask,
    build_mask,
    finetune,
    score_flops,
    sensitivity,
)
from .service import InferenceEngine, RuntimeConfig, make_server, serve

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "AnomalyRecord",
    "AnomalyReport",
    "ConfigError",
    "CorruptionLabel",
    "DegenerateDistributionError",
    "Dictionary",
    "EmbeddingModel",
    "EmptyStoreError",
    "EvalOptions",
    "FormatError",
    "FusionKey",
    "GenerationError",
    "IdError",
    "InferenceEngine",
    "KGEngineError",
    "KnownTriples",
    "MODEL_KINDS",
    "NonFiniteLossError",
    "PROFILES",
    "ParseError",
    "PruneMask",
    "PruneReport",
    "RankingReport",
    "RuntimeConfig",
    "SchemaError",
    "ScoreDistribution",
    "ShapeError",
    "SynthConfig",
    "TrainConfig",
    "TrainReport",
    "Triple",
    "TripleStore",
    "UndefinedMetricError",
    "amri",
    "amri_raw",
    "apply_mask",
    "assess",
    "assess_streaming",
    "build_mask",
    "canonicalize",
    "dense_byte_size",
    "evaluate",
    "expected_triple_count",
    "export_graph",
    "finetune",
    "fit_distribution",
    "fuse_entities",
    "generate",
    "grad",
    "hits_at_n",
    "ingest",
    "init_model",
    "inject_corruptions",
    "load",
    "load_dir",
    "load_distribution",
    "make_server",
    "profile",
    "project_constraints",
    "rank_queries",
    "read_corruption_labels",
    "sample_negatives",
    "save_dense",
    "save_dir",
    "save_distribution",
    "save_sparse",
    "score",
    "score_all_heads",
    "score_all_tails",
    "score_flops",
    "sensitivity",
    "serve",
    "sparse_byte_size",
    "split",
    "train",
    "write_corruption_labels",
    "zscores",
]
