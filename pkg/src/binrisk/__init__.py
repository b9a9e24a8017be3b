"""Vulnerability analysis over binary code property graphs.

The package turns a stripped-binary code property graph into a ranked
risk report in five steps: semantic lifting of functions onto a
containment lattice (gated by a data-flow verifier), compression into
a small semantic knowledge graph, a deterministic graph-transformer
forward pass, damped risk propagation over weighted relations, and
fingerprint matching in embedding space.
"""

__version__ = "0.1.0"

from .config import PipelineConfig
from .cpg import (
    CpgEdge,
    CpgGraph,
    CpgNode,
    DataFlowClaim,
    EdgeKind,
    NodeKind,
    VerifyResult,
    load_cpg,
    loads_cpg,
    save_cpg,
    verify_claims,
)
from .embedding import EmbeddingVector, HashEmbedder, cosine
from .errors import (
    AnnotatorFailure,
    BinriskError,
    ConfigError,
    CorruptFile,
    DimensionMismatch,
    EmptyGoldenSet,
    EmptyGraph,
    EmptyTarget,
    LengthMismatch,
    MissingAnnotation,
    MissingEmbedding,
    NonConvergence,
    ParseError,
    SchemaError,
    ShapeMismatch,
    SingleClassInput,
    UnknownFunction,
    UnknownLabel,
    UnknownNode,
    VersionMismatch,
    ZeroVector,
)
from .fingerprint import (
    Fingerprint,
    MatchResult,
    ThresholdReport,
    load_fingerprint,
    load_repository,
    match_and_alert,
    roc_auc,
    save_fingerprint,
    select_threshold,
    similarity,
)
from .graphormer import (
    ModelConfig,
    ModelParams,
    NodeEmbedding,
    forward,
    init_params,
    load_params,
    save_params,
)
from .lattice import (
    EvrMode,
    GoldenRecord,
    Label,
    Lattice,
    TOP,
    covers,
    evr,
    join,
    leq,
)
from .lifting import (
    Annotation,
    VerifiedCorpus,
    build_corpus,
    load_corpus,
    replay_annotator,
    rule_annotator,
    save_corpus,
)
from .metrics import (
    ClassificationMetrics,
    ConfusionCounts,
    classification_metrics,
    cohen_kappa,
)
from .pipeline import RiskReport, run_pipeline
from .risk import PropagationConfig, RiskVector, inherent_risk, propagate
from .ssckg import (
    CveRecord,
    Entity,
    Granularity,
    Relation,
    RelationType,
    SsckgGraph,
    construction_stats,
    dbscan,
    extract_relations,
    load_ssckg,
    save_ssckg,
    semantic_clustering,
    structural_collapse,
)

__all__ = [name for name in dir() if not name.startswith("_")]
