"""Meta-toxic knowledge graphs for toxic speech detection.

The package builds a knowledge graph of toxicity mechanisms from a labeled
corpus (rationale reasoning, triplet extraction with format and self checks,
embedding-based element resolution), retrieves graph knowledge for new
inputs, and classifies them by scoring two answer options with a language
model.
"""
from .config import (
    DetectConfig,
    EmbeddingConfig,
    KgBuildConfig,
    LlmGatewayConfig,
    RunConfig,
    build_embedder,
    build_gateway,
    build_provider,
    load_run_config,
)
from .corpus import (
    LABEL_MAP_PRESETS,
    Label,
    Sample,
    load_corpus,
    load_label_map,
    save_corpus,
    toxic_subset,
)
from .detect import (
    DetectionMode,
    DetectionRecord,
    MetricsReport,
    average_precision,
    classify,
    evaluate,
    load_records,
    naive_rag_retrieve,
    run_detection,
    save_records,
)
from .embedding import (
    CachedEmbedder,
    Embedder,
    HashTrigramEmbedder,
    NearestNeighborIndex,
    RemoteEmbedder,
    cosine,
)
from .errors import (
    ConfigError,
    DimensionMismatch,
    DuplicateId,
    EmptyCorpus,
    EmptyIndex,
    EmptyRationale,
    EmptyText,
    IdMismatch,
    MalformedRecord,
    MetatoxError,
    MissingBinding,
    NodeNotInGraph,
    OptionNotScorable,
    ProviderUnavailable,
    RateLimited,
    ResponseTruncated,
    SchemaVersionMismatch,
    UnknownLabel,
    UnmappedElement,
)
from .kg_build import (
    AuditLog,
    ClusterMap,
    ElementKind,
    RawTriplet,
    Rationale,
    Triplet,
    apply_resolution,
    extract_triplets,
    format_spo_line,
    parse_and_format_check,
    parse_triplet_line,
    reason_rationale,
    resolve,
    run_pipeline,
    self_check_filter,
)
from .kg_store import Edge, KnowledgeGraph, MergeStats, load, merge, save, stats
from .llm_gateway import (
    GenerationParams,
    HttpProvider,
    LlmGateway,
    MockProvider,
    MockRule,
    OptionScore,
    PromptRole,
    PromptTemplate,
    RecordingProvider,
    ReplayProvider,
    load_templates,
    render,
)
from .query import (
    KnowledgeItem,
    MappedNode,
    PathStrategy,
    QueryConfig,
    RetrievedKnowledge,
    extract_entities,
    format_knowledge,
    map_nodes,
    query_graph,
    rank_filter,
    retrieve_paths,
    shortest_path,
)

__version__ = "0.1.0"
