"""Saliency-graph verbalization, explanation scoring, and expert iteration."""

from .backend import (
    AuditLog,
    Backend,
    BackendBudget,
    GenerationRequest,
    HttpBackend,
    LogProbQuery,
    MockBackend,
)
from .core import (
    ExplanationInstance,
    NodeRecord,
    PredictionRecord,
    SaliencyAnnotation,
    TextAttributedGraph,
    content_hash,
    load_instance,
    load_instance_file,
    save_instance,
    save_instance_file,
)
from .iteration import (
    CandidateBatch,
    ExplanationCandidate,
    IterationConfig,
    IterationState,
    SelectionStrategy,
    run_iteration,
    run_loop,
    select,
)
from .measures import (
    InstanceScorer,
    ScoreTriple,
    ScoringContext,
    TauDistribution,
    pmi_at_k,
    score_all,
    score_brevity,
    score_input_faithfulness,
    score_prediction_faithfulness,
)
from .verbalize import (
    BfsTree,
    MaskedInstance,
    SaliencyParagraph,
    build_bfs_tree,
    build_masked_instance,
    prune,
    render_paragraph,
    serialize_plain,
)

__version__ = "0.1.0"

__all__ = [
    "AuditLog",
    "Backend",
    "BackendBudget",
    "BfsTree",
    "CandidateBatch",
    "ExplanationCandidate",
    "ExplanationInstance",
    "GenerationRequest",
    "HttpBackend",
    "InstanceScorer",
    "IterationConfig",
    "IterationState",
    "LogProbQuery",
    "MaskedInstance",
    "MockBackend",
    "NodeRecord",
    "PredictionRecord",
    "SaliencyAnnotation",
    "SaliencyParagraph",
    "ScoreTriple",
    "ScoringContext",
    "SelectionStrategy",
    "TauDistribution",
    "TextAttributedGraph",
    "build_bfs_tree",
    "build_masked_instance",
    "content_hash",
    "load_instance",
    "load_instance_file",
    "pmi_at_k",
    "prune",
    "render_paragraph",
    "run_iteration",
    "run_loop",
    "save_instance",
    "save_instance_file",
    "score_all",
    "score_brevity",
    "score_input_faithfulness",
    "score_prediction_faithfulness",
    "select",
    "serialize_plain",
]
