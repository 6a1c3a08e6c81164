"""Semantic reachability analysis for known-vulnerable library APIs in Java
source trees: AST-aware segmentation, embedding similarity search, and a
chat-model reflection loop that completes context before judging impact."""

from .detector import (
    ContextCompletion,
    DetectorConfig,
    TerminationReason,
    analyze,
    complete_context,
    identify_candidates,
)
from .embedding import EncoderProvider, ReferenceEncoder, cosine, embed, reference_encode
from .evalharness import (
    BenchmarkManifest,
    ConfusionMatrix,
    HarnessConfig,
    metrics,
    run_benchmark,
    run_tau_sweep,
    run_theta_sweep,
    score,
)
from .gateway import (
    ChatGateway,
    ChatProvider,
    PromptLibrary,
    PromptTemplate,
    ReplayChatProvider,
    RoleKind,
    ScriptedChatProvider,
    Transcript,
)
from .javaparse import CompilationUnit, parse_source
from .model import (
    Candidate,
    CandidateJudgment,
    CodeBlock,
    EmbeddingVector,
    Judgment,
    MatchedBy,
    NodeKind,
    Verdict,
    VulnSpec,
)
from .segmenter import SegmenterConfig, segment_project, segment_unit
from .store import ScopeFilter, StoreEntry, VectorStore
from .tokenizer import DEFAULT_TOKENIZER, LexicalTokenizer

__version__ = "0.1.0"

__all__ = [
    "analyze",
    "BenchmarkManifest",
    "Candidate",
    "CandidateJudgment",
    "ChatGateway",
    "ChatProvider",
    "CodeBlock",
    "CompilationUnit",
    "complete_context",
    "ConfusionMatrix",
    "ContextCompletion",
    "cosine",
    "DEFAULT_TOKENIZER",
    "DetectorConfig",
    "embed",
    "EmbeddingVector",
    "EncoderProvider",
    "HarnessConfig",
    "identify_candidates",
    "Judgment",
    "LexicalTokenizer",
    "MatchedBy",
    "metrics",
    "NodeKind",
    "parse_source",
    "PromptLibrary",
    "PromptTemplate",
    "reference_encode",
    "ReferenceEncoder",
    "ReplayChatProvider",
    "RoleKind",
    "run_benchmark",
    "run_tau_sweep",
    "run_theta_sweep",
    "ScopeFilter",
    "score",
    "ScriptedChatProvider",
    "SegmenterConfig",
    "segment_project",
    "segment_unit",
    "StoreEntry",
    "TerminationReason",
    "Transcript",
    "VectorStore",
    "Verdict",
    "VulnSpec",
]
