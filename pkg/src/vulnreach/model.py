"""Shared domain types used by every other module.

All types are immutable values after construction and safe to share across
threads. Each one serializes to plain dicts (`to_dict` / `from_dict`) that
match the external JSON formats consumed and produced by the CLI.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Iterable, Mapping, Sequence

_NORM_TOLERANCE = 1e-6


class NodeKind(str, Enum):
    COMPILATION_UNIT = "CompilationUnit"
    IMPORT_DECLARATION = "ImportDeclaration"
    FIELD_DECLARATION = "FieldDeclaration"
    METHOD_DECLARATION = "MethodDeclaration"
    CONSTRUCTOR_DECLARATION = "ConstructorDeclaration"
    OTHER = "Other"


#: Declaration kinds a compilation unit is split into when it exceeds the
#: size threshold.
SPLIT_KINDS = frozenset(
    {
        NodeKind.IMPORT_DECLARATION,
        NodeKind.FIELD_DECLARATION,
        NodeKind.METHOD_DECLARATION,
        NodeKind.CONSTRUCTOR_DECLARATION,
    }
)


class MatchedBy(str, Enum):
    API_SIMILARITY = "ApiSimilarity"
    TEST_SIMILARITY = "TestSimilarity"
    BOTH = "Both"
    # Blocks pulled into the candidate pool by scoped retrieval during the
    # reflection loop rather than by the seed similarity filter.
    CONTEXT_RETRIEVAL = "ContextRetrieval"


class Judgment(str, Enum):
    VULNERABLE = "Vulnerable"
    SECURE = "Secure"


def block_id(file_path: str, line_start: int, line_end: int, node_kind: NodeKind) -> str:
    """Deterministic content-address-style id for a block.

    Re-indexing an unchanged tree yields identical ids, which enables
    cross-run diffing and cache reuse.
    """
    seed = f"{file_path}\x00{line_start}\x00{line_end}\x00{node_kind.value}"
    return hashlib.sha256(seed.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class CodeBlock:
    """A semantically cohesive source segment with file/line/AST metadata."""

    id: str
    file_path: str
    line_start: int
    line_end: int
    source: str
    node_kind: NodeKind
    enclosing_class: str | None = None
    enclosing_method: str | None = None
    size: int = 0
    oversize: bool = False

    def __post_init__(self) -> None:
        if self.line_start < 1 or self.line_end < self.line_start:
            raise ValueError(
                f"invalid line range {self.line_start}..{self.line_end} for {self.file_path}"
            )
        if self.size < 0:
            raise ValueError("size must be non-negative")

    @classmethod
    def create(
        cls,
        file_path: str,
        line_start: int,
        line_end: int,
        source: str,
        node_kind: NodeKind,
        *,
        enclosing_class: str | None = None,
        enclosing_method: str | None = None,
        size: int,
        oversize: bool = False,
    ) -> "CodeBlock":
        return cls(
            id=block_id(file_path, line_start, line_end, node_kind),
            file_path=file_path,
            line_start=line_start,
            line_end=line_end,
            source=source,
            node_kind=node_kind,
            enclosing_class=enclosing_class,
            enclosing_method=enclosing_method,
            size=size,
            oversize=oversize,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "file_path": self.file_path,
            "line_start": self.line_start,
            "line_end": self.line_end,
            "source": self.source,
            "node_kind": self.node_kind.value,
            "enclosing_class": self.enclosing_class,
            "enclosing_method": self.enclosing_method,
            "size": self.size,
            "oversize": self.oversize,
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "CodeBlock":
        return cls(
            id=str(raw["id"]),
            file_path=str(raw["file_path"]),
            line_start=int(raw["line_start"]),
            line_end=int(raw["line_end"]),
            source=str(raw["source"]),
            node_kind=NodeKind(raw["node_kind"]),
            enclosing_class=raw.get("enclosing_class"),
            enclosing_method=raw.get("enclosing_method"),
            size=int(raw.get("size", 0)),
            oversize=bool(raw.get("oversize", False)),
        )


@dataclass(frozen=True)
class EmbeddingVector:
    """Fixed-dimension unit-norm vector representing a block of code."""

    dims: int
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if self.dims <= 0:
            raise ValueError("dims must be positive")
        if len(self.values) != self.dims:
            raise ValueError(f"expected {self.dims} values, got {len(self.values)}")
        norm = math.sqrt(math.fsum(v * v for v in self.values))
        if abs(norm - 1.0) > _NORM_TOLERANCE:
            raise ValueError(f"vector norm {norm!r} is not 1.0 within {_NORM_TOLERANCE}")

    @classmethod
    def normalized(cls, values: Sequence[float]) -> "EmbeddingVector":
        norm = math.sqrt(math.fsum(float(v) * float(v) for v in values))
        if norm == 0.0:
            raise ValueError("cannot normalize a zero vector")
        return cls(dims=len(values), values=tuple(float(v) / norm for v in values))

    def dot(self, other: "EmbeddingVector") -> float:
        if other.dims != self.dims:
            raise ValueError(f"dims mismatch: {self.dims} vs {other.dims}")
        return math.fsum(a * b for a, b in zip(self.values, other.values))

    def to_dict(self) -> dict[str, Any]:
        return {"dims": self.dims, "values": list(self.values)}

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "EmbeddingVector":
        return cls(dims=int(raw["dims"]), values=tuple(float(v) for v in raw["values"]))


@dataclass(frozen=True)
class VulnSpec:
    """One vulnerability seed: vulnerable API signature(s) plus the
    proof-of-vulnerability test source that demonstrates the trigger."""

    vuln_id: str
    library: str
    api_signatures: tuple[str, ...]
    pov_test_source: str
    description: str | None = None

    def __post_init__(self) -> None:
        if not self.api_signatures or any(not s.strip() for s in self.api_signatures):
            raise ValueError("api_signatures must be a nonempty list of nonempty strings")
        if not self.pov_test_source.strip():
            raise ValueError("pov_test_source must be nonempty")

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "vuln_id": self.vuln_id,
            "library": self.library,
            "api_signatures": list(self.api_signatures),
            "pov_test_source": self.pov_test_source,
        }
        if self.description is not None:
            out["description"] = self.description
        return out

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "VulnSpec":
        return cls(
            vuln_id=str(raw["vuln_id"]),
            library=str(raw["library"]),
            api_signatures=tuple(str(s) for s in raw["api_signatures"]),
            pov_test_source=str(raw["pov_test_source"]),
            description=raw.get("description"),
        )


@dataclass(frozen=True)
class Candidate:
    """A code block under analysis plus its accumulated context set.

    The context is an ordered set that always contains the anchor and only
    ever grows; growth happens by constructing a new value via
    :meth:`extend_context`, keeping the original immutable.
    """

    anchor: CodeBlock
    context: tuple[CodeBlock, ...]
    matched_by: MatchedBy
    similarity_api: float
    similarity_test: float

    def __post_init__(self) -> None:
        ids = [b.id for b in self.context]
        if len(set(ids)) != len(ids):
            raise ValueError("context contains duplicate block ids")
        if self.anchor.id not in set(ids):
            raise ValueError("anchor must be part of the context")
        for name, value in (("similarity_api", self.similarity_api), ("similarity_test", self.similarity_test)):
            if not -1.0 - 1e-9 <= value <= 1.0 + 1e-9:
                raise ValueError(f"{name} out of [-1, 1]: {value}")

    @classmethod
    def initial(
        cls,
        anchor: CodeBlock,
        matched_by: MatchedBy,
        similarity_api: float,
        similarity_test: float,
    ) -> "Candidate":
        return cls(
            anchor=anchor,
            context=(anchor,),
            matched_by=matched_by,
            similarity_api=similarity_api,
            similarity_test=similarity_test,
        )

    def extend_context(self, blocks: Iterable[CodeBlock]) -> "Candidate":
        """Append new blocks, skipping ids already present (append-only)."""
        known = {b.id for b in self.context}
        added = []
        for b in blocks:
            if b.id not in known:
                known.add(b.id)
                added.append(b)
        if not added:
            return self
        return replace(self, context=self.context + tuple(added))

    def context_ids(self) -> set[str]:
        return {b.id for b in self.context}

    def to_dict(self) -> dict[str, Any]:
        return {
            "anchor": self.anchor.to_dict(),
            "context": [b.to_dict() for b in self.context],
            "matched_by": self.matched_by.value,
            "similarity_api": self.similarity_api,
            "similarity_test": self.similarity_test,
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "Candidate":
        return cls(
            anchor=CodeBlock.from_dict(raw["anchor"]),
            context=tuple(CodeBlock.from_dict(b) for b in raw["context"]),
            matched_by=MatchedBy(raw["matched_by"]),
            similarity_api=float(raw["similarity_api"]),
            similarity_test=float(raw["similarity_test"]),
        )


@dataclass(frozen=True)
class CandidateJudgment:
    candidate_id: str
    judgment: Judgment
    rationale: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "candidate_id": self.candidate_id,
            "judgment": self.judgment.value,
            "rationale": self.rationale,
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "CandidateJudgment":
        return cls(
            candidate_id=str(raw["candidate_id"]),
            judgment=Judgment(raw["judgment"]),
            rationale=str(raw["rationale"]),
        )


def aggregate_judgment(per_candidate: Sequence[Judgment]) -> Judgment:
    """Project verdict rule: vulnerable if any candidate is vulnerable,
    secure when the candidate set is empty or all candidates are secure."""
    if any(j is Judgment.VULNERABLE for j in per_candidate):
        return Judgment.VULNERABLE
    return Judgment.SECURE


@dataclass(frozen=True)
class Verdict:
    """Per-candidate judgments and the project-level aggregate."""

    project_id: str
    vuln_id: str
    per_candidate: tuple[CandidateJudgment, ...]
    project_judgment: Judgment
    transcript_path: str | None = None

    def __post_init__(self) -> None:
        expected = aggregate_judgment([c.judgment for c in self.per_candidate])
        if self.project_judgment is not expected:
            raise ValueError(
                f"project_judgment {self.project_judgment.value} violates the "
                f"aggregation rule (expected {expected.value})"
            )

    @classmethod
    def aggregate(
        cls,
        project_id: str,
        vuln_id: str,
        per_candidate: Sequence[CandidateJudgment],
        transcript_path: str | None = None,
    ) -> "Verdict":
        return cls(
            project_id=project_id,
            vuln_id=vuln_id,
            per_candidate=tuple(per_candidate),
            project_judgment=aggregate_judgment([c.judgment for c in per_candidate]),
            transcript_path=transcript_path,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "project_id": self.project_id,
            "vuln_id": self.vuln_id,
            "per_candidate": [c.to_dict() for c in self.per_candidate],
            "project_judgment": self.project_judgment.value,
            "transcript_path": self.transcript_path,
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "Verdict":
        return cls(
            project_id=str(raw["project_id"]),
            vuln_id=str(raw["vuln_id"]),
            per_candidate=tuple(CandidateJudgment.from_dict(c) for c in raw["per_candidate"]),
            project_judgment=Judgment(raw["project_judgment"]),
            transcript_path=raw.get("transcript_path"),
        )
