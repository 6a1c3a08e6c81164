from __future__ import annotations

import json
from pathlib import Path

import pytest

from vulnreach import (
    CodeBlock,
    EmbeddingVector,
    NodeKind,
    ReferenceEncoder,
    SegmenterConfig,
    StoreEntry,
    VectorStore,
    VulnSpec,
    embed,
    segment_project,
)

FIXTURES = Path(__file__).parent / "fixtures"

DIMS = 256
FIXTURE_THETA = 60  # small enough that the fixture apps split into methods
FIXTURE_TAU = 0.25


def make_block(
    file_path: str = "src/A.java",
    line_start: int = 1,
    line_end: int = 3,
    source: str = "class A {\n  int x;\n}\n",
    node_kind: NodeKind = NodeKind.COMPILATION_UNIT,
    enclosing_class: str | None = "A",
    enclosing_method: str | None = None,
    size: int = 7,
) -> CodeBlock:
    return CodeBlock.create(
        file_path,
        line_start,
        line_end,
        source,
        node_kind,
        enclosing_class=enclosing_class,
        enclosing_method=enclosing_method,
        size=size,
    )


def build_fixture_store(project: str, encoder: ReferenceEncoder) -> VectorStore:
    blocks = segment_project(FIXTURES / project, SegmenterConfig(theta=FIXTURE_THETA))
    store = VectorStore.in_memory(encoder.dims)
    vectors = embed(encoder, [b.source for b in blocks])
    store.insert([StoreEntry(b, v) for b, v in zip(blocks, vectors)])
    return store


@pytest.fixture(scope="session")
def encoder() -> ReferenceEncoder:
    return ReferenceEncoder(dims=DIMS)


@pytest.fixture(scope="session")
def vuln() -> VulnSpec:
    return VulnSpec.from_dict(
        json.loads((FIXTURES / "vuln_encoder_null.json").read_text(encoding="utf-8"))
    )


@pytest.fixture(scope="session")
def guarded_store(encoder: ReferenceEncoder) -> VectorStore:
    return build_fixture_store("guarded_app", encoder)


@pytest.fixture(scope="session")
def unguarded_store(encoder: ReferenceEncoder) -> VectorStore:
    return build_fixture_store("unguarded_app", encoder)


def write_toy_manifest(path: Path) -> Path:
    """4-project manifest over the bundled fixture apps (absolute roots)."""
    vuln_spec = json.loads((FIXTURES / "vuln_encoder_null.json").read_text(encoding="utf-8"))
    manifest = {
        "projects": [
            {
                "project_id": "guarded_app",
                "root_path": str(FIXTURES / "guarded_app"),
                "ground_truth": "Secure",
                "vuln_refs": ["CVE-2020-5408"],
            },
            {
                "project_id": "unguarded_app",
                "root_path": str(FIXTURES / "unguarded_app"),
                "ground_truth": "Vulnerable",
                "vuln_refs": ["CVE-2020-5408"],
            },
            {
                "project_id": "plain_app",
                "root_path": str(FIXTURES / "plain_app"),
                "ground_truth": "Secure",
                "vuln_refs": ["CVE-2020-5408"],
            },
            {
                "project_id": "legacy_app",
                "root_path": str(FIXTURES / "legacy_app"),
                "ground_truth": "Vulnerable",
                "vuln_refs": ["CVE-2020-5408"],
            },
        ],
        "vulns": [vuln_spec],
    }
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return path


def write_tool_config(path: Path, **overrides) -> Path:
    config = {
        "theta": FIXTURE_THETA,
        "tau": FIXTURE_TAU,
        "encoder": {"provider": "reference", "dims": DIMS},
        "chat": {"provider": "scripted", "script_path": str(FIXTURES / "chat_script.json")},
    }
    config.update(overrides)
    path.write_text(json.dumps(config, indent=2) + "\n", encoding="utf-8")
    return path


def unit_vector(values, dims: int | None = None) -> EmbeddingVector:
    return EmbeddingVector.normalized(list(values))
