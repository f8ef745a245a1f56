from __future__ import annotations

import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from metatox.corpus import load_corpus, load_label_map
from metatox.embedding import HashTrigramEmbedder
from metatox.kg_store import Edge, KnowledgeGraph
from metatox.llm_gateway import LlmGateway, MockProvider, load_templates

FIXTURES = Path(__file__).parent / "fixtures"
GOLDENS = Path(__file__).parent / "goldens"


@pytest.fixture(scope="session")
def embedder() -> HashTrigramEmbedder:
    return HashTrigramEmbedder()


@pytest.fixture(scope="session")
def templates():
    return load_templates()


@pytest.fixture()
def train_samples():
    return load_corpus(FIXTURES / "corpus_train.jsonl", load_label_map("binary"))


@pytest.fixture()
def test_samples():
    return load_corpus(FIXTURES / "corpus_test.jsonl", load_label_map("binary"))


@pytest.fixture()
def build_gateway_mock(templates) -> LlmGateway:
    provider = MockProvider.from_file(FIXTURES / "build_rules.json")
    return LlmGateway(provider, templates, max_retries=0)


@pytest.fixture()
def detect_gateway_mock(templates) -> LlmGateway:
    provider = MockProvider.from_file(FIXTURES / "detect_rules.json")
    return LlmGateway(provider, templates, max_retries=0)


def edge(subject: str, predicate: str, obj: str, count: int = 1,
         sources: tuple[str, ...] = ()) -> Edge:
    return Edge(subject, predicate, obj, count, frozenset(sources))


@pytest.fixture()
def toy_graph() -> KnowledgeGraph:
    """The graph the build scenario produces, constructed directly."""
    return KnowledgeGraph([
        edge("immigrants", "are called", "vermin", 1, ("t01",)),
        edge("migration", "is framed as", "an invasion", 1, ("t01",)),
        edge("jews", "are accused of controlling", "the banks", 1, ("t02",)),
        edge("jews", "are accused of controlling", "the media", 1, ("t02",)),
        edge("women", "belong in", "the kitchen", 1, ("t03",)),
        edge("LGBT people", "are blamed for", "destroying families", 1, ("t04",)),
        edge("immigrant caravans", "bring", "crime", 1, ("t06",)),
        edge("immigrants", "are linked to", "crime", 1, ("t06",)),
    ])


def read_json(path: Path):
    return json.loads(path.read_text(encoding="utf-8"))


def read_ndjson(path: Path) -> list[dict]:
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]
