"""Five-step graph query: entities, node mapping, paths, formatting, ranking.

Given an input speech, extract entities with the model, map them onto graph
nodes by embedding similarity, retrieve connecting triplets (pairwise
shortest paths by default, one-hop neighborhoods as the ablation), format
each triplet as a plain sentence, and rank the sentences by similarity to
the input, dropping those below a floor. Whenever a stage comes up empty the
query short-circuits to empty knowledge.
"""
from __future__ import annotations

import logging
import re
from collections import deque
from dataclasses import dataclass
from enum import Enum
from itertools import combinations
from typing import Iterable, Sequence

from .embedding import Embedder, NearestNeighborIndex, cosine
from .errors import NodeNotInGraph
from .kg_store import KnowledgeGraph
from .llm_gateway import LlmGateway, PromptRole

LOGGER = logging.getLogger(__name__)

_SPO = tuple[str, str, str]


class PathStrategy(str, Enum):
    SHORTEST_PATH = "shortest-path"
    ONE_HOP = "one-hop"


@dataclass(frozen=True)
class QueryConfig:
    strategy: PathStrategy = PathStrategy.SHORTEST_PATH
    map_floor: float = 0.55
    rank_floor: float = 0.35
    top_k: int = 10
    rank_filter: bool = True


@dataclass(frozen=True)
class MappedNode:
    surface: str
    node: str
    similarity: float


@dataclass(frozen=True)
class KnowledgeItem:
    sentence: str
    triplet: _SPO | None
    similarity: float

    def to_json_dict(self) -> dict:
        return {
            "sentence": self.sentence,
            "triplet": list(self.triplet) if self.triplet is not None else None,
            "similarity": round(self.similarity, 10),
        }


@dataclass(frozen=True)
class RetrievedKnowledge:
    items: tuple[KnowledgeItem, ...] = ()

    def __bool__(self) -> bool:
        return bool(self.items)

    @property
    def sentences(self) -> tuple[str, ...]:
        return tuple(item.sentence for item in self.items)

    def to_json_dict(self) -> dict:
        return {"items": [item.to_json_dict() for item in self.items]}

    @classmethod
    def from_json_dict(cls, data: dict) -> "RetrievedKnowledge":
        items = tuple(
            KnowledgeItem(
                sentence=item["sentence"],
                triplet=tuple(item["triplet"]) if item["triplet"] is not None else None,
                similarity=float(item["similarity"]),
            )
            for item in data["items"]
        )
        return cls(items)


_LIST_MARKER_RE = re.compile(r"^\s*(?:[-*•]|\d+\s*[.)])\s*")


def extract_entities(text: str, gateway: LlmGateway) -> list[str]:
    """Model-extracted entity mentions, deduplicated in order of appearance."""
    prompt = gateway.prompt(PromptRole.NER, {"text": text})
    response = gateway.complete(prompt)
    entities: list[str] = []
    seen: set[str] = set()
    for line in response.splitlines():
        entity = _LIST_MARKER_RE.sub("", line, count=1).strip()
        if entity and entity not in seen:
            seen.add(entity)
            entities.append(entity)
    return entities


def map_nodes(entities: Sequence[str], graph: KnowledgeGraph, embedder: Embedder,
              floor: float = 0.55) -> list[MappedNode]:
    """Nearest graph node per entity; drops weak matches and duplicate targets.

    When several entities map to the same node, the first occurrence wins.
    The graph must be nonempty.
    """
    if not entities:
        return []
    index = NearestNeighborIndex(
        (name, embedder.embed(name)) for name in sorted(graph.nodes)
    )
    mapped: list[MappedNode] = []
    taken: set[str] = set()
    for entity in entities:
        node, similarity = index.query(embedder.embed(entity), k=1)[0]
        if similarity < floor:
            LOGGER.debug("entity %r best node %r below floor (%.3f)", entity, node, similarity)
            continue
        if node in taken:
            continue
        taken.add(node)
        mapped.append(MappedNode(entity, node, similarity))
    return mapped


def shortest_path(graph: KnowledgeGraph, source: str, target: str) -> list[str] | None:
    """One shortest undirected path, BFS with lexicographic neighbor expansion.

    With neighbors expanded in sorted order and each node keeping its first
    discoverer as parent, the reconstructed path is the lexicographically
    smallest shortest node sequence from ``source``. Returns None when the
    endpoints are disconnected.
    """
    if source == target:
        return [source]
    parent: dict[str, str | None] = {source: None}
    queue: deque[str] = deque([source])
    while queue:
        current = queue.popleft()
        for neighbor in graph.neighbors(current):
            if neighbor in parent:
                continue
            parent[neighbor] = current
            if neighbor == target:
                path = [neighbor]
                while parent[path[-1]] is not None:
                    path.append(parent[path[-1]])  # type: ignore[arg-type]
                return path[::-1]
            queue.append(neighbor)
    return None


def retrieve_paths(graph: KnowledgeGraph, nodes: Sequence[str],
                   strategy: PathStrategy = PathStrategy.SHORTEST_PATH) -> set[_SPO]:
    """Union of connecting triplets for the given nodes.

    ShortestPath: one shortest path per unordered node pair (source is the
    lexicographically smaller endpoint), split into its edge triplets; a hop
    with parallel edges contributes the lexicographically smallest stored
    triplet. Disconnected pairs contribute nothing. OneHop: every edge
    incident to any given node.
    """
    unique_nodes = sorted(set(nodes))
    for node in unique_nodes:
        if not graph.has_node(node):
            raise NodeNotInGraph(node)
    if strategy is PathStrategy.ONE_HOP:
        return {e.spo for node in unique_nodes for e in graph.incident_edges(node)}

    triplets: set[_SPO] = set()
    for a, b in combinations(unique_nodes, 2):
        path = shortest_path(graph, a, b)
        if path is None:
            LOGGER.debug("no path between %r and %r; pair skipped", a, b)
            continue
        for u, v in zip(path, path[1:]):
            triplets.add(min(e.spo for e in graph.edges_between(u, v)))
    return triplets


def format_knowledge(triplet: Sequence[str]) -> str:
    """SPO elements joined by single spaces into one plain sentence."""
    subject, predicate, obj = triplet
    return f"{subject} {predicate} {obj}"


def rank_filter(candidates: Iterable[_SPO], text: str, embedder: Embedder, *,
                floor: float = 0.35, top_k: int = 10) -> RetrievedKnowledge:
    """Keep candidates whose formatted sentence is similar enough to the text.

    Sorted by similarity descending (ties by sentence, ascending), truncated
    to ``top_k``.
    """
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    query_vector = embedder.embed(text)
    items = []
    for triplet in sorted(set(candidates)):
        sentence = format_knowledge(triplet)
        similarity = cosine(embedder.embed(sentence), query_vector)
        if similarity >= floor:
            items.append(KnowledgeItem(sentence, triplet, similarity))
    items.sort(key=lambda item: (-item.similarity, item.sentence))
    return RetrievedKnowledge(tuple(items[:top_k]))


def query_graph(text: str, graph: KnowledgeGraph, gateway: LlmGateway,
                embedder: Embedder, config: QueryConfig = QueryConfig()) -> RetrievedKnowledge:
    """Full query pipeline; any empty intermediate short-circuits to empty."""
    if graph.node_count == 0:
        return RetrievedKnowledge()
    entities = extract_entities(text, gateway)
    if not entities:
        return RetrievedKnowledge()
    mapped = map_nodes(entities, graph, embedder, floor=config.map_floor)
    if not mapped:
        return RetrievedKnowledge()
    candidates = retrieve_paths(graph, [m.node for m in mapped], config.strategy)
    if not candidates:
        return RetrievedKnowledge()
    if config.rank_filter:
        return rank_filter(candidates, text, embedder,
                           floor=config.rank_floor, top_k=config.top_k)
    # Ablation: no floor, no truncation; deterministic sentence order, with
    # similarities still reported for inspection.
    query_vector = embedder.embed(text)
    items = tuple(
        KnowledgeItem(sentence, triplet, cosine(embedder.embed(sentence), query_vector))
        for sentence, triplet in sorted(
            (format_knowledge(t), t) for t in set(candidates)
        )
    )
    return RetrievedKnowledge(items)
