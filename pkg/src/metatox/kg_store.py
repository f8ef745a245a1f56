"""Knowledge graph container: folding, persistence, merge, and size stats.

Edges are keyed by their (subject, predicate, object) triple. Folding
duplicate triplets sums occurrence counts and unions provenance. The on-disk
format is a single JSON document with sorted keys, so identical graphs
serialize to identical bytes.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .embedding import Embedder
from .errors import SchemaVersionMismatch
from .kg_build import ClusterMap, ElementKind, Triplet, resolve

SCHEMA_VERSION = 1

_SPO = tuple[str, str, str]


@dataclass(frozen=True)
class Edge:
    subject: str
    predicate: str
    object: str
    count: int
    sources: frozenset[str]

    @property
    def spo(self) -> _SPO:
        return (self.subject, self.predicate, self.object)


@dataclass(frozen=True)
class MergeStats:
    entities_before: int
    entities_after: int
    triplets_before: int
    triplets_after: int

    @staticmethod
    def _pct(before: int, after: int) -> float:
        return 0.0 if before == 0 else 100.0 * (before - after) / before

    @property
    def entity_reduction_pct(self) -> float:
        return self._pct(self.entities_before, self.entities_after)

    @property
    def triplet_reduction_pct(self) -> float:
        return self._pct(self.triplets_before, self.triplets_after)

    def to_json_dict(self) -> dict:
        return {
            "entities_before": self.entities_before,
            "entities_after": self.entities_after,
            "entity_reduction_pct": round(self.entity_reduction_pct, 10),
            "triplets_before": self.triplets_before,
            "triplets_after": self.triplets_after,
            "triplet_reduction_pct": round(self.triplet_reduction_pct, 10),
        }


class KnowledgeGraph:
    """Undirected-for-traversal multigraph with directed stored edges."""

    def __init__(self, edges: Iterable[Edge] = (), isolated_nodes: Iterable[str] = ()):
        self._edges: dict[_SPO, Edge] = {}
        self._nodes: set[str] = set(isolated_nodes)
        for edge in edges:
            if edge.spo in self._edges:
                raise ValueError(f"duplicate edge key {edge.spo}")
            if edge.count < 1:
                raise ValueError(f"edge {edge.spo} has count {edge.count}")
            self._edges[edge.spo] = edge
            self._nodes.add(edge.subject)
            self._nodes.add(edge.object)
        self._adjacency: dict[str, tuple[str, ...]] | None = None

    # Construction -------------------------------------------------------

    @classmethod
    def from_triplets(cls, triplets: Iterable[Triplet]) -> "KnowledgeGraph":
        """Fold triplets into edges: duplicates sum counts and union sources."""
        records = ((t.subject, t.predicate, t.object, 1, t.sources) for t in triplets)
        return cls(_fold(records))

    # Accessors ----------------------------------------------------------

    @property
    def nodes(self) -> frozenset[str]:
        return frozenset(self._nodes)

    @property
    def edges(self) -> tuple[Edge, ...]:
        return tuple(self._edges[key] for key in sorted(self._edges))

    @property
    def node_count(self) -> int:
        return len(self._nodes)

    @property
    def edge_count(self) -> int:
        return len(self._edges)

    def has_node(self, node: str) -> bool:
        return node in self._nodes

    def neighbors(self, node: str) -> tuple[str, ...]:
        """Adjacent node names in lexicographic order (edges are undirected here)."""
        if self._adjacency is None:
            adjacency: dict[str, set[str]] = {node: set() for node in self._nodes}
            for edge in self._edges.values():
                adjacency[edge.subject].add(edge.object)
                adjacency[edge.object].add(edge.subject)
            self._adjacency = {node: tuple(sorted(peers)) for node, peers in adjacency.items()}
        return self._adjacency.get(node, ())

    def incident_edges(self, node: str) -> list[Edge]:
        return [e for e in self.edges if node in (e.subject, e.object)]

    def edges_between(self, u: str, v: str) -> list[Edge]:
        return [e for e in self.edges if {e.subject, e.object} == {u, v} or
                (u == v and e.subject == e.object == u)]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, KnowledgeGraph):
            return NotImplemented
        return self._nodes == other._nodes and self._edges == other._edges

    def __repr__(self) -> str:
        return f"KnowledgeGraph(nodes={self.node_count}, edges={self.edge_count})"


def _fold(records: Iterable[tuple[str, str, str, int, frozenset[str]]]) -> Iterator[Edge]:
    folded: dict[_SPO, tuple[int, set[str]]] = {}
    for subject, predicate, obj, count, sources in records:
        key = (subject, predicate, obj)
        current = folded.get(key)
        if current is None:
            folded[key] = (count, set(sources))
        else:
            folded[key] = (current[0] + count, current[1] | set(sources))
    for (subject, predicate, obj), (count, sources) in folded.items():
        yield Edge(subject, predicate, obj, count, frozenset(sources))


# Persistence ----------------------------------------------------------


def save(graph: KnowledgeGraph, path: str | Path) -> None:
    document = {
        "schema_version": SCHEMA_VERSION,
        "nodes": sorted(graph.nodes),
        "edges": [
            {
                "subject": e.subject,
                "predicate": e.predicate,
                "object": e.object,
                "count": e.count,
                "sources": sorted(e.sources),
            }
            for e in graph.edges
        ],
    }
    Path(path).write_text(
        json.dumps(document, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )


def load(path: str | Path) -> KnowledgeGraph:
    """Load a graph file; anything unreadable raises SchemaVersionMismatch."""
    try:
        document = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaVersionMismatch(f"{path}: not a graph file ({exc})") from exc
    if not isinstance(document, dict) or document.get("schema_version") != SCHEMA_VERSION:
        raise SchemaVersionMismatch(
            f"{path}: expected schema_version {SCHEMA_VERSION},"
            f" got {document.get('schema_version') if isinstance(document, dict) else document!r}"
        )
    try:
        nodes = set(document["nodes"])
        edges = [
            Edge(e["subject"], e["predicate"], e["object"], int(e["count"]),
                 frozenset(e["sources"]))
            for e in document["edges"]
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaVersionMismatch(f"{path}: malformed graph document ({exc})") from exc
    for edge in edges:
        if edge.subject not in nodes or edge.object not in nodes:
            raise SchemaVersionMismatch(f"{path}: edge {edge.spo} references unknown node")
    endpoint_nodes = {n for e in edges for n in (e.subject, e.object)}
    try:
        return KnowledgeGraph(edges, isolated_nodes=nodes - endpoint_nodes)
    except ValueError as exc:
        raise SchemaVersionMismatch(f"{path}: {exc}") from exc


# Merge ----------------------------------------------------------------


def merge(g1: KnowledgeGraph, g2: KnowledgeGraph, embedder: Embedder, *,
          entity_threshold: float = 0.9,
          relation_threshold: float = 0.9) -> tuple[KnowledgeGraph, MergeStats]:
    """Concatenate two graphs' triplets and re-resolve across the union.

    Surface-form frequencies for canonical-name voting are weighted by edge
    counts, so merging preserves the voting behavior of a single build over
    the concatenated corpora.
    """
    records = [(e.subject, e.predicate, e.object, e.count, e.sources)
               for g in (g1, g2) for e in g.edges]
    if records:
        entity_pool: list[str] = []
        relation_pool: list[str] = []
        for subject, predicate, obj, count, _ in records:
            entity_pool.extend([subject] * count)
            entity_pool.extend([obj] * count)
            relation_pool.extend([predicate] * count)
        entity_map = resolve(entity_pool, ElementKind.ENTITY, embedder, entity_threshold)
        relation_map = resolve(relation_pool, ElementKind.RELATION, embedder,
                               relation_threshold)
        rewritten = [
            (entity_map.canonical(s), relation_map.canonical(p), entity_map.canonical(o),
             count, sources)
            for s, p, o, count, sources in records
        ]
        merged = KnowledgeGraph(_fold(rewritten))
    else:
        merged = KnowledgeGraph()
    stats = MergeStats(
        entities_before=g1.node_count + g2.node_count,
        entities_after=merged.node_count,
        triplets_before=g1.edge_count + g2.edge_count,
        triplets_after=merged.edge_count,
    )
    return merged, stats


# Stats ----------------------------------------------------------------


def stats(graph: KnowledgeGraph) -> dict:
    return {
        "node_count": graph.node_count,
        "edge_count": graph.edge_count,
        "relation_vocabulary_size": len({e.predicate for e in graph.edges}),
        "connected_component_count": _component_count(graph),
    }


def _component_count(graph: KnowledgeGraph) -> int:
    unseen = set(graph.nodes)
    components = 0
    while unseen:
        components += 1
        queue = deque([unseen.pop()])
        while queue:
            for neighbor in graph.neighbors(queue.popleft()):
                if neighbor in unseen:
                    unseen.remove(neighbor)
                    queue.append(neighbor)
    return components
