"""Three-step construction of the meta-toxic triplet set.

Step 1 (rationale reasoning): for each toxic sample, ask the model why the
speech is toxic. Step 2 (triplet extraction + self-checking): extract SPO
triplet lines from speech plus rationale, drop malformed lines with a format
gate, then ask the model to re-check each surviving triplet for toxicity.
Step 3 (entity resolution): cluster near-duplicate entity and relation
surface forms over embeddings and rewrite triplets onto canonical names.

A failed sample never aborts a build: it is skipped and logged to the audit
trail. Each stage writes a checkpoint file (when a checkpoint directory is
given) so interrupted builds resume instead of recomputing.
"""
from __future__ import annotations

import json
import logging
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence, TypeVar

import numpy as np

from .corpus import Label, Sample
from .embedding import Embedder
from .errors import (
    EmptyRationale,
    MetatoxError,
    MissingBinding,
    UnmappedElement,
)
from .llm_gateway import LlmGateway, PromptRole

LOGGER = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


# Audit trail ----------------------------------------------------------


@dataclass(frozen=True)
class AuditEvent:
    sample_id: str
    stage: str
    disposition: str
    payload: str


class AuditLog:
    """Collects per-sample dispositions; persisted as newline-delimited JSON."""

    def __init__(self):
        self.events: list[AuditEvent] = []

    def record(self, sample_id: str, stage: str, disposition: str, payload: str = "") -> None:
        self.events.append(AuditEvent(sample_id, stage, disposition, payload))

    def extend(self, events: Iterable[AuditEvent]) -> None:
        self.events.extend(events)

    def write(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            for event in self.events:
                record = {
                    "sample_id": event.sample_id,
                    "stage": event.stage,
                    "disposition": event.disposition,
                    "payload": event.payload,
                }
                handle.write(json.dumps(record, sort_keys=True, ensure_ascii=False) + "\n")


# Types ----------------------------------------------------------------


@dataclass(frozen=True)
class Rationale:
    sample_id: str
    text: str


_INDEX_PREFIX_RE = re.compile(r"^\s*\d+\s*[.)]\s*")


def parse_triplet_line(line: str) -> tuple[str, str, str] | None:
    """Parse one model output line as an (S, P, O) triplet, or None if malformed.

    Accepts an optional leading list index ("1. (...)"). The line must be a
    single parenthesized group of exactly three comma-separated fields, each
    nonempty after trimming. A backslash-escaped comma counts as part of a
    field rather than a separator.
    """
    stripped = _INDEX_PREFIX_RE.sub("", line.strip(), count=1)
    if len(stripped) < 2 or not stripped.startswith("(") or not stripped.endswith(")"):
        return None
    fields = re.split(r"(?<!\\),", stripped[1:-1])
    if len(fields) != 3:
        return None
    subject, predicate, obj = (f.replace("\\,", ",").strip() for f in fields)
    if not subject or not predicate or not obj:
        return None
    return subject, predicate, obj


@dataclass(frozen=True)
class RawTriplet:
    raw: str
    parsed: tuple[str, str, str] | None
    source_id: str

    @classmethod
    def from_line(cls, line: str, source_id: str) -> "RawTriplet":
        return cls(raw=line, parsed=parse_triplet_line(line), source_id=source_id)


@dataclass(frozen=True)
class Triplet:
    subject: str
    predicate: str
    object: str
    sources: frozenset[str]

    @property
    def spo(self) -> tuple[str, str, str]:
        return (self.subject, self.predicate, self.object)


def format_spo_line(triplet: Triplet) -> str:
    return f"({triplet.subject}, {triplet.predicate}, {triplet.object})"


# Step 1: rationale reasoning -------------------------------------------


def reason_rationale(sample: Sample, gateway: LlmGateway) -> Rationale:
    """Ask the model why a toxic-labeled sample is toxic."""
    if sample.label is not Label.TOXIC:
        raise ValueError("rationale reasoning only applies to toxic-labeled samples")
    prompt = gateway.prompt(PromptRole.RATIONALE, {"text": sample.text})
    text = gateway.complete(prompt).strip()
    if not text:
        raise EmptyRationale(sample.id)
    return Rationale(sample.id, text)


# Step 2: extraction, format gate, self-check ---------------------------


def extract_triplets(sample: Sample, rationale: Rationale,
                     gateway: LlmGateway) -> list[RawTriplet]:
    """One RawTriplet per non-blank model output line; no filtering yet."""
    if rationale.sample_id != sample.id:
        raise ValueError("rationale does not belong to this sample")
    prompt = gateway.prompt(
        PromptRole.TRIPLET_EXTRACT, {"text": sample.text, "rationale": rationale.text}
    )
    output = gateway.complete(prompt)
    return [RawTriplet.from_line(line, sample.id) for line in output.splitlines() if line.strip()]


def parse_and_format_check(
    raw_triplets: Sequence[RawTriplet],
) -> tuple[list[Triplet], list[RawTriplet]]:
    """Partition raw lines into well-formed triplets and rejects."""
    kept: list[Triplet] = []
    rejected: list[RawTriplet] = []
    for raw in raw_triplets:
        parsed = parse_triplet_line(raw.raw)
        if parsed is None:
            rejected.append(raw)
        else:
            subject, predicate, obj = parsed
            kept.append(Triplet(subject, predicate, obj, frozenset({raw.source_id})))
    return kept, rejected


_VERDICT_RE = re.compile(
    r"^\s*(\d+)\s*[:.\-]?\s*(non[\s-]?toxic|toxic)\b\s*\.?\s*$", re.IGNORECASE
)


def self_check_filter(triplets: Sequence[Triplet], gateway: LlmGateway,
                      audit: AuditLog | None = None) -> list[Triplet]:
    """Keep only triplets the model re-confirms as toxic.

    All given triplets go to the model in one numbered prompt. A triplet
    whose verdict line is missing or unparseable is dropped (and audited);
    order and provenance of the survivors are preserved.
    """
    if not triplets:
        return []
    block = "\n".join(f"{i}. {format_spo_line(t)}" for i, t in enumerate(triplets, 1))
    prompt = gateway.prompt(PromptRole.SELF_CHECK, {"triplets": block})
    response = gateway.complete(prompt)

    verdicts: dict[int, str] = {}
    for line in response.splitlines():
        match = _VERDICT_RE.match(line)
        if match:
            verdict = "non-toxic" if match.group(2).lower().startswith("non") else "toxic"
            verdicts.setdefault(int(match.group(1)), verdict)

    kept: list[Triplet] = []
    for i, triplet in enumerate(triplets, 1):
        verdict = verdicts.get(i)
        if verdict == "toxic":
            kept.append(triplet)
            continue
        disposition = "self_check_non_toxic" if verdict == "non-toxic" else "unparseable_verdict"
        if audit is not None:
            sample_id = min(triplet.sources) if triplet.sources else ""
            audit.record(sample_id, "self_check", disposition, format_spo_line(triplet))
        LOGGER.debug("self-check dropped %s (%s)", format_spo_line(triplet), disposition)
    return kept


# Step 3: entity resolution ---------------------------------------------


class ElementKind(str, Enum):
    ENTITY = "entity"
    RELATION = "relation"


@dataclass(frozen=True)
class ClusterMap:
    """Surface form -> canonical name, from single-link similarity clustering."""

    kind: ElementKind
    assignments: Mapping[str, str]
    threshold: float

    def canonical(self, surface: str) -> str:
        try:
            return self.assignments[surface]
        except KeyError:
            raise UnmappedElement(self.kind.value, surface) from None

    def groups(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {}
        for surface, canon in sorted(self.assignments.items()):
            out.setdefault(canon, []).append(surface)
        return out


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, i: int) -> int:
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, i: int, j: int) -> None:
        ri, rj = self.find(i), self.find(j)
        if ri != rj:
            self.parent[max(ri, rj)] = min(ri, rj)


def resolve(elements: Sequence[str], kind: ElementKind, embedder: Embedder,
            threshold: float = 0.9) -> ClusterMap:
    """Greedy single-link clustering of surface forms by embedding cosine.

    Unique surface forms are processed in lexicographic order; every pair
    with cosine >= threshold is unioned. Each cluster's canonical name is its
    most frequent member (frequency counted over ``elements`` with
    multiplicity), ties broken by the lexicographically smallest name.
    """
    if not elements:
        raise ValueError("elements must be nonempty")
    if not 0.0 < threshold <= 1.0:
        raise ValueError("threshold must be in (0, 1]")
    frequency = Counter(elements)
    surfaces = sorted(frequency)
    vectors = np.vstack([embedder.embed(s) for s in surfaces])

    uf = _UnionFind(len(surfaces))
    for i in range(len(surfaces) - 1):
        sims = vectors[i + 1 :] @ vectors[i]
        for offset in np.nonzero(sims >= threshold)[0]:
            uf.union(i, i + 1 + int(offset))

    clusters: dict[int, list[str]] = {}
    for i, surface in enumerate(surfaces):
        clusters.setdefault(uf.find(i), []).append(surface)

    assignments: dict[str, str] = {}
    for members in clusters.values():
        canonical = min(members, key=lambda s: (-frequency[s], s))
        for member in members:
            assignments[member] = canonical
    return ClusterMap(kind=kind, assignments=assignments, threshold=threshold)


def apply_resolution(triplets: Sequence[Triplet], entity_map: ClusterMap,
                     relation_map: ClusterMap) -> list[Triplet]:
    """Rewrite triplets onto canonical names, merging exact duplicates.

    Duplicates merge their source sets; first-occurrence order is kept.
    """
    merged: dict[tuple[str, str, str], set[str]] = {}
    for triplet in triplets:
        key = (
            entity_map.canonical(triplet.subject),
            relation_map.canonical(triplet.predicate),
            entity_map.canonical(triplet.object),
        )
        merged.setdefault(key, set()).update(triplet.sources)
    return [
        Triplet(subject, predicate, obj, frozenset(sources))
        for (subject, predicate, obj), sources in merged.items()
    ]


# Pipeline orchestration -------------------------------------------------


def _map_in_order(fn: Callable[[T], R], items: Sequence[T], parallelism: int) -> list[R]:
    # Results come back in input order regardless of completion order, which
    # keeps builds byte-reproducible under parallelism.
    if parallelism <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=parallelism) as executor:
        return list(executor.map(fn, items))


_SKIPPABLE = (MetatoxError,)
_NOT_SKIPPABLE = (MissingBinding,)  # a broken template is a config bug, not a bad sample


def _checkpoint_path(directory: Path | None, name: str) -> Path | None:
    return directory / name if directory is not None else None


def _write_ndjson(path: Path, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record, sort_keys=True, ensure_ascii=False) + "\n")


def _read_ndjson(path: Path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            if line.strip():
                records.append(json.loads(line))
    return records


def run_pipeline(samples: Sequence[Sample], gateway: LlmGateway, embedder: Embedder, *,
                 entity_threshold: float = 0.9, relation_threshold: float = 0.9,
                 parallelism: int = 1, audit: AuditLog | None = None,
                 checkpoint_dir: str | Path | None = None) -> list[Triplet]:
    """Run rationale reasoning, extraction, self-checking, and resolution.

    ``samples`` should be the toxic subset of a training corpus; non-toxic
    samples are skipped with an audit entry. Returns the canonicalized
    triplet set ready to fold into a graph.
    """
    audit = audit if audit is not None else AuditLog()
    ckpt = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckpt is not None:
        ckpt.mkdir(parents=True, exist_ok=True)

    # Stage 1: rationales.
    rationale_file = _checkpoint_path(ckpt, "01_rationales.jsonl")
    if rationale_file is not None and rationale_file.exists():
        by_id = {r["sample_id"]: r["text"] for r in _read_ndjson(rationale_file)}
        rationales = [
            Rationale(s.id, by_id[s.id]) if s.id in by_id else None for s in samples
        ]
        LOGGER.info("resumed %d rationales from checkpoint", len(by_id))
    else:
        def _rationale(sample: Sample) -> tuple[Rationale | None, list[AuditEvent]]:
            if sample.label is not Label.TOXIC:
                return None, [AuditEvent(sample.id, "rationale", "skipped_non_toxic",
                                         sample.raw_label)]
            try:
                return reason_rationale(sample, gateway), []
            except _NOT_SKIPPABLE:
                raise
            except _SKIPPABLE as exc:
                LOGGER.warning("skipping sample %s at rationale stage: %s", sample.id, exc)
                return None, [AuditEvent(sample.id, "rationale", "skipped_error", str(exc))]

        results = _map_in_order(_rationale, samples, parallelism)
        rationales = []
        for rationale, events in results:
            rationales.append(rationale)
            audit.extend(events)
        if rationale_file is not None:
            _write_ndjson(
                rationale_file,
                ({"sample_id": r.sample_id, "text": r.text} for r in rationales if r),
            )

    # Stage 2a: raw triplet extraction.
    pairs = [(s, r) for s, r in zip(samples, rationales) if r is not None]
    raw_file = _checkpoint_path(ckpt, "02_raw_triplets.jsonl")
    if raw_file is not None and raw_file.exists():
        raw_by_sample: dict[str, list[RawTriplet]] = {}
        for record in _read_ndjson(raw_file):
            raw_by_sample.setdefault(record["sample_id"], []).append(
                RawTriplet.from_line(record["raw"], record["sample_id"])
            )
        raw_lists = [raw_by_sample.get(s.id, []) for s, _ in pairs]
        LOGGER.info("resumed raw triplets for %d samples from checkpoint", len(raw_by_sample))
    else:
        def _extract(pair: tuple[Sample, Rationale]) -> tuple[list[RawTriplet], list[AuditEvent]]:
            sample, rationale = pair
            try:
                return extract_triplets(sample, rationale, gateway), []
            except _NOT_SKIPPABLE:
                raise
            except _SKIPPABLE as exc:
                LOGGER.warning("skipping sample %s at extraction stage: %s", sample.id, exc)
                return [], [AuditEvent(sample.id, "extract", "skipped_error", str(exc))]

        results = _map_in_order(_extract, pairs, parallelism)
        raw_lists = []
        for raws, events in results:
            raw_lists.append(raws)
            audit.extend(events)
        if raw_file is not None:
            _write_ndjson(
                raw_file,
                (
                    {"sample_id": raw.source_id, "raw": raw.raw}
                    for raws in raw_lists
                    for raw in raws
                ),
            )

    # Stage 2b: format gate, then per-sample self-check.
    checked_file = _checkpoint_path(ckpt, "03_checked_triplets.jsonl")
    if checked_file is not None and checked_file.exists():
        checked = [
            Triplet(r["subject"], r["predicate"], r["object"], frozenset(r["sources"]))
            for r in _read_ndjson(checked_file)
        ]
        LOGGER.info("resumed %d checked triplets from checkpoint", len(checked))
    else:
        gated_lists: list[list[Triplet]] = []
        for (sample, _), raws in zip(pairs, raw_lists):
            kept, rejected = parse_and_format_check(raws)
            for raw in rejected:
                audit.record(sample.id, "format_check", "rejected", raw.raw)
            gated_lists.append(kept)

        def _check(item: tuple[Sample, list[Triplet]]) -> tuple[list[Triplet], list[AuditEvent]]:
            sample, triplets = item
            local = AuditLog()
            try:
                kept = self_check_filter(triplets, gateway, audit=local)
            except _NOT_SKIPPABLE:
                raise
            except _SKIPPABLE as exc:
                LOGGER.warning("skipping sample %s at self-check stage: %s", sample.id, exc)
                return [], [AuditEvent(sample.id, "self_check", "skipped_error", str(exc))]
            return kept, local.events

        results = _map_in_order(
            _check, [(s, t) for (s, _), t in zip(pairs, gated_lists)], parallelism
        )
        checked = []
        for kept, events in results:
            checked.extend(kept)
            audit.extend(events)
        if checked_file is not None:
            _write_ndjson(
                checked_file,
                (
                    {
                        "subject": t.subject,
                        "predicate": t.predicate,
                        "object": t.object,
                        "sources": sorted(t.sources),
                    }
                    for t in checked
                ),
            )

    if not checked:
        return []

    # Stage 3: entity resolution over everything that survived.
    entity_pool = [t.subject for t in checked] + [t.object for t in checked]
    relation_pool = [t.predicate for t in checked]
    entity_map = resolve(entity_pool, ElementKind.ENTITY, embedder, entity_threshold)
    relation_map = resolve(relation_pool, ElementKind.RELATION, embedder, relation_threshold)
    resolved = apply_resolution(checked, entity_map, relation_map)
    audit.record("", "resolve", "completed",
                 f"{len(checked)} triplets -> {len(resolved)} after resolution")
    return resolved
