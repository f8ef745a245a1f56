"""Binary toxicity detection with optional injected knowledge, plus metrics.

Classification follows the two-option scoring protocol: the model scores the
answer options "a" (toxic) and "b" (non-toxic) by next-token log-probability
and the larger score wins, ties going to toxic. Three modes share the one
classify template: vanilla (no knowledge), naive-rag (similar training
speeches), and metatox (graph-retrieved triplet sentences).
"""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from itertools import groupby
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .corpus import Label, Sample
from .embedding import Embedder, NearestNeighborIndex
from .errors import EmptyCorpus, IdMismatch
from .kg_store import KnowledgeGraph
from .llm_gateway import NEG_INF, LlmGateway, OptionScore, PromptRole
from .query import KnowledgeItem, QueryConfig, RetrievedKnowledge, query_graph

LOGGER = logging.getLogger(__name__)


class DetectionMode(str, Enum):
    VANILLA = "vanilla"
    NAIVE_RAG = "naive-rag"
    METATOX = "metatox"


@dataclass(frozen=True)
class DetectionRecord:
    sample_id: str
    predicted: Label
    p_toxic: float
    option_scores: tuple[OptionScore, ...]
    knowledge_used: RetrievedKnowledge
    mode: DetectionMode

    def to_json_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "mode": self.mode.value,
            "predicted": self.predicted.value,
            "p_toxic": round(self.p_toxic, 10),
            "option_scores": [
                {
                    "option": score.option,
                    "logprob": None if score.logprob == NEG_INF else round(score.logprob, 10),
                }
                for score in self.option_scores
            ],
            "knowledge_used": self.knowledge_used.to_json_dict(),
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "DetectionRecord":
        return cls(
            sample_id=data["sample_id"],
            predicted=Label(data["predicted"]),
            p_toxic=float(data["p_toxic"]),
            option_scores=tuple(
                OptionScore(s["option"], NEG_INF if s["logprob"] is None else float(s["logprob"]))
                for s in data["option_scores"]
            ),
            knowledge_used=RetrievedKnowledge.from_json_dict(data["knowledge_used"]),
            mode=DetectionMode(data["mode"]),
        )


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    f1: float
    pr_auc: float
    fpr: float | None
    confusion: Mapping[str, int]

    def to_json_dict(self) -> dict:
        return {
            "accuracy": round(self.accuracy, 10),
            "f1": round(self.f1, 10),
            "pr_auc": round(self.pr_auc, 10),
            "fpr": None if self.fpr is None else round(self.fpr, 10),
            "confusion": dict(self.confusion),
        }


def _knowledge_binding(extras: Mapping[str, str], knowledge: RetrievedKnowledge,
                       mode: DetectionMode) -> str:
    if mode is DetectionMode.VANILLA:
        return ""
    if not knowledge.items:
        return extras["knowledge_empty"] + "\n\n"
    header = extras["rag_header" if mode is DetectionMode.NAIVE_RAG else "knowledge_header"]
    lines = "\n".join(f"{i}. {item.sentence}" for i, item in enumerate(knowledge.items, 1))
    return f"{header}\n{lines}\n\n"


def classify(text: str, knowledge: RetrievedKnowledge | None, gateway: LlmGateway,
             mode: DetectionMode, sample_id: str = "") -> DetectionRecord:
    """Score the two answer options for one speech and pick the larger.

    p_toxic is the two-way softmax of the option scores. A tie predicts
    toxic. Vanilla mode must be called with empty knowledge.
    """
    knowledge = knowledge if knowledge is not None else RetrievedKnowledge()
    if mode is DetectionMode.VANILLA and knowledge.items:
        raise ValueError("vanilla mode must not receive retrieval knowledge")
    template = gateway.template(PromptRole.CLASSIFY)
    prompt = gateway.prompt(
        PromptRole.CLASSIFY,
        {"knowledge": _knowledge_binding(template.extras, knowledge, mode), "text": text},
    )
    options = [label for label, _ in template.options]
    meanings = dict(template.options)
    scores = gateway.score_options(prompt, options)
    by_meaning = {meanings[score.option]: score.logprob for score in scores}
    toxic_score = by_meaning["toxic"]
    non_toxic_score = by_meaning["non-toxic"]
    predicted = Label.TOXIC if toxic_score >= non_toxic_score else Label.NON_TOXIC
    return DetectionRecord(
        sample_id=sample_id,
        predicted=predicted,
        p_toxic=_softmax2(toxic_score, non_toxic_score),
        option_scores=tuple(scores),
        knowledge_used=knowledge,
        mode=mode,
    )


def _softmax2(first: float, second: float) -> float:
    peak = max(first, second)
    if peak == NEG_INF:  # both options unscorable; cannot happen via score_options
        return 0.5
    exp_first = math.exp(first - peak)
    exp_second = math.exp(second - peak)
    return exp_first / (exp_first + exp_second)


def naive_rag_retrieve(text: str, train_samples: Sequence[Sample], embedder: Embedder,
                       k: int = 2) -> list[tuple[Sample, float]]:
    """Top-k most similar training speeches (cosine desc, ties by sample id)."""
    if not train_samples:
        raise EmptyCorpus("naive-rag retrieval needs a nonempty training set")
    if k < 1:
        raise ValueError("k must be >= 1")
    index = NearestNeighborIndex((s.id, embedder.embed(s.text)) for s in train_samples)
    by_id = {s.id: s for s in train_samples}
    hits = index.query(embedder.embed(text), k=min(k, len(train_samples)))
    return [(by_id[sample_id], similarity) for sample_id, similarity in hits]


def evaluate(records: Sequence[DetectionRecord], gold: Sequence[Sample]) -> MetricsReport:
    """Confusion-matrix metrics with toxic as the positive class.

    Records and gold must align one-to-one by sample id. PR-AUC is average
    precision over the descending p_toxic sweep with tied scores grouped.
    """
    gold_labels = {s.id: s.label for s in gold}
    if len(gold_labels) != len(gold):
        raise IdMismatch("duplicate sample ids in gold")
    record_ids = sorted(r.sample_id for r in records)
    if record_ids != sorted(gold_labels):
        missing = sorted(set(gold_labels) - set(record_ids))[:3]
        extra = sorted(set(record_ids) - set(gold_labels))[:3]
        raise IdMismatch(f"records and gold do not align (missing={missing}, extra={extra})")

    tp = fp = tn = fn = 0
    for record in records:
        actual_toxic = gold_labels[record.sample_id] is Label.TOXIC
        predicted_toxic = record.predicted is Label.TOXIC
        if predicted_toxic and actual_toxic:
            tp += 1
        elif predicted_toxic:
            fp += 1
        elif actual_toxic:
            fn += 1
        else:
            tn += 1

    total = tp + fp + tn + fn
    accuracy = (tp + tn) / total
    f1 = 2 * tp / (2 * tp + fp + fn) if (2 * tp + fp + fn) else 0.0
    fpr = fp / (fp + tn) if (fp + tn) else None
    pr_auc = average_precision(
        (r.p_toxic, gold_labels[r.sample_id] is Label.TOXIC) for r in records
    )
    return MetricsReport(
        accuracy=accuracy,
        f1=f1,
        pr_auc=pr_auc,
        fpr=fpr,
        confusion={"tp": tp, "fp": fp, "tn": tn, "fn": fn},
    )


def average_precision(scored: Iterable[tuple[float, bool]]) -> float:
    """Step-wise sum of delta-recall times precision, descending by score.

    Samples with equal scores enter the sweep together. Returns 0.0 when
    there are no positives.
    """
    pairs = sorted(scored, key=lambda pair: -pair[0])
    n_pos = sum(1 for _, positive in pairs if positive)
    if n_pos == 0:
        return 0.0
    tp = fp = 0
    previous_recall = 0.0
    area = 0.0
    for _, group in groupby(pairs, key=lambda pair: pair[0]):
        for _, positive in group:
            if positive:
                tp += 1
            else:
                fp += 1
        precision = tp / (tp + fp)
        recall = tp / n_pos
        area += (recall - previous_recall) * precision
        previous_recall = recall
    return area


def run_detection(test_samples: Sequence[Sample], graph: KnowledgeGraph | None,
                  gateway: LlmGateway, embedder: Embedder, mode: DetectionMode, *,
                  query_config: QueryConfig = QueryConfig(), rag_k: int = 2,
                  train_samples: Sequence[Sample] | None = None,
                  parallelism: int = 1) -> tuple[list[DetectionRecord], MetricsReport]:
    """Classify every test sample under one mode and score the run."""
    if not test_samples:
        raise EmptyCorpus("no test samples to detect on")
    if mode is DetectionMode.METATOX and graph is None:
        raise ValueError("metatox mode needs a knowledge graph")
    if mode is DetectionMode.NAIVE_RAG and not train_samples:
        raise EmptyCorpus("naive-rag mode needs training samples")

    def _one(sample: Sample) -> DetectionRecord:
        if mode is DetectionMode.METATOX:
            assert graph is not None
            knowledge = query_graph(sample.text, graph, gateway, embedder, query_config)
        elif mode is DetectionMode.NAIVE_RAG:
            assert train_samples is not None
            hits = naive_rag_retrieve(sample.text, train_samples, embedder, k=rag_k)
            knowledge = RetrievedKnowledge(
                tuple(KnowledgeItem(s.text, None, sim) for s, sim in hits)
            )
        else:
            knowledge = RetrievedKnowledge()
        return classify(sample.text, knowledge, gateway, mode, sample_id=sample.id)

    if parallelism <= 1 or len(test_samples) <= 1:
        records = [_one(sample) for sample in test_samples]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as executor:
            records = list(executor.map(_one, test_samples))
    return records, evaluate(records, test_samples)


def save_records(records: Iterable[DetectionRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(
                json.dumps(record.to_json_dict(), sort_keys=True, ensure_ascii=False) + "\n"
            )


def load_records(path: str | Path) -> list[DetectionRecord]:
    records = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            if line.strip():
                records.append(DetectionRecord.from_json_dict(json.loads(line)))
    return records
