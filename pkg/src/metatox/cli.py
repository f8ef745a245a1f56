"""Command-line interface.

Subcommands:
  build   construct a knowledge graph from a labeled corpus
  merge   merge two graph files and re-resolve shared elements
  stats   print summary statistics for a graph file
  query   retrieve knowledge sentences for one input text
  detect  classify a test corpus under one mode and write predictions
  eval    score a predictions file against gold labels

Every command prints a single JSON document to stdout. Settings follow the
precedence flag > environment > config file > default.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Mapping, Sequence

from . import kg_store
from .config import RunConfig, build_embedder, build_gateway, load_run_config
from .corpus import load_corpus, load_label_map
from .detect import DetectionMode, evaluate, load_records, run_detection, save_records
from .errors import MetatoxError
from .kg_build import AuditLog, run_pipeline
from .query import PathStrategy, query_graph

LOGGER = logging.getLogger(__name__)

# Flag destination -> dotted config setting. --parallelism is handled apart
# because it fans out to both the build and detect sections.
_FLAG_FIELDS = {
    "label_map": "kg_build.label_map",
    "entity_threshold": "kg_build.entity_threshold",
    "relation_threshold": "kg_build.relation_threshold",
    "checkpoint_dir": "kg_build.checkpoint_dir",
    "strategy": "query.strategy",
    "map_floor": "query.map_floor",
    "rank_floor": "query.rank_floor",
    "top_k": "query.top_k",
    "mode": "detect.mode",
    "rag_k": "detect.rag_k",
    "llm_provider": "llm_gateway.provider",
    "llm_url": "llm_gateway.url",
    "llm_key": "llm_gateway.api_key",
    "llm_model": "llm_gateway.model",
    "llm_rules": "llm_gateway.rules_file",
    "llm_replay": "llm_gateway.replay_file",
    "llm_record": "llm_gateway.record_file",
    "prompts_dir": "llm_gateway.prompts_dir",
    "max_retries": "llm_gateway.max_retries",
    "embed_provider": "embedding.provider",
    "embed_url": "embedding.url",
    "embed_model": "embedding.model",
    "embed_dim": "embedding.dim",
    "embed_cache": "embedding.cache_file",
    "seed": "seed",
}


def _add_common(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("configuration")
    group.add_argument("--config", metavar="FILE", help="JSON config file")
    group.add_argument("--seed", type=int, metavar="N",
                       help="random seed recorded with the run")
    group.add_argument("--parallelism", type=int, metavar="N",
                       help="worker threads for model calls")
    group.add_argument("--llm-provider", choices=("http", "mock", "replay"))
    group.add_argument("--llm-url", metavar="URL")
    group.add_argument("--llm-key", metavar="KEY")
    group.add_argument("--llm-model", metavar="NAME")
    group.add_argument("--llm-rules", metavar="FILE", help="mock provider rules file")
    group.add_argument("--llm-replay", metavar="FILE", help="recorded responses to replay")
    group.add_argument("--llm-record", metavar="FILE", help="record responses to this file")
    group.add_argument("--prompts-dir", metavar="DIR", help="prompt template directory")
    group.add_argument("--max-retries", type=int, metavar="N")
    group.add_argument("--embed-provider", choices=("trigram", "remote"))
    group.add_argument("--embed-url", metavar="URL")
    group.add_argument("--embed-model", metavar="NAME")
    group.add_argument("--embed-dim", type=int, metavar="N")
    group.add_argument("--embed-cache", metavar="FILE")


def _add_query_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--strategy", choices=[s.value for s in PathStrategy])
    parser.add_argument("--map-floor", type=float, metavar="F",
                        help="minimum cosine for entity-to-node mapping")
    parser.add_argument("--rank-floor", type=float, metavar="F",
                        help="minimum cosine for keeping a knowledge sentence")
    parser.add_argument("--top-k", type=int, metavar="N",
                        help="maximum knowledge sentences kept")
    parser.add_argument("--no-rank-filter", action="store_true",
                        help="disable the rank-and-filter step")


def _overrides(args: argparse.Namespace) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for flag, dotted in _FLAG_FIELDS.items():
        value = getattr(args, flag, None)
        if value is not None:
            out[dotted] = value
    parallelism = getattr(args, "parallelism", None)
    if parallelism is not None:
        out["kg_build.parallelism"] = parallelism
        out["detect.parallelism"] = parallelism
    if getattr(args, "no_rank_filter", False):
        out["query.rank_filter"] = False
    return out


def _load_config(args: argparse.Namespace,
                 env: Mapping[str, str] | None = None) -> RunConfig:
    return load_run_config(args.config, env=env if env is not None else os.environ,
                           overrides=_overrides(args))


def _emit(document: Any) -> None:
    print(json.dumps(document, indent=2, sort_keys=True, ensure_ascii=False))


def _default_audit_path(out: Path) -> Path:
    return out.with_name(out.stem + ".audit.jsonl")


def _require_exists(*paths: str | Path | None) -> None:
    for path in paths:
        if path is not None and not Path(path).exists():
            raise MetatoxError(f"input path does not exist: {path}")


# Commands ---------------------------------------------------------------


def cmd_build(args: argparse.Namespace) -> int:
    _require_exists(args.config, args.corpus)
    config = _load_config(args)
    mapping = load_label_map(config.kg_build.label_map)
    samples = load_corpus(args.corpus, mapping)
    gateway = build_gateway(config.llm_gateway)
    embedder = build_embedder(config.embedding)
    audit = AuditLog()
    triplets = run_pipeline(
        samples, gateway, embedder,
        entity_threshold=config.kg_build.entity_threshold,
        relation_threshold=config.kg_build.relation_threshold,
        parallelism=config.kg_build.parallelism,
        audit=audit,
        checkpoint_dir=config.kg_build.checkpoint_dir,
    )
    graph = kg_store.KnowledgeGraph.from_triplets(triplets)
    out = Path(args.out)
    kg_store.save(graph, out)
    audit.write(args.audit if args.audit else _default_audit_path(out))
    _emit(kg_store.stats(graph))
    return 0


def cmd_merge(args: argparse.Namespace) -> int:
    if len(args.graphs) != 2:
        raise MetatoxError("merge: give --graph exactly twice")
    _require_exists(args.config, *args.graphs)
    config = _load_config(args)
    first, second = (kg_store.load(path) for path in args.graphs)
    embedder = build_embedder(config.embedding)
    merged, merge_stats = kg_store.merge(
        first, second, embedder,
        entity_threshold=config.kg_build.entity_threshold,
        relation_threshold=config.kg_build.relation_threshold,
    )
    kg_store.save(merged, args.out)
    _emit(merge_stats.to_json_dict())
    return 0


def cmd_stats(args: argparse.Namespace) -> int:
    _require_exists(args.graph)
    _emit(kg_store.stats(kg_store.load(args.graph)))
    return 0


def cmd_query(args: argparse.Namespace) -> int:
    _require_exists(args.config, args.graph, args.file)
    config = _load_config(args)
    graph = kg_store.load(args.graph)
    text = args.text if args.text is not None else Path(args.file).read_text(encoding="utf-8")
    gateway = build_gateway(config.llm_gateway)
    embedder = build_embedder(config.embedding)
    knowledge = query_graph(text, graph, gateway, embedder, config.query)
    _emit(knowledge.to_json_dict())
    return 0


def cmd_detect(args: argparse.Namespace) -> int:
    _require_exists(args.config, args.test, args.graph, args.train)
    config = _load_config(args)
    mode = DetectionMode(config.detect.mode)
    mapping = load_label_map(config.kg_build.label_map)
    test_samples = load_corpus(args.test, mapping)
    graph = kg_store.load(args.graph) if args.graph else None
    train_samples = load_corpus(args.train, mapping) if args.train else None
    if mode is DetectionMode.METATOX and graph is None:
        raise MetatoxError("detect: --graph is required for metatox mode")
    if mode is DetectionMode.NAIVE_RAG and train_samples is None:
        raise MetatoxError("detect: --train is required for naive-rag mode")
    gateway = build_gateway(config.llm_gateway)
    embedder = build_embedder(config.embedding)
    records, report = run_detection(
        test_samples, graph, gateway, embedder, mode,
        query_config=config.query,
        rag_k=config.detect.rag_k,
        train_samples=train_samples,
        parallelism=config.detect.parallelism,
    )
    save_records(records, args.out)
    document = report.to_json_dict()
    if args.metrics_out:
        Path(args.metrics_out).write_text(
            json.dumps(document, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )
    _emit(document)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    _require_exists(args.config, args.pred, args.gold)
    config = _load_config(args)
    mapping = load_label_map(config.kg_build.label_map)
    gold = load_corpus(args.gold, mapping)
    records = load_records(args.pred)
    _emit(evaluate(records, gold).to_json_dict())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="metatox",
        description="Meta-toxic knowledge graph construction, query, and detection.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log at DEBUG level")
    commands = parser.add_subparsers(dest="command", required=True)

    build = commands.add_parser("build", help="construct a graph from a labeled corpus")
    build.add_argument("--corpus", required=True, metavar="FILE",
                       help="training corpus (NDJSON with id/text/label)")
    build.add_argument("--out", required=True, metavar="FILE", help="graph file to write")
    build.add_argument("--audit", metavar="FILE",
                       help="audit log path (default: <out stem>.audit.jsonl)")
    build.add_argument("--label-map", metavar="NAME|FILE",
                       help="label mapping preset or JSON file")
    build.add_argument("--entity-threshold", type=float, metavar="F")
    build.add_argument("--relation-threshold", type=float, metavar="F")
    build.add_argument("--checkpoint-dir", metavar="DIR",
                       help="directory for resumable stage outputs")
    _add_common(build)
    build.set_defaults(func=cmd_build)

    merge = commands.add_parser("merge", help="merge two graph files")
    merge.add_argument("--graph", dest="graphs", action="append", required=True,
                       metavar="FILE", help="graph file (give exactly twice)")
    merge.add_argument("--out", required=True, metavar="FILE")
    merge.add_argument("--entity-threshold", type=float, metavar="F")
    merge.add_argument("--relation-threshold", type=float, metavar="F")
    _add_common(merge)
    merge.set_defaults(func=cmd_merge)

    stats = commands.add_parser("stats", help="summary statistics for a graph file")
    stats.add_argument("--graph", required=True, metavar="FILE")
    _add_common(stats)
    stats.set_defaults(func=cmd_stats)

    query = commands.add_parser("query", help="retrieve knowledge for one text")
    query.add_argument("--graph", required=True, metavar="FILE")
    source = query.add_mutually_exclusive_group(required=True)
    source.add_argument("--text", metavar="TEXT", help="input text")
    source.add_argument("--file", metavar="FILE", help="read the input text from a file")
    _add_query_flags(query)
    _add_common(query)
    query.set_defaults(func=cmd_query)

    detect = commands.add_parser("detect", help="classify a test corpus")
    detect.add_argument("--test", required=True, metavar="FILE", help="test corpus")
    detect.add_argument("--out", required=True, metavar="FILE",
                        help="predictions file to write (NDJSON)")
    detect.add_argument("--mode", choices=[m.value for m in DetectionMode])
    detect.add_argument("--graph", metavar="FILE", help="graph file (metatox mode)")
    detect.add_argument("--train", metavar="FILE", help="training corpus (naive-rag mode)")
    detect.add_argument("--rag-k", type=int, metavar="N",
                        help="similar speeches retrieved in naive-rag mode")
    detect.add_argument("--metrics-out", metavar="FILE", help="also write metrics here")
    detect.add_argument("--label-map", metavar="NAME|FILE")
    _add_query_flags(detect)
    _add_common(detect)
    detect.set_defaults(func=cmd_detect)

    evaluate_ = commands.add_parser("eval", help="score a predictions file")
    evaluate_.add_argument("--pred", required=True, metavar="FILE", help="predictions NDJSON")
    evaluate_.add_argument("--gold", required=True, metavar="FILE", help="gold corpus")
    evaluate_.add_argument("--label-map", metavar="NAME|FILE")
    _add_common(evaluate_)
    evaluate_.set_defaults(func=cmd_eval)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except MetatoxError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
