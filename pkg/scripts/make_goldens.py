#!/usr/bin/env python3
"""Regenerate the committed golden outputs under tests/goldens/.

Runs the command-line interface in-process against the bundled fixtures and
writes every artifact the regression tests compare against: the built graph
and its audit log, query results for both path strategies and with ranking
disabled, predictions and metrics for all three detection modes, and the
merge of the two small graph fixtures.

The pipeline is deterministic under the mock model provider and the hashing
embedder, so running this script twice must produce byte-identical files.
Run it only when an intentional behavior change invalidates the goldens,
and review the diff by hand before committing.
"""
from __future__ import annotations

import contextlib
import io
import json
import os
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from metatox.cli import main as cli_main  # noqa: E402
from metatox.config import ENV_EMBED_URL, ENV_LLM_KEY, ENV_LLM_URL  # noqa: E402

FIXTURES = ROOT / "tests" / "fixtures"
GOLDENS = ROOT / "tests" / "goldens"

BUILD_CONFIG = str(FIXTURES / "build_config.json")
DETECT_CONFIG = str(FIXTURES / "detect_config.json")
TRAIN = str(FIXTURES / "corpus_train.jsonl")
TEST = str(FIXTURES / "corpus_test.jsonl")
SMALL_A = str(FIXTURES / "g_small_a.json")
SMALL_B = str(FIXTURES / "g_small_b.json")


def run(argv: list[str]) -> str:
    """Run one CLI invocation in-process and return its stdout."""
    buffer = io.StringIO()
    with contextlib.redirect_stdout(buffer):
        code = cli_main(argv)
    if code != 0:
        raise SystemExit(f"command failed with exit code {code}: {' '.join(argv)}")
    return buffer.getvalue()


def capture(name: str, argv: list[str]) -> None:
    out = run(argv)
    (GOLDENS / name).write_text(out, encoding="utf-8")
    print(f"wrote {name}")


def test_text(sample_id: str) -> str:
    for line in Path(TEST).read_text(encoding="utf-8").splitlines():
        record = json.loads(line)
        if record["id"] == sample_id:
            return record["text"]
    raise SystemExit(f"sample {sample_id!r} not found in {TEST}")


def main() -> int:
    # The goldens must not depend on ambient service settings.
    for name in (ENV_LLM_URL, ENV_LLM_KEY, ENV_EMBED_URL):
        os.environ.pop(name, None)
    GOLDENS.mkdir(parents=True, exist_ok=True)

    graph = str(GOLDENS / "graph.json")
    capture("build_stats.json", [
        "build", "--config", BUILD_CONFIG, "--corpus", TRAIN, "--out", graph,
    ])
    print("wrote graph.json")
    print("wrote graph.audit.jsonl")

    d01 = test_text("d01")
    d09 = test_text("d09")
    query_base = ["query", "--config", DETECT_CONFIG, "--graph", graph]
    capture("query_d01.json", query_base + ["--text", d01])
    capture("query_d01_one_hop.json",
            query_base + ["--text", d01, "--strategy", "one-hop"])
    capture("query_d09.json", query_base + ["--text", d09])
    capture("query_d09_no_rank_filter.json",
            query_base + ["--text", d09, "--no-rank-filter"])

    for mode, stem in (("metatox", "metatox"),
                       ("vanilla", "vanilla"),
                       ("naive-rag", "naive_rag")):
        argv = ["detect", "--config", DETECT_CONFIG, "--test", TEST,
                "--out", str(GOLDENS / f"preds_{stem}.jsonl"), "--mode", mode]
        if mode == "metatox":
            argv += ["--graph", graph]
        if mode == "naive-rag":
            argv += ["--train", TRAIN]
        capture(f"metrics_{stem}.json", argv)
        print(f"wrote preds_{stem}.jsonl")

    capture("merge_stats.json", [
        "merge", "--graph", SMALL_A, "--graph", SMALL_B,
        "--out", str(GOLDENS / "merged_small.json"),
        "--entity-threshold", "0.7", "--config", BUILD_CONFIG,
    ])
    print("wrote merged_small.json")
    return 0


if __name__ == "__main__":
    sys.exit(main())
