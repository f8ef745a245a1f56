#!/usr/bin/env python3
"""End-to-end demonstration on the bundled fixture corpora.

Walks every subcommand once: builds a knowledge graph from the example
training corpus, prints its statistics, merges the two small graph
fixtures, retrieves knowledge for one test speech, classifies the test
corpus under all three modes, and re-scores one predictions file.

Everything runs offline against the mock model provider and the hashing
embedder, so the output is deterministic and no services or API keys are
needed.
"""
from __future__ import annotations

import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from metatox.cli import main as cli_main  # noqa: E402

FIXTURES = ROOT / "tests" / "fixtures"
BUILD_CONFIG = str(FIXTURES / "build_config.json")
DETECT_CONFIG = str(FIXTURES / "detect_config.json")
TRAIN = str(FIXTURES / "corpus_train.jsonl")
TEST = str(FIXTURES / "corpus_test.jsonl")

SPEECH = "those immigrants are nothing but vermin"


def run(title: str, argv: list[str]) -> None:
    print(f"\n=== {title}\n$ metatox {' '.join(argv)}")
    code = cli_main(argv)
    if code != 0:
        raise SystemExit(f"command failed with exit code {code}")


def main() -> int:
    with tempfile.TemporaryDirectory(prefix="metatox-demo-") as workdir:
        work = Path(workdir)
        graph = str(work / "graph.json")

        run("Build a graph from the labeled training corpus",
            ["build", "--config", BUILD_CONFIG, "--corpus", TRAIN, "--out", graph])

        run("Inspect the graph", ["stats", "--graph", graph])

        run("Merge two graph files",
            ["merge", "--graph", str(FIXTURES / "g_small_a.json"),
             "--graph", str(FIXTURES / "g_small_b.json"),
             "--out", str(work / "merged.json"),
             "--entity-threshold", "0.7", "--config", BUILD_CONFIG])

        run("Retrieve knowledge for one speech",
            ["query", "--config", DETECT_CONFIG, "--graph", graph,
             "--text", SPEECH])

        for mode in ("vanilla", "naive-rag", "metatox"):
            argv = ["detect", "--config", DETECT_CONFIG, "--test", TEST,
                    "--out", str(work / f"preds_{mode}.jsonl"), "--mode", mode]
            if mode == "metatox":
                argv += ["--graph", graph]
            if mode == "naive-rag":
                argv += ["--train", TRAIN]
            run(f"Classify the test corpus ({mode})", argv)

        run("Re-score the saved predictions",
            ["eval", "--pred", str(work / "preds_metatox.jsonl"),
             "--gold", TEST, "--config", DETECT_CONFIG])
    print("\nDemo complete.")
    return 0


if __name__ == "__main__":
    sys.exit(main())
