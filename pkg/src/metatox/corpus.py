"""Corpus loading and binary label normalization.

Corpora are newline-delimited JSON, one record per line with at least
``{"id", "text", "label"}``. Extra keys are ignored; labels are normalized
to the binary scheme through a label map (a named preset or a JSON file).
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import ConfigError, DuplicateId, MalformedRecord, UnknownLabel


class Label(str, Enum):
    TOXIC = "toxic"
    NON_TOXIC = "non-toxic"


@dataclass(frozen=True)
class Sample:
    id: str
    text: str
    raw_label: str
    label: Label


# One preset per supported dataset family. Toxic classes follow the usual
# annotation schemes of these corpora; everything else is non-toxic.
LABEL_MAP_PRESETS: dict[str, dict[str, Label]] = {
    "hatexplain": {
        "hatespeech": Label.TOXIC,
        "offensive": Label.TOXIC,
        "normal": Label.NON_TOXIC,
    },
    "toxicspans": {
        "toxic": Label.TOXIC,
        "non-toxic": Label.NON_TOXIC,
    },
    "ihc": {
        "implicit_hate": Label.TOXIC,
        "explicit_hate": Label.TOXIC,
        "not_hate": Label.NON_TOXIC,
    },
    "binary": {
        "toxic": Label.TOXIC,
        "hate": Label.TOXIC,
        "offensive": Label.TOXIC,
        "non-toxic": Label.NON_TOXIC,
    },
}


def load_label_map(source: str | Path) -> dict[str, Label]:
    """Resolve a preset name or a JSON file mapping raw labels to toxic/non-toxic."""
    if isinstance(source, str) and source in LABEL_MAP_PRESETS:
        return dict(LABEL_MAP_PRESETS[source])
    path = Path(source)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(
            f"label map {source!r} is neither a preset"
            f" ({', '.join(sorted(LABEL_MAP_PRESETS))}) nor a readable file: {exc}"
        ) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"label map {path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"label map {path}: expected a JSON object")
    mapping: dict[str, Label] = {}
    for raw, value in data.items():
        try:
            mapping[raw] = Label(value)
        except ValueError:
            raise ConfigError(
                f"label map {path}: value for {raw!r} must be 'toxic' or 'non-toxic',"
                f" got {value!r}"
            ) from None
    if not mapping:
        raise ConfigError(f"label map {path}: empty mapping")
    return mapping


def load_corpus(path: str | Path, mapping: Mapping[str, Label]) -> list[Sample]:
    """Load an NDJSON corpus, normalizing labels through ``mapping``.

    Raises MalformedRecord (with the line number), UnknownLabel, or
    DuplicateId on bad input. Blank lines are ignored; record text is kept
    verbatim.
    """
    samples: list[Sample] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(line_no, f"invalid JSON ({exc.msg})") from exc
            if not isinstance(record, dict):
                raise MalformedRecord(line_no, "record is not a JSON object")
            for key in ("id", "text", "label"):
                if key not in record:
                    raise MalformedRecord(line_no, f"missing field {key!r}")
                if not isinstance(record[key], str):
                    raise MalformedRecord(line_no, f"field {key!r} must be a string")
            sample_id = record["id"]
            if not sample_id:
                raise MalformedRecord(line_no, "empty id")
            if not record["text"].strip():
                raise MalformedRecord(line_no, "empty text")
            raw_label = record["label"]
            if raw_label not in mapping:
                raise UnknownLabel(raw_label, line_no)
            if sample_id in seen:
                raise DuplicateId(sample_id, line_no)
            seen.add(sample_id)
            samples.append(Sample(sample_id, record["text"], raw_label, mapping[raw_label]))
    return samples


def save_corpus(samples: Iterable[Sample], path: str | Path) -> None:
    """Write samples back out as NDJSON with their raw labels."""
    with open(path, "w", encoding="utf-8") as handle:
        for sample in samples:
            record = {"id": sample.id, "text": sample.text, "label": sample.raw_label}
            handle.write(json.dumps(record, sort_keys=True, ensure_ascii=False) + "\n")


def toxic_subset(samples: Sequence[Sample]) -> list[Sample]:
    """Samples labeled toxic, in corpus order."""
    return [s for s in samples if s.label is Label.TOXIC]
