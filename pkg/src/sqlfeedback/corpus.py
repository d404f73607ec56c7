"""Ingest feedback interaction records, filter structural errors, split.

The canonical examples file is JSONL with one interaction per line; a
field-mapping table adapts raw upstream field names so the toolkit is not
tied to any one release format.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

from sqlfeedback import edits as edit_engine
from sqlfeedback.schema import SchemaStore, build_schema
from sqlfeedback.sqlcore import parse_sql

PROVENANCES = ("human", "simulated", "template")

DEFAULT_FIELD_MAP = {
    "db_id": "db_id",
    "question": "question",
    "wrong_parse": "wrong_parse",
    "gold_parse": "gold_parse",
    "explanation": "explanation",
    "feedback": "feedback",
    "provenance": "provenance",
    "example_id": "example_id",
}


class CorpusValidationError(ValueError):
    """One or more records failed validation; carries the full report."""

    def __init__(self, errors: list[str]):
        self.errors = errors
        preview = "; ".join(errors[:5])
        more = f" (+{len(errors) - 5} more)" if len(errors) > 5 else ""
        super().__init__(f"{len(errors)} invalid record(s): {preview}{more}")


@dataclass(frozen=True)
class FeedbackExample:
    """One interaction: question, wrong parse, gold parse, explanation,
    feedback."""

    example_id: str
    db_id: str
    question: str
    wrong_parse: str
    gold_parse: str
    explanation: Optional[str] = None
    feedback: Optional[str] = None
    provenance: str = "human"

    def to_json(self) -> dict:
        return {
            "example_id": self.example_id,
            "db_id": self.db_id,
            "question": self.question,
            "wrong_parse": self.wrong_parse,
            "gold_parse": self.gold_parse,
            "explanation": self.explanation,
            "feedback": self.feedback,
            "provenance": self.provenance,
        }


@dataclass(frozen=True)
class LowDataSplitConfig:
    k_percent: int
    seed: int

    def __post_init__(self):
        if self.k_percent not in (5, 10, 20, 100):
            raise ValueError(f"k_percent must be one of 5/10/20/100, "
                             f"got {self.k_percent}")


def load_schemas(path: str | Path) -> SchemaStore:
    """Load and validate the schema file into a store."""
    with open(path, encoding="utf-8") as handle:
        payload = json.load(handle)
    store = SchemaStore()
    for entry in payload.get("databases", []):
        store.add(build_schema(entry))
    return store


def load_examples(path: str | Path, schema_store: SchemaStore,
                  field_map: Optional[dict[str, str]] = None,
                  strict: bool = True) -> list[FeedbackExample]:
    """Load a JSONL examples file, validating every record.

    Invalid records are collected with their line numbers; with
    ``strict=True`` (the default) any error aborts the load with the full
    report, otherwise offending lines are dropped from the result.
    """
    mapping = dict(DEFAULT_FIELD_MAP)
    if field_map:
        mapping.update(field_map)
    examples: list[FeedbackExample] = []
    errors: list[str] = []
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                errors.append(f"line {line_no}: malformed JSON ({exc.msg})")
                continue
            problems = []
            record = {key: raw.get(source) for key, source in mapping.items()}
            for required in ("question", "wrong_parse", "gold_parse"):
                value = record.get(required)
                if not value or not str(value).strip():
                    problems.append(f"empty field '{required}'")
            db_id = record.get("db_id")
            if not db_id:
                problems.append("empty field 'db_id'")
            elif db_id not in schema_store:
                problems.append(f"unknown db_id '{db_id}'")
            provenance = record.get("provenance") or "human"
            if provenance not in PROVENANCES:
                problems.append(f"unknown provenance '{provenance}'")
            if problems:
                errors.append(f"line {line_no}: " + ", ".join(problems))
                continue
            examples.append(FeedbackExample(
                example_id=record.get("example_id") or f"ex{line_no - 1:05d}",
                db_id=db_id,
                question=str(record["question"]),
                wrong_parse=str(record["wrong_parse"]),
                gold_parse=str(record["gold_parse"]),
                explanation=record.get("explanation"),
                feedback=record.get("feedback"),
                provenance=provenance,
            ))
    if errors and strict:
        raise CorpusValidationError(errors)
    return examples


def save_examples(path: str | Path, examples: Iterable[FeedbackExample]) -> None:
    """Write examples as JSONL (the load round-trip is the identity)."""
    with open(path, "w", encoding="utf-8") as handle:
        for example in examples:
            handle.write(json.dumps(example.to_json(), ensure_ascii=False) + "\n")


class StructuralFilterError(ValueError):
    """An example whose wrong or gold parse cannot be parsed."""

    def __init__(self, index: int, example_id: str, detail: str):
        super().__init__(
            f"example {index} ({example_id}): unparseable SQL: {detail}")
        self.index = index
        self.example_id = example_id
        self.detail = detail


def filter_structural(examples: list[FeedbackExample],
                      schema_store: SchemaStore
                      ) -> tuple[list[FeedbackExample], list[FeedbackExample]]:
    """Split examples into (kept, removed) by the structural-error rule.

    Removed examples are exactly those whose wrong/gold edit script adds or
    removes an entire subquery. Order is preserved within each output.
    """
    kept: list[FeedbackExample] = []
    removed: list[FeedbackExample] = []
    for index, example in enumerate(examples):
        schema = schema_store.get(example.db_id)
        try:
            wrong = parse_sql(example.wrong_parse, schema)
            gold = parse_sql(example.gold_parse, schema)
        except ValueError as exc:
            raise StructuralFilterError(index, example.example_id, str(exc)) from exc
        script = edit_engine.diff(wrong, gold, schema)
        if edit_engine.classify_structural(script) is not None:
            removed.append(example)
        else:
            kept.append(example)
    return kept, removed


def split_lowdata(examples: list[FeedbackExample], config: LowDataSplitConfig
                  ) -> tuple[list[FeedbackExample], list[FeedbackExample]]:
    """Deterministic K% split into (annotated, to_simulate).

    The annotated count is round-half-up of K% of the input; sampling is
    uniform (the split is not stratified by error type).
    """
    if not examples:
        raise ValueError("split_lowdata requires a non-empty example list")
    count = math.floor(len(examples) * config.k_percent / 100 + 0.5)
    rng = random.Random(config.seed)
    chosen = set(rng.sample(range(len(examples)), count))
    annotated = [e for i, e in enumerate(examples) if i in chosen]
    to_simulate = [e for i, e in enumerate(examples) if i not in chosen]
    return annotated, to_simulate
