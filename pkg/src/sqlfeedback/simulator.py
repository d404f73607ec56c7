"""Simulator input serialization, generation-service client, and
evaluator-driven variant selection.

Three input variants feed an external seq2seq generation service: the raw
correct+wrong parses (cwqes), the linearized edit script (dqes), or the
template feedback text (tqes), each alongside question, explanation and
schema. Prompt field order and the " | " separator are fixed so prompts are
byte-stable.
"""

from __future__ import annotations

import json
import threading
import urllib.error
import urllib.request
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from sqlfeedback import edits as edit_engine
from sqlfeedback.corpus import FeedbackExample
from sqlfeedback.embeddings import TransportError
from sqlfeedback.evaluator import (
    EvalHyperparams,
    ScorerModel,
    candidate_score,
)
from sqlfeedback.schema import DatabaseSchema, SchemaStore
from sqlfeedback.sqlcore import parse_sql
from sqlfeedback.verbalize import TemplateFeedback, explain, template_feedback

VARIANTS = ("cwqes", "dqes", "tqes")


class EmptyGenerationError(RuntimeError):
    """The generation service returned a whitespace-only text."""


class UnsupportedExampleError(ValueError):
    """dqes/tqes cannot serialize a structural edit script."""


@dataclass(frozen=True)
class SimulationRequest:
    variant: str
    prompt: str
    example_id: str


def _schema_segment(schema: DatabaseSchema) -> str:
    parts = [f"{table.name}: {', '.join(c.name for c in table.columns)}"
             for table in schema.tables]
    return " ; ".join(parts)


def _explanation_text(example: FeedbackExample, schema: DatabaseSchema) -> str:
    if example.explanation:
        return example.explanation
    wrong = parse_sql(example.wrong_parse, schema)
    return explain(wrong, schema).text


def serialize(example: FeedbackExample, variant: str,
              schema: DatabaseSchema) -> str:
    """Build the deterministic prompt for one simulator variant."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown simulator variant '{variant}'")
    question = example.question
    explanation = _explanation_text(example, schema)
    schema_text = _schema_segment(schema)
    if variant == "cwqes":
        head = f"correct: {example.gold_parse} | wrong: {example.wrong_parse}"
    else:
        wrong = parse_sql(example.wrong_parse, schema)
        gold = parse_sql(example.gold_parse, schema)
        script = edit_engine.diff(wrong, gold, schema)
        if edit_engine.classify_structural(script) is not None:
            raise UnsupportedExampleError(
                f"example {example.example_id}: structural edit script")
        if variant == "dqes":
            head = f"edits: {script.linearize()}"
        else:
            feedback = template_feedback(script, schema)
            head = f"template: {feedback.text}"
    return (f"{head} | question: {question} | explanation: {explanation} "
            f"| schema: {schema_text}")


class GenerationClient:
    """HTTP client for the generation wire protocol (``POST /generate``)."""

    def __init__(self, endpoint: str, timeout_ms: int = 10000, retries: int = 2,
                 params: Optional[dict] = None):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout_ms / 1000.0
        self.retries = retries
        self.params = params or {}

    def generate(self, prompt: str, request_id: Optional[str] = None) -> str:
        request_id = request_id or str(uuid.uuid4())
        body = json.dumps({"id": request_id, "prompt": prompt,
                           "params": self.params}).encode("utf-8")
        last_error: Optional[Exception] = None
        for _ in range(self.retries + 1):
            try:
                request = urllib.request.Request(
                    f"{self.endpoint}/generate", data=body,
                    headers={"Content-Type": "application/json"})
                with urllib.request.urlopen(request, timeout=self.timeout) as response:
                    payload = json.loads(response.read().decode("utf-8"))
                return payload.get("text", "")
            except (urllib.error.URLError, TimeoutError, ConnectionError,
                    OSError) as exc:
                last_error = exc
        raise TransportError(f"generation service unreachable: {last_error}",
                             self.retries + 1)


class AuditLog:
    """Append-only JSONL record of (prompt, text) pairs; also the resume
    checkpoint for augmentation runs."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def completed_ids(self) -> dict[str, str]:
        done: dict[str, str] = {}
        if not self.path.exists():
            return done
        with open(self.path, encoding="utf-8") as handle:
            for line in handle:
                if line.strip():
                    entry = json.loads(line)
                    done[entry["id"]] = entry["text"]
        return done

    def append(self, entry_id: str, variant: str, prompt: str, text: str) -> None:
        record = {"id": entry_id, "variant": variant, "prompt": prompt,
                  "text": text}
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as handle:
                handle.write(json.dumps(record, ensure_ascii=False) + "\n")


def simulate(example: FeedbackExample, variant: str, gen_client: GenerationClient,
             schema: DatabaseSchema,
             audit: Optional[AuditLog] = None) -> str:
    """One simulated feedback sentence for an example."""
    prompt = serialize(example, variant, schema)
    request_id = f"{variant}-{example.example_id}"
    text = gen_client.generate(prompt, request_id).strip()
    if not text:
        raise EmptyGenerationError(
            f"empty generation for example {example.example_id}")
    if audit is not None:
        audit.append(request_id, variant, prompt, text)
    return text


@dataclass(frozen=True)
class VariantSelection:
    best: str
    mean_scores: dict[str, float]


def select_best(candidates: dict[str, list[tuple[TemplateFeedback, str]]],
                model: ScorerModel, provider, hp: EvalHyperparams
                ) -> VariantSelection:
    """Pick the variant with the highest mean post-processed score against
    each context's template feedback; ties resolve in variant enum order."""
    if not candidates:
        raise ValueError("no candidates to select from")
    means: dict[str, float] = {}
    for variant, scored in candidates.items():
        if not scored:
            raise ValueError(f"variant '{variant}' has no candidates")
        total = sum(candidate_score(template, text, model, provider, hp)
                    for template, text in scored)
        means[variant] = total / len(scored)
    best = max(sorted(means, key=lambda v: VARIANTS.index(v)),
               key=lambda v: means[v])
    return VariantSelection(best, means)


@dataclass(frozen=True)
class Mistake:
    question: str
    wrong_parse: str
    gold_parse: str
    db_id: str


@dataclass
class AugmentationResult:
    examples: list[FeedbackExample]
    skipped_structural: int
    total: int


def augment_dataset(mistakes: Sequence[Mistake], variant: str,
                    gen_client: GenerationClient, schema_store: SchemaStore,
                    audit: AuditLog, parallelism: int = 1) -> AugmentationResult:
    """Simulate feedback for parser mistakes, skipping structural ones.

    Requests may run in bounded parallel; audit entries are appended in
    mistake order, so an aborted run resumes from the audit log and
    reproduces the uninterrupted output.
    """
    completed = audit.completed_ids()
    prepared: list[tuple[int, Mistake, str, str, str]] = []
    skipped = 0
    for index, mistake in enumerate(mistakes):
        schema = schema_store.get(mistake.db_id)
        wrong = parse_sql(mistake.wrong_parse, schema)
        gold = parse_sql(mistake.gold_parse, schema)
        script = edit_engine.diff(wrong, gold, schema)
        if edit_engine.classify_structural(script) is not None:
            skipped += 1
            continue
        example_id = f"aug{index:06d}"
        example = FeedbackExample(
            example_id=example_id, db_id=mistake.db_id,
            question=mistake.question, wrong_parse=mistake.wrong_parse,
            gold_parse=mistake.gold_parse,
            explanation=explain(wrong, schema).text, provenance="simulated")
        prompt = serialize(example, variant, schema)
        prepared.append((index, mistake, example_id, prompt,
                         example.explanation))

    def run_one(entry) -> str:
        _, _, example_id, prompt, _ = entry
        request_id = f"{variant}-{example_id}"
        if request_id in completed:
            return completed[request_id]
        text = gen_client.generate(prompt, request_id).strip()
        if not text:
            raise EmptyGenerationError(f"empty generation for {example_id}")
        return text

    results: list[FeedbackExample] = []
    with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
        futures = [pool.submit(run_one, entry) for entry in prepared]
        # consume in mistake order so the audit log stays a deterministic,
        # resumable prefix even when an entry aborts the run
        for entry, future in zip(prepared, futures):
            text = future.result()
            _, mistake, example_id, prompt, explanation = entry
            request_id = f"{variant}-{example_id}"
            if request_id not in completed:
                audit.append(request_id, variant, prompt, text)
            results.append(FeedbackExample(
                example_id=example_id, db_id=mistake.db_id,
                question=mistake.question, wrong_parse=mistake.wrong_parse,
                gold_parse=mistake.gold_parse, explanation=explanation,
                feedback=text, provenance="simulated"))
    return AugmentationResult(results, skipped, len(mistakes))
