"""Prompt serialization, generation client, variant selection, augmentation."""

import json

import pytest

from conftest import echo_segment
from corpora import EDIT_PAIRS
from sqlfeedback.corpus import FeedbackExample
from sqlfeedback.edits import diff
from sqlfeedback.embeddings import DeterministicProvider, TransportError
from sqlfeedback.evaluator import EvalHyperparams, ScorerModel
from sqlfeedback.simulator import (
    AuditLog,
    EmptyGenerationError,
    GenerationClient,
    Mistake,
    UnsupportedExampleError,
    augment_dataset,
    select_best,
    serialize,
    simulate,
)
from sqlfeedback.sqlcore import parse_sql
from sqlfeedback.verbalize import TemplateFeedback, template_feedback

TABLE9 = FeedbackExample(
    example_id="easy", db_id="dog_kennels",
    question="How many dogs went through any treatments?",
    wrong_parse="SELECT count ( * ) FROM breeds",
    gold_parse="SELECT count(DISTINCT dog_id) FROM treatments",
    explanation="find the number of rows in breeds table")


def test_serialize_tqes_golden(schema_store):
    schema = schema_store.get("dog_kennels")
    prompt = serialize(TABLE9, "tqes", schema)
    assert prompt.startswith(
        "template: use treatments table in place of breeds table . "
        "find number of different dog id in place of number of rows .")
    assert " | question: How many dogs went through any treatments?" in prompt
    assert " | explanation: find the number of rows in breeds table" in prompt
    assert " | schema: breeds: breed_code, breed_name ; treatments: " in prompt


def test_serialize_dqes_contains_linearized_script(schema_store):
    schema = schema_store.get("dog_kennels")
    prompt = serialize(TABLE9, "dqes", schema)
    assert prompt.startswith("edits: REPLACE(from, breeds -> treatments) ; "
                             "REPLACE(select, count(*) -> count(DISTINCT dog_id))")


def test_serialize_cwqes_contains_both_parses(schema_store):
    schema = schema_store.get("dog_kennels")
    prompt = serialize(TABLE9, "cwqes", schema)
    assert "correct: SELECT count(DISTINCT dog_id) FROM treatments" in prompt
    assert "wrong: SELECT count ( * ) FROM breeds" in prompt


def test_serialize_structural_rejected(schema_store):
    example = FeedbackExample(
        example_id="s", db_id="docs", question="q?",
        wrong_parse="SELECT town_city , state_province_county FROM addresses",
        gold_parse="SELECT town_city FROM addresses UNION "
                   "SELECT state_province_county FROM addresses")
    schema = schema_store.get("docs")
    with pytest.raises(UnsupportedExampleError):
        serialize(example, "tqes", schema)
    # cwqes does not need the edit script, so it still serializes
    assert serialize(example, "cwqes", schema)


def test_serialize_injective_on_fixtures(schema_store):
    for variant in ("cwqes", "dqes", "tqes"):
        prompts = set()
        count = 0
        for index, (db, wrong_sql, gold_sql) in enumerate(EDIT_PAIRS):
            example = FeedbackExample(
                example_id=f"p{index}", db_id=db, question=f"question {index}?",
                wrong_parse=wrong_sql, gold_parse=gold_sql)
            prompts.add(serialize(example, variant, schema_store.get(db)))
            count += 1
        assert len(prompts) == count, variant


def test_tqes_segment_byte_equals_template(schema_store):
    schema = schema_store.get("dog_kennels")
    prompt = serialize(TABLE9, "tqes", schema)
    segment = prompt.split(" | ")[0][len("template: "):]
    wrong = parse_sql(TABLE9.wrong_parse, schema)
    gold = parse_sql(TABLE9.gold_parse, schema)
    assert segment == template_feedback(diff(wrong, gold, schema), schema).text


def test_simulate_with_echo_stub(schema_store, generation_stub, tmp_path):
    _, url = generation_stub
    client = GenerationClient(url, timeout_ms=2000, retries=0)
    audit = AuditLog(tmp_path / "audit.jsonl")
    schema = schema_store.get("dog_kennels")
    text = simulate(TABLE9, "tqes", client, schema, audit)
    assert text == ("use treatments table in place of breeds table . "
                    "find number of different dog id in place of number of rows .")
    entries = [json.loads(line)
               for line in (tmp_path / "audit.jsonl").read_text().splitlines()]
    assert entries[0]["id"] == "tqes-easy"
    assert entries[0]["text"] == text


def test_simulate_service_down(schema_store, tmp_path):
    client = GenerationClient("http://127.0.0.1:9", timeout_ms=200, retries=1)
    schema = schema_store.get("dog_kennels")
    with pytest.raises(TransportError, match="2 attempt"):
        simulate(TABLE9, "tqes", client, schema)


def test_simulate_whitespace_response(schema_store, generation_stub):
    server, url = generation_stub
    server.response_fn = lambda prompt: "   \n\t"
    client = GenerationClient(url, timeout_ms=2000, retries=0)
    with pytest.raises(EmptyGenerationError):
        simulate(TABLE9, "tqes", client, schema_store.get("dog_kennels"))


def _selection_fixture(schema_store):
    provider = DeterministicProvider()
    model = ScorerModel.identity(provider.dim, provider.provider_id)
    hp = EvalHyperparams()
    template = TemplateFeedback.single_span(
        "use treatments table in place of breeds table .")
    return provider, model, hp, template


def test_select_best_argmax(schema_store):
    provider, model, hp, template = _selection_fixture(schema_store)
    candidates = {
        "cwqes": [(template, "change something")],
        "dqes": [(template, "use treatments table")],
        "tqes": [(template, "use treatments table in place of breeds table .")],
    }
    selection = select_best(candidates, model, provider, hp)
    assert selection.best == "tqes"
    assert selection.mean_scores["tqes"] > selection.mean_scores["cwqes"]


def test_select_best_tie_prefers_enum_order(schema_store):
    provider, model, hp, template = _selection_fixture(schema_store)
    same = [(template, "identical output")]
    selection = select_best({"tqes": same, "cwqes": same, "dqes": same},
                            model, provider, hp)
    assert selection.best == "cwqes"


def test_select_best_single_variant(schema_store):
    provider, model, hp, template = _selection_fixture(schema_store)
    selection = select_best({"dqes": [(template, "whatever")]},
                            model, provider, hp)
    assert selection.best == "dqes"


def test_select_best_rescale_invariant(schema_store):
    # scores scale monotonically under candidate-independent changes; the
    # argmax over means is unaffected by any common positive rescaling
    provider, model, hp, template = _selection_fixture(schema_store)
    candidates = {
        "cwqes": [(template, "alpha beta")],
        "tqes": [(template, "use treatments table in place of breeds table .")],
    }
    selection = select_best(candidates, model, provider, hp)
    scaled = {variant: score * 0.25
              for variant, score in selection.mean_scores.items()}
    assert max(scaled, key=scaled.get) == selection.best


MISTAKES = [
    Mistake("How many dogs went through any treatments?",
            "SELECT count ( * ) FROM breeds",
            "SELECT count(DISTINCT dog_id) FROM treatments", "dog_kennels"),
    Mistake("What are the names of all cities and states?",
            "SELECT town_city , state_province_county FROM addresses",
            "SELECT town_city FROM addresses UNION "
            "SELECT state_province_county FROM addresses", "docs"),  # structural
    Mistake("Names of dogs older than five?",
            "SELECT name FROM dogs WHERE age > 3",
            "SELECT name FROM dogs WHERE age > 5", "dog_kennels"),
]


def test_augment_empty(schema_store, generation_stub, tmp_path):
    _, url = generation_stub
    client = GenerationClient(url, timeout_ms=2000, retries=0)
    audit = AuditLog(tmp_path / "audit.jsonl")
    result = augment_dataset([], "tqes", client, schema_store, audit)
    assert result.examples == [] and result.total == 0


def test_augment_skips_structural(schema_store, generation_stub, tmp_path):
    _, url = generation_stub
    client = GenerationClient(url, timeout_ms=2000, retries=0)
    audit = AuditLog(tmp_path / "audit.jsonl")
    result = augment_dataset(MISTAKES, "tqes", client, schema_store, audit,
                             parallelism=2)
    assert len(result.examples) == 2
    assert result.skipped_structural == 1
    assert all(e.provenance == "simulated" for e in result.examples)
    assert all(e.feedback for e in result.examples)
    assert all(e.explanation for e in result.examples)


def test_augment_resume_replays_identically(schema_store, generation_stub,
                                            tmp_path):
    _, url = generation_stub
    client = GenerationClient(url, timeout_ms=2000, retries=0)

    full_audit = AuditLog(tmp_path / "full.jsonl")
    full = augment_dataset(MISTAKES, "tqes", client, schema_store, full_audit)

    # simulate an aborted run: only the first entry made it into the audit
    partial_path = tmp_path / "partial.jsonl"
    first_line = (tmp_path / "full.jsonl").read_text().splitlines()[0]
    partial_path.write_text(first_line + "\n", encoding="utf-8")
    resumed_audit = AuditLog(partial_path)
    resumed = augment_dataset(MISTAKES, "tqes", client, schema_store,
                              resumed_audit)

    assert [e.to_json() for e in resumed.examples] == \
        [e.to_json() for e in full.examples]
    assert partial_path.read_text() == (tmp_path / "full.jsonl").read_text()
