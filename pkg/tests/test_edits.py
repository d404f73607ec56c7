"""Edit script computation, application, distance and classification."""

import pytest

from corpora import EDIT_PAIRS, STRUCTURAL_CASES
from oracles import oracle_min_edit_count
from sqlfeedback.edits import (
    Edit,
    EditApplicationError,
    EditScript,
    StructuralErrorKind,
    apply,
    classify_structural,
    diff,
    edit_distance,
)
from sqlfeedback.sqlcore import exact_set_match, parse_sql


def _pair(schema_store, db, wrong_sql, gold_sql):
    schema = schema_store.get(db)
    return parse_sql(wrong_sql, schema), parse_sql(gold_sql, schema), schema


def test_diff_table9_pair(schema_store):
    wrong, gold, schema = _pair(
        schema_store, "dog_kennels",
        "SELECT count ( * ) FROM breeds",
        "SELECT count(DISTINCT dog_id) FROM treatments")
    script = diff(wrong, gold, schema)
    assert script.linearize() == (
        "REPLACE(from, breeds -> treatments) ; "
        "REPLACE(select, count(*) -> count(DISTINCT dog_id))")


def test_diff_identical_is_empty(schema_store):
    wrong, gold, schema = _pair(schema_store, "misc",
                                "SELECT title FROM film",
                                "SELECT title FROM film")
    assert diff(wrong, gold, schema).is_empty


def test_diff_added_condition(schema_store):
    wrong, gold, schema = _pair(
        schema_store, "cars",
        "SELECT mpg FROM cars_data WHERE cylinders = 8",
        "SELECT mpg FROM cars_data WHERE cylinders = 8 OR year < 1980")
    script = diff(wrong, gold, schema)
    # oracle: set difference of rendered where atoms (block rendering style)
    wrong_atoms = {wrong.where.render(qualify=wrong.qualify)}
    gold_atoms = {c.render(qualify=gold.qualify) for c in gold.where.children}
    expected_added = gold_atoms - wrong_atoms
    assert [e.linearize() for e in script] == \
        [f"ADD(where, {item})" for item in expected_added]


def test_apply_empty_script_is_identity(schema_store):
    wrong, _, schema = _pair(schema_store, "misc",
                             "SELECT title FROM film",
                             "SELECT title FROM film")
    result = apply(wrong, EditScript(()), schema)
    assert exact_set_match(result, wrong)


def test_apply_table9_script(schema_store):
    wrong, gold, schema = _pair(
        schema_store, "dog_kennels",
        "SELECT count ( * ) FROM breeds",
        "SELECT count(DISTINCT dog_id) FROM treatments")
    fixed = apply(wrong, diff(wrong, gold, schema), schema)
    assert exact_set_match(fixed, gold)


def test_apply_missing_item_errors(schema_store):
    wrong, _, schema = _pair(schema_store, "misc",
                             "SELECT title FROM film",
                             "SELECT title FROM film")
    script = EditScript((Edit("select", "replace", old_item="studio",
                              new_item="director"),))
    with pytest.raises(EditApplicationError, match="SELECT"):
        apply(wrong, script, schema)


def test_apply_does_not_mutate_input(schema_store):
    wrong, gold, schema = _pair(
        schema_store, "dog_kennels",
        "SELECT name FROM dogs", "SELECT age FROM dogs")
    before = wrong
    apply(wrong, diff(wrong, gold, schema), schema)
    assert wrong == before


def test_apply_from_text_only_edits(schema_store):
    # scripts built by hand (no structured payloads) still apply
    wrong, gold, schema = _pair(
        schema_store, "dog_kennels",
        "SELECT count ( * ) FROM breeds",
        "SELECT count(DISTINCT dog_id) FROM treatments")
    script = EditScript((
        Edit("from", "replace", old_item="breeds", new_item="treatments"),
        Edit("select", "replace", old_item="count(*)",
             new_item="count(DISTINCT dog_id)"),
    ))
    assert exact_set_match(apply(wrong, script, schema), gold)


def test_edit_distance_zero_iff_match(schema_store):
    for db, wrong_sql, gold_sql in EDIT_PAIRS:
        wrong, gold, schema = _pair(schema_store, db, wrong_sql, gold_sql)
        distance = edit_distance(wrong, gold, schema)
        assert (distance == 0) == exact_set_match(wrong, gold)


def test_edit_distance_table9_is_two(schema_store):
    wrong, gold, schema = _pair(
        schema_store, "dog_kennels",
        "SELECT count ( * ) FROM breeds",
        "SELECT count(DISTINCT dog_id) FROM treatments")
    assert edit_distance(wrong, gold, schema) == 2


def test_edit_distance_symmetric_on_pure_replaces(schema_store):
    pure_replace_pairs = [
        ("dog_kennels", "SELECT name FROM dogs", "SELECT age FROM dogs"),
        ("docs", "SELECT count(*) FROM addresses", "SELECT count(*) FROM documents"),
        ("cars", "SELECT mpg FROM cars_data WHERE year < 1",
         "SELECT mpg FROM cars_data WHERE year < 1980"),
    ]
    for db, wrong_sql, gold_sql in pure_replace_pairs:
        wrong, gold, schema = _pair(schema_store, db, wrong_sql, gold_sql)
        assert edit_distance(wrong, gold, schema) == \
            edit_distance(gold, wrong, schema)


def test_roundtrip_all_edit_pairs(schema_store):
    for db, wrong_sql, gold_sql in EDIT_PAIRS:
        wrong, gold, schema = _pair(schema_store, db, wrong_sql, gold_sql)
        script = diff(wrong, gold, schema)
        fixed = apply(wrong, script, schema)
        assert exact_set_match(fixed, gold), (wrong_sql, script.linearize())


def test_minimality_against_exhaustive_oracle(schema_store):
    for db, wrong_sql, gold_sql in EDIT_PAIRS:
        wrong, gold, schema = _pair(schema_store, db, wrong_sql, gold_sql)
        assert edit_distance(wrong, gold, schema) == \
            oracle_min_edit_count(wrong, gold), (wrong_sql, gold_sql)


def test_diff_self_empty_on_corpus(schema_store):
    for db, wrong_sql, _ in EDIT_PAIRS[:10]:
        ast, _, schema = _pair(schema_store, db, wrong_sql, wrong_sql)
        assert diff(ast, ast, schema).is_empty


def test_classify_structural_cases(schema_store):
    for db, wrong_sql, gold_sql, expected in STRUCTURAL_CASES:
        wrong, gold, schema = _pair(schema_store, db, wrong_sql, gold_sql)
        kind = classify_structural(diff(wrong, gold, schema))
        if expected is None:
            assert kind is None, (wrong_sql, gold_sql)
        else:
            assert kind == StructuralErrorKind(expected), (wrong_sql, gold_sql)


def test_structural_roundtrip_still_holds(schema_store):
    # even structural scripts must apply back to the gold parse
    for db, wrong_sql, gold_sql, _ in STRUCTURAL_CASES:
        wrong, gold, schema = _pair(schema_store, db, wrong_sql, gold_sql)
        script = diff(wrong, gold, schema)
        assert exact_set_match(apply(wrong, script, schema), gold)


def test_linearized_formats():
    edits = EditScript((
        Edit("where", "add", new_item="year < 1980"),
        Edit("select", "remove", old_item="name"),
        Edit("logic_connector", "flip", detail="and -> or"),
    ))
    assert edits.linearize() == ("ADD(where, year < 1980) ; "
                                 "REMOVE(select, name) ; "
                                 "FLIP(logic_connector, and -> or)")


def test_connector_flip_carries_no_items(schema_store):
    wrong, gold, schema = _pair(
        schema_store, "dog_kennels",
        "SELECT name FROM dogs WHERE age < 3 AND weight > 50",
        "SELECT name FROM dogs WHERE age < 3 OR weight > 50")
    script = diff(wrong, gold, schema)
    assert len(script) == 1
    edit = script.edits[0]
    assert edit.kind == "flip" and edit.clause == "logic_connector"
    assert edit.old_item is None and edit.new_item is None
    assert edit.detail == "and -> or"


def test_distinct_flip_detail(schema_store):
    wrong, gold, schema = _pair(
        schema_store, "dog_kennels",
        "SELECT breed_name FROM breeds",
        "SELECT DISTINCT breed_name FROM breeds")
    script = diff(wrong, gold, schema)
    assert len(script) == 1
    edit = script.edits[0]
    assert edit.clause == "distinct_flag" and edit.kind == "flip"
    assert edit.detail == "add distinct"
