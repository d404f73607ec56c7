"""End-to-end CLI runs: exit codes, artifacts, determinism."""

import json
from pathlib import Path

import pytest

from sqlfeedback.cli import main

FIXTURES = Path(__file__).parent / "fixtures"
SCHEMAS = str(FIXTURES / "schemas.json")


@pytest.fixture
def examples_file(tmp_path):
    records = [
        {"db_id": "dog_kennels",
         "question": "How many dogs went through any treatments?",
         "wrong_parse": "SELECT count ( * ) FROM breeds",
         "gold_parse": "SELECT count(DISTINCT dog_id) FROM treatments",
         "explanation": "find the number of rows in breeds table",
         "feedback": "use treatments table in place of breeds table .",
         "provenance": "human"},
        {"db_id": "dog_kennels",
         "question": "Names of dogs older than five?",
         "wrong_parse": "SELECT name FROM dogs WHERE age > 3",
         "gold_parse": "SELECT name FROM dogs WHERE age > 5",
         "explanation": None,
         "feedback": "consider the age greater than 5 condition .",
         "provenance": "human"},
        {"db_id": "docs",
         "question": "What are the names of all cities and states?",
         "wrong_parse": "SELECT town_city , state_province_county FROM addresses",
         "gold_parse": "SELECT town_city FROM addresses UNION "
                       "SELECT state_province_county FROM addresses",
         "explanation": None,
         "feedback": "the sentence is incomplete",
         "provenance": "human"},
    ]
    path = tmp_path / "examples.jsonl"
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record) + "\n")
    return str(path)


def test_unknown_subcommand_exits_64(capsys):
    assert main(["frobnicate"]) == 64


def test_unknown_flag_exits_64(capsys):
    assert main(["diff", "--nope"]) == 64


def test_diff_table9(capsys, tmp_path):
    wrong = tmp_path / "w.sql"
    gold = tmp_path / "g.sql"
    wrong.write_text("SELECT count ( * ) FROM breeds", encoding="utf-8")
    gold.write_text("SELECT count(DISTINCT dog_id) FROM treatments",
                    encoding="utf-8")
    code = main(["diff", "--wrong", str(wrong), "--gold", str(gold),
                 "--db", "dog_kennels", "--schemas", SCHEMAS])
    assert code == 0
    out = capsys.readouterr().out.strip()
    assert out == ("REPLACE(from, breeds -> treatments) ; "
                   "REPLACE(select, count(*) -> count(DISTINCT dog_id))")


def test_explain_command(capsys):
    code = main(["explain", "--sql", "SELECT count(*) FROM breeds",
                 "--db", "dog_kennels", "--schemas", SCHEMAS])
    assert code == 0
    assert capsys.readouterr().out.strip() == \
        "find the number of rows in breeds table"


def test_template_command(capsys):
    code = main(["template", "--wrong", "SELECT count ( * ) FROM breeds",
                 "--gold", "SELECT count(DISTINCT dog_id) FROM treatments",
                 "--db", "dog_kennels", "--schemas", SCHEMAS])
    assert code == 0
    assert capsys.readouterr().out.strip() == (
        "use treatments table in place of breeds table . "
        "find number of different dog id in place of number of rows .")


def test_health_defaults(capsys):
    assert main(["health"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["provider"]["kind"] == "deterministic"
    assert payload["provider"]["reachable"]


def test_ingest_and_split(capsys, tmp_path, examples_file):
    out = tmp_path / "out"
    code = main(["--out", str(out), "ingest", "--examples", examples_file,
                 "--schemas", SCHEMAS, "--k", "20"])
    assert code == 0
    kept = (out / "kept.jsonl").read_text().splitlines()
    removed = (out / "removed.jsonl").read_text().splitlines()
    assert len(kept) == 2 and len(removed) == 1
    assert json.loads(removed[0])["db_id"] == "docs"


def test_ingest_invalid_exits_1(tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"db_id": "nope", "question": "q", "wrong_parse": "w", '
                   '"gold_parse": "g"}\n', encoding="utf-8")
    code = main(["--out", str(tmp_path / "out"), "ingest", "--examples",
                 str(bad), "--schemas", SCHEMAS])
    assert code == 1


def test_score_command(capsys):
    code = main(["score", "--ref", "use treatments table",
                 "--cand", "use treatments table"])
    assert code == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["s"] == 1.0


def test_rank_oracle_mrr_one(capsys, tmp_path):
    # positives verbatim-equal the template feedback -> every rank is 1
    records = [
        {"db_id": "dog_kennels",
         "question": "How many dogs went through any treatments?",
         "wrong_parse": "SELECT count ( * ) FROM breeds",
         "gold_parse": "SELECT count(DISTINCT dog_id) FROM treatments",
         "feedback": "use treatments table in place of breeds table . "
                     "find number of different dog id in place of number of rows .",
         "provenance": "human"},
        {"db_id": "dog_kennels",
         "question": "Names of dogs older than five?",
         "wrong_parse": "SELECT name FROM dogs WHERE age > 3",
         "gold_parse": "SELECT name FROM dogs WHERE age > 5",
         "feedback": "consider the age greater than 5 condition in place of "
                     "the age greater than 3 condition .",
         "provenance": "human"},
    ]
    examples = tmp_path / "oracle.jsonl"
    with open(examples, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record) + "\n")
    out = tmp_path / "out"
    code = main(["--out", str(out), "--seed", "3", "rank",
                 "--examples", str(examples), "--schemas", SCHEMAS,
                 "--negatives", "10"])
    assert code == 0
    assert "MRR 1.0000" in capsys.readouterr().out
    payload = json.loads((out / "rank_report.json").read_text())
    assert payload["mrr"] == 1.0
    assert (out / "ranks.png").exists()


def test_metrics_command(capsys, tmp_path, examples_file):
    predictions = tmp_path / "preds.jsonl"
    with open(predictions, "w", encoding="utf-8") as handle:
        handle.write(json.dumps({
            "example_id": "ex00000",
            "fixed_parse": "SELECT count(DISTINCT dog_id) FROM treatments",
        }) + "\n")
        handle.write(json.dumps({
            "example_id": "ex00001",
            "fixed_parse": "SELECT name FROM dogs WHERE age > 3",
        }) + "\n")
    out = tmp_path / "out"
    code = main(["--out", str(out), "metrics", "--examples", examples_file,
                 "--schemas", SCHEMAS, "--predictions", str(predictions)])
    assert code == 0
    payload = json.loads((out / "report.json").read_text())
    assert payload["correction_accuracy"] == 50.0
    assert (out / "report.txt").exists()
    assert (out / "report.png").exists()


def test_negatives_command(tmp_path, capsys, examples_file):
    out = tmp_path / "out"
    code = main(["--out", str(out), "--seed", "5", "negatives",
                 "--examples", examples_file, "--schemas", SCHEMAS, "--n", "2"])
    assert code == 0
    lines = (out / "negatives.jsonl").read_text().splitlines()
    assert lines
    for line in lines:
        payload = json.loads(line)
        assert len(payload["negatives"]) == 2


def test_simulate_with_stub(tmp_path, capsys, examples_file, generation_stub):
    _, url = generation_stub
    out = tmp_path / "out"
    code = main(["--out", str(out),
                 "--set", f"generation.endpoint={url}",
                 "simulate", "--examples", examples_file,
                 "--schemas", SCHEMAS, "--variant", "tqes"])
    assert code == 0
    lines = (out / "simulated.jsonl").read_text().splitlines()
    assert len(lines) == 2  # structural example skipped
    assert all(json.loads(line)["provenance"] == "simulated" for line in lines)


def test_simulate_transport_failure_exits_2(tmp_path, examples_file, capsys):
    code = main(["--out", str(tmp_path / "out"),
                 "--set", "generation.endpoint=http://127.0.0.1:9",
                 "--set", "generation.timeout_ms=200",
                 "--set", "generation.retries=0",
                 "simulate", "--examples", examples_file, "--schemas", SCHEMAS])
    assert code == 2


def test_train_eval_writes_artifacts(tmp_path, capsys, examples_file):
    out = tmp_path / "out"
    code = main(["--out", str(out), "--seed", "7",
                 "--set", "evaluator.epochs=2",
                 "--set", "evaluator.negatives_per_positive=2",
                 "--set", "provider.dim=16",
                 "train-eval", "--examples", examples_file,
                 "--schemas", SCHEMAS])
    assert code == 0
    assert (out / "model.json").exists()
    assert (out / "loss.png").exists()
    log_lines = (out / "train_log.jsonl").read_text().splitlines()
    assert len(log_lines) == 2
    assert {"epoch", "mean_loss", "mrr_dev"} <= set(json.loads(log_lines[0]))


def test_artifacts_deterministic(tmp_path, examples_file, capsys):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        code = main(["--out", str(out), "--seed", "9", "negatives",
                     "--examples", examples_file, "--schemas", SCHEMAS,
                     "--n", "3"])
        assert code == 0
        outs.append((out / "negatives.jsonl").read_bytes())
    assert outs[0] == outs[1]
