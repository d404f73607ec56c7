"""Command-line entry point wiring the modules into pipeline stages.

Subcommands compose through files for resumability: each reads and writes
only its declared paths, with all randomness derived from the config seed.
Exit codes: 0 success, 1 validation failure, 2 transport failure, 64 usage.
"""

from __future__ import annotations

import argparse
import json
import random
import sys
from pathlib import Path

from sqlfeedback import corpus, edits as edit_engine, metrics as metrics_mod
from sqlfeedback import figures
from sqlfeedback.config import ConfigError, hyperparams_from, load_config
from sqlfeedback.embeddings import TransportError, healthcheck, make_provider
from sqlfeedback.evaluator import (
    RankingEntry,
    ScorerModel,
    TrainExample,
    candidate_score,
    mrr,
    postprocess_score,
    score,
    similarity_matrix,
    train,
)
from sqlfeedback.embeddings import tokenize
from sqlfeedback.schema import SchemaStore
from sqlfeedback.simulator import (
    AuditLog,
    GenerationClient,
    Mistake,
    augment_dataset,
    serialize,
    simulate,
)
from sqlfeedback.sqlcore import parse_sql, render_sql
from sqlfeedback.verbalize import (
    NegativeSamplingUnavailable,
    TemplateFeedback,
    explain,
    load_templates,
    sample_negative,
    template_feedback,
)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_TRANSPORT = 2
EXIT_USAGE = 64


class _UsageError(SystemExit):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 64, not argparse's 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _sql_arg(value: str) -> str:
    path = Path(value)
    if path.exists() and path.is_file():
        return path.read_text(encoding="utf-8").strip()
    return value


def build_parser() -> _Parser:
    parser = _Parser(prog="sqlfeedback",
                     description="NL feedback simulation and evaluation "
                                 "toolkit for text-to-SQL error correction")
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--strict", dest="strict", action="store_true",
                        default=None)
    parser.add_argument("--no-strict", dest="strict", action="store_false")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override any config key")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load, validate, filter, split")
    p.add_argument("--examples")
    p.add_argument("--schemas")
    p.add_argument("--k", type=int, help="low-data K%% (5/10/20/100)")

    p = sub.add_parser("diff", help="edit script between two parses")
    p.add_argument("--wrong", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--db", required=True)
    p.add_argument("--schemas")

    p = sub.add_parser("explain", help="step-wise explanation of a parse")
    p.add_argument("--sql", required=True)
    p.add_argument("--db", required=True)
    p.add_argument("--schemas")

    p = sub.add_parser("template", help="template feedback for a parse pair")
    p.add_argument("--wrong", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--db", required=True)
    p.add_argument("--schemas")
    p.add_argument("--spans", action="store_true",
                   help="show span boundaries and weight classes")

    p = sub.add_parser("negatives", help="sample negative feedback")
    p.add_argument("--examples")
    p.add_argument("--schemas")
    p.add_argument("--n", type=int, default=1)

    p = sub.add_parser("score", help="score a candidate against a reference")
    p.add_argument("--ref", required=True)
    p.add_argument("--cand", required=True)
    p.add_argument("--model")

    p = sub.add_parser("train-eval", help="train the feedback evaluator")
    p.add_argument("--examples")
    p.add_argument("--schemas")

    p = sub.add_parser("rank", help="MRR of positives among sampled negatives")
    p.add_argument("--examples")
    p.add_argument("--schemas")
    p.add_argument("--model")
    p.add_argument("--negatives", type=int, default=50)

    p = sub.add_parser("simulate", help="simulate feedback via the "
                                        "generation service")
    p.add_argument("--examples")
    p.add_argument("--schemas")
    p.add_argument("--variant", choices=("cwqes", "dqes", "tqes"),
                   default="tqes")

    p = sub.add_parser("augment", help="simulate feedback for parser mistakes")
    p.add_argument("--mistakes", required=True)
    p.add_argument("--schemas")
    p.add_argument("--variant", choices=("cwqes", "dqes", "tqes"),
                   default="tqes")

    p = sub.add_parser("metrics", help="error-correction metric report")
    p.add_argument("--examples")
    p.add_argument("--schemas")
    p.add_argument("--predictions", required=True)
    p.add_argument("--e2e-initial", type=int)
    p.add_argument("--e2e-total", type=int)

    sub.add_parser("health", help="report provider and service health")
    return parser


# --------------------------------------------------------------------------
# shared plumbing
# --------------------------------------------------------------------------


class _Context:
    def __init__(self, args):
        self.args = args
        self.config = load_config(args.config, args.overrides)
        if args.seed is not None:
            self.config["seed"] = args.seed
        if args.strict is not None:
            self.config["strict"] = args.strict
        if args.out is not None:
            self.config["paths"]["out"] = args.out

    @property
    def seed(self) -> int:
        return self.config["seed"]

    @property
    def strict(self) -> bool:
        return self.config["strict"]

    def out_dir(self) -> Path:
        out = Path(self.config["paths"]["out"])
        out.mkdir(parents=True, exist_ok=True)
        return out

    def path_of(self, flag_value, key: str, required: bool = True):
        value = flag_value or self.config["paths"].get(key)
        if required and not value:
            raise ConfigError(f"no '{key}' path given (flag or config)")
        if value and not Path(value).exists():
            raise ConfigError(f"{key} path does not exist: {value}")
        return value

    def schemas(self, flag_value=None) -> SchemaStore:
        return corpus.load_schemas(self.path_of(flag_value, "schemas"))

    def examples(self, store: SchemaStore, flag_value=None):
        return corpus.load_examples(self.path_of(flag_value, "examples"),
                                    store, strict=self.strict)

    def provider(self):
        section = self.config["provider"]
        return make_provider(section["kind"], endpoint=section["endpoint"],
                             dim=section["dim"],
                             timeout_ms=section["timeout_ms"],
                             retries=section["retries"],
                             cache_path=section["cache_path"])

    def gen_client(self) -> GenerationClient:
        section = self.config["generation"]
        if not section["endpoint"]:
            raise ConfigError("no generation endpoint configured "
                              "(generation.endpoint or SQLFEEDBACK_GEN_ENDPOINT)")
        return GenerationClient(section["endpoint"],
                                timeout_ms=section["timeout_ms"],
                                retries=section["retries"],
                                params=section["params"])

    def model(self, flag_value=None, provider=None) -> ScorerModel:
        value = flag_value or self.config["paths"].get("model")
        if value:
            return ScorerModel.load(value)
        provider = provider or self.provider()
        dim = provider.dim or self.config["provider"]["dim"]
        return ScorerModel.identity(dim, provider.provider_id)

    def templates(self):
        path = self.config["paths"].get("templates")
        return load_templates(path) if path else load_templates()


def _example_template(example, store) -> TemplateFeedback:
    schema = store.get(example.db_id)
    wrong = parse_sql(example.wrong_parse, schema)
    gold = parse_sql(example.gold_parse, schema)
    script = edit_engine.diff(wrong, gold, schema)
    return template_feedback(script, schema)


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_ingest(ctx: _Context) -> int:
    store = ctx.schemas(ctx.args.schemas)
    examples = ctx.examples(store, ctx.args.examples)
    kept, removed = corpus.filter_structural(examples, store)
    out = ctx.out_dir()
    corpus.save_examples(out / "kept.jsonl", kept)
    corpus.save_examples(out / "removed.jsonl", removed)
    print(f"loaded {len(examples)} examples: kept {len(kept)}, "
          f"removed {len(removed)} structural")
    k_percent = ctx.args.k or ctx.config["lowdata"]["k_percent"]
    if k_percent and k_percent != 100:
        split_seed = ctx.config["lowdata"]["seed"]
        config = corpus.LowDataSplitConfig(
            k_percent, split_seed if split_seed is not None else ctx.seed)
        annotated, to_simulate = corpus.split_lowdata(kept, config)
        corpus.save_examples(out / "annotated.jsonl", annotated)
        corpus.save_examples(out / "to_simulate.jsonl", to_simulate)
        print(f"low-data split K={k_percent}%: {len(annotated)} annotated, "
              f"{len(to_simulate)} to simulate")
    return EXIT_OK


def cmd_diff(ctx: _Context) -> int:
    store = ctx.schemas(ctx.args.schemas)
    schema = store.get(ctx.args.db)
    wrong = parse_sql(_sql_arg(ctx.args.wrong), schema)
    gold = parse_sql(_sql_arg(ctx.args.gold), schema)
    script = edit_engine.diff(wrong, gold, schema)
    print(script.linearize() if not script.is_empty else "(no edits)")
    return EXIT_OK


def cmd_explain(ctx: _Context) -> int:
    store = ctx.schemas(ctx.args.schemas)
    schema = store.get(ctx.args.db)
    ast = parse_sql(_sql_arg(ctx.args.sql), schema)
    for step in explain(ast, schema).steps:
        print(step)
    return EXIT_OK


def cmd_template(ctx: _Context) -> int:
    store = ctx.schemas(ctx.args.schemas)
    schema = store.get(ctx.args.db)
    wrong = parse_sql(_sql_arg(ctx.args.wrong), schema)
    gold = parse_sql(_sql_arg(ctx.args.gold), schema)
    script = edit_engine.diff(wrong, gold, schema)
    feedback = template_feedback(script, schema, ctx.templates())
    if ctx.args.spans:
        for span in feedback.spans:
            print(f"[{span.weight_class}] {span.text}")
    else:
        print(feedback.text)
    return EXIT_OK


def cmd_negatives(ctx: _Context) -> int:
    store = ctx.schemas(ctx.args.schemas)
    examples = ctx.examples(store, ctx.args.examples)
    rng = random.Random(ctx.seed)
    out = ctx.out_dir()
    written = 0
    skipped = 0
    with open(out / "negatives.jsonl", "w", encoding="utf-8") as handle:
        for example in examples:
            if not example.feedback:
                skipped += 1
                continue
            schema = store.get(example.db_id)
            negatives = []
            try:
                for _ in range(ctx.args.n):
                    negatives.append(sample_negative(example.feedback, schema, rng))
            except NegativeSamplingUnavailable:
                skipped += 1
                continue
            handle.write(json.dumps({"example_id": example.example_id,
                                     "negatives": negatives},
                                    ensure_ascii=False) + "\n")
            written += 1
    print(f"wrote negatives for {written} examples to "
          f"{out / 'negatives.jsonl'} ({skipped} skipped)")
    return EXIT_OK


def cmd_score(ctx: _Context) -> int:
    provider = ctx.provider()
    model = ctx.model(ctx.args.model, provider)
    hp = hyperparams_from(ctx.config)
    ref_tokens = tokenize(ctx.args.ref)
    cand_tokens = tokenize(ctx.args.cand)
    matrix = similarity_matrix(provider.embed(ref_tokens),
                               provider.embed(cand_tokens), model)
    raw = score(matrix)
    template = TemplateFeedback.single_span(ctx.args.ref)
    weighted = postprocess_score(matrix, template, hp)
    print(json.dumps({
        "s_prec": raw.s_prec, "s_recall": raw.s_recall, "s": raw.s,
        "postprocessed": {"s_prec": weighted.s_prec,
                          "s_recall": weighted.s_recall, "s": weighted.s},
    }, indent=2))
    return EXIT_OK


def _training_set(ctx: _Context, store) -> tuple[list[TrainExample], int]:
    examples = ctx.examples(store, ctx.args.examples)
    dataset: list[TrainExample] = []
    skipped = 0
    for example in examples:
        if not example.feedback:
            skipped += 1
            continue
        try:
            template = _example_template(example, store)
        except ValueError:
            skipped += 1
            continue
        dataset.append(TrainExample(template, example.feedback,
                                    store.get(example.db_id),
                                    example.example_id))
    return dataset, skipped


def cmd_train_eval(ctx: _Context) -> int:
    store = ctx.schemas(ctx.args.schemas)
    dataset, skipped = _training_set(ctx, store)
    if not dataset:
        raise ConfigError("no trainable examples (feedback required)")
    provider = ctx.provider()
    hp = hyperparams_from(ctx.config)
    out = ctx.out_dir()
    log_path = out / "train_log.jsonl"
    with open(log_path, "w", encoding="utf-8") as log_handle:
        model, log = train(dataset, provider, hp, ctx.seed,
                           log_sink=lambda entry: log_handle.write(
                               json.dumps(entry) + "\n"))
    model.save(out / "model.json")
    figures.training_curve_figure(log, out / "loss.png")
    print(f"trained on {len(dataset)} examples ({skipped} skipped); "
          f"epoch loss {log[0]['mean_loss']:.4f} -> {log[-1]['mean_loss']:.4f}")
    print(f"model: {out / 'model.json'}  log: {log_path}  figure: "
          f"{out / 'loss.png'}")
    return EXIT_OK


def cmd_rank(ctx: _Context) -> int:
    store = ctx.schemas(ctx.args.schemas)
    examples = ctx.examples(store, ctx.args.examples)
    provider = ctx.provider()
    model = ctx.model(ctx.args.model, provider)
    hp = hyperparams_from(ctx.config)
    rng = random.Random(ctx.seed)
    entries = []
    skipped = 0
    for example in examples:
        if not example.feedback:
            skipped += 1
            continue
        schema = store.get(example.db_id)
        try:
            template = _example_template(example, store)
            negatives = tuple(sample_negative(example.feedback, schema, rng)
                              for _ in range(ctx.args.negatives))
        except (ValueError, NegativeSamplingUnavailable):
            skipped += 1
            continue
        entries.append(RankingEntry(template, example.feedback, negatives))
    if not entries:
        raise ConfigError("no rankable examples")
    ranks = []
    for entry in entries:
        pos = candidate_score(entry.template, entry.positive, model, provider, hp)
        worse_or_equal = sum(
            1 for neg in entry.negatives
            if candidate_score(entry.template, neg, model, provider, hp) >= pos)
        ranks.append(1 + worse_or_equal)
    value = sum(1.0 / r for r in ranks) / len(ranks)
    out = ctx.out_dir()
    (out / "rank_report.json").write_text(json.dumps({
        "mrr": value, "entries": len(entries), "skipped": skipped,
        "negatives_per_entry": ctx.args.negatives, "ranks": ranks,
    }, indent=2), encoding="utf-8")
    figures.rank_histogram_figure(ranks, out / "ranks.png", value)
    print(f"MRR {value:.4f} over {len(entries)} entries "
          f"({skipped} skipped); report: {out / 'rank_report.json'}")
    return EXIT_OK


def cmd_simulate(ctx: _Context) -> int:
    store = ctx.schemas(ctx.args.schemas)
    examples = ctx.examples(store, ctx.args.examples)
    client = ctx.gen_client()
    out = ctx.out_dir()
    audit = AuditLog(out / "simulate_audit.jsonl")
    simulated = []
    skipped = 0
    for example in examples:
        schema = store.get(example.db_id)
        try:
            text = simulate(example, ctx.args.variant, client, schema, audit)
        except ValueError:
            skipped += 1
            continue
        simulated.append(corpus.FeedbackExample(
            example_id=example.example_id, db_id=example.db_id,
            question=example.question, wrong_parse=example.wrong_parse,
            gold_parse=example.gold_parse, explanation=example.explanation,
            feedback=text, provenance="simulated"))
    corpus.save_examples(out / "simulated.jsonl", simulated)
    print(f"simulated {len(simulated)} examples ({skipped} skipped) -> "
          f"{out / 'simulated.jsonl'}")
    return EXIT_OK


def cmd_augment(ctx: _Context) -> int:
    store = ctx.schemas(ctx.args.schemas)
    mistakes = []
    with open(ctx.args.mistakes, encoding="utf-8") as handle:
        for line in handle:
            if line.strip():
                raw = json.loads(line)
                mistakes.append(Mistake(raw["question"], raw["wrong_parse"],
                                        raw["gold_parse"], raw["db_id"]))
    client = ctx.gen_client()
    out = ctx.out_dir()
    audit = AuditLog(out / "augment_audit.jsonl")
    result = augment_dataset(mistakes, ctx.args.variant, client, store, audit,
                             parallelism=ctx.config["generation"]["parallelism"])
    corpus.save_examples(out / "augmented.jsonl", result.examples)
    print(f"augmented {len(result.examples)} of {result.total} mistakes "
          f"({result.skipped_structural} structural skipped) -> "
          f"{out / 'augmented.jsonl'}")
    return EXIT_OK


def cmd_metrics(ctx: _Context) -> int:
    store = ctx.schemas(ctx.args.schemas)
    examples = ctx.examples(store, ctx.args.examples)
    predictions = {}
    with open(ctx.args.predictions, encoding="utf-8") as handle:
        for line in handle:
            if line.strip():
                raw = json.loads(line)
                predictions[raw["example_id"]] = raw["fixed_parse"]
    records = metrics_mod.build_records(examples, predictions, store)
    e2e_counts = None
    if ctx.args.e2e_total is not None:
        initial = ctx.args.e2e_initial or 0
        corrected = sum(1 for r in records if r.correct)
        e2e_counts = (initial, corrected, ctx.args.e2e_total)
    result = metrics_mod.report(records, e2e_counts)
    out = ctx.out_dir()
    (out / "report.json").write_text(metrics_mod.render_json(result),
                                     encoding="utf-8")
    text = metrics_mod.render_text(result)
    (out / "report.txt").write_text(text + "\n", encoding="utf-8")
    figures.metrics_figure(result, out / "report.png")
    print(text)
    print(f"report: {out / 'report.json'}, {out / 'report.txt'}, "
          f"{out / 'report.png'}")
    return EXIT_OK


def cmd_health(ctx: _Context) -> int:
    provider = ctx.provider()
    status = healthcheck(provider)
    payload = {"provider": {"kind": status.kind, "dim": status.dim,
                            "reachable": status.reachable,
                            "detail": status.detail}}
    endpoint = ctx.config["generation"]["endpoint"]
    if endpoint:
        client = GenerationClient(endpoint, timeout_ms=2000, retries=0)
        try:
            client.generate("health probe", "health")
            payload["generation"] = {"endpoint": endpoint, "reachable": True}
        except TransportError as exc:
            payload["generation"] = {"endpoint": endpoint, "reachable": False,
                                     "detail": str(exc)}
    print(json.dumps(payload, indent=2))
    return EXIT_OK


_COMMANDS = {
    "ingest": cmd_ingest,
    "diff": cmd_diff,
    "explain": cmd_explain,
    "template": cmd_template,
    "negatives": cmd_negatives,
    "score": cmd_score,
    "train-eval": cmd_train_eval,
    "rank": cmd_rank,
    "simulate": cmd_simulate,
    "augment": cmd_augment,
    "metrics": cmd_metrics,
    "health": cmd_health,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else EXIT_USAGE
    ctx = None
    try:
        ctx = _Context(args)
        return _COMMANDS[args.command](ctx)
    except TransportError as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except (ConfigError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
