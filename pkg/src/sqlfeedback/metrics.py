"""Error-correction metric suite over prediction records.

Records with a zero initial edit distance (the parser was already right)
are excluded from the progress/edit metrics and surface through E2E
instead; an unparseable corrected parse counts as incorrect with an
unchanged distance.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from decimal import ROUND_HALF_EVEN, Decimal
from typing import Optional, Sequence

from sqlfeedback import edits as edit_engine
from sqlfeedback.corpus import FeedbackExample
from sqlfeedback.schema import SchemaStore
from sqlfeedback.sqlcore import exact_set_match, parse_sql


@dataclass(frozen=True)
class CorrectionRecord:
    example_id: str
    correct: bool
    init_distance: int
    fixed_distance: int
    parse_failed: bool = False


@dataclass(frozen=True)
class MetricsReport:
    correction_accuracy: float
    progress: float
    edit_dec: float
    edit_inc: float
    e2e: Optional[float]
    n: int
    n_progress: int  # records included in progress/edit metrics
    parse_failures: int = 0


def build_records(examples: Sequence[FeedbackExample],
                  predictions: dict[str, str],
                  schema_store: SchemaStore) -> list[CorrectionRecord]:
    """Join examples with predicted fixed parses and measure edit distances."""
    records = []
    for example in examples:
        if example.example_id not in predictions:
            continue
        schema = schema_store.get(example.db_id)
        wrong = parse_sql(example.wrong_parse, schema)
        gold = parse_sql(example.gold_parse, schema)
        init_distance = edit_engine.edit_distance(wrong, gold, schema)
        fixed_text = predictions[example.example_id]
        try:
            fixed = parse_sql(fixed_text, schema)
        except ValueError:
            records.append(CorrectionRecord(example.example_id, False,
                                            init_distance, init_distance,
                                            parse_failed=True))
            continue
        records.append(CorrectionRecord(
            example.example_id,
            exact_set_match(fixed, gold),
            init_distance,
            edit_engine.edit_distance(fixed, gold, schema)))
    return records


def correction_accuracy(records: Sequence[CorrectionRecord]) -> float:
    """Percentage of records whose corrected parse set-matches the gold."""
    if not records:
        raise ValueError("no records")
    return 100.0 * sum(1 for r in records if r.correct) / len(records)


def edit_dec_inc(records: Sequence[CorrectionRecord]) -> tuple[float, float]:
    """Percentages of records whose required edits decreased / increased."""
    included = [r for r in records if r.init_distance > 0]
    if not included:
        raise ValueError("no records with a nonzero initial distance")
    dec = sum(1 for r in included if r.fixed_distance < r.init_distance)
    inc = sum(1 for r in included if r.fixed_distance > r.init_distance)
    return 100.0 * dec / len(included), 100.0 * inc / len(included)


def progress(records: Sequence[CorrectionRecord]) -> float:
    """Mean relative edit reduction, in percent; may be negative."""
    included = [r for r in records if r.init_distance > 0]
    if not included:
        raise ValueError("no records with a nonzero initial distance")
    # fsum is exactly rounded, keeping the metric permutation-invariant
    total = math.fsum((r.init_distance - r.fixed_distance) / r.init_distance
                      for r in included)
    return 100.0 * total / len(included)


def e2e(initial_correct: int, corrected: int, total: int) -> float:
    """End-to-end parser accuracy with interactive correction."""
    if min(initial_correct, corrected, total) < 0:
        raise ValueError("counts must be non-negative")
    if initial_correct + corrected > total:
        raise ValueError("correct counts exceed the total")
    if total == 0:
        raise ValueError("total must be positive")
    return 100.0 * (initial_correct + corrected) / total


def report(records: Sequence[CorrectionRecord],
           e2e_counts: Optional[tuple[int, int, int]] = None) -> MetricsReport:
    """Aggregate every metric over the record set."""
    if not records:
        raise ValueError("no records")
    included = [r for r in records if r.init_distance > 0]
    e2e_value = e2e(*e2e_counts) if e2e_counts is not None else None
    dec, inc = edit_dec_inc(records) if included else (0.0, 0.0)
    return MetricsReport(
        correction_accuracy=correction_accuracy(records),
        progress=progress(records) if included else 0.0,
        edit_dec=dec,
        edit_inc=inc,
        e2e=e2e_value,
        n=len(records),
        n_progress=len(included),
        parse_failures=sum(1 for r in records if r.parse_failed),
    )


def round2(value: float) -> float:
    """Two decimal places, round-half-even (report formatting rule)."""
    return float(Decimal(repr(value)).quantize(Decimal("0.01"),
                                               rounding=ROUND_HALF_EVEN))


def render_text(result: MetricsReport) -> str:
    """Plain-text table mirroring the headline result layout."""
    headers = ["Corr Acc.", "Progress", "Edit-Dec", "Edit-Inc", "E2E"]
    values = [
        f"{round2(result.correction_accuracy):.2f}",
        f"{round2(result.progress):.2f}",
        f"{round2(result.edit_dec):.2f}",
        f"{round2(result.edit_inc):.2f}",
        f"{round2(result.e2e):.2f}" if result.e2e is not None else "—",
    ]
    widths = [max(len(h), len(v)) for h, v in zip(headers, values)]
    header_line = "  ".join(h.rjust(w) for h, w in zip(headers, widths))
    value_line = "  ".join(v.rjust(w) for v, w in zip(values, widths))
    footer = (f"n={result.n} (progress/edit over {result.n_progress}, "
              f"unparseable fixes: {result.parse_failures})")
    return "\n".join([header_line, value_line, footer])


def render_json(result: MetricsReport) -> str:
    payload = {
        "correction_accuracy": round2(result.correction_accuracy),
        "progress": round2(result.progress),
        "edit_dec": round2(result.edit_dec),
        "edit_inc": round2(result.edit_inc),
        "e2e": round2(result.e2e) if result.e2e is not None else None,
        "n": result.n,
        "n_progress": result.n_progress,
        "parse_failures": result.parse_failures,
    }
    return json.dumps(payload, indent=2, ensure_ascii=False)
