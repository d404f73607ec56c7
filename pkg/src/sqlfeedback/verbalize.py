"""Natural-language rendering: step-wise explanations, template feedback
with primary/secondary spans, schema-mention matching, negative sampling.

The template inventory ships as a data file and can be overridden through
configuration; phrases are built from the rendered edit items, so surface
qualification (``model_list.model`` vs ``model``) is preserved.
"""

from __future__ import annotations

import difflib
import json
import random
import re
from dataclasses import dataclass, replace as dc_replace
from importlib import resources
from pathlib import Path
from typing import Optional

from sqlfeedback.edits import Edit, EditScript, classify_structural
from sqlfeedback.embeddings import tokenize
from sqlfeedback.schema import DatabaseSchema
from sqlfeedback.sqlcore.ast import (
    ColumnRef,
    Condition,
    ConditionGroup,
    ConditionNode,
    OrderBy,
    Query,
    SelectItem,
    render_sql,
)
from sqlfeedback.sqlcore.parser import (
    parse_condition_fragment,
    parse_order_limit_fragment,
    parse_select_item_fragment,
)

DEFAULT_FUZZY_THRESHOLD = 0.85

_AGG_WORDS = {
    "count": "number of",
    "sum": "sum of",
    "avg": "average",
    "max": "maximum",
    "min": "minimum",
}

_OP_WORDS = {
    "=": "equals",
    "!=": "not equals",
    "<": "less than",
    ">": "greater than",
    "<=": "less than or equals",
    ">=": "greater than or equals",
    "like": "like",
    "not like": "not like",
}

_ARITH_WORDS = {"+": "plus", "-": "minus", "*": "times", "/": "divided by"}

_NUMBER_RE = re.compile(r"^-?\d+(\.\d+)?$")


class UnsupportedEditError(ValueError):
    """An edit with no template instantiation (structural or unknown)."""


class NegativeSamplingUnavailable(Exception):
    """Signals that a feedback sentence has nothing replaceable."""


def _words(name: str) -> str:
    return name.lower().replace("_", " ")


# --------------------------------------------------------------------------
# phrase builders (SQL fragments -> NL)
# --------------------------------------------------------------------------


def _phrase_column(ref: ColumnRef, qualify: bool = True) -> str:
    if ref.is_star:
        return "all columns"
    if qualify and ref.table:
        return f"{_words(ref.table)} 's {_words(ref.column)}"
    return _words(ref.column)


def _phrase_agg(agg: str, distinct_inner: bool, inner: str, star: bool) -> str:
    if agg == "count":
        if star:
            return "number of rows"
        if distinct_inner:
            return f"number of different {inner}"
        return f"number of {inner}"
    if agg in _AGG_WORDS:
        return f"{_AGG_WORDS[agg]} {inner}"
    if distinct_inner:
        return f"different {inner}"
    return inner


def _phrase_select_item(item: SelectItem, qualify: bool = True) -> str:
    inner = _phrase_column(item.column, qualify)
    if item.arithmetic is not None:
        op, second = item.arithmetic
        inner = f"{inner} {_ARITH_WORDS[op]} {_phrase_column(second, qualify)}"
    return _phrase_agg(item.aggregator, item.distinct_inner, inner,
                       item.column.is_star)


def _phrase_operand(operand: tuple[str, ColumnRef], qualify: bool = True) -> str:
    agg, col = operand
    return _phrase_agg(agg, False, _phrase_column(col, qualify), col.is_star)


def _phrase_value(value, subquery_phrase: str = "the results of the subquery") -> str:
    if isinstance(value, Query):
        return subquery_phrase
    if isinstance(value, tuple):
        return ", ".join(v.raw for v in value)
    return value.raw


def _phrase_condition(node: ConditionNode, qualify: bool = True,
                      subquery_refs: Optional[dict[int, int]] = None) -> str:
    if isinstance(node, ConditionGroup):
        parts = [_phrase_condition(c, qualify, subquery_refs)
                 for c in node.children]
        return f" {node.connector} ".join(parts)
    operand = _phrase_operand(node.operand, qualify)
    op = node.operator
    sub_phrase = "the results of the subquery"
    if subquery_refs is not None and isinstance(node.value, Query):
        step = subquery_refs.get(id(node.value))
        if step is not None:
            sub_phrase = f"the results of step {step}"
    if op == "between":
        return f"{operand} between {node.value.raw} and {node.second_value.raw}"
    if op == "in":
        return f"{operand} one of {_phrase_value(node.value, sub_phrase)}"
    if op == "not in":
        return f"{operand} not one of {_phrase_value(node.value, sub_phrase)}"
    return f"{operand} {_OP_WORDS[op]} {_phrase_value(node.value, sub_phrase)}"


def _phrase_order_unit(order_by: Optional[OrderBy], limit: Optional[int],
                       qualify: bool = True) -> tuple[str, Optional[str]]:
    """Returns (normal phrase, top phrase); the top phrase covers the
    single-key LIMIT 1 idiom ("the largest mpg")."""
    if order_by is None:
        if limit is None:
            return "", None
        plural = "s" if limit != 1 else ""
        return f"limited to the first {limit} result{plural}", None
    keys = ", ".join(
        _phrase_agg(agg, False, _phrase_column(col, qualify), col.is_star)
        for agg, col in order_by.keys)
    direction = "descending" if order_by.direction == "desc" else "ascending"
    top = None
    if limit == 1 and len(order_by.keys) == 1:
        extreme = "largest" if order_by.direction == "desc" else "smallest"
        top = f"{extreme} {keys}"
    phrase = f"{direction} by {keys}"
    if limit is not None and top is None:
        plural = "s" if limit != 1 else ""
        phrase = f"{phrase} limited to the first {limit} result{plural}"
    return phrase, top


# --------------------------------------------------------------------------
# template feedback
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Span:
    text: str
    weight_class: str  # "primary" | "secondary"


@dataclass(frozen=True)
class TemplateFeedback:
    spans: tuple[Span, ...]
    source_edits: Optional[EditScript] = None

    def __post_init__(self):
        if not any(s.weight_class == "primary" for s in self.spans):
            raise ValueError("template feedback needs at least one primary span")

    @property
    def text(self) -> str:
        return " ".join(span.text for span in self.spans)

    def tokens(self) -> list[str]:
        return tokenize(self.text)

    def token_weights(self) -> list[str]:
        """Weight class of every token of the concatenated spans."""
        weights: list[str] = []
        for span in self.spans:
            weights.extend(span.weight_class for _ in tokenize(span.text))
        return weights

    @classmethod
    def single_span(cls, text: str) -> "TemplateFeedback":
        """Wrap free text as one all-primary reference span."""
        return cls((Span(text, "primary"),), None)


_TEMPLATE_CACHE: dict[str, dict] = {}


def load_templates(path: Optional[str | Path] = None) -> dict:
    """Template inventory: packaged data file, or an override path."""
    key = str(path) if path else "__builtin__"
    if key in _TEMPLATE_CACHE:
        return _TEMPLATE_CACHE[key]
    if path:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    else:
        source = resources.files("sqlfeedback").joinpath("data/templates.json")
        payload = json.loads(source.read_text(encoding="utf-8"))
    payload = {k: v for k, v in payload.items() if not k.startswith("_")}
    _TEMPLATE_CACHE[key] = payload
    return payload


def _spans_from_template(template: dict, new: str = "", old: str = ""
                         ) -> list[Span]:
    primary = template["primary"].replace("{new}", new).replace("{old}", old)
    spans = [Span(primary, "primary")]
    secondary = template.get("secondary")
    if secondary:
        spans.append(Span(secondary.replace("{new}", new).replace("{old}", old),
                          "secondary"))
    return spans


def template_feedback(script: EditScript, schema: DatabaseSchema,
                      templates: Optional[dict] = None) -> TemplateFeedback:
    """Instantiate one template sentence per edit, Table-style wording.

    Replace templates put the corrective content in a primary span and the
    "in place of ..." tail in a secondary span; adds/removes are fully
    primary. Structural scripts are not verbalizable.
    """
    if script.is_empty:
        raise ValueError("cannot verbalize an empty edit script")
    if classify_structural(script) is not None:
        raise UnsupportedEditError("structural scripts have no template feedback")
    inventory = templates if templates is not None else load_templates()
    spans: list[Span] = []
    for edit in script:
        spans.extend(_instantiate_edit(edit, inventory))
    return TemplateFeedback(tuple(spans), script)


def _instantiate_edit(edit: Edit, inventory: dict) -> list[Span]:
    def pick(template_id: str) -> dict:
        if template_id not in inventory:
            raise UnsupportedEditError(
                f"no template for {edit.clause}/{edit.kind} ({template_id})")
        return inventory[template_id]

    clause, kind = edit.clause, edit.kind

    if clause == "distinct_flag" or "DISTINCT" in {edit.old_item, edit.new_item}:
        detail = (edit.detail or "").lower()
        adding = kind == "add" or detail.startswith("add")
        return _spans_from_template(pick("distinct_add" if adding else
                                         "distinct_remove"))

    if clause == "logic_connector":
        detail = (edit.detail or "").lower().replace("→", "->")
        if kind != "flip" or "->" not in detail:
            raise UnsupportedEditError(f"unsupported connector edit: {edit}")
        target = detail.split("->")[-1].strip()
        if target == "or":
            return _spans_from_template(pick("connector_to_or"))
        if target == "and":
            return _spans_from_template(pick("connector_to_and"))
        raise UnsupportedEditError(f"unknown connector target '{target}'")

    if kind == "flip":
        raise UnsupportedEditError(f"no flip template for clause '{clause}'")

    if clause == "from":
        if kind == "replace":
            return _spans_from_template(pick("from_replace"),
                                        new=_words(edit.new_item),
                                        old=_words(edit.old_item))
        if kind == "add":
            detail = edit.detail or ""
            if detail.startswith("besides "):
                others = [_words(t.strip())
                          for t in detail[len("besides "):].split(",")]
                return _spans_from_template(pick("from_add"),
                                            new=_words(edit.new_item),
                                            old=" and ".join(others))
            return _spans_from_template(pick("from_add_bare"),
                                        new=_words(edit.new_item))
        return _spans_from_template(pick("from_remove"), old=_words(edit.old_item))

    if clause == "select":
        new = _phrase_select_item(parse_select_item_fragment(edit.new_item)) \
            if edit.new_item else ""
        old = _phrase_select_item(parse_select_item_fragment(edit.old_item)) \
            if edit.old_item else ""
        return _spans_from_template(pick(f"select_{kind}"), new=new, old=old)

    if clause in ("where", "having"):
        new_node = parse_condition_fragment(edit.new_item) if edit.new_item else None
        old_node = parse_condition_fragment(edit.old_item) if edit.old_item else None
        if clause == "having" and kind == "replace" \
                and _operand_only_change(old_node, new_node):
            return _spans_from_template(
                pick("having_operand_replace"),
                new=_phrase_operand(new_node.operand),
                old=_phrase_operand(old_node.operand))
        new = _phrase_condition(new_node) if new_node is not None else ""
        old = _phrase_condition(old_node) if old_node is not None else ""
        return _spans_from_template(pick(f"{clause}_{kind}"), new=new, old=old)

    if clause == "group_by":
        new = _phrase_select_item(parse_select_item_fragment(edit.new_item)) \
            if edit.new_item else ""
        old = _phrase_select_item(parse_select_item_fragment(edit.old_item)) \
            if edit.old_item else ""
        return _spans_from_template(pick(f"group_{kind}"), new=new, old=old)

    if clause == "order_limit":
        if kind == "remove":
            return _spans_from_template(pick("order_remove"))
        new_order, new_limit = parse_order_limit_fragment(edit.new_item)
        new_phrase, new_top = _phrase_order_unit(new_order, new_limit)
        if kind == "add":
            if new_top is not None:
                return _spans_from_template(pick("order_top_add"), new=new_top)
            return _spans_from_template(pick("order_add"), new=new_phrase)
        old_order, old_limit = parse_order_limit_fragment(edit.old_item)
        old_phrase, _ = _phrase_order_unit(old_order, old_limit)
        if new_top is not None:
            return _spans_from_template(pick("order_top_replace"),
                                        new=new_top, old=old_phrase)
        return _spans_from_template(pick("order_replace"),
                                    new=new_phrase, old=old_phrase)

    if clause == "subquery" and kind == "replace":
        return _spans_from_template(pick("subquery_replace"),
                                    new=edit.new_item, old=edit.old_item)

    raise UnsupportedEditError(f"unsupported edit {clause}/{kind}")


def _operand_only_change(old_node, new_node) -> bool:
    """Same operator and value on both sides, different operand."""
    if not isinstance(old_node, Condition) or not isinstance(new_node, Condition):
        return False
    if old_node.operator != new_node.operator:
        return False
    if isinstance(old_node.value, Query) or isinstance(new_node.value, Query):
        return False

    def value_key(value):
        if value is None:
            return None
        if isinstance(value, tuple):
            return tuple(v.render(True) for v in value)
        return value.render(True)

    return (value_key(old_node.value) == value_key(new_node.value)
            and value_key(old_node.second_value) == value_key(new_node.second_value)
            and old_node.render_operand(True, False)
            != new_node.render_operand(True, False))


# --------------------------------------------------------------------------
# explanations
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Explanation:
    steps: tuple[str, ...]
    step_refs: dict[int, str]  # 1-based step index -> rendered SQL block

    @property
    def text(self) -> str:
        return " , ".join(self.steps)


def explain(ast: Query, schema: DatabaseSchema) -> Explanation:
    """Deterministic step-wise NL rendering of a query.

    Single-block queries yield one unnumbered step; nested or set-operator
    queries yield one numbered step per subquery block plus one per
    combining operation, the final step referencing earlier ones.
    """
    steps: list[tuple[str, str]] = []
    _explain_query(ast, schema, steps)
    if len(steps) == 1:
        return Explanation((steps[0][0],), {1: steps[0][1]})
    formatted = tuple(f"Step {i}: {text}" for i, (text, _) in enumerate(steps, 1))
    refs = {i: sql for i, (_, sql) in enumerate(steps, 1)}
    return Explanation(formatted, refs)


def _explain_query(query: Query, schema: DatabaseSchema,
                   steps: list[tuple[str, str]]) -> int:
    subquery_refs: dict[int, int] = {}
    for sub in _nested_subqueries(query):
        subquery_refs[id(sub)] = _explain_query(sub, schema, steps)
    block = dc_replace(query, set_op=None)
    text = _block_text(block, subquery_refs)
    steps.append((text, render_sql(block)))
    block_index = len(steps)
    if query.set_op is not None:
        op, right = query.set_op
        right_index = _explain_query(right, schema, steps)
        combiner = {
            "union": (f"show the rows that are in the results of step "
                      f"{block_index} or in the results of step {right_index}"),
            "intersect": (f"show the rows that are in both the results of step "
                          f"{block_index} and the results of step {right_index}"),
            "except": (f"show the rows that are in the results of step "
                       f"{block_index} but not in the results of step "
                       f"{right_index}"),
        }[op]
        steps.append((combiner, render_sql(query)))
        return len(steps)
    return block_index


def _nested_subqueries(query: Query) -> list[Query]:
    found: list[Query] = []

    def walk(node: Optional[ConditionNode]) -> None:
        if node is None:
            return
        if isinstance(node, ConditionGroup):
            for child in node.children:
                walk(child)
            return
        if isinstance(node.value, Query):
            found.append(node.value)

    walk(query.where)
    walk(query.having)
    return found


def _block_text(query: Query, subquery_refs: dict[int, int]) -> str:
    qualify = query.qualify
    tables_phrase = " and ".join(f"{_words(t)} table"
                                 for t in query.from_clause.tables)
    items = query.select_items
    only_count_star = (len(items) == 1 and items[0].aggregator == "count"
                       and items[0].column.is_star)
    if only_count_star:
        text = f"find the number of rows in {tables_phrase}"
    else:
        phrases = ", ".join(_phrase_select_item(i, qualify) for i in items)
        if query.select_distinct:
            phrases = f"different {phrases}"
        text = f"find the {phrases} of {tables_phrase}"
    if query.where is not None:
        text += f" whose {_phrase_condition(query.where, qualify, subquery_refs)}"
    if query.group_by:
        cols = ", ".join(_phrase_column(c, qualify) for c in query.group_by)
        text += f" for each value of {cols}"
    if query.having is not None:
        text += f" whose {_phrase_condition(query.having, qualify, subquery_refs)}"
    order_phrase, top = _phrase_order_unit(query.order_by, query.limit, qualify)
    if top is not None:
        text += f" with the {top}"
    elif order_phrase:
        text += f" ordered {order_phrase}" if query.order_by is not None \
            else f" {order_phrase}"
    return text


# --------------------------------------------------------------------------
# schema mention matching and negative sampling
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SchemaItemRef:
    kind: str  # "table" | "column" | "value"
    name: str
    table: Optional[str] = None

    @property
    def words(self) -> str:
        return _words(self.name)


@dataclass(frozen=True)
class MentionSpan:
    token_start: int
    token_end: int  # exclusive
    schema_item: SchemaItemRef
    match_score: float


def _schema_items(schema: DatabaseSchema) -> list[SchemaItemRef]:
    items = [SchemaItemRef("table", t) for t in schema.table_names()]
    items.extend(SchemaItemRef("column", c, t) for t, c in schema.all_columns())
    return items


def match_schema_mentions(tokens: list[str], schema: DatabaseSchema,
                          threshold: float = DEFAULT_FUZZY_THRESHOLD
                          ) -> list[MentionSpan]:
    """Non-overlapping, longest-match-first fuzzy mentions of schema items
    (and literal number values) in a token sequence."""
    tokens = [t.lower() for t in tokens]
    items = _schema_items(schema)
    max_len = max((len(item.words.split()) for item in items), default=1)
    claimed: set[int] = set()
    mentions: list[MentionSpan] = []
    for length in range(min(max_len, len(tokens)), 0, -1):
        for start in range(0, len(tokens) - length + 1):
            end = start + length
            if any(i in claimed for i in range(start, end)):
                continue
            span_text = " ".join(tokens[start:end])
            if length == 1 and _NUMBER_RE.match(span_text):
                mentions.append(MentionSpan(
                    start, end, SchemaItemRef("value", span_text), 1.0))
                claimed.update(range(start, end))
                continue
            best_item = None
            best_score = threshold
            for item in items:
                score = difflib.SequenceMatcher(None, span_text, item.words).ratio()
                if score > best_score:
                    best_item = item
                    best_score = score
            if best_item is not None:
                mentions.append(MentionSpan(start, end, best_item, best_score))
                claimed.update(range(start, end))
    mentions.sort(key=lambda m: m.token_start)
    return mentions


def _replacement_pool(mention: MentionSpan, schema: DatabaseSchema) -> list[str]:
    item = mention.schema_item
    if item.kind == "table":
        return sorted({_words(t) for t in schema.table_names()
                       if _words(t) != item.words})
    if item.kind == "column":
        return sorted({_words(c) for _, c in schema.all_columns()
                       if _words(c) != item.words})
    return []  # values get generated numbers instead


def sample_negative(feedback: str, schema: DatabaseSchema,
                    rng: random.Random) -> str:
    """Corrupt a feedback sentence by swapping schema items/values.

    Every replaceable mention flips with probability 0.5 independently;
    at least one replacement is guaranteed (resampling until some flip
    takes effect). Deterministic for a given rng state.
    """
    tokens = tokenize(feedback)
    mentions = match_schema_mentions(tokens, schema)
    replaceable = []
    for mention in mentions:
        if mention.schema_item.kind == "value":
            replaceable.append((mention, None))
        else:
            pool = [words for words in _replacement_pool(mention, schema)
                    if words != " ".join(tokens[mention.token_start:mention.token_end])]
            if pool:
                replaceable.append((mention, pool))
    if not replaceable:
        raise NegativeSamplingUnavailable(
            "no schema mention or literal value to replace")
    for _ in range(100):
        flips = [rng.random() < 0.5 for _ in replaceable]
        if not any(flips):
            continue
        new_tokens = list(tokens)
        for (mention, pool), flipped in sorted(
                zip(replaceable, flips),
                key=lambda pair: -pair[0][0].token_start):
            if not flipped:
                continue
            if pool is None:
                original = mention.schema_item.name
                replacement = original
                while replacement == original:
                    replacement = str(rng.randrange(0, 10000))
            else:
                replacement = pool[rng.randrange(len(pool))]
            new_tokens[mention.token_start:mention.token_end] = replacement.split()
        result = " ".join(new_tokens)
        if result != " ".join(tokens):
            return result
    raise NegativeSamplingUnavailable("all candidate replacements were no-ops")
