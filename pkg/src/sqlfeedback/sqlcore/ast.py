"""Immutable AST for the Spider-subset SQL grammar, plus canonical rendering.

Every node renders to text in two modes: ``normalized=False`` produces the
pretty SQL form (literals verbatim), ``normalized=True`` produces the key
used for sorting and set-match comparison (numbers normalized, strings
casefolded). Columns are table-qualified only in multi-table blocks, which
is the Spider surface convention.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

AGGREGATORS = ("none", "max", "min", "count", "sum", "avg")

OPERATORS = (
    "=",
    "!=",
    "<",
    ">",
    "<=",
    ">=",
    "between",
    "in",
    "not in",
    "like",
    "not like",
)

ARITH_OPS = ("+", "-", "*", "/")


@dataclass(frozen=True)
class ColumnRef:
    """A resolved column reference; ``column == "*"`` is the star."""

    table: Optional[str]
    column: str

    @property
    def is_star(self) -> bool:
        return self.column == "*"

    def render(self, normalized: bool = False, qualify: bool = True) -> str:
        if self.is_star:
            return "*"
        if qualify and self.table:
            text = f"{self.table}.{self.column}"
        else:
            text = self.column
        return text.lower() if normalized else text


@dataclass(frozen=True)
class Literal:
    """A SQL literal with its verbatim text and a coarse kind."""

    raw: str
    kind: str  # "number" | "string"

    def render(self, normalized: bool = False, qualify: bool = True) -> str:
        if normalized:
            # a quoted numeric string compares equal to the bare number
            try:
                return repr(float(self.raw))
            except ValueError:
                return f'"{self.raw.casefold()}"'
        if self.kind == "number":
            return self.raw
        return f'"{self.raw}"'


@dataclass(frozen=True)
class SelectItem:
    column: ColumnRef
    aggregator: str = "none"
    distinct_inner: bool = False
    arithmetic: Optional[tuple[str, ColumnRef]] = None

    def render(self, normalized: bool = False, qualify: bool = True) -> str:
        inner = self.column.render(normalized, qualify)
        if self.arithmetic is not None:
            op, second = self.arithmetic
            inner = f"{inner} {op} {second.render(normalized, qualify)}"
        if self.distinct_inner:
            inner = f"DISTINCT {inner}"
        if self.aggregator != "none":
            return f"{self.aggregator}({inner})"
        return inner


@dataclass(frozen=True)
class JoinCondition:
    left: ColumnRef
    right: ColumnRef

    def render(self, normalized: bool = False, qualify: bool = True) -> str:
        return f"{self.left.render(normalized, True)} = {self.right.render(normalized, True)}"


@dataclass(frozen=True)
class FromClause:
    tables: tuple[str, ...]
    joins: tuple[JoinCondition, ...] = ()

    def render(self, normalized: bool = False) -> str:
        tables = [t.lower() if normalized else t for t in self.tables]
        text = " JOIN ".join(tables)
        if self.joins:
            conds = " AND ".join(j.render(normalized) for j in self.joins)
            text = f"{text} ON {conds}"
        return text


ConditionValue = Union[Literal, tuple, "Query"]


@dataclass(frozen=True)
class Condition:
    """An atomic comparison; ``value`` is a literal, a literal tuple for
    IN lists, or a nested :class:`Query`."""

    operand: tuple[str, ColumnRef]  # (aggregator, column)
    operator: str
    value: ConditionValue
    second_value: Optional[Literal] = None  # upper bound of BETWEEN

    @property
    def has_subquery(self) -> bool:
        return isinstance(self.value, Query)

    def render_operand(self, normalized: bool = False, qualify: bool = True) -> str:
        agg, col = self.operand
        if agg != "none":
            return f"{agg}({col.render(normalized, qualify)})"
        return col.render(normalized, qualify)

    def render(self, normalized: bool = False, qualify: bool = True) -> str:
        operand = self.render_operand(normalized, qualify)
        op = self.operator
        if op == "between":
            low = self.value.render(normalized)
            high = self.second_value.render(normalized)
            return f"{operand} BETWEEN {low} AND {high}"
        if op in ("in", "not in"):
            kw = op.upper()
            if isinstance(self.value, Query):
                return f"{operand} {kw} ({render_sql(self.value, normalized)})"
            values = list(self.value)
            if normalized:
                items = sorted(v.render(True) for v in values)
            else:
                items = [v.render(False) for v in values]
            return f"{operand} {kw} ({', '.join(items)})"
        if op in ("like", "not like"):
            return f"{operand} {op.upper()} {self.value.render(normalized)}"
        if isinstance(self.value, Query):
            return f"{operand} {op} ({render_sql(self.value, normalized)})"
        return f"{operand} {op} {self.value.render(normalized)}"


@dataclass(frozen=True)
class ConditionGroup:
    """AND/OR node over two or more children (binary-flattened)."""

    connector: str  # "and" | "or"
    children: tuple["ConditionNode", ...]

    def render(self, normalized: bool = False, qualify: bool = True) -> str:
        parts = []
        for child in self.children:
            text = child.render(normalized, qualify)
            if isinstance(child, ConditionGroup):
                text = f"({text})"
            parts.append(text)
        return f" {self.connector.upper()} ".join(parts)


ConditionNode = Union[Condition, ConditionGroup]


@dataclass(frozen=True)
class OrderBy:
    keys: tuple[tuple[str, ColumnRef], ...]  # (aggregator, column)
    direction: str = "asc"

    def render_keys(self, normalized: bool = False, qualify: bool = True) -> str:
        parts = []
        for agg, col in self.keys:
            text = col.render(normalized, qualify)
            if agg != "none":
                text = f"{agg}({text})"
            parts.append(text)
        return ", ".join(parts)

    def render(self, normalized: bool = False, qualify: bool = True) -> str:
        return f"{self.render_keys(normalized, qualify)} {self.direction.upper()}"


@dataclass(frozen=True)
class Query:
    """One SELECT block, optionally chained to another via a set operator."""

    select_items: tuple[SelectItem, ...]
    from_clause: FromClause
    select_distinct: bool = False
    where: Optional[ConditionNode] = None
    group_by: tuple[ColumnRef, ...] = ()
    having: Optional[ConditionNode] = None
    order_by: Optional[OrderBy] = None
    limit: Optional[int] = None
    set_op: Optional[tuple[str, "Query"]] = None
    schema_id: Optional[str] = field(default=None, compare=False)

    @property
    def qualify(self) -> bool:
        """Whether column references in this block need table qualifiers."""
        return len(self.from_clause.tables) > 1


def render_select_item(item: SelectItem, normalized: bool = False,
                       qualify: bool = False) -> str:
    return item.render(normalized, qualify)


def render_condition(node: ConditionNode, normalized: bool = False,
                     qualify: bool = False) -> str:
    return node.render(normalized, qualify)


def render_order_limit(order_by: Optional[OrderBy], limit: Optional[int],
                       normalized: bool = False, qualify: bool = False) -> str:
    """Render the combined ORDER BY ... LIMIT ... unit as one item."""
    parts = []
    if order_by is not None:
        parts.append(f"ORDER BY {order_by.render(normalized, qualify)}")
    if limit is not None:
        parts.append(f"LIMIT {limit}")
    return " ".join(parts)


def render_sql(query: Query, normalized: bool = False) -> str:
    """Render a query back to SQL text in the canonical surface form."""
    qualify = query.qualify
    parts = ["SELECT"]
    if query.select_distinct:
        parts.append("DISTINCT")
    parts.append(", ".join(i.render(normalized, qualify) for i in query.select_items))
    parts.append("FROM")
    parts.append(query.from_clause.render(normalized))
    if query.where is not None:
        parts.append("WHERE")
        parts.append(query.where.render(normalized, qualify))
    if query.group_by:
        parts.append("GROUP BY")
        parts.append(", ".join(c.render(normalized, qualify) for c in query.group_by))
    if query.having is not None:
        parts.append("HAVING")
        parts.append(query.having.render(normalized, qualify))
    if query.order_by is not None:
        parts.append("ORDER BY")
        parts.append(query.order_by.render(normalized, qualify))
    if query.limit is not None:
        parts.append("LIMIT")
        parts.append(str(query.limit))
    text = " ".join(parts)
    if query.set_op is not None:
        op, right = query.set_op
        text = f"{text} {op.upper()} {render_sql(right, normalized)}"
    return text
