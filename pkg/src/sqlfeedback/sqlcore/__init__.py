"""Clause-structured SQL: parsing, rendering, canonical comparison."""

from sqlfeedback.sqlcore.ast import (
    AGGREGATORS,
    OPERATORS,
    ColumnRef,
    Condition,
    ConditionGroup,
    FromClause,
    JoinCondition,
    Literal,
    OrderBy,
    Query,
    SelectItem,
    render_condition,
    render_select_item,
    render_sql,
)
from sqlfeedback.sqlcore.compare import canonicalize, exact_set_match, match_key
from sqlfeedback.sqlcore.parser import (
    SqlBindingError,
    SqlSyntaxError,
    parse_condition_fragment,
    parse_select_item_fragment,
    parse_sql,
)

__all__ = [
    "AGGREGATORS",
    "OPERATORS",
    "ColumnRef",
    "Condition",
    "ConditionGroup",
    "FromClause",
    "JoinCondition",
    "Literal",
    "OrderBy",
    "Query",
    "SelectItem",
    "SqlBindingError",
    "SqlSyntaxError",
    "canonicalize",
    "exact_set_match",
    "match_key",
    "parse_condition_fragment",
    "parse_select_item_fragment",
    "parse_sql",
    "render_condition",
    "render_select_item",
    "render_sql",
]
