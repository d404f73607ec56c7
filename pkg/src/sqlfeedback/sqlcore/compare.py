"""Canonical ordering and value-aware exact set match over query ASTs."""

from __future__ import annotations

from dataclasses import replace
from typing import Optional

from sqlfeedback.sqlcore.ast import (
    ColumnRef,
    Condition,
    ConditionGroup,
    ConditionNode,
    FromClause,
    JoinCondition,
    Query,
    render_sql,
)


def canonicalize(query: Query) -> Query:
    """Sort clause item lists into a stable total order (by normalized text).

    ORDER BY keys are a sequence, not a set, and are left in place. The
    operation is idempotent.
    """
    select_items = tuple(sorted(query.select_items, key=lambda i: i.render(True)))
    tables = tuple(sorted(query.from_clause.tables, key=str.lower))
    joins = tuple(sorted((_normalize_join(j) for j in query.from_clause.joins),
                         key=lambda j: j.render(True)))
    where = _canonicalize_tree(query.where)
    group_by = tuple(sorted(query.group_by, key=lambda c: c.render(True)))
    having = _canonicalize_tree(query.having)
    set_op = query.set_op
    if set_op is not None:
        set_op = (set_op[0], canonicalize(set_op[1]))
    return replace(
        query,
        select_items=select_items,
        from_clause=FromClause(tables, joins),
        where=where,
        group_by=group_by,
        having=having,
        set_op=set_op,
    )


def _normalize_join(join: JoinCondition) -> JoinCondition:
    left, right = join.left, join.right
    if left.render(True) > right.render(True):
        left, right = right, left
    return JoinCondition(left, right)


def _canonicalize_tree(node: Optional[ConditionNode]) -> Optional[ConditionNode]:
    if node is None:
        return None
    if isinstance(node, ConditionGroup):
        children = tuple(_canonicalize_tree(c) for c in node.children)
        children = tuple(sorted(children, key=lambda c: c.render(True)))
        return ConditionGroup(node.connector, children)
    if isinstance(node.value, Query):
        return replace(node, value=canonicalize(node.value))
    return node


def match_key(query: Query) -> str:
    """The normalized comparison key of a query.

    Join conditions are excluded: in the Spider subset they are derivable
    from foreign keys, and equivalent queries frequently spell them in
    different alias orders.
    """
    stripped = _strip_joins(query)
    return render_sql(canonicalize(stripped), normalized=True)


def _strip_joins(query: Query) -> Query:
    from_clause = FromClause(query.from_clause.tables, ())
    where = _strip_tree(query.where)
    having = _strip_tree(query.having)
    set_op = query.set_op
    if set_op is not None:
        set_op = (set_op[0], _strip_joins(set_op[1]))
    return replace(query, from_clause=from_clause, where=where,
                   having=having, set_op=set_op)


def _strip_tree(node: Optional[ConditionNode]) -> Optional[ConditionNode]:
    if node is None:
        return None
    if isinstance(node, ConditionGroup):
        return ConditionGroup(node.connector,
                              tuple(_strip_tree(c) for c in node.children))
    if isinstance(node.value, Query):
        return replace(node, value=_strip_joins(node.value))
    return node


def exact_set_match(a: Query, b: Query) -> bool:
    """Value-aware exact set match: order-insensitive clause equality with
    numeric literals compared numerically and strings case-insensitively."""
    return match_key(a) == match_key(b)
