"""Independent brute-force oracles the implementation is checked against.

These deliberately avoid the library's canonicalize/render machinery:
queries are compared as nested multisets, assignments by permutation
enumeration, and edit counts by exhaustive pairing.
"""

from __future__ import annotations

from collections import Counter
from itertools import permutations

from sqlfeedback.sqlcore.ast import Condition, ConditionGroup, Query


def _lit_sig(value):
    from sqlfeedback.sqlcore.ast import Literal
    if isinstance(value, Query):
        return ("subquery", query_signature(value))
    if isinstance(value, tuple):
        return ("set", frozenset(Counter(_lit_sig(v) for v in value).items()))
    assert isinstance(value, Literal)
    try:
        # quoted numeric strings compare as numbers (spec'd value rule)
        return ("num", float(value.raw))
    except ValueError:
        return ("str", value.raw.casefold())


def _col_sig(col):
    return ((col.table or "").lower(), col.column.lower())


def _item_sig(item):
    arith = None
    if item.arithmetic is not None:
        arith = (item.arithmetic[0], _col_sig(item.arithmetic[1]))
    return (item.aggregator, item.distinct_inner, _col_sig(item.column), arith)


def _cond_sig(node):
    if isinstance(node, ConditionGroup):
        children = frozenset(Counter(_cond_sig(c) for c in node.children).items())
        return ("group", node.connector, children)
    assert isinstance(node, Condition)
    agg, col = node.operand
    second = _lit_sig(node.second_value) if node.second_value is not None else None
    return ("atom", agg, _col_sig(col), node.operator, _lit_sig(node.value), second)


def query_signature(query: Query):
    """Order-independent structural signature (joins excluded, matching the
    library's set-match scope)."""
    select = frozenset(Counter(_item_sig(i) for i in query.select_items).items())
    tables = frozenset(Counter(t.lower() for t in query.from_clause.tables).items())
    where = _cond_sig(query.where) if query.where is not None else None
    group = frozenset(Counter(_col_sig(c) for c in query.group_by).items())
    having = _cond_sig(query.having) if query.having is not None else None
    order = None
    if query.order_by is not None:
        order = (tuple((agg, _col_sig(col)) for agg, col in query.order_by.keys),
                 query.order_by.direction)
    set_op = None
    if query.set_op is not None:
        set_op = (query.set_op[0], query_signature(query.set_op[1]))
    return (select, query.select_distinct, tables, where, group, having,
            order, query.limit, set_op)


def oracle_set_match(a: Query, b: Query) -> bool:
    return query_signature(a) == query_signature(b)


def oracle_assignment_max(matrix) -> float:
    """Exhaustive-permutation maximum one-to-one assignment total."""
    n, m = matrix.shape
    if n <= m:
        return max(sum(matrix[i, perm[i]] for i in range(n))
                   for perm in permutations(range(m), n))
    return max(sum(matrix[perm[j], j] for j in range(m))
               for perm in permutations(range(n), m))


def _multiset_delta(wrong: Counter, gold: Counter) -> tuple[int, int]:
    removed = sum((wrong - gold).values())
    added = sum((gold - wrong).values())
    return removed, added


def _min_pair_cost(removed: int, added: int) -> int:
    """Exhaustive minimum edits over all replace pairings: pairing k items
    costs (removed + added - k), minimized at k = min(removed, added)."""
    if removed == 0 or added == 0:
        return removed + added
    best = removed + added
    for paired in range(1, min(removed, added) + 1):
        best = min(best, removed + added - paired)
    return best


def oracle_min_edit_count(wrong: Query, gold: Query) -> int:
    """Brute-force minimum clause-level edit count between two queries,
    under the same clause decomposition the engine uses."""
    total = 0
    total += _min_pair_cost(*_multiset_delta(
        Counter(_item_sig(i) for i in wrong.select_items),
        Counter(_item_sig(i) for i in gold.select_items)))
    total += _min_pair_cost(*_multiset_delta(
        Counter(t.lower() for t in wrong.from_clause.tables),
        Counter(t.lower() for t in gold.from_clause.tables)))
    if wrong.select_distinct != gold.select_distinct:
        total += 1

    def top_items(node):
        if node is None:
            return Counter()
        children = node.children if isinstance(node, ConditionGroup) else (node,)
        return Counter(_cond_sig(c) for c in children)

    def connector(node):
        return node.connector if isinstance(node, ConditionGroup) else None

    for wrong_node, gold_node in ((wrong.where, gold.where),
                                  (wrong.having, gold.having)):
        if connector(wrong_node) and connector(gold_node) \
                and connector(wrong_node) != connector(gold_node):
            total += 1
        total += _min_pair_cost(*_multiset_delta(top_items(wrong_node),
                                                 top_items(gold_node)))

    total += _min_pair_cost(*_multiset_delta(
        Counter(_col_sig(c) for c in wrong.group_by),
        Counter(_col_sig(c) for c in gold.group_by)))

    def order_sig(query):
        if query.order_by is None and query.limit is None:
            return None
        order = None
        if query.order_by is not None:
            order = (tuple((agg, _col_sig(col))
                           for agg, col in query.order_by.keys),
                     query.order_by.direction)
        return (order, query.limit)

    if order_sig(wrong) != order_sig(gold):
        total += 1

    def setop_sig(query):
        if query.set_op is None:
            return None
        return (query.set_op[0], query_signature(query.set_op[1]))

    if setop_sig(wrong) != setop_sig(gold):
        total += 1
    return total
