"""Clause-level edit scripts between a wrong and a gold parse.

A script is an ordered list of atomic edits (replace / add / remove / flip)
such that applying it to the wrong AST yields an AST that exact-set-matches
the gold one. Items are carried as rendered text; structured nodes ride
along as non-compared payloads so apply() does not have to re-parse.
"""

from __future__ import annotations

import difflib
from dataclasses import dataclass, field, replace as dc_replace
from enum import Enum
from typing import Optional

from sqlfeedback.schema import DatabaseSchema
from sqlfeedback.sqlcore.ast import (
    ColumnRef,
    Condition,
    ConditionGroup,
    ConditionNode,
    FromClause,
    Query,
    render_order_limit,
    render_sql,
)
from sqlfeedback.sqlcore.compare import match_key
from sqlfeedback.sqlcore.parser import (
    parse_condition_fragment,
    parse_order_limit_fragment,
    parse_select_item_fragment,
    parse_setop_fragment,
)

CLAUSES = (
    "select",
    "from",
    "where",
    "group_by",
    "having",
    "order_limit",
    "distinct_flag",
    "logic_connector",
    "subquery",
)

KINDS = ("replace", "add", "remove", "flip")

# Scripts order clause sections the way the feedback templates verbalize
# them: table fixes first, then select, then filters.
_CLAUSE_ORDER = ("from", "select", "distinct_flag", "logic_connector",
                 "where", "group_by", "having", "order_limit", "subquery")


class StructuralErrorKind(Enum):
    MISSING_SUBQUERY_UNION = "missing_subquery_union"
    MISSING_SUBQUERY_EXCEPT = "missing_subquery_except"
    MISSING_SUBQUERY_INTERSECT = "missing_subquery_intersect"
    MISSING_SUBQUERY_WHERE = "missing_subquery_where"
    REDUNDANT_SUBQUERY_WHERE = "redundant_subquery_where"
    REDUNDANT_SUBQUERY_SETOP = "redundant_subquery_setop"


class EditApplicationError(ValueError):
    """An edit whose old item is absent from the target clause."""


@dataclass(frozen=True)
class Edit:
    clause: str
    kind: str
    old_item: Optional[str] = None
    new_item: Optional[str] = None
    # flips carry their direction here; adds may carry attachment context
    detail: Optional[str] = None
    old_node: object = field(default=None, compare=False, repr=False)
    new_node: object = field(default=None, compare=False, repr=False)

    def linearize(self) -> str:
        if self.kind == "replace":
            return f"REPLACE({self.clause}, {self.old_item} -> {self.new_item})"
        if self.kind == "add":
            return f"ADD({self.clause}, {self.new_item})"
        if self.kind == "remove":
            return f"REMOVE({self.clause}, {self.old_item})"
        return f"FLIP({self.clause}, {self.detail})"


@dataclass(frozen=True)
class EditScript:
    edits: tuple[Edit, ...]

    def __len__(self) -> int:
        return len(self.edits)

    def __iter__(self):
        return iter(self.edits)

    @property
    def is_empty(self) -> bool:
        return not self.edits

    def linearize(self) -> str:
        return " ; ".join(e.linearize() for e in self.edits)


# --------------------------------------------------------------------------
# diff
# --------------------------------------------------------------------------


def diff(wrong: Query, gold: Query, schema: DatabaseSchema) -> EditScript:
    """Compute the edit script turning ``wrong`` into ``gold``."""
    edits = _diff_block(wrong, gold, schema)
    edits.extend(_diff_setop(wrong, gold))
    edits.sort(key=lambda e: _CLAUSE_ORDER.index(e.clause))
    return EditScript(tuple(edits))


def apply(wrong: Query, script: EditScript, schema: DatabaseSchema) -> Query:
    """Apply a script to the wrong AST; the input AST is left unchanged."""
    query = wrong
    for edit in script:
        query = _apply_edit(query, edit, schema)
    return query


def edit_distance(a: Query, b: Query, schema: DatabaseSchema) -> int:
    """Unit-cost script length; zero exactly when the queries set-match."""
    return len(diff(a, b, schema))


def classify_structural(script: EditScript) -> Optional[StructuralErrorKind]:
    """Kind of the first whole-subquery addition/removal, if the script has
    one; replaces at the subquery level are not structural."""
    for edit in script:
        if edit.clause != "subquery" or edit.kind not in ("add", "remove"):
            continue
        detail = edit.detail or ""
        if detail.startswith(("where", "having")):
            if edit.kind == "add":
                return StructuralErrorKind.MISSING_SUBQUERY_WHERE
            return StructuralErrorKind.REDUNDANT_SUBQUERY_WHERE
        if edit.kind == "remove":
            return StructuralErrorKind.REDUNDANT_SUBQUERY_SETOP
        return {
            "union": StructuralErrorKind.MISSING_SUBQUERY_UNION,
            "except": StructuralErrorKind.MISSING_SUBQUERY_EXCEPT,
            "intersect": StructuralErrorKind.MISSING_SUBQUERY_INTERSECT,
        }[detail]
    return None


# -- diff internals ---------------------------------------------------------


@dataclass(frozen=True)
class _Item:
    key: str
    text: str
    node: object


def _multiset_diff(wrong_items: list[_Item], gold_items: list[_Item]
                   ) -> tuple[list[_Item], list[_Item]]:
    """Remove key-matched items from both sides, preserving order."""
    gold_pool: dict[str, int] = {}
    for item in gold_items:
        gold_pool[item.key] = gold_pool.get(item.key, 0) + 1
    removed = []
    for item in wrong_items:
        if gold_pool.get(item.key, 0) > 0:
            gold_pool[item.key] -= 1
        else:
            removed.append(item)
    wrong_pool: dict[str, int] = {}
    for item in wrong_items:
        wrong_pool[item.key] = wrong_pool.get(item.key, 0) + 1
    added = []
    for item in gold_items:
        if wrong_pool.get(item.key, 0) > 0:
            wrong_pool[item.key] -= 1
        else:
            added.append(item)
    return removed, added


def _pair_edits(clause: str, removed: list[_Item], added: list[_Item],
                add_detail: Optional[str] = None,
                remove_detail: Optional[str] = None) -> list[Edit]:
    """Greedy maximal-similarity pairing of removed with added items.

    Every removed item pairs with some added item while counts allow
    (threshold 0); leftovers become plain adds/removes.
    """
    pairs = []
    for ri, removed_item in enumerate(removed):
        for ai, added_item in enumerate(added):
            ratio = difflib.SequenceMatcher(
                None, removed_item.text, added_item.text).ratio()
            pairs.append((-ratio, ri, ai))
    pairs.sort()
    used_removed: set[int] = set()
    used_added: set[int] = set()
    edits: list[tuple[int, Edit]] = []
    for neg_ratio, ri, ai in pairs:
        if ri in used_removed or ai in used_added:
            continue
        used_removed.add(ri)
        used_added.add(ai)
        edits.append((ri, Edit(clause, "replace",
                               old_item=removed[ri].text,
                               new_item=added[ai].text,
                               old_node=removed[ri].node,
                               new_node=added[ai].node)))
    edits.sort(key=lambda pair: pair[0])
    result = [edit for _, edit in edits]
    for ri, item in enumerate(removed):
        if ri not in used_removed:
            result.append(Edit(clause, "remove", old_item=item.text,
                               detail=remove_detail, old_node=item.node))
    for ai, item in enumerate(added):
        if ai not in used_added:
            result.append(Edit(clause, "add", new_item=item.text,
                               detail=add_detail, new_node=item.node))
    return result


def _select_items(query: Query) -> list[_Item]:
    # matching keys are always table-qualified so a FROM edit cannot make
    # an untouched item look changed; display text follows block style
    qualify = query.qualify
    return [_Item(i.render(True, True), i.render(False, qualify), i)
            for i in query.select_items]


def _where_items(node: Optional[ConditionNode], qualify: bool) -> list[_Item]:
    if node is None:
        return []
    children = node.children if isinstance(node, ConditionGroup) else (node,)
    return [_Item(c.render(True, True), c.render(False, qualify), c)
            for c in children]


def _connector(node: Optional[ConditionNode]) -> Optional[str]:
    if isinstance(node, ConditionGroup):
        return node.connector
    return None


def _has_subquery(node: ConditionNode) -> bool:
    if isinstance(node, ConditionGroup):
        return any(_has_subquery(c) for c in node.children)
    return node.has_subquery


def _diff_condition_clause(clause: str, wrong_node: Optional[ConditionNode],
                           gold_node: Optional[ConditionNode],
                           wrong_qualify: bool, gold_qualify: bool) -> list[Edit]:
    """Diff a WHERE/HAVING tree at its top level.

    Atoms holding a nested subquery never pair with plain atoms: a one-sided
    nested atom is an entire missing/redundant subquery and is emitted at
    the subquery level so the structural classifier can see it.
    """
    edits: list[Edit] = []
    wrong_connector = _connector(wrong_node)
    gold_connector = _connector(gold_node)
    if wrong_connector and gold_connector and wrong_connector != gold_connector:
        owner = "" if clause == "where" else f"{clause} "
        edits.append(Edit("logic_connector", "flip",
                          detail=f"{owner}{wrong_connector} -> {gold_connector}"))
    removed, added = _multiset_diff(_where_items(wrong_node, wrong_qualify),
                                    _where_items(gold_node, gold_qualify))
    removed_plain = [i for i in removed if not _has_subquery(i.node)]
    removed_nested = [i for i in removed if _has_subquery(i.node)]
    added_plain = [i for i in added if not _has_subquery(i.node)]
    added_nested = [i for i in added if _has_subquery(i.node)]
    attach = None
    if gold_connector == "or":
        attach = "or"
    edits.extend(_pair_edits(clause, removed_plain, added_plain, add_detail=attach))
    # nested-to-nested differences are ordinary replaces
    pair_count = min(len(removed_nested), len(added_nested))
    edits.extend(_pair_edits(clause, removed_nested[:pair_count],
                             added_nested[:pair_count]))
    add_tag = clause if attach is None else f"{clause}:or"
    for item in removed_nested[pair_count:]:
        edits.append(Edit("subquery", "remove", old_item=item.text,
                          detail=clause, old_node=item.node))
    for item in added_nested[pair_count:]:
        edits.append(Edit("subquery", "add", new_item=item.text,
                          detail=add_tag, new_node=item.node))
    return edits


def _diff_block(wrong: Query, gold: Query, schema: DatabaseSchema) -> list[Edit]:
    edits: list[Edit] = []

    from_removed, from_added = _multiset_diff(
        [_Item(t.lower(), t, t) for t in wrong.from_clause.tables],
        [_Item(t.lower(), t, t) for t in gold.from_clause.tables])
    other_tables = [t for t in wrong.from_clause.tables
                    if t.lower() not in {i.key for i in from_removed}]
    add_detail = f"besides {', '.join(other_tables)}" if other_tables else None
    edits.extend(_pair_edits("from", from_removed, from_added,
                             add_detail=add_detail))

    select_removed, select_added = _multiset_diff(_select_items(wrong),
                                                  _select_items(gold))
    edits.extend(_pair_edits("select", select_removed, select_added))

    if wrong.select_distinct != gold.select_distinct:
        direction = "add distinct" if gold.select_distinct else "remove distinct"
        edits.append(Edit("distinct_flag", "flip", detail=direction))

    edits.extend(_diff_condition_clause("where", wrong.where, gold.where,
                                        wrong.qualify, gold.qualify))

    group_removed, group_added = _multiset_diff(
        [_Item(c.render(True, True), c.render(False, wrong.qualify), c)
         for c in wrong.group_by],
        [_Item(c.render(True, True), c.render(False, gold.qualify), c)
         for c in gold.group_by])
    edits.extend(_pair_edits("group_by", group_removed, group_added))

    edits.extend(_diff_condition_clause("having", wrong.having, gold.having,
                                        wrong.qualify, gold.qualify))

    wrong_order = render_order_limit(wrong.order_by, wrong.limit, True, True)
    gold_order = render_order_limit(gold.order_by, gold.limit, True, True)
    if wrong_order != gold_order:
        old_text = render_order_limit(wrong.order_by, wrong.limit, False, wrong.qualify)
        new_text = render_order_limit(gold.order_by, gold.limit, False, gold.qualify)
        old_node = (wrong.order_by, wrong.limit)
        new_node = (gold.order_by, gold.limit)
        if not wrong_order:
            edits.append(Edit("order_limit", "add", new_item=new_text,
                              new_node=new_node))
        elif not gold_order:
            edits.append(Edit("order_limit", "remove", old_item=old_text,
                              old_node=old_node))
        else:
            edits.append(Edit("order_limit", "replace", old_item=old_text,
                              new_item=new_text, old_node=old_node,
                              new_node=new_node))
    return edits


def _setop_item(query: Query) -> Optional[_Item]:
    if query.set_op is None:
        return None
    op, sub = query.set_op
    key = f"{op} {match_key(sub)}"
    text = f"{op.upper()} {render_sql(sub)}"
    return _Item(key, text, (op, sub))


def _diff_setop(wrong: Query, gold: Query) -> list[Edit]:
    wrong_item = _setop_item(wrong)
    gold_item = _setop_item(gold)
    if wrong_item is None and gold_item is None:
        return []
    if wrong_item is None:
        op = gold_item.node[0]
        return [Edit("subquery", "add", new_item=gold_item.text, detail=op,
                     new_node=gold_item.node)]
    if gold_item is None:
        op = wrong_item.node[0]
        return [Edit("subquery", "remove", old_item=wrong_item.text, detail=op,
                     old_node=wrong_item.node)]
    if wrong_item.key == gold_item.key:
        return []
    return [Edit("subquery", "replace", old_item=wrong_item.text,
                 new_item=gold_item.text, detail=gold_item.node[0],
                 old_node=wrong_item.node, new_node=gold_item.node)]


# --------------------------------------------------------------------------
# apply
# --------------------------------------------------------------------------


def _item_missing(edit: Edit, clause_desc: str) -> EditApplicationError:
    return EditApplicationError(
        f"cannot apply {edit.linearize()}: item not found in {clause_desc}")


def _apply_edit(query: Query, edit: Edit, schema: DatabaseSchema) -> Query:
    handler = {
        "from": _apply_from,
        "select": _apply_select,
        "distinct_flag": _apply_distinct,
        "logic_connector": _apply_connector,
        "where": _apply_where,
        "group_by": _apply_group_by,
        "having": _apply_having,
        "order_limit": _apply_order_limit,
        "subquery": _apply_subquery,
    }.get(edit.clause)
    if handler is None:
        raise EditApplicationError(f"unknown clause '{edit.clause}'")
    return handler(query, edit, schema)


def _apply_from(query: Query, edit: Edit, schema: DatabaseSchema) -> Query:
    tables = list(query.from_clause.tables)
    if edit.kind in ("replace", "remove"):
        target = (edit.old_item or "").lower()
        matches = [i for i, t in enumerate(tables) if t.lower() == target]
        if not matches:
            raise _item_missing(edit, "FROM clause")
        index = matches[0]
        removed = tables[index]
        if edit.kind == "replace":
            new_table = schema.resolve_table(edit.new_item) or edit.new_item
            tables[index] = new_table
        else:
            tables.pop(index)
        joins = tuple(j for j in query.from_clause.joins
                      if removed.lower() not in
                      ((j.left.table or "").lower(), (j.right.table or "").lower()))
    else:
        new_table = schema.resolve_table(edit.new_item) or edit.new_item
        tables.append(new_table)
        joins = query.from_clause.joins
    return dc_replace(query, from_clause=FromClause(tuple(tables), joins))


def _locate(items: list, node) -> Optional[int]:
    """Index of the item matching a node, trying the table-qualified key
    first and the bare-column key as a fallback."""
    target = node.render(True, True)
    for i, item in enumerate(items):
        if item.render(True, True) == target:
            return i
    target = node.render(True, False)
    for i, item in enumerate(items):
        if item.render(True, False) == target:
            return i
    return None


def _apply_select(query: Query, edit: Edit, schema: DatabaseSchema) -> Query:
    # the spec'd add(select, DISTINCT) form toggles the flag, not the items
    if (edit.new_item or edit.old_item) == "DISTINCT":
        return dc_replace(query, select_distinct=(edit.kind == "add"))
    items = list(query.select_items)

    def parse_item(text: str, node) -> object:
        if node is not None:
            return node
        return parse_select_item_fragment(text, schema, query.from_clause.tables)

    if edit.kind in ("replace", "remove"):
        index = _locate(items, parse_item(edit.old_item, edit.old_node))
        if index is None:
            raise _item_missing(edit, "SELECT clause")
        if edit.kind == "replace":
            items[index] = parse_item(edit.new_item, edit.new_node)
        else:
            items.pop(index)
    else:
        items.append(parse_item(edit.new_item, edit.new_node))
    return dc_replace(query, select_items=tuple(items))


def _apply_distinct(query: Query, edit: Edit, schema: DatabaseSchema) -> Query:
    detail = (edit.detail or "").lower()
    if edit.kind == "flip" and detail:
        return dc_replace(query, select_distinct=detail.startswith("add"))
    return dc_replace(query, select_distinct=not query.select_distinct)


def _apply_connector(query: Query, edit: Edit, schema: DatabaseSchema) -> Query:
    detail = (edit.detail or "").lower()
    target = "having" if detail.startswith("having") else "where"
    node = getattr(query, target)
    if not isinstance(node, ConditionGroup):
        raise EditApplicationError(
            f"cannot flip connector: {target.upper()} has no connector")
    flipped = "or" if node.connector == "and" else "and"
    if "->" in detail:
        flipped = detail.split("->")[-1].strip()
    return dc_replace(query, **{target: ConditionGroup(flipped, node.children)})


def _condition_items(node: Optional[ConditionNode]) -> list[ConditionNode]:
    if node is None:
        return []
    if isinstance(node, ConditionGroup):
        return list(node.children)
    return [node]


def _rebuild_tree(items: list[ConditionNode], connector: str
                  ) -> Optional[ConditionNode]:
    if not items:
        return None
    if len(items) == 1:
        return items[0]
    return ConditionGroup(connector, tuple(items))


def _apply_condition_edit(query: Query, edit: Edit, schema: DatabaseSchema,
                          target: str) -> Query:
    node = getattr(query, target)
    items = _condition_items(node)
    connector = _connector(node) or "and"

    def parse_cond(text: str, payload) -> ConditionNode:
        if payload is not None:
            return payload
        return parse_condition_fragment(text, schema, query.from_clause.tables)

    if edit.kind in ("replace", "remove"):
        index = _locate(items, parse_cond(edit.old_item, edit.old_node))
        if index is None:
            raise _item_missing(edit, f"{target.upper()} clause")
        if edit.kind == "replace":
            items[index] = parse_cond(edit.new_item, edit.new_node)
        else:
            items.pop(index)
    else:
        if edit.detail in ("or", "and"):
            connector = edit.detail
        items.append(parse_cond(edit.new_item, edit.new_node))
    return dc_replace(query, **{target: _rebuild_tree(items, connector)})


def _apply_where(query: Query, edit: Edit, schema: DatabaseSchema) -> Query:
    return _apply_condition_edit(query, edit, schema, "where")


def _apply_having(query: Query, edit: Edit, schema: DatabaseSchema) -> Query:
    return _apply_condition_edit(query, edit, schema, "having")


def _apply_group_by(query: Query, edit: Edit, schema: DatabaseSchema) -> Query:
    columns = list(query.group_by)

    def parse_col(text: str, payload) -> ColumnRef:
        if payload is not None:
            return payload
        item = parse_select_item_fragment(text, schema, query.from_clause.tables)
        return item.column

    if edit.kind in ("replace", "remove"):
        index = _locate(columns, parse_col(edit.old_item, edit.old_node))
        if index is None:
            raise _item_missing(edit, "GROUP BY clause")
        if edit.kind == "replace":
            columns[index] = parse_col(edit.new_item, edit.new_node)
        else:
            columns.pop(index)
    else:
        columns.append(parse_col(edit.new_item, edit.new_node))
    return dc_replace(query, group_by=tuple(columns))


def _apply_order_limit(query: Query, edit: Edit, schema: DatabaseSchema) -> Query:
    if edit.kind in ("replace", "remove"):
        current = render_order_limit(query.order_by, query.limit, True, query.qualify)
        if not current:
            raise _item_missing(edit, "ORDER BY/LIMIT clause")
    if edit.kind == "remove":
        return dc_replace(query, order_by=None, limit=None)
    if edit.new_node is not None:
        order_by, limit = edit.new_node
    else:
        order_by, limit = parse_order_limit_fragment(
            edit.new_item, schema, query.from_clause.tables)
    return dc_replace(query, order_by=order_by, limit=limit)


def _apply_subquery(query: Query, edit: Edit, schema: DatabaseSchema) -> Query:
    detail = edit.detail or ""
    if detail.startswith(("where", "having")):
        # whole nested-subquery atom under WHERE/HAVING
        target = "having" if detail.startswith("having") else "where"
        routed = Edit(target, edit.kind, old_item=edit.old_item,
                      new_item=edit.new_item,
                      detail="or" if detail.endswith(":or") else None,
                      old_node=edit.old_node, new_node=edit.new_node)
        return _apply_condition_edit(query, routed, schema, target)
    if edit.kind == "remove":
        if query.set_op is None:
            raise _item_missing(edit, "set operator")
        return dc_replace(query, set_op=None)
    if edit.new_node is not None:
        op, sub = edit.new_node
    else:
        op, sub = parse_setop_fragment(edit.new_item, schema)
    if edit.kind == "replace" and query.set_op is None:
        raise _item_missing(edit, "set operator")
    return dc_replace(query, set_op=(op, sub))
