"""Recursive-descent parser for the Spider-subset SQL grammar.

Parsing is schema-aware: table aliases (``T1``) are resolved to concrete
table names and every column reference is bound against the schema, so the
resulting AST carries no aliases. Keywords are case-insensitive; literal
values keep their verbatim text with quotes stripped.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from typing import Optional

from sqlfeedback.sqlcore.ast import (
    AGGREGATORS,
    ARITH_OPS,
    ColumnRef,
    Condition,
    ConditionGroup,
    ConditionNode,
    FromClause,
    JoinCondition,
    Literal,
    OrderBy,
    Query,
    SelectItem,
)


class SqlSyntaxError(ValueError):
    """A token sequence outside the supported grammar."""

    def __init__(self, message: str, position: int):
        super().__init__(f"syntax error at position {position}: {message}")
        self.position = position


class SqlBindingError(ValueError):
    """An identifier that does not resolve against the schema."""

    def __init__(self, identifier: str, detail: str = ""):
        tail = f" ({detail})" if detail else ""
        super().__init__(f"cannot resolve identifier '{identifier}'{tail}")
        self.identifier = identifier


_KEYWORDS = {
    "select", "distinct", "from", "as", "join", "on", "where", "and", "or",
    "not", "in", "like", "between", "group", "by", "having", "order", "asc",
    "desc", "limit", "union", "intersect", "except",
}
_AGG_KEYWORDS = {"count", "sum", "avg", "min", "max"}

_TOKEN_RE = re.compile(
    r"""\s*(?:
        (?P<number>\d+\.\d+|\.\d+|\d+)
      | (?P<string>'[^']*'|"[^"]*")
      | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
      | (?P<symbol>[(),.*=<>!+\-/%;])
    )""",
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str  # "number" | "string" | "ident" | "symbol" | "eof"
    value: str
    pos: int

    @property
    def lowered(self) -> str:
        return self.value.lower()


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    index = 0
    while index < len(text):
        match = _TOKEN_RE.match(text, index)
        if match is None:
            rest = text[index:].lstrip()
            if not rest:
                break
            raise SqlSyntaxError(f"unexpected character {rest[0]!r}", index)
        index = match.end()
        for kind in ("number", "string", "ident", "symbol"):
            value = match.group(kind)
            if value is not None:
                if kind == "string":
                    value = value[1:-1]
                if kind == "symbol" and value == ";":
                    break  # trailing semicolons are ignored
                tokens.append(_Token(kind, value, match.start(kind)))
                break
    tokens = _merge_operators(tokens)
    tokens.append(_Token("eof", "", len(text)))
    return tokens


def _merge_operators(tokens: list[_Token]) -> list[_Token]:
    """Fuse split comparators (``! =``, ``< =``, ``< >``) into one token."""
    merged: list[_Token] = []
    i = 0
    pairs = {("<", "="): "<=", (">", "="): ">=", ("!", "="): "!=", ("<", ">"): "!="}
    while i < len(tokens):
        tok = tokens[i]
        if tok.kind == "symbol" and i + 1 < len(tokens):
            nxt = tokens[i + 1]
            if nxt.kind == "symbol" and (tok.value, nxt.value) in pairs:
                merged.append(_Token("symbol", pairs[(tok.value, nxt.value)], tok.pos))
                i += 2
                continue
        merged.append(tok)
        i += 1
    return merged


class _Parser:
    """Builds an unbound Query; aliases/columns are resolved afterwards."""

    def __init__(self, tokens: list[_Token]):
        self.tokens = tokens
        self.i = 0
        # alias maps per parsed block, keyed by block identity, consumed by the binder
        self.alias_maps: dict[int, dict[str, str]] = {}

    # -- token helpers -----------------------------------------------------

    def peek(self, offset: int = 0) -> _Token:
        return self.tokens[min(self.i + offset, len(self.tokens) - 1)]

    def advance(self) -> _Token:
        tok = self.tokens[self.i]
        if tok.kind != "eof":
            self.i += 1
        return tok

    def at_keyword(self, *names: str) -> bool:
        tok = self.peek()
        return tok.kind == "ident" and tok.lowered in names

    def expect_keyword(self, name: str) -> _Token:
        tok = self.peek()
        if not self.at_keyword(name):
            raise SqlSyntaxError(f"expected {name.upper()}, got {tok.value!r}", tok.pos)
        return self.advance()

    def at_symbol(self, symbol: str) -> bool:
        tok = self.peek()
        return tok.kind == "symbol" and tok.value == symbol

    def expect_symbol(self, symbol: str) -> _Token:
        tok = self.peek()
        if not self.at_symbol(symbol):
            raise SqlSyntaxError(f"expected {symbol!r}, got {tok.value!r}", tok.pos)
        return self.advance()

    # -- grammar -----------------------------------------------------------

    def parse_query(self) -> Query:
        self.expect_keyword("select")
        distinct = False
        if self.at_keyword("distinct"):
            self.advance()
            distinct = True
        items = [self.parse_select_item()]
        while self.at_symbol(","):
            self.advance()
            items.append(self.parse_select_item())
        self.expect_keyword("from")
        from_clause, aliases = self.parse_from()
        where = None
        if self.at_keyword("where"):
            self.advance()
            where = self.parse_condition_tree()
        group_by: list[ColumnRef] = []
        if self.at_keyword("group"):
            self.advance()
            self.expect_keyword("by")
            group_by.append(self.parse_column_ref())
            while self.at_symbol(","):
                self.advance()
                group_by.append(self.parse_column_ref())
        having = None
        if self.at_keyword("having"):
            self.advance()
            having = self.parse_condition_tree()
        order_by = None
        if self.at_keyword("order"):
            self.advance()
            self.expect_keyword("by")
            order_by = self.parse_order_by()
        limit = None
        if self.at_keyword("limit"):
            self.advance()
            tok = self.advance()
            if tok.kind != "number" or "." in tok.value:
                raise SqlSyntaxError("LIMIT expects a non-negative integer", tok.pos)
            limit = int(tok.value)
        set_op = None
        if self.at_keyword("union", "intersect", "except"):
            op = self.advance().lowered
            set_op = (op, self.parse_query())
        query = Query(
            select_items=tuple(items),
            from_clause=from_clause,
            select_distinct=distinct,
            where=where,
            group_by=tuple(group_by),
            having=having,
            order_by=order_by,
            limit=limit,
            set_op=set_op,
        )
        self.alias_maps[id(query)] = aliases
        return query

    def parse_select_item(self) -> SelectItem:
        agg = "none"
        distinct_inner = False
        if self.peek().kind == "ident" and self.peek().lowered in _AGG_KEYWORDS \
                and self.peek(1).kind == "symbol" and self.peek(1).value == "(":
            agg = self.advance().lowered
            self.expect_symbol("(")
            if self.at_keyword("distinct"):
                self.advance()
                distinct_inner = True
            column = self.parse_column_ref(allow_star=True)
            arithmetic = self.parse_optional_arith()
            self.expect_symbol(")")
            return SelectItem(column, agg, distinct_inner, arithmetic)
        column = self.parse_column_ref(allow_star=True)
        arithmetic = self.parse_optional_arith()
        return SelectItem(column, agg, distinct_inner, arithmetic)

    def parse_optional_arith(self) -> Optional[tuple[str, ColumnRef]]:
        tok = self.peek()
        if tok.kind == "symbol" and tok.value in ARITH_OPS and tok.value != "*":
            op = self.advance().value
            return (op, self.parse_column_ref())
        # "*" is ambiguous with the star column, so treat "col * col" only
        # when a column follows; a bare "*" never starts an arithmetic tail.
        if tok.kind == "symbol" and tok.value == "*" and self.peek(1).kind == "ident":
            self.advance()
            return ("*", self.parse_column_ref())
        return None

    def parse_column_ref(self, allow_star: bool = False) -> ColumnRef:
        tok = self.peek()
        if tok.kind == "symbol" and tok.value == "*":
            if not allow_star:
                raise SqlSyntaxError("star not allowed here", tok.pos)
            self.advance()
            return ColumnRef(None, "*")
        if tok.kind != "ident" or tok.lowered in _KEYWORDS:
            raise SqlSyntaxError(f"expected column reference, got {tok.value!r}", tok.pos)
        first = self.advance().value
        if self.at_symbol("."):
            self.advance()
            nxt = self.peek()
            if nxt.kind == "symbol" and nxt.value == "*":
                self.advance()
                return ColumnRef(first, "*")
            if nxt.kind != "ident":
                raise SqlSyntaxError("expected column name after '.'", nxt.pos)
            return ColumnRef(first, self.advance().value)
        return ColumnRef(None, first)

    def parse_from(self) -> tuple[FromClause, dict[str, str]]:
        tables: list[str] = []
        joins: list[JoinCondition] = []
        aliases: dict[str, str] = {}

        def parse_table() -> None:
            tok = self.peek()
            if tok.kind != "ident" or tok.lowered in _KEYWORDS:
                raise SqlSyntaxError(f"expected table name, got {tok.value!r}", tok.pos)
            name = self.advance().value
            tables.append(name)
            if self.at_keyword("as"):
                self.advance()
                alias_tok = self.advance()
                if alias_tok.kind != "ident":
                    raise SqlSyntaxError("expected alias name", alias_tok.pos)
                aliases[alias_tok.lowered] = name

        parse_table()
        while True:
            if self.at_symbol(","):
                self.advance()
                parse_table()
            elif self.at_keyword("join"):
                self.advance()
                parse_table()
            elif self.at_keyword("on"):
                self.advance()
                joins.append(self.parse_join_condition())
                while self.at_keyword("and"):
                    self.advance()
                    joins.append(self.parse_join_condition())
            else:
                break
        return FromClause(tuple(tables), tuple(joins)), aliases

    def parse_join_condition(self) -> JoinCondition:
        left = self.parse_column_ref()
        self.expect_symbol("=")
        right = self.parse_column_ref()
        return JoinCondition(left, right)

    def parse_condition_tree(self) -> ConditionNode:
        node = self.parse_and_tree()
        children = [node]
        while self.at_keyword("or"):
            self.advance()
            children.append(self.parse_and_tree())
        if len(children) == 1:
            return node
        return _flatten("or", children)

    def parse_and_tree(self) -> ConditionNode:
        node = self.parse_condition_atom()
        children = [node]
        while self.at_keyword("and"):
            self.advance()
            children.append(self.parse_condition_atom())
        if len(children) == 1:
            return node
        return _flatten("and", children)

    def parse_condition_atom(self) -> ConditionNode:
        if self.at_symbol("("):
            # parenthesized subtree, unless it opens a nested SELECT
            if self.peek(1).kind == "ident" and self.peek(1).lowered == "select":
                raise SqlSyntaxError("subquery cannot stand alone as a condition",
                                     self.peek().pos)
            self.advance()
            node = self.parse_condition_tree()
            self.expect_symbol(")")
            return node
        operand = self.parse_condition_operand()
        tok = self.peek()
        if self.at_keyword("between"):
            self.advance()
            low = self.parse_literal()
            self.expect_keyword("and")
            high = self.parse_literal()
            return Condition(operand, "between", low, high)
        negated = False
        if self.at_keyword("not"):
            self.advance()
            negated = True
            if not (self.at_keyword("in") or self.at_keyword("like")):
                raise SqlSyntaxError("expected IN or LIKE after NOT", self.peek().pos)
        if self.at_keyword("in"):
            self.advance()
            op = "not in" if negated else "in"
            self.expect_symbol("(")
            if self.at_keyword("select"):
                sub = self.parse_query()
                self.expect_symbol(")")
                return Condition(operand, op, sub)
            values = [self.parse_literal()]
            while self.at_symbol(","):
                self.advance()
                values.append(self.parse_literal())
            self.expect_symbol(")")
            return Condition(operand, op, tuple(values))
        if self.at_keyword("like"):
            self.advance()
            op = "not like" if negated else "like"
            return Condition(operand, op, self.parse_literal())
        if tok.kind == "symbol" and tok.value in ("=", "!=", "<", ">", "<=", ">="):
            op = self.advance().value
            if self.at_symbol("(") and self.peek(1).lowered == "select":
                self.advance()
                sub = self.parse_query()
                self.expect_symbol(")")
                return Condition(operand, op, sub)
            if self.at_keyword("select"):
                return Condition(operand, op, self.parse_query())
            return Condition(operand, op, self.parse_literal())
        raise SqlSyntaxError(f"expected comparison operator, got {tok.value!r}", tok.pos)

    def parse_condition_operand(self) -> tuple[str, ColumnRef]:
        if self.peek().kind == "ident" and self.peek().lowered in _AGG_KEYWORDS \
                and self.peek(1).kind == "symbol" and self.peek(1).value == "(":
            agg = self.advance().lowered
            self.expect_symbol("(")
            column = self.parse_column_ref(allow_star=True)
            self.expect_symbol(")")
            return (agg, column)
        return ("none", self.parse_column_ref())

    def parse_literal(self) -> Literal:
        tok = self.peek()
        if tok.kind == "string":
            self.advance()
            return Literal(tok.value, "string")
        if tok.kind == "number":
            self.advance()
            return Literal(tok.value, "number")
        if tok.kind == "symbol" and tok.value == "-" and self.peek(1).kind == "number":
            self.advance()
            num = self.advance()
            return Literal(f"-{num.value}", "number")
        raise SqlSyntaxError(f"expected literal value, got {tok.value!r}", tok.pos)

    def parse_order_by(self) -> OrderBy:
        keys = [self.parse_order_key()]
        while self.at_symbol(","):
            self.advance()
            keys.append(self.parse_order_key())
        direction = "asc"
        if self.at_keyword("asc", "desc"):
            direction = self.advance().lowered
        return OrderBy(tuple(keys), direction)

    def parse_order_key(self) -> tuple[str, ColumnRef]:
        if self.peek().kind == "ident" and self.peek().lowered in _AGG_KEYWORDS \
                and self.peek(1).kind == "symbol" and self.peek(1).value == "(":
            agg = self.advance().lowered
            self.expect_symbol("(")
            column = self.parse_column_ref(allow_star=True)
            self.expect_symbol(")")
            return (agg, column)
        return ("none", self.parse_column_ref())


class _Binder:
    """Resolves aliases and validates every reference against the schema."""

    def __init__(self, schema, alias_maps: Optional[dict[int, dict[str, str]]] = None):
        self.schema = schema
        self.alias_maps = alias_maps or {}

    def bind_query(self, query: Query) -> Query:
        aliases = self.alias_maps.pop(id(query), {})
        tables = []
        for name in query.from_clause.tables:
            resolved = self.schema.resolve_table(name)
            if resolved is None:
                raise SqlBindingError(name, f"no such table in {self.schema.db_id}")
            tables.append(resolved)
        alias_to_table = {}
        for alias, raw in aliases.items():
            resolved = self.schema.resolve_table(raw)
            alias_to_table[alias] = resolved

        def bind_col(ref: ColumnRef) -> ColumnRef:
            if ref.is_star:
                if ref.table is not None:
                    return ColumnRef(self._qualifier(ref.table, alias_to_table, tables), "*")
                return ref
            if ref.table is not None:
                table = self._qualifier(ref.table, alias_to_table, tables)
                column = self.schema.resolve_column(table, ref.column)
                if column is None:
                    raise SqlBindingError(f"{ref.table}.{ref.column}",
                                          f"no column {ref.column} in table {table}")
                return ColumnRef(table, column)
            for table in tables:
                column = self.schema.resolve_column(table, ref.column)
                if column is not None:
                    return ColumnRef(table, column)
            raise SqlBindingError(ref.column, "not found in any FROM table")

        def bind_item(item: SelectItem) -> SelectItem:
            arithmetic = item.arithmetic
            if arithmetic is not None:
                arithmetic = (arithmetic[0], bind_col(arithmetic[1]))
            return replace(item, column=bind_col(item.column), arithmetic=arithmetic)

        def bind_tree(node: ConditionNode) -> ConditionNode:
            if isinstance(node, ConditionGroup):
                return ConditionGroup(node.connector,
                                      tuple(bind_tree(c) for c in node.children))
            agg, col = node.operand
            value = node.value
            if isinstance(value, Query):
                value = self.bind_query(value)
            return replace(node, operand=(agg, bind_col(col)), value=value)

        select_items = tuple(bind_item(i) for i in query.select_items)
        joins = tuple(JoinCondition(bind_col(j.left), bind_col(j.right))
                      for j in query.from_clause.joins)
        where = bind_tree(query.where) if query.where is not None else None
        group_by = tuple(bind_col(c) for c in query.group_by)
        having = bind_tree(query.having) if query.having is not None else None
        order_by = query.order_by
        if order_by is not None:
            keys = tuple((agg, bind_col(col)) for agg, col in order_by.keys)
            order_by = replace(order_by, keys=keys)
        set_op = query.set_op
        if set_op is not None:
            set_op = (set_op[0], self.bind_query(set_op[1]))
        return replace(
            query,
            select_items=select_items,
            from_clause=FromClause(tuple(tables), joins),
            where=where,
            group_by=group_by,
            having=having,
            order_by=order_by,
            set_op=set_op,
            schema_id=self.schema.db_id,
        )

    def _qualifier(self, name: str, alias_to_table: dict[str, str],
                   tables: list[str]) -> str:
        lowered = name.lower()
        if lowered in alias_to_table:
            return alias_to_table[lowered]
        resolved = self.schema.resolve_table(name)
        if resolved is None:
            raise SqlBindingError(name, "unknown table or alias")
        return resolved


def parse_sql(text: str, schema) -> Query:
    """Parse SQL text into a bound, alias-free AST."""
    if not text or not text.strip():
        raise SqlSyntaxError("empty SQL text", 0)
    tokens = _tokenize(text)
    parser = _Parser(tokens)
    query = parser.parse_query()
    tail = parser.peek()
    if tail.kind != "eof":
        raise SqlSyntaxError(f"unexpected trailing token {tail.value!r}", tail.pos)
    return _Binder(schema, parser.alias_maps).bind_query(query)


def _flatten(connector: str, children: list[ConditionNode]) -> ConditionGroup:
    flat: list[ConditionNode] = []
    for child in children:
        if isinstance(child, ConditionGroup) and child.connector == connector:
            flat.extend(child.children)
        else:
            flat.append(child)
    return ConditionGroup(connector, tuple(flat))


# -- fragment parsing (edit items are rendered fragments of whole queries) --


def _loose_binder(schema, tables: tuple[str, ...]):
    def bind_col(ref: ColumnRef) -> ColumnRef:
        if ref.is_star:
            return ref
        if ref.table is not None:
            table = schema.resolve_table(ref.table)
            if table is None:
                raise SqlBindingError(ref.table)
            column = schema.resolve_column(table, ref.column)
            if column is None:
                raise SqlBindingError(f"{ref.table}.{ref.column}")
            return ColumnRef(table, column)
        for table in tables:
            column = schema.resolve_column(table, ref.column)
            if column is not None:
                return ColumnRef(table, column)
        owners = schema.column_owners(ref.column)
        if owners:
            return ColumnRef(owners[0], schema.resolve_column(owners[0], ref.column))
        raise SqlBindingError(ref.column)

    return bind_col


def parse_select_item_fragment(text: str, schema=None,
                               tables: tuple[str, ...] = ()) -> SelectItem:
    """Parse a rendered select item (``count(DISTINCT dog_id)``) back to a
    node; with ``schema=None`` the references stay unbound."""
    parser = _Parser(_tokenize(text))
    item = parser.parse_select_item()
    if parser.peek().kind != "eof":
        raise SqlSyntaxError(f"trailing tokens in item {text!r}", parser.peek().pos)
    if schema is None:
        return item
    bind = _loose_binder(schema, tables)
    arithmetic = item.arithmetic
    if arithmetic is not None:
        arithmetic = (arithmetic[0], bind(arithmetic[1]))
    return replace(item, column=bind(item.column), arithmetic=arithmetic)


def parse_condition_fragment(text: str, schema=None,
                             tables: tuple[str, ...] = ()) -> ConditionNode:
    """Parse a rendered condition item back into a condition tree, bound
    when a schema is given."""
    parser = _Parser(_tokenize(text))
    node = parser.parse_condition_tree()
    if parser.peek().kind != "eof":
        raise SqlSyntaxError(f"trailing tokens in condition {text!r}", parser.peek().pos)
    if schema is None:
        return node
    bind = _loose_binder(schema, tables)

    def bind_tree(n: ConditionNode) -> ConditionNode:
        if isinstance(n, ConditionGroup):
            return ConditionGroup(n.connector, tuple(bind_tree(c) for c in n.children))
        agg, col = n.operand
        value = n.value
        if isinstance(value, Query):
            value = _Binder(schema, parser.alias_maps).bind_query(value)
        return replace(n, operand=(agg, bind(col)), value=value)

    return bind_tree(node)


def parse_order_limit_fragment(text: str, schema=None, tables: tuple[str, ...] = ()
                               ) -> tuple[Optional[OrderBy], Optional[int]]:
    """Parse a rendered ``ORDER BY ... LIMIT ...`` unit."""
    parser = _Parser(_tokenize(text))
    order_by = None
    limit = None
    if parser.at_keyword("order"):
        parser.advance()
        parser.expect_keyword("by")
        order_by = parser.parse_order_by()
    if parser.at_keyword("limit"):
        parser.advance()
        tok = parser.advance()
        if tok.kind != "number":
            raise SqlSyntaxError("LIMIT expects an integer", tok.pos)
        limit = int(tok.value)
    if parser.peek().kind != "eof":
        raise SqlSyntaxError(f"trailing tokens in order unit {text!r}", parser.peek().pos)
    if order_by is not None and schema is not None:
        bind = _loose_binder(schema, tables)
        keys = tuple((agg, bind(col)) for agg, col in order_by.keys)
        order_by = replace(order_by, keys=keys)
    return order_by, limit


def parse_setop_fragment(text: str, schema) -> tuple[str, Query]:
    """Parse a rendered set-operator tail (``UNION SELECT ...``)."""
    tokens = _tokenize(text)
    parser = _Parser(tokens)
    tok = parser.peek()
    if not parser.at_keyword("union", "intersect", "except"):
        raise SqlSyntaxError("expected UNION/INTERSECT/EXCEPT", tok.pos)
    op = parser.advance().lowered
    query = parser.parse_query()
    if parser.peek().kind != "eof":
        raise SqlSyntaxError("trailing tokens after subquery", parser.peek().pos)
    return op, _Binder(schema, parser.alias_maps).bind_query(query)
