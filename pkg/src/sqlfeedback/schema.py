"""Database schema model shared by the parser, corpus and verbalizer."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

COLUMN_TYPES = ("text", "number", "time", "boolean", "other")


class SchemaError(ValueError):
    """Raised for schemas violating structural invariants."""


@dataclass(frozen=True)
class Column:
    name: str
    type: str = "text"


@dataclass(frozen=True)
class Table:
    name: str
    columns: tuple[Column, ...]


@dataclass(frozen=True)
class DatabaseSchema:
    db_id: str
    tables: tuple[Table, ...]
    primary_keys: tuple[tuple[str, str], ...] = ()
    foreign_keys: tuple[tuple[tuple[str, str], tuple[str, str]], ...] = ()
    _by_table: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        index: dict[str, dict[str, str]] = {}
        for table in self.tables:
            index[table.name.lower()] = {c.name.lower(): c.name for c in table.columns}
        object.__setattr__(self, "_by_table", index)

    def table_names(self) -> tuple[str, ...]:
        return tuple(t.name for t in self.tables)

    def resolve_table(self, name: str) -> Optional[str]:
        """Canonical table name for a case-insensitive lookup, or None."""
        lowered = name.lower()
        for table in self.tables:
            if table.name.lower() == lowered:
                return table.name
        return None

    def resolve_column(self, table: str, column: str) -> Optional[str]:
        columns = self._by_table.get(table.lower())
        if columns is None:
            return None
        return columns.get(column.lower())

    def column_owners(self, column: str) -> list[str]:
        """Tables containing a column of this name, in schema order."""
        lowered = column.lower()
        return [t.name for t in self.tables
                if lowered in self._by_table[t.name.lower()]]

    def columns_of(self, table: str) -> tuple[str, ...]:
        resolved = self.resolve_table(table)
        if resolved is None:
            return ()
        for t in self.tables:
            if t.name == resolved:
                return tuple(c.name for c in t.columns)
        return ()

    def all_columns(self) -> list[tuple[str, str]]:
        return [(t.name, c.name) for t in self.tables for c in t.columns]


def build_schema(payload: dict) -> DatabaseSchema:
    """Validate one database entry and build its schema.

    Enforces unique table names, unique column names per table, a known
    column type for every column, and resolvable key references.
    """
    db_id = payload.get("db_id")
    if not db_id:
        raise SchemaError("database entry missing db_id")
    tables: list[Table] = []
    seen_tables: set[str] = set()
    for table_payload in payload.get("tables", []):
        name = table_payload.get("name")
        if not name:
            raise SchemaError(f"{db_id}: table with empty name")
        if name.lower() in seen_tables:
            raise SchemaError(f"{db_id}: duplicate table name '{name}'")
        seen_tables.add(name.lower())
        columns: list[Column] = []
        seen_columns: set[str] = set()
        for column_payload in table_payload.get("columns", []):
            cname = column_payload.get("name")
            ctype = column_payload.get("type", "text")
            if not cname:
                raise SchemaError(f"{db_id}.{name}: column with empty name")
            if cname.lower() in seen_columns:
                raise SchemaError(
                    f"{db_id}.{name}: duplicate column name '{cname}'")
            if ctype not in COLUMN_TYPES:
                raise SchemaError(
                    f"{db_id}.{name}.{cname}: unknown column type '{ctype}'")
            seen_columns.add(cname.lower())
            columns.append(Column(cname, ctype))
        tables.append(Table(name, tuple(columns)))
    schema = DatabaseSchema(db_id, tuple(tables))

    def check_ref(ref, label: str) -> tuple[str, str]:
        table, column = ref
        resolved_table = schema.resolve_table(table)
        if resolved_table is None:
            raise SchemaError(f"{db_id}: {label} references missing table '{table}'")
        resolved_column = schema.resolve_column(resolved_table, column)
        if resolved_column is None:
            raise SchemaError(
                f"{db_id}: {label} references missing column '{table}.{column}'")
        return (resolved_table, resolved_column)

    primary_keys = tuple(check_ref(ref, "primary key")
                         for ref in payload.get("primary_keys", []))
    foreign_keys = tuple(
        (check_ref(pair[0], "foreign key"), check_ref(pair[1], "foreign key"))
        for pair in payload.get("foreign_keys", []))
    return DatabaseSchema(db_id, tuple(tables), primary_keys, foreign_keys)


class SchemaStore:
    """Lookup of loaded database schemas by db_id."""

    def __init__(self, schemas: Iterable[DatabaseSchema] = ()):
        self._schemas: dict[str, DatabaseSchema] = {}
        for schema in schemas:
            self.add(schema)

    def add(self, schema: DatabaseSchema) -> None:
        if schema.db_id in self._schemas:
            raise SchemaError(f"duplicate db_id '{schema.db_id}'")
        self._schemas[schema.db_id] = schema

    def get(self, db_id: str) -> DatabaseSchema:
        if db_id not in self._schemas:
            raise KeyError(f"unknown db_id '{db_id}'")
        return self._schemas[db_id]

    def __contains__(self, db_id: str) -> bool:
        return db_id in self._schemas

    def __len__(self) -> int:
        return len(self._schemas)

    def db_ids(self) -> list[str]:
        return sorted(self._schemas)
