"""Relational backend: each node is one row, selections compile to SQL.

Bound encodings were designed so that memcmp order equals bound order,
which lets every selection compile to plain BLOB comparisons against the
(min_key, max_key, level) columns.  Composite trees add generated part
columns (tagged x/y parts of each bound plus a spans-groups flag) so the
group selections stay single-pass, and a companion key-part table answers
DistinctX without touching payloads.

The sqlite backend here is the reference implementation; compile_selection
is dialect-parameterized and reusable for other engines.
"""

from __future__ import annotations

import sqlite3
from dataclasses import dataclass

from .keys import Bound, CompositeKeyCodec, split_bound_parts, tag_part
from .node import Node, NodeCodec, ROOT_LEVEL, empty_root
from .store import (
    DistinctX,
    GroupEnclosing,
    GroupLeftFringe,
    GroupRightFringe,
    LeftFringe,
    MinLevelEnclosing,
    NodeStore,
    PathTo,
    RightFringe,
    RoundStats,
    TouchingKey,
    WriteSet,
)


class UnsupportedSelection(TypeError):
    """Selection kind the adapter cannot compile (e.g. group selections on
    a table without composite part columns)."""


@dataclass(frozen=True)
class Dialect:
    """The few syntax points that differ between SQL engines."""

    placeholder: str = "?"
    upsert: str = "INSERT OR REPLACE INTO"

    def holes(self, n: int) -> str:
        return ", ".join([self.placeholder] * n)


SQLITE = Dialect()

_ORDER = "ORDER BY level, min_key, max_key"
_COLS = "level, min_key, max_key, payload"


@dataclass(frozen=True)
class TableSchema:
    """DDL for one tree's row table (and key-part table when composite)."""

    name: str
    composite: bool = False

    def create_statements(self) -> list[str]:
        extra = ""
        if self.composite:
            extra = (",\n  min_x BLOB NOT NULL, min_y BLOB NOT NULL,"
                     "\n  max_x BLOB NOT NULL, max_y BLOB NOT NULL,"
                     "\n  spans INTEGER NOT NULL")
        stmts = [
            f"CREATE TABLE IF NOT EXISTS {self.name} (\n"
            f"  min_key BLOB NOT NULL,\n"
            f"  max_key BLOB NOT NULL,\n"
            f"  level INTEGER NOT NULL,\n"
            f"  payload BLOB NOT NULL{extra},\n"
            f"  PRIMARY KEY (min_key, max_key, level)\n)",
            f"CREATE INDEX IF NOT EXISTS {self.name}_by_max"
            f" ON {self.name} (max_key, min_key, level)",
        ]
        if self.composite:
            stmts += [
                f"CREATE INDEX IF NOT EXISTS {self.name}_by_y"
                f" ON {self.name} (min_y, max_y)",
                f"CREATE INDEX IF NOT EXISTS {self.name}_by_span"
                f" ON {self.name} (spans)",
                f"CREATE TABLE IF NOT EXISTS {self.name}_keys (\n"
                f"  x BLOB NOT NULL,\n"
                f"  y BLOB NOT NULL,\n"
                f"  PRIMARY KEY (x, y)\n)",
            ]
        return stmts


def compile_selection(sel, schema: TableSchema, dialect: Dialect = SQLITE,
                      composite: CompositeKeyCodec = None) -> list[tuple[str, tuple]]:
    """SQL for one selection: a list of (statement, params) pairs.

    Most selections are a single statement; per-group enclosing lookups
    need one ranked statement per x.  Key bytes in params are pre-tagged so
    BLOB comparison against the bound columns is exact.
    """
    t, q = schema.name, dialect.placeholder
    base = f"SELECT {_COLS} FROM {t} WHERE "

    if isinstance(sel, PathTo):
        k = Bound.of(sel.key).encoded()
        return [(base + f"min_key < {q} AND max_key > {q} {_ORDER}", (k, k))]
    if isinstance(sel, TouchingKey):
        k = Bound.of(sel.key).encoded()
        return [(base + f"min_key <= {q} AND max_key >= {q} {_ORDER}", (k, k))]
    if isinstance(sel, LeftFringe):
        lo = Bound.of(sel.lo).encoded()
        hi = Bound.of(sel.hi).encoded()
        return [(base + f"min_key < {q} AND max_key > {q} AND max_key <= {q} "
                 f"{_ORDER}", (lo, lo, hi))]
    if isinstance(sel, RightFringe):
        lo = Bound.of(sel.lo).encoded()
        hi = Bound.of(sel.hi).encoded()
        return [(base + f"min_key >= {q} AND min_key < {q} AND max_key > {q} "
                 f"{_ORDER}", (lo, hi, hi))]
    if isinstance(sel, MinLevelEnclosing):
        lo = Bound.of(sel.lo).encoded()
        hi = Bound.of(sel.hi).encoded()
        return [(base + f"min_key < {q} AND max_key > {q} {_ORDER} LIMIT 1",
                 (lo, hi))]

    if not schema.composite:
        raise UnsupportedSelection(
            f"{type(sel).__name__} needs a composite-key table")

    if isinstance(sel, GroupLeftFringe):
        ylo, yhi = tag_part(sel.y_lo), tag_part(sel.y_hi)
        return [(base + f"max_y > {q} AND max_y <= {q} "
                 f"AND (min_y < {q} OR spans = 1) {_ORDER}", (ylo, yhi, ylo))]
    if isinstance(sel, GroupRightFringe):
        ylo, yhi = tag_part(sel.y_lo), tag_part(sel.y_hi)
        return [(base + f"min_y >= {q} AND min_y < {q} "
                 f"AND (max_y > {q} OR spans = 1) {_ORDER}", (ylo, yhi, yhi))]
    if isinstance(sel, GroupEnclosing):
        ylo, yhi = tag_part(sel.y_lo), tag_part(sel.y_hi)
        if sel.xs is None:
            return [(base + f"(min_y < {q} AND max_y > {q}) OR spans = 1 "
                     f"{_ORDER}", (ylo, yhi))]
        if composite is None:
            raise UnsupportedSelection("per-group enclosing needs the "
                                       "composite codec to compose keys")
        stmts = []
        for x in sel.xs:
            lo = Bound.of(composite.compose(x, sel.y_lo)).encoded()
            hi = Bound.of(composite.compose(x, sel.y_hi)).encoded()
            stmts.append((base + f"min_key < {q} AND max_key > {q} "
                          f"{_ORDER} LIMIT 1", (lo, hi)))
        return stmts
    if isinstance(sel, DistinctX):
        return [(f"SELECT DISTINCT x FROM {t}_keys ORDER BY x", ())]
    raise UnsupportedSelection(f"unknown selection {sel!r}")


class SqliteStore(NodeStore):
    """Node store on a sqlite database (a file path or ":memory:").

    One connection, single writer.  Reads run inside a deferred
    transaction so a round sees one snapshot; writes run inside an
    immediate transaction and roll back wholesale if anything fails,
    including a failing ``pre_commit`` hook (the same fault-injection seam
    the in-memory store offers).
    """

    def __init__(self, path, codec: NodeCodec, name: str = "tree",
                 composite: CompositeKeyCodec = None, pre_commit=None,
                 dialect: Dialect = SQLITE):
        self.codec = codec
        self.composite = composite
        self.pre_commit = pre_commit
        self.dialect = dialect
        self.schema = TableSchema(name, composite is not None)
        self.conn = sqlite3.connect(str(path), isolation_level=None)
        for stmt in self.schema.create_statements():
            self.conn.execute(stmt)
        self._ensure_root()
        self.stats = RoundStats()

    def _ensure_root(self) -> None:
        cur = self.conn.execute(
            f"SELECT 1 FROM {self.schema.name} WHERE level = {self.dialect.placeholder}",
            (ROOT_LEVEL,))
        if cur.fetchone() is None:
            self.conn.execute(*self._upsert_stmt(empty_root()))

    def close(self) -> None:
        self.conn.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- reads ------------------------------------------------------------

    def _decode_row(self, row) -> Node:
        level, min_key, max_key, payload = row
        return self.codec.decode_payload(level, Bound.parse(min_key),
                                         Bound.parse(max_key), payload)

    def read_round(self, selections) -> list[list]:
        self.stats.read_rounds += 1
        self.stats.statements += len(selections)
        out = []
        self.conn.execute("BEGIN")
        try:
            for sel in selections:
                rows = []
                for stmt, params in compile_selection(sel, self.schema,
                                                      self.dialect, self.composite):
                    rows.extend(self.conn.execute(stmt, params).fetchall())
                if isinstance(sel, DistinctX):
                    parts = [bytes(r[0]) for r in rows]
                    self.stats.bytes_read += sum(len(p) for p in parts)
                    out.append(parts)
                else:
                    nodes = [self._decode_row(r) for r in rows]
                    self.stats.nodes_read += len(nodes)
                    self.stats.bytes_read += sum(
                        len(r[3]) + len(r[1]) + len(r[2]) + 8 for r in rows)
                    out.append(nodes)
        finally:
            self.conn.execute("COMMIT")
        return out

    # -- writes -----------------------------------------------------------

    def _upsert_stmt(self, node: Node) -> tuple[str, tuple]:
        t, d = self.schema.name, self.dialect
        payload = self.codec.encode_payload(node)
        cols = [node.min.encoded(), node.max.encoded(), node.level, payload]
        names = "min_key, max_key, level, payload"
        if self.schema.composite:
            min_x, min_y = split_bound_parts(node.min, self.composite)
            max_x, max_y = split_bound_parts(node.max, self.composite)
            cols += [min_x, min_y, max_x, max_y, 1 if min_x != max_x else 0]
            names += ", min_x, min_y, max_x, max_y, spans"
        return (f"{d.upsert} {t} ({names}) VALUES ({d.holes(len(cols))})",
                tuple(cols))

    def write_round(self, ws: WriteSet) -> None:
        t, q = self.schema.name, self.dialect.placeholder
        for level, mn, mx in ws.deletes:
            if level == ROOT_LEVEL:
                raise ValueError("the root row is replaced, never deleted")
        self.conn.execute("BEGIN IMMEDIATE")
        try:
            for level, mn, mx in ws.deletes:
                self.conn.execute(
                    f"DELETE FROM {t} WHERE min_key = {q} AND max_key = {q} "
                    f"AND level = {q}", (mn.encoded(), mx.encoded(), level))
            for node in ws.upserts:
                self.conn.execute(*self._upsert_stmt(node))
            if self.schema.composite:
                for key in ws.key_deletes:
                    x, y = self.composite.split(key)
                    self.conn.execute(
                        f"DELETE FROM {t}_keys WHERE x = {q} AND y = {q}", (x, y))
                for key in ws.key_inserts:
                    x, y = self.composite.split(key)
                    self.conn.execute(
                        f"{self.dialect.upsert} {t}_keys (x, y) "
                        f"VALUES ({q}, {q})", (x, y))
            if self.pre_commit is not None:
                self.pre_commit(ws)
        except BaseException:
            self.conn.execute("ROLLBACK")
            raise
        self.conn.execute("COMMIT")
        self.stats.write_rounds += 1
        self.stats.statements += len(ws.deletes) + len(ws.upserts)
        self.stats.nodes_written += len(ws.upserts)

    def snapshot(self) -> list[Node]:
        rows = self.conn.execute(
            f"SELECT {_COLS} FROM {self.schema.name} {_ORDER}").fetchall()
        return [self._decode_row(r) for r in rows]
