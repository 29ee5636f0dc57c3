"""Command-line front end.

A tree lives in a sqlite file; its configuration (codecs, aggregation,
level scheme, trust anchor for authenticated trees) persists in a side
table so later invocations reopen it consistently.  The bench subcommand
writes delimited measurements and renders the matching figures next to
them.

Exit codes: 0 success, 2 usage, 3 data errors (missing key, duplicate,
parse failures), 4 verification failures (invariants, proofs, tampering),
5 backend errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import random
import sqlite3
import sys
import time

from . import aggregation as agg_mod
from .auth import AuthDbTree, Invalid, ProofVerifier, TamperDetected, VerifiedValue
from .engine import (
    DbTree,
    DerandomizedLevels,
    DuplicateKey,
    InvalidRange,
    KeyNotFound,
    SeededLevels,
    level_source_from_config,
)
from .keys import (
    BytesKeyCodec,
    CodecError,
    CompositeKeyCodec,
    IntKeyCodec,
    TextKeyCodec,
    UIntKeyCodec,
)
from .node import BytesValueCodec, Int64ValueCodec, NodeCodec
from .oracle import FlatTable
from .sql import SqliteStore, UnsupportedSelection
from .store import MemoryStore


class CliError(Exception):
    def __init__(self, message: str, code: int = 3):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# Configuration plumbing


def make_key_codec(name: str):
    if name.startswith("composite:"):
        parts = name.split(":")
        if len(parts) != 3:
            raise CliError(f"composite codec needs two parts, got {name!r}")
        return CompositeKeyCodec(make_key_codec(parts[1]), make_key_codec(parts[2]))
    table = {"uint64": UIntKeyCodec, "int64": IntKeyCodec,
             "text": TextKeyCodec, "bytes": BytesKeyCodec}
    if name not in table:
        raise CliError(f"unknown key codec {name!r}")
    return table[name]()


def make_value_codec(name: str):
    if name == "int64":
        return Int64ValueCodec()
    if name in ("text", "bytes"):
        return BytesValueCodec()
    raise CliError(f"unknown value codec {name!r}")


def make_aggregation(name: str):
    if "," in name:
        return agg_mod.make_product([make_aggregation(p) for p in name.split(",")])
    if name == "sum":
        return agg_mod.make_sum()
    if name == "sum_big":
        return agg_mod.make_sum(checked=False)
    if name == "count":
        return agg_mod.make_count()
    if name == "min":
        return agg_mod.make_min()
    if name == "max":
        return agg_mod.make_max()
    if name == "avg":
        return agg_mod.make_avg()
    if name.startswith("top") and name[3:].isdigit():
        return agg_mod.make_top_n(int(name[3:]))
    raise CliError(f"unknown aggregation {name!r}")


def make_levels(spec: str):
    if spec == "derandomized":
        return DerandomizedLevels()
    if spec.startswith("derandomized:"):
        return DerandomizedLevels(bytes.fromhex(spec.split(":", 1)[1]))
    raise CliError(f"unknown level scheme {spec!r} (use derandomized[:salthex])")


class Meta:
    """Per-table configuration persisted next to the tree rows."""

    def __init__(self, db: str, table: str):
        self.db = db
        self.table = table

    def _connect(self):
        return sqlite3.connect(self.db)

    def load(self) -> dict:
        with self._connect() as conn:
            try:
                row = conn.execute(
                    f"SELECT v FROM {self.table}_meta WHERE k = 'config'").fetchone()
            except sqlite3.OperationalError:
                raise CliError(
                    f"no tree named {self.table!r} in {self.db} (run build first)")
        if row is None:
            raise CliError(f"tree {self.table!r} has no saved configuration")
        return json.loads(row[0])

    def save(self, cfg: dict) -> None:
        with self._connect() as conn:
            conn.execute(
                f"CREATE TABLE IF NOT EXISTS {self.table}_meta "
                f"(k TEXT PRIMARY KEY, v TEXT NOT NULL)")
            conn.execute(
                f"INSERT OR REPLACE INTO {self.table}_meta (k, v) VALUES (?, ?)",
                ("config", json.dumps(cfg)))


class Session:
    """An opened tree plus the helpers to parse and print its types."""

    def __init__(self, args, cfg: dict):
        self.cfg = cfg
        self.meta = Meta(args.db, args.table)
        self.key_codec = make_key_codec(cfg["key_codec"])
        self.value_name = cfg["value_codec"]
        self.value_codec = make_value_codec(self.value_name)
        self.auth = cfg.get("auth", False)
        composite = self.key_codec if isinstance(self.key_codec, CompositeKeyCodec) else None
        levels = level_source_from_config(cfg["levels"])
        if self.auth:
            codec = AuthDbTree.make_codec(self.value_codec)
            self.store = SqliteStore(args.db, codec, name=args.table,
                                     composite=composite)
            trusted = bytes.fromhex(cfg["root_hash"]) if cfg.get("root_hash") else None
            self.tree = AuthDbTree(self.store, self.value_codec, levels,
                                   trusted_root=trusted)
            self.aggregation = None
        else:
            self.aggregation = make_aggregation(cfg["aggregation"])
            codec = NodeCodec(self.aggregation.codec, self.value_codec)
            self.store = SqliteStore(args.db, codec, name=args.table,
                                     composite=composite)
            self.tree = DbTree(self.store, self.aggregation, levels,
                               composite=composite)

    def save_root_hash(self) -> None:
        if self.auth and self.tree.root_hash is not None:
            self.cfg["root_hash"] = self.tree.root_hash.hex()
            self.meta.save(self.cfg)

    # -- parsing and printing --------------------------------------------

    def parse_key(self, text: str) -> bytes:
        codec = self.key_codec
        if isinstance(codec, CompositeKeyCodec):
            if "," not in text:
                raise CliError(f"composite key must be x,y: {text!r}")
            xs, ys = text.split(",", 1)
            return codec.encode((self._parse_part(codec.x_codec, xs),
                                 self._parse_part(codec.y_codec, ys)))
        return codec.encode(self._parse_part(codec, text))

    def parse_part(self, codec, text: str) -> bytes:
        return codec.encode(self._parse_part(codec, text))

    @staticmethod
    def _parse_part(codec, text: str):
        name = getattr(codec, "name", "")
        if name in ("uint64", "int64"):
            return int(text)
        if name == "bytes":
            return bytes.fromhex(text)
        return text

    def format_key(self, key: bytes) -> str:
        codec = self.key_codec
        if isinstance(codec, CompositeKeyCodec):
            x, y = codec.decode(key)
            return f"{self._fmt(x)},{self._fmt(y)}"
        return self._fmt(codec.decode(key))

    def parse_value(self, text: str):
        if self.value_name == "int64":
            return int(text)
        if self.value_name == "bytes":
            return bytes.fromhex(text)
        return text.encode("utf-8")

    def format_value(self, value) -> str:
        if isinstance(value, bytes):
            return value.decode("utf-8", errors="replace")
        return self._fmt(value)

    @staticmethod
    def _fmt(v) -> str:
        if isinstance(v, bytes):
            return v.hex()
        return str(v)

    def print_stats(self, args) -> None:
        if getattr(args, "stats", False):
            s = self.store.stats
            print(f"read_rounds={s.read_rounds} write_rounds={s.write_rounds} "
                  f"statements={s.statements} nodes_read={s.nodes_read} "
                  f"bytes_read={s.bytes_read}", file=sys.stderr)


def open_session(args) -> Session:
    if not args.db:
        raise CliError("no database given (use --db or AGGTREE_DB)", code=2)
    return Session(args, Meta(args.db, args.table).load())


def read_csv_items(session: Session, path: str) -> list:
    """Rows are key,value (or x,y,value for composite keys)."""
    items = []
    composite = isinstance(session.key_codec, CompositeKeyCodec)
    want = 3 if composite else 2
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or row[0].startswith("#"):
                continue
            if len(row) != want:
                raise CliError(f"{path}:{lineno}: expected {want} columns")
            if composite:
                key = session.key_codec.encode((
                    session._parse_part(session.key_codec.x_codec, row[0]),
                    session._parse_part(session.key_codec.y_codec, row[1])))
            else:
                key = session.parse_key(row[0])
            items.append((key, session.parse_value(row[-1])))
    return items


# ---------------------------------------------------------------------------
# Subcommands


def cmd_build(args) -> int:
    if not args.db:
        raise CliError("no database given (use --db or AGGTREE_DB)", code=2)
    cfg = {
        "key_codec": args.key_codec,
        "value_codec": args.value_codec,
        "levels": make_levels(args.levels).describe(),
        "auth": args.auth,
    }
    if args.auth:
        cfg["root_hash"] = None
    else:
        cfg["aggregation"] = args.agg
    Meta(args.db, args.table).save(cfg)
    session = Session(args, cfg)
    items = read_csv_items(session, args.csv) if args.csv else []
    session.tree.bulk_build(items)
    session.save_root_hash()
    print(f"built {args.table}: {len(items)} keys")
    session.print_stats(args)
    return 0


def cmd_insert(args) -> int:
    session = open_session(args)
    session.tree.insert(session.parse_key(args.key), session.parse_value(args.value))
    session.save_root_hash()
    session.print_stats(args)
    return 0


def cmd_update(args) -> int:
    session = open_session(args)
    session.tree.update(session.parse_key(args.key), session.parse_value(args.value))
    session.save_root_hash()
    session.print_stats(args)
    return 0


def cmd_delete(args) -> int:
    session = open_session(args)
    session.tree.delete(session.parse_key(args.key))
    session.save_root_hash()
    session.print_stats(args)
    return 0


def cmd_get(args) -> int:
    session = open_session(args)
    value = session.tree.get(session.parse_key(args.key))
    print(session.format_value(value))
    session.print_stats(args)
    return 0


def cmd_query(args) -> int:
    session = open_session(args)
    if session.auth:
        raise CliError("authenticated trees answer per-key lookups, not ranges")
    result = session.tree.aggregate_range_query(
        session.parse_key(args.lo), session.parse_key(args.hi))
    print(session.format_value(result))
    session.print_stats(args)
    return 0


def cmd_groupby(args) -> int:
    session = open_session(args)
    if session.auth:
        raise CliError("authenticated trees answer per-key lookups, not group-by")
    if not isinstance(session.key_codec, CompositeKeyCodec):
        raise CliError("group-by needs a composite key codec")
    x_codec = session.key_codec.x_codec
    y_codec = session.key_codec.y_codec
    xs = None
    if args.x:
        xs = [session.parse_part(x_codec, x) for x in args.x]
    y_lo = session.parse_part(y_codec, args.lo)
    y_hi = session.parse_part(y_codec, args.hi)
    groups = session.tree.group_by_range_query(
        y_lo, y_hi, xs=xs, include_empty=args.include_empty)
    writer = csv.writer(sys.stdout)
    for x_part, value in groups.items():
        writer.writerow([session._fmt(x_codec.decode(x_part)),
                         session.format_value(value)])
    session.print_stats(args)
    return 0


def cmd_verify(args) -> int:
    session = open_session(args)
    nodes = session.store.snapshot()
    if session.auth:
        from .invariants import check_invariants
        violations = check_invariants(nodes, summarize=session.tree.summarize)
    else:
        violations = session.tree.check()
    if violations:
        for v in violations:
            print(v, file=sys.stderr)
        print(f"FAIL: {len(violations)} violations in {len(nodes)} nodes")
        return 4
    print(f"ok: {len(nodes)} nodes")
    return 0


def cmd_auth_root(args) -> int:
    session = open_session(args)
    if not session.auth:
        raise CliError("not an authenticated tree")
    digest = session.tree.root_hash or session.tree.refresh_root_hash()
    session.save_root_hash()
    print(digest.hex())
    return 0


def cmd_auth_prove(args) -> int:
    session = open_session(args)
    if not session.auth:
        raise CliError("not an authenticated tree")
    result = session.tree.get_with_proof(session.parse_key(args.key))
    session.save_root_hash()
    if args.out:
        with open(args.out, "wb") as fh:
            fh.write(result.proof)
    else:
        print(result.proof.hex())
    print(f"{'found' if result.found else 'absent'}", file=sys.stderr)
    session.print_stats(args)
    return 0


def cmd_auth_verify(args) -> int:
    # verification is offline: no tree required, just the proof and anchor
    verifier = ProofVerifier(make_value_codec(args.value_codec))
    with open(args.proof, "rb") as fh:
        proof = fh.read()
    key_codec = make_key_codec(args.key_codec)
    if isinstance(key_codec, CompositeKeyCodec):
        xs, ys = args.key.split(",", 1)
        key = key_codec.encode((Session._parse_part(key_codec.x_codec, xs),
                                Session._parse_part(key_codec.y_codec, ys)))
    else:
        key = key_codec.encode(Session._parse_part(key_codec, args.key))
    outcome = verifier.verify(proof, key, bytes.fromhex(args.root))
    if isinstance(outcome, Invalid):
        print(f"invalid: {outcome.reason}")
        return 4
    if isinstance(outcome, VerifiedValue):
        value = outcome.value
        shown = value.decode("utf-8", "replace") if isinstance(value, bytes) else value
        print(f"verified present: {shown}")
    else:
        print("verified absent")
    return 0


# ---------------------------------------------------------------------------
# Bench


_BENCH_FIELDS = ["operation", "backend", "seed", "n", "r", "read_rounds",
                 "write_rounds", "statements", "nodes_read", "nodes_written",
                 "bytes_read", "rows_scanned", "wall_time_us"]


def _bench_record(operation, backend, seed, n, r, stats, rows_scanned, us):
    return {
        "operation": operation, "backend": backend, "seed": seed, "n": n,
        "r": r, "read_rounds": stats.read_rounds if stats else 0,
        "write_rounds": stats.write_rounds if stats else 0,
        "statements": stats.statements if stats else 0,
        "nodes_read": stats.nodes_read if stats else 0,
        "nodes_written": stats.nodes_written if stats else 0,
        "bytes_read": stats.bytes_read if stats else 0,
        "rows_scanned": rows_scanned, "wall_time_us": us,
    }


def cmd_bench(args) -> int:
    os.makedirs(args.out_dir, exist_ok=True)
    rng = random.Random(args.seed)
    agg = make_aggregation(args.agg)
    codec = NodeCodec(agg.codec, Int64ValueCodec())
    if args.backend == "memory":
        store = MemoryStore(codec)
    else:
        store = SqliteStore(os.path.join(args.out_dir, "bench.sqlite"), codec,
                            name=f"bench_{args.seed}_{rng.randrange(1 << 30)}")
    key_codec = UIntKeyCodec()
    tree = DbTree(store, agg, SeededLevels(args.seed))

    raw_keys = rng.sample(range(args.n * 4), args.n)
    items = [(key_codec.encode(k), rng.randrange(-1000, 1000)) for k in raw_keys]
    records = []

    store.reset_stats()
    t0 = time.perf_counter()
    tree.bulk_build(items)
    records.append(_bench_record("build", args.backend, args.seed, args.n, 0,
                                 store.stats, 0,
                                 int((time.perf_counter() - t0) * 1e6)))

    oracle = FlatTable(items)
    sorted_keys = sorted(k for k, _ in items)
    r = args.min_r
    while r <= min(args.max_r, args.n):
        for _ in range(args.ranges):
            i = rng.randrange(0, args.n - r + 1)
            lo, hi = sorted_keys[i], sorted_keys[i + r - 1]
            store.reset_stats()
            t0 = time.perf_counter()
            tree.aggregate_range_query(lo, hi)
            us = int((time.perf_counter() - t0) * 1e6)
            records.append(_bench_record("query", args.backend, args.seed,
                                         args.n, r, store.stats.snapshot(), 0, us))
            t0 = time.perf_counter()
            scanned = oracle.scan_count(lo, hi)
            us = int((time.perf_counter() - t0) * 1e6)
            records.append(_bench_record("scan", args.backend, args.seed,
                                         args.n, r, None, scanned, us))
        r *= 2

    for _ in range(args.mutations):
        key = key_codec.encode(rng.randrange(args.n * 4, args.n * 5))
        store.reset_stats()
        t0 = time.perf_counter()
        tree.insert(key, 1)
        records.append(_bench_record("insert", args.backend, args.seed, args.n,
                                     1, store.stats.snapshot(), 0,
                                     int((time.perf_counter() - t0) * 1e6)))
        store.reset_stats()
        t0 = time.perf_counter()
        tree.delete(key)
        records.append(_bench_record("delete", args.backend, args.seed, args.n,
                                     1, store.stats.snapshot(), 0,
                                     int((time.perf_counter() - t0) * 1e6)))

    csv_path = os.path.join(args.out_dir, "bench.csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=_BENCH_FIELDS)
        writer.writeheader()
        writer.writerows(records)
    written = [csv_path]
    if not args.no_figures:
        written += _render_figures(records, store, args.out_dir)
    for path in written:
        print(path)
    return 0


def _render_figures(records, store, out_dir: str) -> list[str]:
    import math

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    by_r: dict[int, list] = {}
    for rec in records:
        if rec["operation"] == "query":
            by_r.setdefault(rec["r"], []).append(rec["nodes_read"])
    rs = sorted(by_r)
    paths = []

    if rs:
        means = [sum(v) / len(v) for v in (by_r[r] for r in rs)]
        bound = [4 * math.log2(r) + 8 for r in rs]
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(rs, means, marker="o", label="nodes read per query")
        ax.plot(rs, bound, linestyle="--", label="4*log2(r) + 8")
        ax.plot(rs, rs, linestyle=":", label="rows a scan touches")
        ax.set_xscale("log", base=2)
        ax.set_yscale("log", base=2)
        ax.set_xlabel("keys in range (r)")
        ax.set_ylabel("rows transferred")
        ax.legend()
        fig.tight_layout()
        p = os.path.join(out_dir, "bench_query_cost.png")
        fig.savefig(p, dpi=120)
        plt.close(fig)
        paths.append(p)

    levels: dict[int, int] = {}
    for node in store.snapshot():
        if not node.is_root:
            levels[node.level] = levels.get(node.level, 0) + 1
    if levels:
        ls = sorted(levels)
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.bar(ls, [levels[l] for l in ls])
        ax.set_yscale("log")
        ax.set_xlabel("level")
        ax.set_ylabel("nodes")
        fig.tight_layout()
        p = os.path.join(out_dir, "bench_levels.png")
        fig.savefig(p, dpi=120)
        plt.close(fig)
        paths.append(p)
    return paths


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aggtree",
        description="Aggregate range index stored as database rows")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--db", default=os.environ.get("AGGTREE_DB"),
                        help="sqlite database path (or set AGGTREE_DB)")
    common.add_argument("--table", default="tree", help="tree name in the db")
    common.add_argument("--stats", action="store_true",
                        help="print round statistics to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", parents=[common],
                       help="create a tree and load it from CSV")
    p.add_argument("csv", nargs="?", help="rows of key,value (or x,y,value)")
    p.add_argument("--agg", default="sum")
    p.add_argument("--key-codec", default="uint64")
    p.add_argument("--value-codec", default="int64")
    p.add_argument("--levels", default="derandomized")
    p.add_argument("--auth", action="store_true",
                   help="store digests instead of aggregates")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("insert", parents=[common], help="insert one pair")
    p.add_argument("key")
    p.add_argument("value")
    p.set_defaults(func=cmd_insert)

    p = sub.add_parser("update", parents=[common], help="replace one value")
    p.add_argument("key")
    p.add_argument("value")
    p.set_defaults(func=cmd_update)

    p = sub.add_parser("delete", parents=[common], help="remove one key")
    p.add_argument("key")
    p.set_defaults(func=cmd_delete)

    p = sub.add_parser("get", parents=[common], help="look up one key")
    p.add_argument("key")
    p.set_defaults(func=cmd_get)

    p = sub.add_parser("query", parents=[common],
                       help="aggregate over a closed key range")
    p.add_argument("lo")
    p.add_argument("hi")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("groupby", parents=[common],
                       help="per-group aggregates over a y range")
    p.add_argument("lo")
    p.add_argument("hi")
    p.add_argument("--x", action="append",
                   help="restrict to these groups (repeatable)")
    p.add_argument("--include-empty", action="store_true")
    p.set_defaults(func=cmd_groupby)

    p = sub.add_parser("verify", parents=[common],
                       help="check structural invariants over a full dump")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("auth-root", parents=[common],
                       help="print the trusted root digest")
    p.set_defaults(func=cmd_auth_root)

    p = sub.add_parser("auth-prove", parents=[common],
                       help="write a membership/absence proof")
    p.add_argument("key")
    p.add_argument("--out", help="proof file (hex to stdout when omitted)")
    p.set_defaults(func=cmd_auth_prove)

    p = sub.add_parser("auth-verify",
                       help="check a proof offline against a root digest")
    p.add_argument("key")
    p.add_argument("--proof", required=True)
    p.add_argument("--root", required=True, help="trusted root digest, hex")
    p.add_argument("--key-codec", default="uint64")
    p.add_argument("--value-codec", default="int64")
    p.set_defaults(func=cmd_auth_verify)

    p = sub.add_parser("bench", parents=[common],
                       help="measure query/mutation transfer costs")
    p.add_argument("--backend", choices=["memory", "sqlite"], default="memory")
    p.add_argument("--n", type=int, default=20000)
    p.add_argument("--ranges", type=int, default=50,
                   help="queries per range size")
    p.add_argument("--min-r", type=int, default=16)
    p.add_argument("--max-r", type=int, default=4096)
    p.add_argument("--mutations", type=int, default=100)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--agg", default="sum")
    p.add_argument("--out-dir", default="bench_out")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (KeyNotFound, DuplicateKey) as exc:
        kind = "duplicate key" if isinstance(exc, DuplicateKey) else "key not found"
        print(f"error: {kind}", file=sys.stderr)
        return 3
    except (InvalidRange, CodecError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except TamperDetected as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return 4
    except (sqlite3.Error, UnsupportedSelection, OSError) as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
