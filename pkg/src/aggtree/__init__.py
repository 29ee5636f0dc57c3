"""Aggregate range index stored as rows in an external database.

The tree keeps one row per node and no pointers; structure is recovered
from (level, range) alone.  Any closed key range can be aggregated in a
single read round, and a mutation costs one read round plus one write
round, so the library works over high-latency stores without giving up
exact answers.
"""

from .aggregation import (
    AggregateOverflow,
    Aggregation,
    make_avg,
    make_count,
    make_digest_hook,
    make_max,
    make_min,
    make_product,
    make_sum,
    make_top_n,
)
from .auth import (
    AuthDbTree,
    Invalid,
    ProofVerifier,
    TamperDetected,
    VerifiedAbsent,
    VerifiedValue,
    empty_tree_digest,
    node_digest,
    parse_proof,
    serialize_proof,
)
from .engine import (
    CorruptTree,
    DbTree,
    DerandomizedLevels,
    DuplicateKey,
    FixedLevels,
    InvalidRange,
    KeyNotFound,
    SeededLevels,
    level_source_from_config,
)
from .invariants import Violation, check_invariants
from .keys import (
    NEG_INF,
    POS_INF,
    Bound,
    BytesKeyCodec,
    CodecError,
    CompositeKeyCodec,
    IntKeyCodec,
    TextKeyCodec,
    UIntKeyCodec,
    split_bound_parts,
    tag_part,
)
from .node import (
    ROOT_LEVEL,
    BytesValueCodec,
    Int64ValueCodec,
    Node,
    NodeCodec,
    empty_root,
)
from .oracle import FlatTable, direct_aggregate, rebuild_reference_tree, scan_aggregate
from .sql import SQLITE, Dialect, SqliteStore, TableSchema, compile_selection
from .store import (
    LeftFringe,
    MemoryStore,
    MinLevelEnclosing,
    NodeStore,
    PathTo,
    RightFringe,
    RoundStats,
    TouchingKey,
    WriteSet,
    canonical_snapshot,
)

__version__ = "0.1.0"

__all__ = [
    "AggregateOverflow",
    "Aggregation",
    "AuthDbTree",
    "Bound",
    "BytesKeyCodec",
    "BytesValueCodec",
    "canonical_snapshot",
    "check_invariants",
    "CodecError",
    "compile_selection",
    "CompositeKeyCodec",
    "CorruptTree",
    "DbTree",
    "DerandomizedLevels",
    "Dialect",
    "direct_aggregate",
    "DuplicateKey",
    "empty_root",
    "empty_tree_digest",
    "FixedLevels",
    "FlatTable",
    "Int64ValueCodec",
    "IntKeyCodec",
    "Invalid",
    "InvalidRange",
    "KeyNotFound",
    "LeftFringe",
    "level_source_from_config",
    "make_avg",
    "make_count",
    "make_digest_hook",
    "make_max",
    "make_min",
    "make_product",
    "make_sum",
    "make_top_n",
    "MemoryStore",
    "MinLevelEnclosing",
    "NEG_INF",
    "Node",
    "node_digest",
    "NodeCodec",
    "NodeStore",
    "parse_proof",
    "PathTo",
    "POS_INF",
    "ProofVerifier",
    "rebuild_reference_tree",
    "RightFringe",
    "ROOT_LEVEL",
    "RoundStats",
    "scan_aggregate",
    "SeededLevels",
    "serialize_proof",
    "split_bound_parts",
    "SQLITE",
    "SqliteStore",
    "TableSchema",
    "tag_part",
    "TamperDetected",
    "TextKeyCodec",
    "TouchingKey",
    "UIntKeyCodec",
    "VerifiedAbsent",
    "VerifiedValue",
    "Violation",
    "WriteSet",
]
