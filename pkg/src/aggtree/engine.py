"""Query evaluation and mutation planning.

The planners in this module are pure functions from nodes-read to a
WriteSet, parameterized by a ``summarize`` callable that turns a node into
the carrier its parent stores (an aggregate fold for data trees, a digest
for authenticated ones).  The DbTree class wires planners to a store so
that every read operation costs exactly one read round and every mutation
exactly one read round plus one write round.
"""

from __future__ import annotations

import hashlib
import random
from bisect import bisect_left, bisect_right
from typing import Callable, Iterable, Optional, Sequence

from .aggregation import Aggregation
from .keys import Bound
from .node import (
    Node,
    ROOT_LEVEL,
    clear_adjacent_agg,
    insert_pair,
    merge_nodes,
    node_fold,
    remove_pair,
    replace_value,
    set_adjacent_agg,
    split_node,
    with_bounds,
)
from .store import (
    LeftFringe,
    MemoryStore,
    MinLevelEnclosing,
    NodeStore,
    PathTo,
    RightFringe,
    TouchingKey,
    WriteSet,
)


class KeyNotFound(KeyError):
    """The key is not in the tree.  Raised after the read round; nothing
    is written."""


class DuplicateKey(ValueError):
    """Insert of a key that is already present.  Raised after the read
    round; nothing is written."""


class InvalidRange(ValueError):
    """Range query with lower bound above upper bound."""


class CorruptTree(RuntimeError):
    """The rows read back contradict the structural invariants.  Planning
    stops before anything is written."""


# ---------------------------------------------------------------------------
# Level assignment


class SeededLevels:
    """Geometric level draws from a seeded generator, one draw per insert.

    Draw order matters: the same keys inserted in a different order yield a
    different tree.  Use DerandomizedLevels when the outcome must be a pure
    function of the key set.
    """

    def __init__(self, seed: int, p: float = 0.5):
        if not 0 < p < 1:
            raise ValueError("promotion probability must be in (0, 1)")
        self.seed = seed
        self.p = p
        self._rng = random.Random(seed)

    def level_for(self, key: bytes) -> int:
        level = 0
        while self._rng.random() < self.p:
            level += 1
        return level

    def describe(self) -> dict:
        return {"kind": "seeded", "seed": self.seed, "p": self.p}


class DerandomizedLevels:
    """Level as the run of leading one bits in a keyed hash of the key.

    Each bit is an independent fair coin, so levels are geometric with
    p = 1/2, but fixed per key: any insertion order, with any interleaved
    deletes, converges to the same stored bytes.  Authenticated trees
    require this mode so that proofs do not depend on history.
    """

    def __init__(self, salt: bytes = b"", algorithm: str = "sha256"):
        self.salt = bytes(salt)
        self.algorithm = algorithm
        hashlib.new(algorithm)  # fail fast on unknown digests

    def level_for(self, key: bytes) -> int:
        h = hashlib.new(self.algorithm)
        h.update(self.salt)
        h.update(key)
        level = 0
        for byte in h.digest():
            for shift in range(7, -1, -1):
                if byte >> shift & 1:
                    level += 1
                else:
                    return level
        return level

    def describe(self) -> dict:
        return {"kind": "derandomized", "salt": self.salt.hex(),
                "algorithm": self.algorithm}


class FixedLevels:
    """Explicit key-to-level mapping, for reproducing exact shapes."""

    def __init__(self, mapping: dict):
        self.mapping = dict(mapping)

    def level_for(self, key: bytes) -> int:
        return self.mapping[key]

    def describe(self) -> dict:
        return {"kind": "fixed"}


def level_source_from_config(cfg: dict):
    kind = cfg.get("kind")
    if kind == "seeded":
        return SeededLevels(int(cfg["seed"]), float(cfg.get("p", 0.5)))
    if kind == "derandomized":
        return DerandomizedLevels(bytes.fromhex(cfg.get("salt", "")),
                                  cfg.get("algorithm", "sha256"))
    raise ValueError(f"unknown level source {cfg!r}")


# ---------------------------------------------------------------------------
# Range computation over fringe slices


def fold_tail(node: Node, lo: bytes, agg: Aggregation, slot_ok=None):
    """Fold the suffix of the sequence from the first key >= lo.

    Covers that key's value, every later value, and the slots to their
    right.  Returns (carrier, number of elements folded).
    """
    keys = node.keys()
    i = bisect_left(keys, lo)
    acc = agg.identity
    n = 0
    for j in range(i, node.m):
        acc = agg.combine(acc, agg.lift(node.pairs[j][1]))
        n += 1
        a = node.aggs[j + 1]
        if a is not None and (slot_ok is None or slot_ok(*node.child_range(j + 1))):
            acc = agg.combine(acc, a)
            n += 1
    return acc, n


def fold_head(node: Node, hi: bytes, agg: Aggregation, slot_ok=None):
    """Fold the prefix of the sequence up to the last key <= hi.

    Covers every value up to that key and the slots to their left."""
    keys = node.keys()
    last = bisect_right(keys, hi) - 1
    acc = agg.identity
    n = 0
    for j in range(0, last + 1):
        a = node.aggs[j]
        if a is not None and (slot_ok is None or slot_ok(*node.child_range(j))):
            acc = agg.combine(acc, a)
            n += 1
        acc = agg.combine(acc, agg.lift(node.pairs[j][1]))
        n += 1
    return acc, n


def fold_mid(node: Node, lo: bytes, hi: bytes, agg: Aggregation, slot_ok=None):
    """Fold the keys of one node inside [lo, hi] and the slots between them.

    The flanking slots stay out: their subtrees extend past the bounds and
    are covered by the fringe folds instead."""
    keys = node.keys()
    i = bisect_left(keys, lo)
    last = bisect_right(keys, hi) - 1
    acc = agg.identity
    n = 0
    for j in range(i, last + 1):
        if j > i:
            a = node.aggs[j]
            if a is not None and (slot_ok is None or slot_ok(*node.child_range(j))):
                acc = agg.combine(acc, a)
                n += 1
        acc = agg.combine(acc, agg.lift(node.pairs[j][1]))
        n += 1
    return acc, n


def compute_range_aggregate(left_rows: Sequence[Node], right_rows: Sequence[Node],
                            enclosing: Node, lo: bytes, hi: bytes,
                            agg: Aggregation, slot_ok=None):
    """Combine the three selections of a range read into one carrier.

    left_rows and right_rows ascend by level.  Left suffixes append on the
    right of the accumulator and right prefixes prepend, because a higher
    fringe node's slice always lies farther from the range bounds than
    everything below it.  Returns (carrier, elements folded).
    """
    total = 0
    acc = agg.identity
    for node in left_rows:
        part, n = fold_tail(node, lo, agg, slot_ok)
        acc = agg.combine(acc, part)
        total += n
    part, n = fold_mid(enclosing, lo, hi, agg, slot_ok)
    acc = agg.combine(acc, part)
    total += n
    right = agg.identity
    for node in right_rows:
        part, n = fold_head(node, hi, agg, slot_ok)
        right = agg.combine(part, right)
        total += n
    return agg.combine(acc, right), total


# ---------------------------------------------------------------------------
# Mutation planning


def propagate(chain: Sequence[Node], summarize: Callable[[Node], object],
              kref: bytes) -> list[Node]:
    """Refresh ancestor slots along an ascending chain.

    kref locates the affected slot in every node above the first: it must
    fall inside the relevant gap of each of them and be a key of none.
    Returns the chain with every node above the first rewritten.
    """
    out = [chain[0]]
    acc = summarize(chain[0])
    for node in chain[1:]:
        node = set_adjacent_agg(node, kref, acc)
        out.append(node)
        acc = summarize(node)
    return out


def plan_insert(path: Sequence[Node], key: bytes, value, level: int,
                summarize: Callable[[Node], object]) -> WriteSet:
    """Turn the root path read for an insert into a WriteSet.

    path ascends from the deepest node whose open range holds the key up to
    the root.  Nodes below the drawn level split around the key; the node
    at the drawn level (created if absent) takes the pair; both split
    towers and the untouched ancestors get their flanking slots refreshed.
    """
    if not path or not path[-1].is_root:
        raise CorruptTree("read path does not reach the root")
    if level >= ROOT_LEVEL:
        raise ValueError("level out of range")
    for n in path:
        if n.contains_key(key):
            raise DuplicateKey(key)

    below = [n for n in path if n.level < level]
    at = [n for n in path if n.level == level]
    above = [n for n in path if n.level > level]

    if at:
        target = at[0]
    else:
        _, lo, hi = above[0].slot_for(key)
        target = Node(level, lo, hi, (), ())

    deletes = tuple(n.ident for n in below)
    lefts, rights = [], []
    for n in below:
        left, right = split_node(n, key)
        if left is not None:
            lefts.append(left)
        if right is not None:
            rights.append(right)

    target = insert_pair(target, key, value)
    up_left: list[Node] = []
    up_right: list[Node] = []
    if lefts:
        chain = propagate(lefts + [target], summarize, kref=lefts[0].keys()[0])
        up_left, target = chain[:-1], chain[-1]
    if rights:
        chain = propagate(rights + [target], summarize, kref=rights[0].keys()[0])
        up_right, target = chain[:-1], chain[-1]
    chain = propagate([target] + above, summarize, kref=key)
    target, up_above = chain[0], chain[1:]

    upserts = tuple(up_left + up_right + [target] + up_above)
    return WriteSet(deletes=deletes, upserts=upserts, key_inserts=(key,))


def plan_update(path: Sequence[Node], key: bytes, value,
                summarize: Callable[[Node], object]) -> WriteSet:
    """Replace a value in place and refresh the slots above it."""
    if not path or not path[0].contains_key(key):
        raise KeyNotFound(key)
    holder = replace_value(path[0], key, value)
    chain = propagate([holder] + list(path[1:]), summarize, kref=key)
    return WriteSet(upserts=tuple(chain))


def plan_delete(rows: Sequence[Node], key: bytes,
                summarize: Callable[[Node], object]) -> WriteSet:
    """Turn the rows touching a key into the WriteSet removing it.

    The rows split into the holder, the towers bounded by the key on
    either side, and the ancestors.  Side towers at one level rejoin into a
    single node spanning the junction gap of the level above; a tower
    present on only one side widens instead.  Ancestor slots then refresh
    through the rebuilt chain.
    """
    kb = Bound.of(key)
    holder = None
    left_tower: list[Node] = []
    right_tower: list[Node] = []
    above: list[Node] = []
    for n in rows:
        if n.contains_key(key):
            if holder is not None:
                raise CorruptTree("key held by two nodes")
            holder = n
        elif n.max == kb:
            left_tower.append(n)
        elif n.min == kb:
            right_tower.append(n)
        elif n.in_open_range(key):
            above.append(n)
        else:
            raise CorruptTree("row does not touch the key")
    if holder is None:
        raise KeyNotFound(key)
    if not above:
        raise CorruptTree("holder has no ancestors, not even the root")

    by_level: dict[int, list] = {}
    for n in left_tower + right_tower:
        if n.level >= holder.level:
            raise CorruptTree("side tower reaches the holder's level")
        by_level.setdefault(n.level, [None, None])
    for n in left_tower:
        if by_level[n.level][0] is not None:
            raise CorruptTree("two left nodes on one level")
        by_level[n.level][0] = n
    for n in right_tower:
        if by_level[n.level][1] is not None:
            raise CorruptTree("two right nodes on one level")
        by_level[n.level][1] = n
    for n in above:
        if n.level <= holder.level:
            raise CorruptTree("ancestor at or below the holder's level")

    removed = remove_pair(holder, key)
    deletes = {n.ident for n in left_tower + right_tower}

    rebuilt_desc: list[Node] = []
    reference = removed
    for lvl in sorted(by_level, reverse=True):
        _, gap_lo, gap_hi = reference.slot_for(key)
        left, right = by_level[lvl]
        if left is not None and left.min != gap_lo:
            raise CorruptTree("left tower does not start at the junction gap")
        if right is not None and right.max != gap_hi:
            raise CorruptTree("right tower does not end at the junction gap")
        if left is not None and right is not None:
            joined = merge_nodes(left, right, gap_lo, gap_hi)
        elif left is not None:
            joined = with_bounds(left, new_max=gap_hi)
        else:
            joined = with_bounds(right, new_min=gap_lo)
        rebuilt_desc.append(joined)
        reference = joined
    rebuilt = list(reversed(rebuilt_desc))

    if removed.m == 0:
        deletes.add(holder.ident)
        if rebuilt:
            # the top rebuilt node spans exactly the holder's old range, so
            # the parent slot refreshes by ordinary propagation
            chain = rebuilt + above
        else:
            cleared = clear_adjacent_agg(above[0], key)
            chain = [cleared] + above[1:]
    else:
        chain = rebuilt + [removed] + above

    out = propagate(chain, summarize, kref=key) if len(chain) > 1 else list(chain)
    return WriteSet(deletes=tuple(sorted(deletes, key=_ident_order)),
                    upserts=tuple(out), key_deletes=(key,))


def _ident_order(ident):
    level, mn, mx = ident
    return (level, mn.encoded(), mx.encoded())


# ---------------------------------------------------------------------------


def data_summarizer(agg: Aggregation) -> Callable[[Node], object]:
    """Summary stored in parent slots of a data tree: fold of the child."""
    return lambda node: node_fold(node, agg.combine, agg.lift, agg.identity)


class DbTree:
    """Aggregate index over an external node store.

    Keys and range bounds are encoded bytes (see the key codecs); values
    are whatever the store's value codec accepts.  Every public read is one
    read round; every mutation is one read round and one write round, with
    errors raised in between so a failed operation writes nothing.
    """

    def __init__(self, store: NodeStore, aggregation: Aggregation, levels,
                 composite=None):
        if not aggregation.associative:
            raise ValueError(
                f"range queries need an associative combine; "
                f"{aggregation.name!r} is not")
        self.store = store
        self.aggregation = aggregation
        self.levels = levels
        self.composite = composite
        self.summarize = data_summarizer(aggregation)

    # -- reads ------------------------------------------------------------

    def get(self, key: bytes):
        (path,) = self.store.read_round([PathTo(key)])
        if path and path[0].contains_key(key):
            return path[0].pairs[path[0].key_index(key)][1]
        raise KeyNotFound(key)

    def aggregate_range_query(self, lo: bytes, hi: bytes, raw: bool = False):
        """Aggregate of every value with lo <= key <= hi, in one read round.

        raw=True returns the carrier before the finishing step (useful for
        combining results client-side)."""
        if lo > hi:
            raise InvalidRange("lower bound above upper bound")
        left_rows, right_rows, enclosing = self.store.read_round([
            LeftFringe(lo, hi),
            RightFringe(lo, hi),
            MinLevelEnclosing(lo, hi),
        ])
        if not enclosing:
            raise CorruptTree("no enclosing node, the root should always qualify")
        acc, _ = compute_range_aggregate(left_rows, right_rows, enclosing[0],
                                         lo, hi, self.aggregation)
        return acc if raw else self.aggregation.finish(acc)

    def group_by_range_query(self, y_lo: bytes, y_hi: bytes, xs=None,
                             include_empty: bool = False, raw: bool = False):
        from .groupby import group_by_range_query
        return group_by_range_query(self, y_lo, y_hi, xs=xs,
                                    include_empty=include_empty, raw=raw)

    # -- mutations ----------------------------------------------------------

    def insert(self, key: bytes, value) -> None:
        (path,) = self.store.read_round([PathTo(key)])
        for n in path:
            if n.contains_key(key):
                raise DuplicateKey(key)
        level = self.levels.level_for(key)
        ws = plan_insert(path, key, value, level, self.summarize)
        self.store.write_round(ws)

    def update(self, key: bytes, value) -> None:
        (path,) = self.store.read_round([PathTo(key)])
        ws = plan_update(path, key, value, self.summarize)
        self.store.write_round(ws)

    def delete(self, key: bytes) -> None:
        (rows,) = self.store.read_round([TouchingKey(key)])
        ws = plan_delete(rows, key, self.summarize)
        self.store.write_round(ws)

    def bulk_build(self, items: Iterable[tuple[bytes, object]]) -> None:
        """Load an empty tree with one write round.

        The structure is planned locally (levels drawn in item order), then
        written out as a single batch.  The emptiness check reads the
        store's dump rather than issuing a counted round."""
        current = self.store.snapshot()
        if len(current) != 1 or current[0].aggs or current[0].pairs:
            raise ValueError("bulk build requires an empty tree")
        scratch = MemoryStore(self.store.codec)
        keys = []
        for key, value in items:
            (path,) = scratch.read_round([PathTo(key)])
            for n in path:
                if n.contains_key(key):
                    raise DuplicateKey(key)
            level = self.levels.level_for(key)
            scratch.write_round(plan_insert(path, key, value, level, self.summarize))
            keys.append(key)
        self.store.write_round(WriteSet(upserts=tuple(scratch.snapshot()),
                                        key_inserts=tuple(keys)))

    def batch_insert(self, items: Iterable[tuple[bytes, object]]) -> None:
        """Insert several keys with one read round and one write round.

        All root paths are read together; planning then replays the inserts
        against a local overlay of those rows.  Every node a later insert
        must touch is either on one of the read paths or created by an
        earlier insert in the batch, so the overlay sees the same rows a
        fresh read would."""
        items = list(items)
        if not items:
            return
        paths = self.store.read_round([PathTo(key) for key, _ in items])
        scratch = MemoryStore(self.store.codec)
        seed = {}
        for path in paths:
            for n in path:
                seed[n.ident] = n
        scratch.write_round(WriteSet(upserts=tuple(seed.values())))

        deletes: set = set()
        pending: dict = {}
        key_inserts: list[bytes] = []
        for key, value in items:
            (path,) = scratch.read_round([PathTo(key)])
            for n in path:
                if n.contains_key(key):
                    raise DuplicateKey(key)
            level = self.levels.level_for(key)
            ws = plan_insert(path, key, value, level, self.summarize)
            scratch.write_round(ws)
            for ident in ws.deletes:
                pending.pop(ident, None)
                deletes.add(ident)
            for node in ws.upserts:
                pending[node.ident] = node
                deletes.discard(node.ident)
            key_inserts.extend(ws.key_inserts)
        self.store.write_round(WriteSet(
            deletes=tuple(sorted(deletes, key=_ident_order)),
            upserts=tuple(sorted(pending.values(), key=lambda n: _ident_order(n.ident))),
            key_inserts=tuple(key_inserts)))

    # -- maintenance --------------------------------------------------------

    def check(self) -> list:
        """Structural and aggregate invariant violations, empty when sound."""
        from .invariants import check_invariants
        return check_invariants(self.store.snapshot(), aggregation=self.aggregation)
