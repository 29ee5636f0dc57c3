"""Storage contract: batched selections, atomic write sets, round counting.

The index's efficiency claim is phrased in rounds: every read operation
issues one batch of selections answered against a single consistent
snapshot, and every mutation follows with one atomic write set.  The store
interface makes rounds explicit so tests can assert the contract exactly.

Selections return nodes ordered by ascending (level, min, max).  Stores are
single-writer: concurrent readers are fine, interleaved writers are not.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .keys import Bound, CompositeKeyCodec, split_bound_parts, tag_part
from .node import Node, NodeCodec, NodeId, empty_root


# ---------------------------------------------------------------------------
# Selections


@dataclass(frozen=True)
class PathTo:
    """Nodes whose open range holds the key: the key's root path."""
    key: bytes


@dataclass(frozen=True)
class TouchingKey:
    """Nodes whose closed range touches the key: the path plus both
    chains of nodes bounded exactly by it."""
    key: bytes


@dataclass(frozen=True)
class LeftFringe:
    """min < lo < max <= hi: left-edge nodes of the range [lo, hi]."""
    lo: bytes
    hi: bytes


@dataclass(frozen=True)
class RightFringe:
    """lo <= min < hi < max: right-edge nodes of the range [lo, hi]."""
    lo: bytes
    hi: bytes


@dataclass(frozen=True)
class MinLevelEnclosing:
    """The lowest node strictly enclosing [lo, hi] (always exists: the root
    encloses everything)."""
    lo: bytes
    hi: bytes


@dataclass(frozen=True)
class GroupLeftFringe:
    """Composite trees: union over all x of left-edge nodes for the per-x
    range [(x, y_lo), (x, y_hi)].  Nodes whose bounds span several x values
    qualify through the boundary disjunct."""
    y_lo: bytes
    y_hi: bytes


@dataclass(frozen=True)
class GroupRightFringe:
    y_lo: bytes
    y_hi: bytes


@dataclass(frozen=True)
class GroupEnclosing:
    """Composite trees: per-x lowest enclosing nodes.

    With explicit xs: one result node per x, in xs order.  With xs=None the
    result is the candidate superset (nodes whose y-span covers (y_lo, y_hi)
    plus all boundary-spanning nodes); the caller narrows per x, pairing
    with a DistinctX issued in the same round.
    """
    xs: Optional[tuple]
    y_lo: bytes
    y_hi: bytes


@dataclass(frozen=True)
class DistinctX:
    """Composite trees: sorted distinct x parts present in the data.
    Returns raw x-part bytes, not nodes."""


Selection = (PathTo, TouchingKey, LeftFringe, RightFringe, MinLevelEnclosing,
             GroupLeftFringe, GroupRightFringe, GroupEnclosing, DistinctX)


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WriteSet:
    """One atomic batch of changes: deletes apply before upserts.

    A node id never appears both in deletes and among upsert identities;
    deleting an absent id is a no-op.  key_inserts/key_deletes carry the
    logical key-set delta for backends that maintain a companion key table
    (needed to answer DistinctX without scanning payloads).
    """

    deletes: tuple = ()
    upserts: tuple = ()
    key_inserts: tuple = ()
    key_deletes: tuple = ()

    def __post_init__(self):
        ids = {n.ident for n in self.upserts}
        overlap = ids & set(self.deletes)
        if overlap:
            raise ValueError(f"ids both deleted and upserted: {overlap}")


@dataclass
class RoundStats:
    """Transfer/round counters, reset between measured operations."""

    read_rounds: int = 0
    write_rounds: int = 0
    statements: int = 0
    nodes_read: int = 0
    nodes_written: int = 0
    bytes_read: int = 0

    def snapshot(self) -> "RoundStats":
        return RoundStats(self.read_rounds, self.write_rounds, self.statements,
                          self.nodes_read, self.nodes_written, self.bytes_read)

    def delta(self, before: "RoundStats") -> "RoundStats":
        return RoundStats(
            self.read_rounds - before.read_rounds,
            self.write_rounds - before.write_rounds,
            self.statements - before.statements,
            self.nodes_read - before.nodes_read,
            self.nodes_written - before.nodes_written,
            self.bytes_read - before.bytes_read,
        )


class NodeStore:
    """Abstract node storage addressed by (level, min, max).

    read_round evaluates a batch of selections against one snapshot and
    returns one result list per selection.  write_round applies a WriteSet
    atomically.  snapshot dumps every node (maintenance plumbing, not
    counted as a round).
    """

    stats: RoundStats

    def read_round(self, selections: Sequence) -> list[list]:
        raise NotImplementedError

    def write_round(self, ws: WriteSet) -> None:
        raise NotImplementedError

    def snapshot(self) -> list[Node]:
        raise NotImplementedError

    def reset_stats(self) -> None:
        self.stats = RoundStats()


def _row_bytes(codec: NodeCodec, node: Node) -> int:
    return (len(codec.encode_payload(node))
            + len(node.min.encoded()) + len(node.max.encoded()) + 8)


def canonical_snapshot(nodes: Iterable[Node], codec: NodeCodec) -> bytes:
    """Deterministic byte form of a snapshot, for exact comparisons."""
    rows = sorted(
        (n.level, n.min.encoded(), n.max.encoded(), codec.encode_payload(n))
        for n in nodes
    )
    out = bytearray()
    for level, mn, mx, payload in rows:
        out += level.to_bytes(8, "big")
        for part in (mn, mx, payload):
            out += len(part).to_bytes(4, "big") + part
    return bytes(out)


_SORT = lambda n: (n.level, n.min.encoded(), n.max.encoded())


class MemoryStore(NodeStore):
    """Dictionary-backed store.

    Path-shaped selections are answered by walking ranges down from the
    root (logarithmic work), group selections by a predicate scan; both
    agree with a plain filter over the snapshot.  ``pre_commit`` is a test
    hook invoked after staging and before any visible change, so a raising
    hook exercises write atomicity.
    """

    def __init__(self, codec: NodeCodec, composite: CompositeKeyCodec = None,
                 pre_commit=None):
        self.codec = codec
        self.composite = composite
        self.pre_commit = pre_commit
        self._nodes: dict[NodeId, Node] = {}
        self._by_range: dict[tuple, Node] = {}
        self._root: Node = empty_root()
        self._nodes[self._root.ident] = self._root
        self.stats = RoundStats()

    # -- reads ------------------------------------------------------------

    def read_round(self, selections: Sequence) -> list[list]:
        self.stats.read_rounds += 1
        self.stats.statements += len(selections)
        out = []
        for sel in selections:
            rows = self._evaluate(sel)
            out.append(rows)
            if isinstance(sel, DistinctX):
                self.stats.bytes_read += sum(len(x) for x in rows)
            else:
                self.stats.nodes_read += len(rows)
                self.stats.bytes_read += sum(_row_bytes(self.codec, n) for n in rows)
        return out

    def _child(self, lo: Bound, hi: Bound) -> Optional[Node]:
        return self._by_range.get((lo, hi))

    def _path_to(self, key: bytes) -> list[Node]:
        """Nodes whose open range holds key, ascending level."""
        down = []
        node = self._root
        while node is not None:
            down.append(node)
            if node.contains_key(key):
                break
            if not node.aggs:
                break
            _, lo, hi = node.slot_for(key)
            node = self._child(lo, hi)
        down.reverse()
        return down

    def _evaluate(self, sel) -> list:
        if isinstance(sel, PathTo):
            return self._path_to(sel.key)
        if isinstance(sel, TouchingKey):
            path = self._path_to(sel.key)
            rows = list(path)
            holder = path[0] if path and path[0].contains_key(sel.key) else None
            if holder is not None:
                kb = Bound.of(sel.key)
                node = self._child(holder.child_range(holder.key_index(sel.key))[0], kb)
                while node is not None:  # chain of nodes ending exactly at key
                    rows.append(node)
                    node = self._child(node.child_range(node.m)[0], kb)
                node = self._child(kb, holder.child_range(holder.key_index(sel.key) + 1)[1])
                while node is not None:  # chain of nodes starting exactly at key
                    rows.append(node)
                    node = self._child(kb, node.child_range(0)[1])
            return sorted(rows, key=_SORT)
        if isinstance(sel, LeftFringe):
            return [n for n in self._path_to(sel.lo) if n.max <= sel.hi]
        if isinstance(sel, RightFringe):
            return [n for n in self._path_to(sel.hi) if n.min >= sel.lo]
        if isinstance(sel, MinLevelEnclosing):
            for n in self._path_to(sel.lo):
                if n.max > sel.hi:
                    return [n]
            return []
        if isinstance(sel, GroupLeftFringe):
            self._need_composite()
            lo, hi = tag_part(sel.y_lo), tag_part(sel.y_hi)
            rows = [n for n in self._nodes.values()
                    if self._group_left_pred(n, lo, hi)]
            return sorted(rows, key=_SORT)
        if isinstance(sel, GroupRightFringe):
            self._need_composite()
            lo, hi = tag_part(sel.y_lo), tag_part(sel.y_hi)
            rows = [n for n in self._nodes.values()
                    if self._group_right_pred(n, lo, hi)]
            return sorted(rows, key=_SORT)
        if isinstance(sel, GroupEnclosing):
            self._need_composite()
            if sel.xs is None:
                lo, hi = tag_part(sel.y_lo), tag_part(sel.y_hi)
                rows = [n for n in self._nodes.values()
                        if self._group_candidate_pred(n, lo, hi)]
                return sorted(rows, key=_SORT)
            out = []
            for x in sel.xs:
                lo = self.composite.compose(x, sel.y_lo)
                hi = self.composite.compose(x, sel.y_hi)
                got = self._evaluate(MinLevelEnclosing(lo, hi))
                out.extend(got)
            return out
        if isinstance(sel, DistinctX):
            self._need_composite()
            xs = {self.composite.split(k)[0]
                  for n in self._nodes.values() for k, _ in n.pairs}
            return sorted(xs)
        raise TypeError(f"unknown selection {sel!r}")

    def _need_composite(self):
        if self.composite is None:
            raise TypeError("group selections require a composite key codec")

    def _parts(self, n: Node):
        return (*split_bound_parts(n.min, self.composite),
                *split_bound_parts(n.max, self.composite))

    def _group_left_pred(self, n, y_lo, y_hi) -> bool:
        min_x, min_y, max_x, max_y = self._parts(n)
        return y_lo < max_y <= y_hi and (min_y < y_lo or min_x != max_x)

    def _group_right_pred(self, n, y_lo, y_hi) -> bool:
        min_x, min_y, max_x, max_y = self._parts(n)
        return y_lo <= min_y < y_hi and (y_hi < max_y or min_x != max_x)

    def _group_candidate_pred(self, n, y_lo, y_hi) -> bool:
        min_x, min_y, max_x, max_y = self._parts(n)
        return (min_y < y_lo and max_y > y_hi) or min_x != max_x

    # -- writes -----------------------------------------------------------

    def write_round(self, ws: WriteSet) -> None:
        for nid in ws.deletes:
            if nid == self._root.ident:
                raise ValueError("the root row is replaced, never deleted")
        if self.pre_commit is not None:
            self.pre_commit(ws)
        for nid in ws.deletes:
            node = self._nodes.pop(nid, None)
            if node is not None and not node.is_root:
                rng = (node.min, node.max)
                if self._by_range.get(rng) is node:
                    del self._by_range[rng]
        for node in ws.upserts:
            prev = self._nodes.get(node.ident)
            if prev is not None and not prev.is_root:
                rng = (prev.min, prev.max)
                if self._by_range.get(rng) is prev:
                    del self._by_range[rng]
            self._nodes[node.ident] = node
            if node.is_root:
                self._root = node
            else:
                self._by_range[(node.min, node.max)] = node
        self.stats.write_rounds += 1
        self.stats.statements += len(ws.deletes) + len(ws.upserts)
        self.stats.nodes_written += len(ws.upserts)

    def snapshot(self) -> list[Node]:
        return sorted(self._nodes.values(), key=_SORT)
