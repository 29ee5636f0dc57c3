"""Tree nodes and aggregate-sequence editing.

A node is identified by (level, min, max) and carries an aggregate sequence:
m key-value pairs in strictly increasing key order, interleaved with m+1
optional aggregate slots.  Slot i summarizes the child subtree spanning the
open gap to the left of pair i+1 (slot m spans the gap up to max); a slot is
None exactly when no keys live in that gap.  There are no child pointers:
parent/child relationships follow from range containment alone, which is
what lets every node live as an independent database row.

Nodes are immutable; all editing helpers return fresh nodes.
"""

from __future__ import annotations

from bisect import bisect_left, bisect_right
from dataclasses import dataclass
from typing import Any, Optional

from .keys import Bound, NEG_INF, POS_INF

#: Reserved level of the root, stored as the largest signed 64-bit integer so
#: level columns order correctly in any backend.
ROOT_LEVEL = (1 << 63) - 1

NodeId = tuple  # (level, Bound, Bound)


@dataclass(frozen=True)
class Node:
    level: int
    min: Bound
    max: Bound
    aggs: tuple   # m+1 slots, None = missing; () only for the empty root
    pairs: tuple  # m tuples (key_bytes, value)

    @property
    def m(self) -> int:
        return len(self.pairs)

    @property
    def ident(self) -> NodeId:
        return (self.level, self.min, self.max)

    @property
    def is_root(self) -> bool:
        return self.level == ROOT_LEVEL

    def keys(self) -> list[bytes]:
        return [k for k, _ in self.pairs]

    def key_index(self, key: bytes) -> int:
        """Index of the pair holding key, or -1."""
        keys = self.keys()
        i = bisect_left(keys, key)
        if i < len(keys) and keys[i] == key:
            return i
        return -1

    def contains_key(self, key: bytes) -> bool:
        return self.key_index(key) >= 0

    def in_open_range(self, key: bytes) -> bool:
        return self.min < key and self.max > key

    def slot_for(self, key: bytes) -> tuple[int, Bound, Bound]:
        """Slot index and child range for a key not held by this node.

        The child range is (min, k_1) for slot 0, (k_i, k_{i+1}) in between,
        and (k_m, max) for slot m.
        """
        keys = self.keys()
        i = bisect_left(keys, key)
        if i < len(keys) and keys[i] == key:
            raise ValueError("key is held by this node, it has no enclosing slot")
        lo = self.min if i == 0 else Bound.of(keys[i - 1])
        hi = self.max if i == len(keys) else Bound.of(keys[i])
        return i, lo, hi

    def child_range(self, slot: int) -> tuple[Bound, Bound]:
        keys = self.keys()
        lo = self.min if slot == 0 else Bound.of(keys[slot - 1])
        hi = self.max if slot == len(keys) else Bound.of(keys[slot])
        return lo, hi


def empty_root() -> Node:
    return Node(ROOT_LEVEL, NEG_INF, POS_INF, (), ())


def node_fold(node: Node, combine, lift, identity) -> Any:
    """Left-to-right fold of the whole aggregate sequence.

    Present slots enter as-is, pair values enter lifted; the result is the
    aggregate of the entire subtree rooted at this node.  An empty sequence
    folds to the identity.
    """
    acc = identity
    aggs, pairs = node.aggs, node.pairs
    for i, a in enumerate(aggs):
        if a is not None:
            acc = combine(acc, a)
        if i < len(pairs):
            acc = combine(acc, lift(pairs[i][1]))
    return acc


def insert_pair(node: Node, key: bytes, value) -> Node:
    """Add a pair, replacing the slot it lands in with two missing slots.

    The old slot summarized a gap that the new key now splits; both halves
    start missing and are filled in by upward propagation if children exist.
    """
    keys = node.keys()
    i = bisect_left(keys, key)
    if i < len(keys) and keys[i] == key:
        raise ValueError("key already present")
    pairs = node.pairs[:i] + ((key, value),) + node.pairs[i:]
    if node.aggs:
        aggs = node.aggs[:i] + (None, None) + node.aggs[i + 1:]
    else:
        aggs = (None, None)
    return Node(node.level, node.min, node.max, aggs, pairs)


def remove_pair(node: Node, key: bytes) -> Node:
    """Drop a pair and both flanking slots, leaving one missing junction slot."""
    i = node.key_index(key)
    if i < 0:
        raise ValueError("key not present")
    pairs = node.pairs[:i] + node.pairs[i + 1:]
    aggs = node.aggs[:i] + (None,) + node.aggs[i + 2:]
    return Node(node.level, node.min, node.max, aggs, pairs)


def replace_value(node: Node, key: bytes, value) -> Node:
    i = node.key_index(key)
    if i < 0:
        raise ValueError("key not present")
    pairs = node.pairs[:i] + ((key, value),) + node.pairs[i + 1:]
    return Node(node.level, node.min, node.max, node.aggs, pairs)


def set_adjacent_agg(node: Node, key: bytes, agg_value) -> Node:
    """Set the slot whose gap contains key (key must not be held by the node).

    Creates the slot when the sequence is empty (the empty root gaining its
    first child).
    """
    if not node.aggs:
        return Node(node.level, node.min, node.max, (agg_value,), node.pairs)
    i, _, _ = node.slot_for(key)
    aggs = node.aggs[:i] + (agg_value,) + node.aggs[i + 1:]
    return Node(node.level, node.min, node.max, aggs, node.pairs)


def clear_adjacent_agg(node: Node, key: bytes) -> Node:
    """Mark the slot whose gap contains key as missing.

    A root left with no pairs and no present slots collapses back to the
    empty sequence, the canonical empty-tree form.
    """
    if not node.aggs:
        return node
    i, _, _ = node.slot_for(key)
    aggs = node.aggs[:i] + (None,) + node.aggs[i + 1:]
    if node.is_root and not node.pairs and all(a is None for a in aggs):
        aggs = ()
    return Node(node.level, node.min, node.max, aggs, node.pairs)


def split_node(node: Node, key: bytes) -> tuple[Optional[Node], Optional[Node]]:
    """Split around a key in the node's open range into left/right remainders.

    The left node keeps keys below the split with the slots at their left;
    the right node keeps keys above with the slots at their right.  The slot
    that straddled the split point is carried to neither side (propagation
    recomputes both flanks).  A side with no keys is returned as None.
    """
    keys = node.keys()
    j = bisect_left(keys, key)
    if j < len(keys) and keys[j] == key:
        raise ValueError("cannot split a node at one of its own keys")
    left = right = None
    if j > 0:
        left = Node(node.level, node.min, Bound.of(key),
                    node.aggs[:j] + (None,), node.pairs[:j])
    if j < len(keys):
        right = Node(node.level, Bound.of(key), node.max,
                     (None,) + node.aggs[j + 1:], node.pairs[j:])
    return left, right


def merge_nodes(left: Node, right: Node, new_min: Bound, new_max: Bound) -> Node:
    """Join the two nodes flanking a removed key into one.

    The left node's trailing slot and the right node's leading slot both
    described gaps ending at the removed key; they are dropped, and the
    junction gap between the two key runs starts missing until propagation
    fills it from the merged child below (if any).
    """
    if left.level != right.level:
        raise ValueError("merge requires nodes of one level")
    aggs = left.aggs[:-1] + (None,) + right.aggs[1:]
    return Node(left.level, new_min, new_max, aggs, left.pairs + right.pairs)


def with_bounds(node: Node, new_min: Bound = None, new_max: Bound = None) -> Node:
    return Node(node.level,
                node.min if new_min is None else new_min,
                node.max if new_max is None else new_max,
                node.aggs, node.pairs)


# ---------------------------------------------------------------------------
# Payload serialization

_PAYLOAD_VERSION = 1


def _uvarint(n: int) -> bytes:
    out = bytearray()
    while True:
        b = n & 0x7F
        n >>= 7
        if n:
            out.append(b | 0x80)
        else:
            out.append(b)
            return bytes(out)


def _read_uvarint(data: bytes, pos: int) -> tuple[int, int]:
    result = 0
    shift = 0
    while True:
        if pos >= len(data):
            raise ValueError("truncated varint")
        b = data[pos]
        pos += 1
        result |= (b & 0x7F) << shift
        if not b & 0x80:
            return result, pos
        shift += 7
        if shift > 63:
            raise ValueError("varint too long")


class NodeCodec:
    """Canonical node payload bytes.

    Layout: version byte, pair count m, then slot 0, pair 1, slot 1, ...,
    pair m, slot m.  A slot is a presence byte (0/1) followed, when present,
    by length-prefixed carrier bytes; a pair is length-prefixed key bytes
    then length-prefixed value bytes.  The empty root (no sequence at all)
    encodes as m=0 with its single slot absent, a shape no other valid node
    uses.  Encoding is canonical so equal nodes yield equal bytes.
    """

    def __init__(self, agg_codec, value_codec):
        self.agg_codec = agg_codec
        self.value_codec = value_codec

    def encode_payload(self, node: Node) -> bytes:
        out = bytearray([_PAYLOAD_VERSION])
        out += _uvarint(node.m)
        if not node.aggs:
            out.append(0)  # empty sequence: the lone slot reads as absent
            return bytes(out)
        for i, agg in enumerate(node.aggs):
            if agg is None:
                out.append(0)
            else:
                enc = self.agg_codec.encode(agg)
                out.append(1)
                out += _uvarint(len(enc)) + enc
            if i < node.m:
                key, value = node.pairs[i]
                venc = self.value_codec.encode(value)
                out += _uvarint(len(key)) + key
                out += _uvarint(len(venc)) + venc
        return bytes(out)

    def decode_payload(self, level: int, min_b: Bound, max_b: Bound, payload: bytes) -> Node:
        if not payload or payload[0] != _PAYLOAD_VERSION:
            raise ValueError("unsupported payload version")
        pos = 1
        m, pos = _read_uvarint(payload, pos)
        aggs = []
        pairs = []
        for i in range(m + 1):
            if pos >= len(payload):
                raise ValueError("truncated slot")
            present = payload[pos]
            pos += 1
            if present == 0:
                aggs.append(None)
            elif present == 1:
                length, pos = _read_uvarint(payload, pos)
                if pos + length > len(payload):
                    raise ValueError("truncated carrier")
                aggs.append(self.agg_codec.decode(payload[pos:pos + length]))
                pos += length
            else:
                raise ValueError("bad slot presence byte")
            if i < m:
                klen, pos = _read_uvarint(payload, pos)
                if pos + klen > len(payload):
                    raise ValueError("truncated key")
                key = payload[pos:pos + klen]
                pos += klen
                vlen, pos = _read_uvarint(payload, pos)
                if pos + vlen > len(payload):
                    raise ValueError("truncated value")
                value = self.value_codec.decode(payload[pos:pos + vlen])
                pos += vlen
                pairs.append((key, value))
        if pos != len(payload):
            raise ValueError("trailing bytes after payload")
        if m == 0 and aggs == [None]:
            aggs = []  # the empty-root shape
        return Node(level, min_b, max_b, tuple(aggs), tuple(pairs))


class Int64ValueCodec:
    """Fixed-width signed integers for stored values."""

    name = "int64"

    def encode(self, value) -> bytes:
        return int(value).to_bytes(8, "little", signed=True)

    def decode(self, data: bytes):
        if len(data) != 8:
            raise ValueError("expected 8 value bytes")
        return int.from_bytes(data, "little", signed=True)


class BytesValueCodec:
    """Raw bytes stored verbatim."""

    name = "bytes"

    def encode(self, value) -> bytes:
        return bytes(value)

    def decode(self, data: bytes):
        return bytes(data)
