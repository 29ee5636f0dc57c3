"""Authenticated trees: digest-bearing slots, membership proofs, verified
mutations.

Parent slots carry a cryptographic digest of the child instead of (or next
to) a data aggregate, so the digest stored at the root commits to the
entire key-value set.  A client holding only that root digest can check
any single-key answer against a proof consisting of the key's root path,
and can mutate the tree while keeping its commitment current, because a
mutation's read set is verifiable before anything is written and the new
root digest is computed client-side from the write set.

Level assignment must be a pure function of the key (derandomized), so
that equal key sets commit to equal digests regardless of history.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Optional

from .aggregation import Aggregation, DigestCodec, ProductCodec
from .engine import (
    DerandomizedLevels,
    DuplicateKey,
    InvalidRange,
    KeyNotFound,
    SeededLevels,
    compute_range_aggregate,
    plan_delete,
    plan_insert,
    plan_update,
)
from .keys import Bound, NEG_INF, POS_INF
from .node import Node, NodeCodec, ROOT_LEVEL, _read_uvarint, _uvarint
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

_DIGEST_PREFIX = b"aggtree.auth.v1\x00"
_PROOF_VERSION = 1


class TamperDetected(RuntimeError):
    """Rows read for an operation fail verification against the trusted
    root digest.  The operation stops with nothing written."""


def empty_tree_digest(algorithm: str = "sha256") -> bytes:
    """The root digest an empty tree commits to."""
    h = hashlib.new(algorithm)
    h.update(_DIGEST_PREFIX)
    h.update(b"empty")
    return h.digest()


def node_digest(node: Node, value_codec, slot_bytes=None,
                algorithm: str = "sha256") -> bytes:
    """Digest of one node's full stored content.

    Hashes the identity (level, bounds) and the aggregate sequence with
    every field length-prefixed and tagged, so distinct nodes never share
    an encoding.  Present slots contribute through slot_bytes (identity for
    digest-only slots); missing slots contribute nothing, which stays
    unambiguous because tags mark where pairs fall.
    """
    h = hashlib.new(algorithm)
    h.update(_DIGEST_PREFIX)
    h.update(node.level.to_bytes(8, "big"))
    for enc in (node.min.encoded(), node.max.encoded()):
        h.update(_uvarint(len(enc)))
        h.update(enc)
    for i, a in enumerate(node.aggs):
        if a is not None:
            enc = a if slot_bytes is None else slot_bytes(a)
            h.update(b"\x01")
            h.update(_uvarint(len(enc)))
            h.update(enc)
        if i < node.m:
            key, value = node.pairs[i]
            venc = value_codec.encode(value)
            h.update(b"\x02")
            h.update(_uvarint(len(key)))
            h.update(key)
            h.update(_uvarint(len(venc)))
            h.update(venc)
    return h.digest()


# ---------------------------------------------------------------------------
# Proofs


@dataclass(frozen=True)
class VerifiedValue:
    value: object


@dataclass(frozen=True)
class VerifiedAbsent:
    pass


@dataclass(frozen=True)
class Invalid:
    reason: str


@dataclass(frozen=True)
class ProofResult:
    found: bool
    value: object
    proof: bytes


def serialize_proof(nodes, codec: NodeCodec) -> bytes:
    out = bytearray([_PROOF_VERSION])
    out += _uvarint(len(nodes))
    for n in nodes:
        out += _uvarint(n.level)
        for part in (n.min.encoded(), n.max.encoded(), codec.encode_payload(n)):
            out += _uvarint(len(part)) + part
    return bytes(out)


def parse_proof(data: bytes, codec: NodeCodec) -> list[Node]:
    if not data or data[0] != _PROOF_VERSION:
        raise ValueError("unsupported proof version")
    pos = 1
    count, pos = _read_uvarint(data, pos)
    nodes = []
    for _ in range(count):
        level, pos = _read_uvarint(data, pos)
        parts = []
        for _ in range(3):
            length, pos = _read_uvarint(data, pos)
            if pos + length > len(data):
                raise ValueError("truncated proof")
            parts.append(data[pos:pos + length])
            pos += length
        min_b = Bound.parse(parts[0])
        max_b = Bound.parse(parts[1])
        nodes.append(codec.decode_payload(level, min_b, max_b, parts[2]))
    if pos != len(data):
        raise ValueError("trailing bytes after proof")
    return nodes


class ProofVerifier:
    """Stateless checker for membership and absence proofs.

    data_agg switches on combined slots (data carrier, digest): the digest
    component drives the hash chain and the data component of the root link
    is cross-checked against a recomputation from the top node.
    """

    def __init__(self, value_codec, algorithm: str = "sha256",
                 data_agg: Optional[Aggregation] = None):
        self.value_codec = value_codec
        self.algorithm = algorithm
        self.data_agg = data_agg
        size = hashlib.new(algorithm).digest_size
        if data_agg is None:
            self.codec = NodeCodec(DigestCodec(size), value_codec)
            self._slot_bytes = None
        else:
            self.codec = NodeCodec(
                ProductCodec([data_agg.codec, DigestCodec(size)]), value_codec)
            data_codec = data_agg.codec

            def slot_bytes(a):
                enc = data_codec.encode(a[0])
                return _uvarint(len(enc)) + enc + a[1]

            self._slot_bytes = slot_bytes

    def digest_of(self, node: Node) -> bytes:
        return node_digest(node, self.value_codec, self._slot_bytes, self.algorithm)

    def link_hash(self, slot) -> bytes:
        return slot if self.data_agg is None else slot[1]

    def _fold_data(self, node: Node):
        agg = self.data_agg
        acc = agg.identity
        for i, a in enumerate(node.aggs):
            if a is not None:
                acc = agg.combine(acc, a[0])
            if i < node.m:
                acc = agg.combine(acc, agg.lift(node.pairs[i][1]))
        return acc

    def verify(self, proof: bytes, key: bytes, trusted_root: bytes):
        try:
            nodes = parse_proof(proof, self.codec)
        except (ValueError, OverflowError) as exc:
            return Invalid(f"malformed proof: {exc}")
        return self.verify_nodes(nodes, key, trusted_root)

    def verify_nodes(self, nodes, key: bytes, trusted_root: bytes):
        """Check a decoded root path against the trusted root digest."""
        if not nodes:
            return Invalid("empty proof")
        for prev, node in zip(nodes, nodes[1:]):
            if prev.level >= node.level:
                return Invalid("levels do not ascend")
        root = nodes[-1]
        if root.level != ROOT_LEVEL or root.min != NEG_INF or root.max != POS_INF:
            return Invalid("path does not end at the root")
        if root.pairs:
            return Invalid("root must not hold keys")
        for node in nodes[:-1]:
            if node.level >= ROOT_LEVEL:
                return Invalid("two roots in one path")
            if node.m == 0 or len(node.aggs) != node.m + 1:
                return Invalid("malformed interior node")
            if not node.min < node.max:
                return Invalid("inverted bounds")
        for node in nodes:
            if not (node.min < key and node.max > key):
                return Invalid("node range does not cover the key")

        if len(nodes) == 1:
            if root.aggs == ():
                if trusted_root == empty_tree_digest(self.algorithm):
                    return VerifiedAbsent()
                return Invalid("root digest mismatch")
            return Invalid("path stops above a claimed child")

        first = nodes[0]
        idx = first.key_index(key)
        if idx >= 0:
            outcome = VerifiedValue(first.pairs[idx][1])
        else:
            slot, _, _ = first.slot_for(key)
            if first.aggs[slot] is not None:
                return Invalid("path stops above a claimed child")
            outcome = VerifiedAbsent()

        digest = self.digest_of(first)
        prev = first
        for node in nodes[1:-1]:
            if node.contains_key(key):
                return Invalid("key appears twice on the path")
            slot, lo, hi = node.slot_for(key)
            if (lo, hi) != (prev.min, prev.max):
                return Invalid("child range does not chain")
            link = node.aggs[slot]
            if link is None:
                return Invalid("link slot missing")
            if self.link_hash(link) != digest:
                return Invalid("digest chain mismatch")
            digest = self.digest_of(node)
            prev = node

        if prev.min != NEG_INF or prev.max != POS_INF:
            return Invalid("top node does not span the full key space")
        if len(root.aggs) != 1 or root.aggs[0] is None:
            return Invalid("root must store exactly the top link")
        link = root.aggs[0]
        if self.link_hash(link) != digest:
            return Invalid("root link mismatch")
        if self.data_agg is not None and link[0] != self._fold_data(prev):
            return Invalid("root data summary mismatch")
        if digest != trusted_root:
            return Invalid("root digest mismatch")
        return outcome


# ---------------------------------------------------------------------------


class AuthDbTree:
    """Tree whose slots commit to their subtrees.

    The client tracks the trusted root digest.  When constructed without
    one, the first read adopts the digest the store presents
    (trust-on-first-use); pass trusted_root explicitly to continue an
    established trust relationship.

    With data_agg set, every slot carries (data carrier, digest) and the
    tree additionally answers (unauthenticated) aggregate range queries.
    """

    def __init__(self, store: NodeStore, value_codec, levels=None,
                 algorithm: str = "sha256",
                 data_agg: Optional[Aggregation] = None,
                 trusted_root: Optional[bytes] = None):
        if isinstance(levels, SeededLevels):
            raise ValueError("authenticated trees need levels that are a "
                             "pure function of the key")
        self.store = store
        self.value_codec = value_codec
        self.levels = levels if levels is not None else DerandomizedLevels()
        self.algorithm = algorithm
        self.data_agg = data_agg
        self.verifier = ProofVerifier(value_codec, algorithm, data_agg)
        self._root_hash = trusted_root
        if data_agg is None:
            self.summarize = self.verifier.digest_of
        else:
            self.summarize = lambda node: (self.verifier._fold_data(node),
                                           self.verifier.digest_of(node))

    @staticmethod
    def make_codec(value_codec, algorithm: str = "sha256",
                   data_agg: Optional[Aggregation] = None) -> NodeCodec:
        """Node codec matching this tree's slot carriers, for store setup."""
        size = hashlib.new(algorithm).digest_size
        if data_agg is None:
            return NodeCodec(DigestCodec(size), value_codec)
        return NodeCodec(ProductCodec([data_agg.codec, DigestCodec(size)]),
                         value_codec)

    @property
    def root_hash(self) -> Optional[bytes]:
        return self._root_hash

    def _root_hash_of(self, root: Node) -> bytes:
        if not root.aggs:
            return empty_tree_digest(self.algorithm)
        return self.verifier.link_hash(root.aggs[0])

    def _check_path(self, path, key: bytes):
        """Verify a freshly read root path; adopt the root digest on first
        contact.  Returns the verification outcome."""
        if not path:
            raise TamperDetected("empty read")
        if self._root_hash is None:
            self._root_hash = self._root_hash_of(path[-1])
        outcome = self.verifier.verify_nodes(list(path), key, self._root_hash)
        if isinstance(outcome, Invalid):
            raise TamperDetected(outcome.reason)
        return outcome

    def refresh_root_hash(self) -> bytes:
        """Adopt the store's current root digest (one read round)."""
        (path,) = self.store.read_round([PathTo(b"")])
        self._root_hash = self._root_hash_of(path[-1])
        return self._root_hash

    def _finish_write(self, ws: WriteSet) -> None:
        self.store.write_round(ws)
        for node in ws.upserts:
            if node.is_root:
                self._root_hash = self._root_hash_of(node)
                return
        raise RuntimeError("write set without a root update")

    # -- reads ------------------------------------------------------------

    def get_with_proof(self, key: bytes) -> ProofResult:
        """Value lookup returning a self-contained proof.

        The proof is verified against the trusted root digest before it is
        returned; a store presenting inconsistent rows raises rather than
        leaking an unverified answer."""
        (path,) = self.store.read_round([PathTo(key)])
        outcome = self._check_path(path, key)
        proof = serialize_proof(path, self.verifier.codec)
        if isinstance(outcome, VerifiedValue):
            return ProofResult(True, outcome.value, proof)
        return ProofResult(False, None, proof)

    def get(self, key: bytes):
        result = self.get_with_proof(key)
        if not result.found:
            raise KeyNotFound(key)
        return result.value

    def aggregate_range_query(self, lo: bytes, hi: bytes, raw: bool = False):
        """Range aggregate over the data components (combined trees only).

        The result itself is not covered by a proof; authenticated exact
        answers are per-key."""
        if self.data_agg is None:
            raise TypeError("this tree stores digests only; "
                            "construct it with data_agg for range queries")
        if lo > hi:
            raise InvalidRange("lower bound above upper bound")
        left_rows, right_rows, enclosing = self.store.read_round([
            LeftFringe(lo, hi),
            RightFringe(lo, hi),
            MinLevelEnclosing(lo, hi),
        ])
        project = self._project_data
        acc, _ = compute_range_aggregate(
            [project(n) for n in left_rows],
            [project(n) for n in right_rows],
            project(enclosing[0]), lo, hi, self.data_agg)
        return acc if raw else self.data_agg.finish(acc)

    def _project_data(self, node: Node) -> Node:
        return Node(node.level, node.min, node.max,
                    tuple(a[0] if a is not None else None for a in node.aggs),
                    node.pairs)

    # -- mutations ----------------------------------------------------------

    def insert(self, key: bytes, value) -> None:
        (path,) = self.store.read_round([PathTo(key)])
        outcome = self._check_path(path, key)
        if isinstance(outcome, VerifiedValue):
            raise DuplicateKey(key)
        level = self.levels.level_for(key)
        self._finish_write(plan_insert(path, key, value, level, self.summarize))

    def update(self, key: bytes, value) -> None:
        (path,) = self.store.read_round([PathTo(key)])
        outcome = self._check_path(path, key)
        if not isinstance(outcome, VerifiedValue):
            raise KeyNotFound(key)
        self._finish_write(plan_update(path, key, value, self.summarize))

    def delete(self, key: bytes) -> None:
        (rows,) = self.store.read_round([TouchingKey(key)])
        self._verify_delete_rows(rows, key)
        self._finish_write(plan_delete(rows, key, self.summarize))

    def _verify_delete_rows(self, rows, key: bytes) -> None:
        """Verify every row a delete read, not just the root path.

        The path portion verifies as a proof; the towers bounded by the key
        verify by digest linkage, walking each tower down from the holder's
        flanking slot."""
        kb = Bound.of(key)
        holder = None
        left_tower, right_tower, path = [], [], []
        for n in rows:
            if n.contains_key(key):
                holder = n
                path.append(n)
            elif n.max == kb:
                left_tower.append(n)
            elif n.min == kb:
                right_tower.append(n)
            else:
                path.append(n)
        outcome = self._check_path(path, key)
        if holder is None:
            if left_tower or right_tower:
                raise TamperDetected("towers bounded by an absent key")
            raise KeyNotFound(key)
        if not isinstance(outcome, VerifiedValue):
            raise KeyNotFound(key)

        idx = holder.key_index(key)
        self._verify_tower(left_tower, holder.aggs[idx],
                           lambda n: n.aggs[-1], "left")
        self._verify_tower(right_tower, holder.aggs[idx + 1],
                           lambda n: n.aggs[0], "right")

    def _verify_tower(self, tower, top_link, next_link, side: str) -> None:
        tower = sorted(tower, key=lambda n: -n.level)
        link = top_link
        for node in tower:
            if link is None:
                raise TamperDetected(f"{side} tower longer than its links")
            if self.verifier.link_hash(link) != self.verifier.digest_of(node):
                raise TamperDetected(f"{side} tower digest mismatch")
            link = next_link(node)
        if link is not None:
            raise TamperDetected(f"{side} tower shorter than its links")

    def bulk_build(self, items) -> None:
        """Load an empty tree in one write round (levels are per-key, so
        item order does not matter)."""
        current = self.store.snapshot()
        if len(current) != 1 or current[0].aggs or current[0].pairs:
            raise ValueError("bulk build requires an empty tree")
        scratch = MemoryStore(self.store.codec)
        keys = []
        for key, value in items:
            (path,) = scratch.read_round([PathTo(key)])
            level = self.levels.level_for(key)
            scratch.write_round(plan_insert(path, key, value, level, self.summarize))
            keys.append(key)
        nodes = tuple(scratch.snapshot())
        self.store.write_round(WriteSet(upserts=nodes, key_inserts=tuple(keys)))
        for node in nodes:
            if node.is_root:
                self._root_hash = self._root_hash_of(node)
