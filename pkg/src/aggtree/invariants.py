"""Structural validation of a full node snapshot.

The checker rebuilds the parent/child structure from ranges alone and
verifies everything the algorithms rely on: the root's special shape, key
placement strictly inside open ranges, slot/child agreement (a slot is
present exactly when a child subtree exists, and holds that subtree's
fold), connectivity, global key uniqueness, and that walking down from the
root by range lands on the unique node holding each key.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

from .keys import Bound, NEG_INF, POS_INF
from .node import Node, ROOT_LEVEL, node_fold


@dataclass(frozen=True)
class Violation:
    kind: str
    node: Optional[tuple]
    detail: str

    def __str__(self):
        where = f" at {self.node}" if self.node is not None else ""
        return f"[{self.kind}]{where}: {self.detail}"


def check_invariants(nodes: Iterable[Node], aggregation=None, summarize=None) -> list[Violation]:
    """Validate a snapshot; returns an empty list when everything holds.

    Pass either an aggregation (slots are checked against subtree folds) or
    a summarize callable mapping a node to its expected slot value in the
    parent (used for hash-maintained trees).  With neither, slot values are
    only checked for presence.
    """
    if aggregation is not None and summarize is None:
        agg = aggregation
        def summarize(n):
            return node_fold(n, agg.combine, agg.lift, agg.identity)

    nodes = list(nodes)
    out: list[Violation] = []
    report = lambda kind, node, detail: out.append(Violation(kind, node, detail))

    roots = [n for n in nodes if n.level == ROOT_LEVEL]
    if len(roots) != 1:
        report("root", None, f"expected exactly one root, found {len(roots)}")
        return out
    root = roots[0]
    if root.min != NEG_INF or root.max != POS_INF:
        report("root", root.ident, "root range must be unbounded on both sides")
    if root.pairs:
        report("root", root.ident, "root must not hold keys")
    if root.aggs and (len(root.aggs) != 1 or root.aggs[0] is None):
        report("root", root.ident, "a non-empty root has exactly one present slot")

    total_keys = sum(n.m for n in nodes)
    if total_keys == 0 and root.aggs:
        report("root", root.ident, "root of an empty snapshot must have an empty sequence")
    if total_keys > 0 and not root.aggs:
        report("root", root.ident, "root of a non-empty snapshot must summarize its child")

    # Per-node shape.
    for n in nodes:
        if n is root:
            continue
        if n.level < 0 or n.level >= ROOT_LEVEL:
            report("shape", n.ident, f"invalid level {n.level}")
        if n.m == 0:
            report("shape", n.ident, "non-root nodes hold at least one key")
        if n.aggs and len(n.aggs) != n.m + 1:
            report("shape", n.ident, f"{n.m} pairs need {n.m + 1} slots, found {len(n.aggs)}")
        if not n.aggs and n.m:
            report("shape", n.ident, "pairs present but no slots")
        if not (n.min < n.max):
            report("shape", n.ident, "min must be below max")
    for n in nodes:
        keys = n.keys()
        for i, k in enumerate(keys):
            if not (n.min < k and n.max > k):
                report("keys", n.ident, f"key {k!r} outside open range")
            if i and not keys[i - 1] < k:
                report("keys", n.ident, "keys not strictly increasing")
    if out:
        return out  # structure below assumes sane shapes

    # Range index.  Only the root and its child may share a range.
    by_range: dict[tuple, Node] = {}
    for n in nodes:
        if n is root:
            continue
        rng = (n.min, n.max)
        if rng in by_range:
            report("structure", n.ident, f"range shared with {by_range[rng].ident}")
        else:
            by_range[rng] = n

    # Slot/child agreement and connectivity.
    claimed: dict[tuple, tuple] = {}
    for n in nodes:
        for i in range(len(n.aggs)):
            lo, hi = n.child_range(i)
            child = by_range.get((lo, hi))
            slot = n.aggs[i]
            if child is not None and child.level >= n.level:
                # A same-or-higher node over the slot range is not a child.
                child = None
            if slot is None and child is not None:
                report("slots", n.ident, f"slot {i} missing but child {child.ident} exists")
            if slot is not None and child is None:
                report("slots", n.ident, f"slot {i} present but no child covers {(lo, hi)}")
            if child is not None:
                if child.ident in claimed:
                    report("structure", child.ident, "claimed by two parents")
                claimed[child.ident] = n.ident
                if slot is not None and summarize is not None:
                    expect = summarize(child)
                    if expect != slot:
                        report("slots", n.ident,
                               f"slot {i} holds {slot!r}, child folds to {expect!r}")
    for n in nodes:
        if n is not root and n.ident not in claimed:
            report("structure", n.ident, "unreachable from the root")

    # Global key uniqueness.
    seen: dict[bytes, tuple] = {}
    for n in nodes:
        for k, _ in n.pairs:
            if k in seen:
                report("keys", n.ident, f"key {k!r} also held by {seen[k]}")
            else:
                seen[k] = n.ident
    if out:
        return out

    # Walking down by range from the root must land on each key's holder.
    for key, holder in seen.items():
        n = root
        while True:
            if n.contains_key(key):
                if n.ident != holder:
                    report("descent", holder, f"descent for {key!r} ended at {n.ident}")
                break
            _, lo, hi = n.slot_for(key)
            child = by_range.get((lo, hi))
            if child is None:
                report("descent", holder, f"descent for {key!r} dead-ends at {n.ident}")
                break
            n = child
    return out
