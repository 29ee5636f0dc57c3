"""Brute-force reference implementations used only by tests.

Everything here recomputes results from first principles over a flat list
of pairs, deliberately sharing no fold logic with the index: sums are
``sum()``, extremes are ``min()``/``max()``, averages are exact fractions.
The only shared vocabulary is key encoding, which both sides need to agree
on range membership.
"""

from __future__ import annotations

import bisect
from fractions import Fraction

from .aggregation import BOTTOM
from .keys import Bound, CompositeKeyCodec, NEG_INF, POS_INF
from .node import Node, ROOT_LEVEL


class FlatTable:
    """Sorted (encoded key, value) pairs with binary-search range scans."""

    def __init__(self, items=()):
        self._keys: list[bytes] = []
        self._values: list = []
        for k, v in items:
            self.put(k, v)

    def __len__(self):
        return len(self._keys)

    def __contains__(self, key: bytes) -> bool:
        i = bisect.bisect_left(self._keys, key)
        return i < len(self._keys) and self._keys[i] == key

    def get(self, key: bytes):
        i = bisect.bisect_left(self._keys, key)
        if i < len(self._keys) and self._keys[i] == key:
            return self._values[i]
        raise KeyError(key)

    def put(self, key: bytes, value) -> None:
        i = bisect.bisect_left(self._keys, key)
        if i < len(self._keys) and self._keys[i] == key:
            self._values[i] = value
        else:
            self._keys.insert(i, key)
            self._values.insert(i, value)

    def remove(self, key: bytes) -> None:
        i = bisect.bisect_left(self._keys, key)
        if i == len(self._keys) or self._keys[i] != key:
            raise KeyError(key)
        del self._keys[i]
        del self._values[i]

    def items(self):
        return list(zip(self._keys, self._values))

    def scan(self, lo: bytes, hi: bytes) -> list:
        """Values for keys in the closed range [lo, hi]."""
        i = bisect.bisect_left(self._keys, lo)
        j = bisect.bisect_right(self._keys, hi)
        return self._values[i:j]

    def scan_count(self, lo: bytes, hi: bytes) -> int:
        i = bisect.bisect_left(self._keys, lo)
        j = bisect.bisect_right(self._keys, hi)
        return j - i


def _split_product(name: str) -> list[str]:
    """Top-level comma split of "product(a,b,...)", respecting nesting."""
    inner = name[len("product("):-1]
    parts, depth, start = [], 0, 0
    for i, ch in enumerate(inner):
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        elif ch == "," and depth == 0:
            parts.append(inner[start:i])
            start = i + 1
    parts.append(inner[start:])
    return parts


def direct_aggregate(name: str, values: list):
    """Aggregate a value list using textbook formulas, no fold reuse.

    Understands the shipped aggregation names; "product(a,b)" recurses
    componentwise with every component seeing the same values.
    """
    if name.startswith("product(") and name.endswith(")"):
        return tuple(direct_aggregate(p, values) for p in _split_product(name))
    if name in ("sum", "sum_big"):
        return sum(values)
    if name == "count":
        return len(values)
    if name == "min":
        return min(values) if values else None
    if name == "max":
        return max(values) if values else None
    if name == "avg":
        return Fraction(sum(values), len(values)) if values else None
    if name.startswith("top"):
        n = int(name[3:])
        return tuple(sorted(values, reverse=True)[:n])
    raise ValueError(f"no direct formula for aggregation {name!r}")


def direct_carrier(name: str, values: list):
    """The stored (pre-finish) form of an aggregate, again from scratch.

    Node slots hold carriers, so structural oracles that predict whole
    nodes need these rather than the client-facing results.
    """
    if name.startswith("product(") and name.endswith(")"):
        return tuple(direct_carrier(p, values) for p in _split_product(name))
    if name == "avg":
        return (sum(values), len(values))
    if name.startswith("top") and name[3:].isdigit():
        n = int(name[3:])
        best = sorted(values, reverse=True)[:n]
        return tuple(best) + (BOTTOM,) * (n - len(best))
    if name == "min" and not values:
        raise ValueError("no carrier for an empty extreme")
    return direct_aggregate(name, values)


def scan_aggregate(table: FlatTable, name: str, lo: bytes, hi: bytes):
    """Oracle for closed-range aggregate queries."""
    return direct_aggregate(name, table.scan(lo, hi))


def scan_group_by(table: FlatTable, composite: CompositeKeyCodec, name: str,
                  y_lo: bytes, y_hi: bytes, xs=None) -> dict:
    """Oracle for group-by range queries over composite (x, y) keys.

    Groups pairs by x part, keeps values whose y part lies in [y_lo, y_hi],
    and aggregates each group directly.  With explicit xs, emits exactly
    those groups (empty ones included); otherwise emits every x present in
    the data whose group is non-empty.
    """
    by_x: dict[bytes, list] = {}
    for k, v in table.items():
        x, y = composite.split(k)
        if y_lo <= y <= y_hi:
            by_x.setdefault(x, []).append(v)
    if xs is not None:
        return {x: direct_aggregate(name, by_x.get(x, [])) for x in xs}
    return {x: direct_aggregate(name, vs) for x, vs in by_x.items()}


def rebuild_reference_tree(table: FlatTable, levels, name: str) -> list[Node]:
    """Construct the expected node set directly from level assignments.

    Recursive statement of the structure: within an open range, the keys of
    maximal level form one node; each gap between them recurses.  Slot
    carriers are direct scans of the gap.  Used to pin down what insert and
    delete sequences must converge to, independent of the planners.

    ``levels`` is either a level source (``level_for``) or a plain mapping
    from encoded key to level.
    """

    level_of = levels.level_for if hasattr(levels, "level_for") else levels.__getitem__
    items = table.items()

    def fold_range(lo: Bound, hi: Bound):
        return direct_carrier(name, [v for k, v in items if lo < k and hi > k])

    nodes: list[Node] = []

    def build(lo: Bound, hi: Bound) -> bool:
        inside = [(k, v) for k, v in items if lo < k and hi > k]
        if not inside:
            return False
        top = max(level_of(k) for k, _ in inside)
        picked = [(k, v) for k, v in inside if level_of(k) == top]
        bounds = [lo] + [Bound.of(k) for k, _ in picked] + [hi]
        aggs = []
        for a, b in zip(bounds, bounds[1:]):
            aggs.append(fold_range(a, b) if build(a, b) else None)
        nodes.append(Node(top, lo, hi, tuple(aggs), tuple(picked)))
        return True

    if build(NEG_INF, POS_INF):
        nodes.append(Node(ROOT_LEVEL, NEG_INF, POS_INF,
                          (fold_range(NEG_INF, POS_INF),), ()))
    else:
        nodes.append(Node(ROOT_LEVEL, NEG_INF, POS_INF, (), ()))
    return nodes
