"""Group-by range queries over composite (x, y) keys.

One read round answers the aggregate of every group x restricted to
y in [y_lo, y_hi].  The fringe selections are shared across groups: a node
serves group x's left fringe exactly when it would appear in the plain
left-fringe selection for the range [(x, y_lo), (x, y_hi)], so the
per-group computation is the ordinary range computation run over a
filtered slice of the shared result.
"""

from __future__ import annotations

from .engine import InvalidRange, compute_range_aggregate
from .keys import Bound
from .store import DistinctX, GroupEnclosing, GroupLeftFringe, GroupRightFringe


def group_slot_filter(composite, x: bytes):
    """Keep only slots whose both flanks are keys of the target group.

    A slot flanked by another group's key (or by an infinite bound) could
    summarize values from several groups, so it cannot enter this group's
    fold.  For the nodes the selections produce the situation does not
    arise, but the guard keeps the per-group fold locally justified."""

    def ok(lo: Bound, hi: Bound) -> bool:
        for b in (lo, hi):
            if not b.is_key or composite.split(b.key)[0] != x:
                return False
        return True

    return ok


def _min_level_enclosing(candidates, k_lo: bytes, k_hi: bytes):
    # candidates ascend by level, so the first strict encloser is the lowest
    for n in candidates:
        if n.min < k_lo and n.max > k_hi:
            return n
    return None


def group_by_range_query(tree, y_lo: bytes, y_hi: bytes, xs=None,
                         include_empty: bool = False, raw: bool = False) -> dict:
    """Aggregate each group over the y-range, in one read round.

    With explicit xs, exactly those groups are computed and returned (empty
    groups give the finished identity).  With xs=None the store supplies
    the distinct x parts in the same round and empty groups are dropped
    unless include_empty is set.  Keys of the result are raw x-part bytes.
    """
    composite = tree.composite
    if composite is None:
        raise TypeError("group-by queries need a tree with a composite key codec")
    if y_lo > y_hi:
        raise InvalidRange("lower bound above upper bound")
    agg = tree.aggregation

    if xs is not None:
        xs = [bytes(x) for x in xs]
        left_rows, right_rows, enclosing = tree.store.read_round([
            GroupLeftFringe(y_lo, y_hi),
            GroupRightFringe(y_lo, y_hi),
            GroupEnclosing(tuple(xs), y_lo, y_hi),
        ])
        enclosing_for = dict(zip(xs, enclosing))
        requested = True
    else:
        left_rows, right_rows, candidates, xs = tree.store.read_round([
            GroupLeftFringe(y_lo, y_hi),
            GroupRightFringe(y_lo, y_hi),
            GroupEnclosing(None, y_lo, y_hi),
            DistinctX(),
        ])
        enclosing_for = {
            x: _min_level_enclosing(candidates,
                                    composite.compose(x, y_lo),
                                    composite.compose(x, y_hi))
            for x in xs
        }
        requested = False

    out = {}
    for x in xs:
        k_lo = composite.compose(x, y_lo)
        k_hi = composite.compose(x, y_hi)
        group_left = [n for n in left_rows
                      if n.min < k_lo and k_lo < n.max <= k_hi]
        group_right = [n for n in right_rows
                       if k_lo <= n.min < k_hi and n.max > k_hi]
        enclosing = enclosing_for.get(x)
        if enclosing is None:
            raise RuntimeError("no enclosing node for group, the root "
                               "should always qualify")
        acc, contributed = compute_range_aggregate(
            group_left, group_right, enclosing, k_lo, k_hi, agg,
            slot_ok=group_slot_filter(composite, x))
        if not requested and not contributed and not include_empty:
            continue
        out[x] = acc if raw else agg.finish(acc)
    return out
