"""Group-by range queries against the scan oracle."""

import random

import pytest

from aggtree import (
    Bound,
    CompositeKeyCodec,
    DbTree,
    Int64ValueCodec,
    InvalidRange,
    MemoryStore,
    NodeCodec,
    SeededLevels,
    UIntKeyCodec,
    make_avg,
    make_count,
    make_min,
    make_sum,
    make_top_n,
)
from aggtree.groupby import group_slot_filter
from aggtree.oracle import FlatTable, scan_group_by
from conftest import k

UINT = UIntKeyCodec()
COMP = CompositeKeyCodec(UIntKeyCodec(), UIntKeyCodec())


def build_composite(seed, n=300, x_width=6, y_space=2000, agg=None):
    agg = agg or make_sum()
    store = MemoryStore(NodeCodec(agg.codec, Int64ValueCodec()), composite=COMP)
    tree = DbTree(store, agg, SeededLevels(seed), composite=COMP)
    rng = random.Random(seed)
    seen = set()
    while len(seen) < n:
        seen.add((rng.randrange(x_width), rng.randrange(y_space)))
    items = [(COMP.encode(p), rng.randrange(-50, 50)) for p in sorted(seen)]
    tree.bulk_build(items)
    return tree, store, FlatTable(items)


class TestOracleEquivalence:
    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_random_ranges_all_groups(self, seed):
        tree, _, table = build_composite(seed)
        rng = random.Random(seed + 50)
        for _ in range(25):
            a, b = sorted((rng.randrange(2000), rng.randrange(2000)))
            y_lo, y_hi = UINT.encode(a), UINT.encode(b)
            assert tree.group_by_range_query(y_lo, y_hi) == \
                scan_group_by(table, COMP, "sum", y_lo, y_hi)

    @pytest.mark.parametrize("seed", [4, 5])
    def test_explicit_groups(self, seed):
        tree, _, table = build_composite(seed)
        rng = random.Random(seed + 50)
        for _ in range(20):
            a, b = sorted((rng.randrange(2000), rng.randrange(2000)))
            y_lo, y_hi = UINT.encode(a), UINT.encode(b)
            xs = tuple(UINT.encode(rng.randrange(8)) for _ in range(3))
            assert tree.group_by_range_query(y_lo, y_hi, xs=xs) == \
                scan_group_by(table, COMP, "sum", y_lo, y_hi, xs=xs)

    def test_group_boundaries_spanned_by_nodes(self):
        # two busy groups force high-level nodes to span the x boundary
        tree, store, table = build_composite(9, n=400, x_width=2)
        spanning = [n for n in store.snapshot()
                    if n.min.is_key and n.max.is_key
                    and COMP.split(n.min.key)[0] != COMP.split(n.max.key)[0]]
        assert spanning, "fixture must contain boundary-spanning nodes"
        for a, b in [(0, 1999), (100, 900), (500, 501), (0, 0)]:
            y_lo, y_hi = UINT.encode(a), UINT.encode(b)
            assert tree.group_by_range_query(y_lo, y_hi) == \
                scan_group_by(table, COMP, "sum", y_lo, y_hi)

    @pytest.mark.parametrize("agg,name", [
        (make_count(), "count"),
        (make_min(), "min"),
        (make_avg(), "avg"),
        (make_top_n(2), "top2"),
    ])
    def test_other_aggregations(self, agg, name):
        tree, _, table = build_composite(11, n=200, agg=agg)
        for a, b in [(0, 1999), (250, 1300), (700, 701)]:
            y_lo, y_hi = UINT.encode(a), UINT.encode(b)
            assert tree.group_by_range_query(y_lo, y_hi) == \
                scan_group_by(table, COMP, name, y_lo, y_hi)


class TestResultPolicy:
    def small_tree(self):
        agg = make_sum()
        store = MemoryStore(NodeCodec(agg.codec, Int64ValueCodec()), composite=COMP)
        tree = DbTree(store, agg, SeededLevels(3), composite=COMP)
        rows = [(1, 10, 5), (1, 20, 7), (2, 500, 11), (3, 15, 13)]
        tree.bulk_build([(COMP.encode((x, y)), v) for x, y, v in rows])
        return tree, store

    def test_empty_groups_dropped_by_default(self):
        tree, _ = self.small_tree()
        got = tree.group_by_range_query(UINT.encode(10), UINT.encode(30))
        assert got == {UINT.encode(1): 12, UINT.encode(3): 13}

    def test_include_empty_lists_every_known_group(self):
        tree, _ = self.small_tree()
        got = tree.group_by_range_query(UINT.encode(10), UINT.encode(30),
                                        include_empty=True)
        assert got == {UINT.encode(1): 12, UINT.encode(2): 0, UINT.encode(3): 13}

    def test_explicit_xs_always_answered(self):
        tree, _ = self.small_tree()
        xs = (UINT.encode(2), UINT.encode(9))
        got = tree.group_by_range_query(UINT.encode(10), UINT.encode(30), xs=xs)
        assert got == {UINT.encode(2): 0, UINT.encode(9): 0}

    def test_raw_returns_carriers(self):
        agg = make_avg()
        store = MemoryStore(NodeCodec(agg.codec, Int64ValueCodec()), composite=COMP)
        tree = DbTree(store, agg, SeededLevels(3), composite=COMP)
        tree.bulk_build([(COMP.encode((1, y)), 10) for y in (5, 6, 7)])
        got = tree.group_by_range_query(UINT.encode(5), UINT.encode(6), raw=True)
        assert got == {UINT.encode(1): (20, 2)}

    def test_single_point_y_range(self):
        tree, _ = self.small_tree()
        got = tree.group_by_range_query(UINT.encode(20), UINT.encode(20))
        assert got == {UINT.encode(1): 7}

    def test_inverted_range_rejected(self):
        tree, _ = self.small_tree()
        with pytest.raises(InvalidRange):
            tree.group_by_range_query(UINT.encode(9), UINT.encode(3))

    def test_plain_tree_rejected(self):
        agg = make_sum()
        store = MemoryStore(NodeCodec(agg.codec, Int64ValueCodec()))
        tree = DbTree(store, agg, SeededLevels(1))
        with pytest.raises(TypeError):
            tree.group_by_range_query(k(1), k(2))


class TestRounds:
    def test_one_round_either_mode(self):
        tree, store, _ = build_composite(21)
        store.reset_stats()
        tree.group_by_range_query(UINT.encode(10), UINT.encode(900))
        assert store.stats.read_rounds == 1
        assert store.stats.statements == 4

        store.reset_stats()
        tree.group_by_range_query(UINT.encode(10), UINT.encode(900),
                                  xs=(UINT.encode(0), UINT.encode(1)))
        assert store.stats.read_rounds == 1
        assert store.stats.statements == 3
        assert store.stats.write_rounds == 0


class TestSlotFilter:
    def test_rejects_foreign_and_infinite_flanks(self):
        ok = group_slot_filter(COMP, UINT.encode(2))
        inside = Bound.of(COMP.encode((2, 10)))
        inside2 = Bound.of(COMP.encode((2, 99)))
        foreign = Bound.of(COMP.encode((3, 5)))
        from aggtree import NEG_INF, POS_INF
        assert ok(inside, inside2)
        assert not ok(inside, foreign)
        assert not ok(foreign, inside)
        assert not ok(NEG_INF, inside)
        assert not ok(inside, POS_INF)
