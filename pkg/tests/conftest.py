"""Shared fixtures: the hand-checked demo tree and small builders."""

import random

import pytest

from aggtree import (
    Bound,
    DbTree,
    FixedLevels,
    Int64ValueCodec,
    MemoryStore,
    NEG_INF,
    Node,
    NodeCodec,
    POS_INF,
    ROOT_LEVEL,
    SeededLevels,
    UIntKeyCodec,
    make_sum,
)

UINT = UIntKeyCodec()


def k(n: int) -> bytes:
    return UINT.encode(n)


# Levels chosen so the resulting partition exercises every node shape:
# multi-key nodes, empty gaps, chains of single-key towers.
DEMO_LEVELS = {
    2: 1, 4: 5, 6: 2, 7: 0, 8: 2, 10: 0, 11: 3, 12: 0, 15: 4,
    16: 1, 23: 1, 24: 0, 25: 3, 27: 1, 30: 5,
}

DEMO_ITEMS = [(k(key), 10 * key) for key in sorted(DEMO_LEVELS)]


def demo_level_source() -> FixedLevels:
    return FixedLevels({k(key): lvl for key, lvl in DEMO_LEVELS.items()})


def expected_demo_nodes() -> list[Node]:
    """The full 13-node partition for DEMO_LEVELS, worked out by hand."""
    def key_bound(n):
        return Bound.of(k(n))

    def node(level, mn, mx, aggs, pairs):
        return Node(level, mn, mx, tuple(aggs),
                    tuple((k(key), 10 * key) for key in pairs))

    return [
        Node(ROOT_LEVEL, NEG_INF, POS_INF, (2200,), ()),
        node(5, NEG_INF, POS_INF, [20, 1840, None], [4, 30]),
        node(1, NEG_INF, key_bound(4), [None, None], [2]),
        node(4, key_bound(4), key_bound(30), [540, 1150], [15]),
        node(3, key_bound(4), key_bound(15), [310, 120], [11]),
        node(3, key_bound(15), key_bound(30), [630, 270], [25]),
        node(2, key_bound(4), key_bound(11), [None, 70, 100], [6, 8]),
        node(0, key_bound(6), key_bound(8), [None, None], [7]),
        node(0, key_bound(8), key_bound(11), [None, None], [10]),
        node(0, key_bound(11), key_bound(15), [None, None], [12]),
        node(1, key_bound(15), key_bound(25), [None, None, 240], [16, 23]),
        node(0, key_bound(23), key_bound(25), [None, None], [24]),
        node(1, key_bound(25), key_bound(30), [None, None], [27]),
    ]


def node_key_set(nodes) -> set:
    return {(n.level, n.min, n.max, n.aggs, n.pairs) for n in nodes}


def sum_codec() -> NodeCodec:
    return NodeCodec(make_sum().codec, Int64ValueCodec())


def build_demo_tree():
    agg = make_sum()
    store = MemoryStore(NodeCodec(agg.codec, Int64ValueCodec()))
    tree = DbTree(store, agg, demo_level_source())
    for key, value in DEMO_ITEMS:
        tree.insert(key, value)
    return tree, store


def build_random_tree(seed: int, n: int, agg=None, key_space=None):
    """Insert n distinct random keys; returns (tree, store, items)."""
    agg = agg or make_sum()
    store = MemoryStore(NodeCodec(agg.codec, Int64ValueCodec()))
    tree = DbTree(store, agg, SeededLevels(seed))
    rng = random.Random(seed)
    space = key_space or n * 8
    items = [(k(key), rng.randrange(-500, 500))
             for key in rng.sample(range(space), n)]
    for key, value in items:
        tree.insert(key, value)
    return tree, store, items


@pytest.fixture
def demo_tree():
    return build_demo_tree()
