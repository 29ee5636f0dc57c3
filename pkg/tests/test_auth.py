"""Authenticated trees: proof soundness, tamper detection, digest upkeep."""

import random

import pytest

from aggtree import (
    AuthDbTree,
    DerandomizedLevels,
    Int64ValueCodec,
    Invalid,
    KeyNotFound,
    MemoryStore,
    Node,
    ProofVerifier,
    SeededLevels,
    TamperDetected,
    VerifiedAbsent,
    VerifiedValue,
    empty_tree_digest,
    make_sum,
    node_digest,
)
from aggtree.auth import parse_proof, serialize_proof
from conftest import k

VC = Int64ValueCodec()


def build_auth(keys=range(0, 120, 3), salt=b""):
    store = MemoryStore(AuthDbTree.make_codec(VC))
    tree = AuthDbTree(store, VC, DerandomizedLevels(salt))
    for key in keys:
        tree.insert(k(key), key * 2)
    return tree, store


def reference_root_hash(store, value_codec):
    """Recompute the root digest from raw rows, ignoring stored slots."""
    snap = store.snapshot()
    by_range = {(n.min, n.max): n for n in snap if not n.is_root}

    def subtree(n: Node) -> bytes:
        slots = []
        for i in range(n.m + 1):
            lo, hi = n.child_range(i)
            child = by_range.get((lo, hi))
            slots.append(None if child is None else subtree(child))
        shaped = Node(n.level, n.min, n.max, tuple(slots), n.pairs)
        return node_digest(shaped, value_codec)

    non_root = [n for n in snap if not n.is_root]
    if not non_root:
        return empty_tree_digest()
    top = max(non_root, key=lambda n: n.level)
    return subtree(top)


class TestProofVerification:
    def test_every_key_proves_its_value(self):
        tree, _ = build_auth()
        verifier = ProofVerifier(VC)
        root = tree.root_hash
        for key in range(0, 120, 3):
            res = tree.get_with_proof(k(key))
            assert res.found and res.value == key * 2
            assert verifier.verify(res.proof, k(key), root) == \
                VerifiedValue(key * 2)

    def test_absent_keys_prove_absence(self):
        tree, _ = build_auth()
        verifier = ProofVerifier(VC)
        root = tree.root_hash
        for key in (1, 2, 58, 119, 10 ** 6):
            res = tree.get_with_proof(k(key))
            assert not res.found and res.value is None
            assert verifier.verify(res.proof, k(key), root) == VerifiedAbsent()

    def test_wrong_root_rejected(self):
        tree, _ = build_auth()
        res = tree.get_with_proof(k(3))
        out = ProofVerifier(VC).verify(res.proof, k(3), b"\x00" * 32)
        assert isinstance(out, Invalid)

    def test_proof_for_wrong_key_rejected(self):
        tree, _ = build_auth()
        res = tree.get_with_proof(k(3))
        # key 45 is present but lives on a different path
        out = ProofVerifier(VC).verify(res.proof, k(45), tree.root_hash)
        assert isinstance(out, Invalid)

    def test_empty_tree_commits_to_empty_digest(self):
        store = MemoryStore(AuthDbTree.make_codec(VC))
        tree = AuthDbTree(store, VC)
        assert tree.refresh_root_hash() == empty_tree_digest()
        res = tree.get_with_proof(k(5))
        out = ProofVerifier(VC).verify(res.proof, k(5), empty_tree_digest())
        assert out == VerifiedAbsent()

    def test_proof_round_trips_through_serialization(self):
        tree, _ = build_auth()
        res = tree.get_with_proof(k(9))
        codec = AuthDbTree.make_codec(VC)
        nodes = parse_proof(res.proof, codec)
        assert serialize_proof(nodes, codec) == res.proof
        assert nodes[-1].is_root


class TestProofTampering:
    def flips(self, data: bytes):
        for i in range(len(data)):
            for bit in (0x01, 0x80):
                out = bytearray(data)
                out[i] ^= bit
                yield bytes(out)

    def test_every_single_bit_flip_is_caught(self):
        tree, _ = build_auth(range(0, 30, 3))
        verifier = ProofVerifier(VC)
        root = tree.root_hash
        res = tree.get_with_proof(k(9))
        assert verifier.verify(res.proof, k(9), root) == VerifiedValue(18)
        for mutated in self.flips(res.proof):
            out = verifier.verify(mutated, k(9), root)
            # a flip may leave the proof parseable; it must never verify as
            # the honest value nor flip to a verified absence
            assert isinstance(out, Invalid), mutated

    def test_value_forgery_rejected(self):
        tree, _ = build_auth()
        codec = AuthDbTree.make_codec(VC)
        res = tree.get_with_proof(k(3))
        nodes = parse_proof(res.proof, codec)
        holder = nodes[0]
        i = holder.key_index(k(3))
        pairs = list(holder.pairs)
        pairs[i] = (k(3), 999999)
        forged = [Node(holder.level, holder.min, holder.max, holder.aggs,
                       tuple(pairs))] + nodes[1:]
        out = ProofVerifier(VC).verify(serialize_proof(forged, codec),
                                       k(3), tree.root_hash)
        assert isinstance(out, Invalid)

    def test_truncated_path_rejected(self):
        tree, _ = build_auth()
        codec = AuthDbTree.make_codec(VC)
        res = tree.get_with_proof(k(3))
        nodes = parse_proof(res.proof, codec)
        for cut in (nodes[:-1], nodes[1:]):
            out = ProofVerifier(VC).verify(serialize_proof(cut, codec),
                                           k(3), tree.root_hash)
            assert isinstance(out, Invalid)


class TestDigestMaintenance:
    def test_root_hash_matches_reference_after_mutations(self):
        tree, store = build_auth(range(0, 60, 3))
        assert tree.root_hash == reference_root_hash(store, VC)
        tree.insert(k(7), 70)
        assert tree.root_hash == reference_root_hash(store, VC)
        tree.update(k(7), 71)
        assert tree.root_hash == reference_root_hash(store, VC)
        tree.delete(k(7))
        assert tree.root_hash == reference_root_hash(store, VC)
        tree.delete(k(0))
        assert tree.root_hash == reference_root_hash(store, VC)

    def test_root_hash_is_order_independent(self):
        keys = [5, 90, 33, 17, 64, 2, 71]
        hashes = set()
        for seed in range(4):
            rng = random.Random(seed)
            order = list(keys)
            rng.shuffle(order)
            store = MemoryStore(AuthDbTree.make_codec(VC))
            tree = AuthDbTree(store, VC)
            for key in order:
                tree.insert(k(key), key)
            hashes.add(tree.root_hash)
        assert len(hashes) == 1

    def test_structural_invariants_hold(self):
        from aggtree import check_invariants
        tree, store = build_auth()
        violations = check_invariants(store.snapshot(),
                                      summarize=tree.summarize)
        assert violations == []

    def test_delete_to_empty_restores_empty_digest(self):
        keys = [4, 9, 13]
        tree, _ = build_auth(keys)
        for key in keys:
            tree.delete(k(key))
        assert tree.root_hash == empty_tree_digest()


class TestStoreTampering:
    def corrupt(self, store, predicate, mutate):
        victim = next(n for n in store.snapshot() if predicate(n))
        broken = mutate(victim)
        store._nodes[victim.ident] = broken
        if not victim.is_root:
            store._by_range[(victim.min, victim.max)] = broken
        return victim

    def test_get_detects_changed_value(self):
        tree, store = build_auth()
        self.corrupt(store,
                     lambda n: n.contains_key(k(3)),
                     lambda n: Node(n.level, n.min, n.max, n.aggs,
                                    tuple((key, v + 1 if key == k(3) else v)
                                          for key, v in n.pairs)))
        with pytest.raises(TamperDetected):
            tree.get(k(3))

    def test_mutations_stop_before_writing(self):
        tree, store = build_auth()
        self.corrupt(store,
                     lambda n: n.contains_key(k(3)),
                     lambda n: Node(n.level, n.min, n.max, n.aggs,
                                    tuple((key, v + 1 if key == k(3) else v)
                                          for key, v in n.pairs)))
        stats = store.stats.snapshot()
        with pytest.raises(TamperDetected):
            tree.update(k(3), 1)
        assert store.stats.write_rounds == stats.write_rounds
        with pytest.raises(TamperDetected):
            tree.delete(k(3))
        assert store.stats.write_rounds == stats.write_rounds
        with pytest.raises(TamperDetected):
            tree.insert(k(4), 1)
        assert store.stats.write_rounds == stats.write_rounds

    def test_new_handle_with_trusted_root_detects(self):
        tree, store = build_auth()
        honest_root = tree.root_hash
        self.corrupt(store,
                     lambda n: n.contains_key(k(3)),
                     lambda n: Node(n.level, n.min, n.max, n.aggs,
                                    tuple((key, 0) for key, _ in n.pairs)))
        suspicious = AuthDbTree(MemoryStoreView(store), VC,
                                trusted_root=honest_root)
        with pytest.raises(TamperDetected):
            suspicious.get(k(3))

    def test_trust_on_first_use_adopts_current_root(self):
        tree, store = build_auth()
        adopted = AuthDbTree(store, VC)
        assert adopted.get(k(3)) == 6
        assert adopted.root_hash == tree.root_hash


class MemoryStoreView:
    """Pass-through wrapper so a second handle shares one store."""

    def __init__(self, inner):
        self._inner = inner

    def __getattr__(self, name):
        return getattr(self._inner, name)


class TestLevelPolicy:
    def test_seeded_levels_rejected(self):
        store = MemoryStore(AuthDbTree.make_codec(VC))
        with pytest.raises(ValueError):
            AuthDbTree(store, VC, SeededLevels(1))

    def test_default_is_derandomized(self):
        store = MemoryStore(AuthDbTree.make_codec(VC))
        tree = AuthDbTree(store, VC)
        assert isinstance(tree.levels, DerandomizedLevels)


class TestCombinedMode:
    def build(self, keys=range(0, 40, 2)):
        agg = make_sum()
        store = MemoryStore(AuthDbTree.make_codec(VC, data_agg=agg))
        tree = AuthDbTree(store, VC, data_agg=agg)
        for key in keys:
            tree.insert(k(key), key)
        return tree, store, agg

    def test_range_queries_answer_from_data_parts(self):
        tree, _, _ = self.build()
        # keys 10..20 step 2: 10+12+14+16+18+20
        assert tree.aggregate_range_query(k(10), k(20)) == 90
        tree.delete(k(10))
        assert tree.aggregate_range_query(k(10), k(20)) == 80
        tree.update(k(12), 500)
        assert tree.aggregate_range_query(k(10), k(20)) == 568

    def test_proofs_still_verify(self):
        tree, _, agg = self.build()
        verifier = ProofVerifier(VC, data_agg=agg)
        res = tree.get_with_proof(k(4))
        assert verifier.verify(res.proof, k(4), tree.root_hash) == \
            VerifiedValue(4)
        res = tree.get_with_proof(k(5))
        assert verifier.verify(res.proof, k(5), tree.root_hash) == \
            VerifiedAbsent()

    def test_data_slot_tampering_detected(self):
        tree, store, _ = self.build()
        # inflate one aggregate data part while keeping its digest half
        victim = next(n for n in store.snapshot()
                      if not n.is_root and any(a is not None for a in n.aggs))
        slot = next(i for i, a in enumerate(victim.aggs) if a is not None)
        data, digest = victim.aggs[slot]
        aggs = list(victim.aggs)
        aggs[slot] = (data + 1, digest)
        broken = Node(victim.level, victim.min, victim.max, tuple(aggs),
                      victim.pairs)
        store._nodes[victim.ident] = broken
        store._by_range[(victim.min, victim.max)] = broken
        # any path through the broken node fails digest linkage
        caught = 0
        for key in range(0, 40, 2):
            try:
                if victim.in_open_range(k(key)):
                    tree.get(k(key))
            except TamperDetected:
                caught += 1
        assert caught > 0

    def test_mixed_handles_reject_each_other(self):
        tree, store, agg = self.build()
        plain = ProofVerifier(VC)
        res = tree.get_with_proof(k(4))
        out = plain.verify(res.proof, k(4), tree.root_hash)
        assert isinstance(out, Invalid)


class TestBulkBuild:
    def test_matches_sequential_root_hash(self):
        items = [(k(key), key * 3) for key in range(0, 50, 5)]
        store_a = MemoryStore(AuthDbTree.make_codec(VC))
        a = AuthDbTree(store_a, VC)
        a.bulk_build(items)
        store_b = MemoryStore(AuthDbTree.make_codec(VC))
        b = AuthDbTree(store_b, VC)
        for key, v in items:
            b.insert(key, v)
        assert a.root_hash == b.root_hash
        assert a.get(k(45)) == 135

    def test_get_missing_raises(self):
        tree, _ = build_auth(range(3))
        with pytest.raises(KeyNotFound):
            tree.get(k(99))
