"""Decomposable aggregations.

An aggregation is a triple of functions over a carrier set: ``lift`` turns a
stored value into a carrier element, ``combine`` is an associative operator
with ``identity``, and ``finish`` maps an accumulated carrier element to the
client-facing result.  The index stores carrier elements next to child
references, so any function expressible this way can be answered from a
logarithmic slice of the data.  Holistic statistics (median, mode, ...)
cannot be decomposed like this and are out of scope.

Carrier elements must be plain comparable Python values (ints, tuples,
bytes, or the sentinels below); ``None`` is reserved for missing slots in
node payloads and must never appear inside a carrier.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Sequence

I64_MIN = -(1 << 63)
I64_MAX = (1 << 63) - 1


class AggregateOverflow(ArithmeticError):
    """Checked fixed-width accumulation left the representable range."""


class _Sentinel:
    """Interned marker comparable only by identity, with a stable repr."""

    __slots__ = ("_name",)

    def __init__(self, name: str):
        self._name = name

    def __repr__(self):
        return self._name

    def __deepcopy__(self, memo):
        return self


#: Identity of MAX and the empty slot of top-n results: below every value.
BOTTOM = _Sentinel("BOTTOM")
#: Identity of MIN: above every value.
TOP = _Sentinel("TOP")


# ---------------------------------------------------------------------------
# Carrier codecs.  Encodings are canonical: equal carrier values always
# produce equal bytes, so snapshots can be compared byte-for-byte.


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


def _enc_int(n: int) -> bytes:
    """Signed integer, minimal little-endian two's complement, length-prefixed."""
    length = max(1, (n.bit_length() + 8) // 8)
    return _uvarint(length) + n.to_bytes(length, "little", signed=True)


def _dec_int(data: bytes, pos: int) -> tuple[int, int]:
    length, pos = _read_uvarint(data, pos)
    if pos + length > len(data):
        raise ValueError("truncated integer")
    return int.from_bytes(data[pos:pos + length], "little", signed=True), pos + length


def _enc_uint(n: int) -> bytes:
    length = max(1, (n.bit_length() + 7) // 8)
    return _uvarint(length) + n.to_bytes(length, "little")


def _dec_uint(data: bytes, pos: int) -> tuple[int, int]:
    length, pos = _read_uvarint(data, pos)
    if pos + length > len(data):
        raise ValueError("truncated integer")
    return int.from_bytes(data[pos:pos + length], "little"), pos + length


class IntCodec:
    """Signed integer carriers (SUM)."""

    def encode(self, value) -> bytes:
        return _enc_int(value)

    def decode(self, data: bytes) -> int:
        value, pos = _dec_int(data, 0)
        if pos != len(data):
            raise ValueError("trailing bytes after integer")
        return value


class UIntCodec:
    """Non-negative integer carriers (COUNT)."""

    def encode(self, value) -> bytes:
        return _enc_uint(value)

    def decode(self, data: bytes) -> int:
        value, pos = _dec_uint(data, 0)
        if pos != len(data):
            raise ValueError("trailing bytes after integer")
        return value


class ExtremeCodec:
    """Integer-or-sentinel carriers (MIN/MAX): tag byte then optional value."""

    def __init__(self, sentinel: _Sentinel):
        self.sentinel = sentinel

    def encode(self, value) -> bytes:
        if value is self.sentinel:
            return b"\x00"
        return b"\x01" + _enc_int(value)

    def decode(self, data: bytes):
        if data[:1] == b"\x00":
            if len(data) != 1:
                raise ValueError("trailing bytes after sentinel")
            return self.sentinel
        if data[:1] != b"\x01":
            raise ValueError("bad extreme tag")
        value, pos = _dec_int(data, 1)
        if pos != len(data):
            raise ValueError("trailing bytes after integer")
        return value


class SumCountCodec:
    """(sum, count) carriers (AVG)."""

    def encode(self, value) -> bytes:
        s, c = value
        return _enc_int(s) + _enc_uint(c)

    def decode(self, data: bytes):
        s, pos = _dec_int(data, 0)
        c, pos = _dec_uint(data, pos)
        if pos != len(data):
            raise ValueError("trailing bytes after sum/count pair")
        return (s, c)


class TopNCodec:
    """Fixed-length descending tuples with BOTTOM padding (top-n)."""

    def __init__(self, n: int):
        self.n = n

    def encode(self, value) -> bytes:
        out = bytearray()
        for slot in value:
            if slot is BOTTOM:
                out += b"\x00"
            else:
                out += b"\x01" + _enc_int(slot)
        return bytes(out)

    def decode(self, data: bytes):
        slots = []
        pos = 0
        for _ in range(self.n):
            if pos >= len(data):
                raise ValueError("truncated top-n carrier")
            tag = data[pos]
            pos += 1
            if tag == 0x00:
                slots.append(BOTTOM)
            elif tag == 0x01:
                value, pos = _dec_int(data, pos)
                slots.append(value)
            else:
                raise ValueError("bad top-n slot tag")
        if pos != len(data):
            raise ValueError("trailing bytes after top-n carrier")
        return tuple(slots)


class ProductCodec:
    """Tuple carriers encoded as length-prefixed component encodings."""

    def __init__(self, parts: Sequence):
        self.parts = list(parts)

    def encode(self, value) -> bytes:
        out = bytearray()
        for codec, part in zip(self.parts, value, strict=True):
            enc = codec.encode(part)
            out += _uvarint(len(enc)) + enc
        return bytes(out)

    def decode(self, data: bytes):
        out = []
        pos = 0
        for codec in self.parts:
            length, pos = _read_uvarint(data, pos)
            if pos + length > len(data):
                raise ValueError("truncated product component")
            out.append(codec.decode(data[pos:pos + length]))
            pos += length
        if pos != len(data):
            raise ValueError("trailing bytes after product carrier")
        return tuple(out)


class DigestCodec:
    """Fixed-size hash digests, length-prefixed."""

    def __init__(self, size: int):
        self.size = size

    def encode(self, value) -> bytes:
        if len(value) != self.size:
            raise ValueError(f"expected a {self.size}-byte digest")
        return _uvarint(self.size) + bytes(value)

    def decode(self, data: bytes):
        size, pos = _read_uvarint(data, 0)
        if size != self.size or pos + size != len(data):
            raise ValueError("malformed digest carrier")
        return data[pos:]


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Aggregation:
    """A decomposable aggregation with a canonical carrier codec.

    ``combine`` must be associative with ``identity`` as left and right
    identity; the index relies on nothing else, so commutativity is not
    required.  ``associative=False`` marks pseudo-aggregations (hash
    maintenance) whose slots are kept up to date by structural recomputation
    instead of ``combine``; range queries refuse to slice them.
    """

    name: str
    identity: Any
    lift: Callable[[Any], Any]
    combine: Callable[[Any, Any], Any]
    finish: Callable[[Any], Any]
    codec: Any
    associative: bool = True


def make_sum(checked: bool = True) -> Aggregation:
    """Integer sum.  Checked mode signals when a combine leaves 64-bit range."""

    if checked:
        def combine(a, b):
            c = a + b
            if not I64_MIN <= c <= I64_MAX:
                raise AggregateOverflow(f"sum {c} exceeds signed 64-bit range")
            return c
        name = "sum"
    else:
        def combine(a, b):
            return a + b
        name = "sum_big"

    return Aggregation(
        name=name,
        identity=0,
        lift=lambda v: v,
        combine=combine,
        finish=lambda a: a,
        codec=IntCodec(),
    )


def make_count() -> Aggregation:
    return Aggregation(
        name="count",
        identity=0,
        lift=lambda v: 1,
        combine=lambda a, b: a + b,
        finish=lambda a: a,
        codec=UIntCodec(),
    )


def make_min() -> Aggregation:
    """Minimum with an explicit above-everything identity.

    Using a sentinel instead of a huge numeric keeps the identity outside the
    value domain, so no representable value is silently unaggregatable.
    """

    def combine(a, b):
        if a is TOP:
            return b
        if b is TOP:
            return a
        return a if a <= b else b

    return Aggregation(
        name="min",
        identity=TOP,
        lift=lambda v: v,
        combine=combine,
        finish=lambda a: None if a is TOP else a,
        codec=ExtremeCodec(TOP),
    )


def make_max() -> Aggregation:
    def combine(a, b):
        if a is BOTTOM:
            return b
        if b is BOTTOM:
            return a
        return a if a >= b else b

    return Aggregation(
        name="max",
        identity=BOTTOM,
        lift=lambda v: v,
        combine=combine,
        finish=lambda a: None if a is BOTTOM else a,
        codec=ExtremeCodec(BOTTOM),
    )


def make_avg() -> Aggregation:
    """Arithmetic mean carried as (sum, count); finish yields an exact Fraction."""

    def finish(a):
        s, c = a
        if c == 0:
            return None
        return Fraction(s, c)

    return Aggregation(
        name="avg",
        identity=(0, 0),
        lift=lambda v: (v, 1),
        combine=lambda a, b: (a[0] + b[0], a[1] + b[1]),
        finish=finish,
        codec=SumCountCodec(),
    )


def make_top_n(n: int = 2) -> Aggregation:
    """The n largest values, descending, padded with BOTTOM.

    The carrier keeps the n best candidates of each side, which is all a
    merge can ever need, so the operator stays associative.
    """

    if n < 1:
        raise ValueError("top-n needs n >= 1")
    identity = (BOTTOM,) * n

    def combine(a, b):
        merged = sorted(
            [v for v in a if v is not BOTTOM] + [v for v in b if v is not BOTTOM],
            reverse=True,
        )[:n]
        return tuple(merged) + (BOTTOM,) * (n - len(merged))

    def finish(a):
        return tuple(v for v in a if v is not BOTTOM)

    return Aggregation(
        name=f"top{n}",
        identity=identity,
        lift=lambda v: (v,) + (BOTTOM,) * (n - 1),
        combine=combine,
        finish=finish,
        codec=TopNCodec(n),
    )


def make_product(parts: Sequence[Aggregation]) -> Aggregation:
    """Run several aggregations side by side over the same values.

    Every component sees every lifted value; one maintained tree answers all
    of them at once.  The product is associative only if every part is.
    """

    parts = list(parts)
    if not parts:
        raise ValueError("product of zero aggregations")

    def lift(v):
        return tuple(p.lift(v) for p in parts)

    def combine(a, b):
        return tuple(p.combine(x, y) for p, x, y in zip(parts, a, b))

    def finish(a):
        return tuple(p.finish(x) for p, x in zip(parts, a))

    return Aggregation(
        name="product(" + ",".join(p.name for p in parts) + ")",
        identity=tuple(p.identity for p in parts),
        lift=lift,
        combine=combine,
        finish=finish,
        codec=ProductCodec([p.codec for p in parts]),
        associative=all(p.associative for p in parts),
    )


def make_digest_hook(digest_size: int = 32) -> Aggregation:
    """Placeholder aggregation for hash-maintained slots.

    Digests are recomputed from node content rather than combined, so this
    is flagged non-associative and its combine refuses to run.  It exists so
    hash slots get a carrier codec and can ride inside a product next to
    ordinary aggregations.
    """

    def refuse(*_):
        raise TypeError("digest slots are recomputed from node content, not combined")

    return Aggregation(
        name="digest",
        identity=b"\x00" * digest_size,
        lift=refuse,
        combine=refuse,
        finish=lambda a: a,
        codec=DigestCodec(digest_size),
        associative=False,
    )
