"""Order-preserving key encodings and range endpoints.

Keys travel through the index as bytes whose lexicographic order matches the
application-domain order.  Codecs translate between application values and
those bytes; ``Bound`` extends the key order with points below and above
every key so node ranges can be open-ended.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Any


class CodecError(ValueError):
    """Raised when bytes cannot be decoded back into an application value."""


# ---------------------------------------------------------------------------
# Range endpoints

_NEG, _KEY, _POS = 0, 1, 2

# Single-byte tags give bound encodings the same order as the bounds
# themselves: 0x00 < 0x01||key < 0x02.
_TAG_NEG = b"\x00"
_TAG_KEY = b"\x01"
_TAG_POS = b"\x02"


@dataclass(frozen=True)
class Bound:
    """A range endpoint: below every key, a key itself, or above every key.

    Total order: NEG_INF < Bound.of(a) < Bound.of(b) < POS_INF whenever the
    key bytes a < b.  Comparisons against raw ``bytes`` treat them as keys.
    """

    tag: int
    key: bytes = b""

    @staticmethod
    def of(key: bytes) -> "Bound":
        return Bound(_KEY, bytes(key))

    @property
    def is_key(self) -> bool:
        return self.tag == _KEY

    def _rank(self, other) -> tuple:
        if isinstance(other, Bound):
            return (other.tag, other.key)
        if isinstance(other, (bytes, bytearray)):
            return (_KEY, bytes(other))
        return NotImplemented

    def __lt__(self, other):
        r = self._rank(other)
        if r is NotImplemented:
            return NotImplemented
        return (self.tag, self.key) < r

    def __le__(self, other):
        r = self._rank(other)
        if r is NotImplemented:
            return NotImplemented
        return (self.tag, self.key) <= r

    def __gt__(self, other):
        r = self._rank(other)
        if r is NotImplemented:
            return NotImplemented
        return (self.tag, self.key) > r

    def __ge__(self, other):
        r = self._rank(other)
        if r is NotImplemented:
            return NotImplemented
        return (self.tag, self.key) >= r

    def encoded(self) -> bytes:
        """Tagged bytes whose memcmp order equals the bound order."""
        if self.tag == _NEG:
            return _TAG_NEG
        if self.tag == _POS:
            return _TAG_POS
        return _TAG_KEY + self.key

    @staticmethod
    def parse(data: bytes) -> "Bound":
        if not data:
            raise CodecError("empty bound encoding")
        tag = data[0]
        if tag == 0x00:
            if len(data) != 1:
                raise CodecError("trailing bytes after lower-sentinel tag")
            return NEG_INF
        if tag == 0x02:
            if len(data) != 1:
                raise CodecError("trailing bytes after upper-sentinel tag")
            return POS_INF
        if tag == 0x01:
            return Bound(_KEY, bytes(data[1:]))
        raise CodecError(f"unknown bound tag {tag:#x}")

    def __repr__(self):
        if self.tag == _NEG:
            return "NEG_INF"
        if self.tag == _POS:
            return "POS_INF"
        return f"Bound.of({self.key!r})"


NEG_INF = Bound(_NEG)
POS_INF = Bound(_POS)


# ---------------------------------------------------------------------------
# Key codecs


class UIntKeyCodec:
    """Unsigned integers as fixed-width big-endian bytes."""

    name = "uint64"

    def __init__(self, width: int = 8):
        self.width = width
        self._max = (1 << (8 * width)) - 1

    def encode(self, value: int) -> bytes:
        if not 0 <= value <= self._max:
            raise CodecError(f"value {value} out of range for {self.width}-byte unsigned key")
        return value.to_bytes(self.width, "big")

    def decode(self, data: bytes) -> int:
        if len(data) != self.width:
            raise CodecError(f"expected {self.width} key bytes, got {len(data)}")
        return int.from_bytes(data, "big")


class IntKeyCodec:
    """Signed integers, order-preserved by flipping the sign bit."""

    name = "int64"

    def __init__(self, width: int = 8):
        self.width = width
        self._bias = 1 << (8 * width - 1)

    def encode(self, value: int) -> bytes:
        if not -self._bias <= value < self._bias:
            raise CodecError(f"value {value} out of range for {self.width}-byte signed key")
        return (value + self._bias).to_bytes(self.width, "big")

    def decode(self, data: bytes) -> int:
        if len(data) != self.width:
            raise CodecError(f"expected {self.width} key bytes, got {len(data)}")
        return int.from_bytes(data, "big") - self._bias


class TextKeyCodec:
    """Unicode text as UTF-8; byte order equals code-point order."""

    name = "text"

    def encode(self, value: str) -> bytes:
        return value.encode("utf-8")

    def decode(self, data: bytes) -> str:
        try:
            return data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CodecError(str(exc)) from None


class BytesKeyCodec:
    """Raw bytes used verbatim."""

    name = "bytes"

    def encode(self, value: bytes) -> bytes:
        return bytes(value)

    def decode(self, data: bytes) -> bytes:
        return bytes(data)


# A part encoding may contain any byte, so the part separator has to be
# escaped into the stream: 0x00 inside a part becomes 0x00 0xFF, and the
# part ends at 0x00 0x00.  The escaped form keeps lexicographic order and
# no terminated prefix can collide with a longer part.

def _escape_part(part: bytes) -> bytes:
    return part.replace(b"\x00", b"\x00\xff") + b"\x00\x00"


def _unescape_part(data: bytes, pos: int) -> tuple[bytes, int]:
    out = bytearray()
    n = len(data)
    while pos < n:
        b = data[pos]
        if b != 0x00:
            out.append(b)
            pos += 1
            continue
        if pos + 1 >= n:
            raise CodecError("truncated part escape")
        nxt = data[pos + 1]
        if nxt == 0xFF:
            out.append(0x00)
            pos += 2
        elif nxt == 0x00:
            return bytes(out), pos + 2
        else:
            raise CodecError(f"invalid escape byte {nxt:#x}")
    raise CodecError("unterminated part")


class CompositeKeyCodec:
    """Two-part keys (x, y) ordered lexicographically, x most significant.

    The x part is escaped and terminated so variable-length x encodings stay
    order-preserving and the parts can be recovered from the whole.  The y
    part occupies the remainder verbatim.
    """

    def __init__(self, x_codec, y_codec):
        self.x_codec = x_codec
        self.y_codec = y_codec
        self.name = f"composite:{x_codec.name}:{y_codec.name}"

    def encode(self, value: tuple) -> bytes:
        x, y = value
        return _escape_part(self.x_codec.encode(x)) + self.y_codec.encode(y)

    def decode(self, data: bytes) -> tuple:
        xb, yb = self.split(data)
        return (self.x_codec.decode(xb), self.y_codec.decode(yb))

    def split(self, data: bytes) -> tuple[bytes, bytes]:
        """Recover the raw (x, y) part encodings from full key bytes."""
        xb, pos = _unescape_part(data, 0)
        return xb, data[pos:]

    def compose(self, x_part: bytes, y_part: bytes) -> bytes:
        """Build full key bytes from raw part encodings."""
        return _escape_part(x_part) + y_part


def split_bound_parts(bound: Bound, composite: CompositeKeyCodec) -> tuple[bytes, bytes]:
    """Tagged (x, y) parts of a bound, comparable with tag_part outputs."""
    if bound.tag == _NEG:
        return _TAG_NEG, _TAG_NEG
    if bound.tag == _POS:
        return _TAG_POS, _TAG_POS
    xb, yb = composite.split(bound.key)
    return _TAG_KEY + xb, _TAG_KEY + yb


def tag_part(part: bytes) -> bytes:
    """Tag a raw part encoding so it compares against split_bound_parts output."""
    return _TAG_KEY + part
