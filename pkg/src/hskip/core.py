"""Identifiers, pseudo-random bit streams, and the bandwidth order.

Every node carries an immutable bit stream derived from its identifier.
Bits are produced in 64-bit blocks by a splitmix64-style finalizer applied
to ``(seed, block index)``; bit ``j`` is the most-significant-first bit
``j % 64`` of block ``j // 64``.  The whole stream is materialized once as a
``cap``-bit Python integer so that common-prefix queries reduce to one XOR
and one ``bit_length`` call.
"""

from __future__ import annotations

DEFAULT_CAP = 256
MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


class HSkipError(Exception):
    """Base class for errors raised by this package."""


class LevelOverflow(HSkipError):
    """A bit index or prefix length reached the stream cap."""


def mix64(x: int) -> int:
    """splitmix64 finalizer; a bijection on 64-bit integers."""
    x &= MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def seed_for_id(node_id: int) -> int:
    """The bit-stream seed assigned to a node identifier."""
    return mix64(node_id + _GOLDEN)


def _expand(seed: int, cap: int) -> int:
    nblocks = -(-cap // 64)
    value = 0
    for k in range(nblocks):
        value = (value << 64) | mix64((seed + (k + 1) * _GOLDEN) & MASK64)
    return value >> (nblocks * 64 - cap)


class BitStream:
    """Immutable pseudo-random bit string of length ``cap``.

    Two streams are only comparable when they share the same cap.
    """

    __slots__ = ("seed", "cap", "bits")

    def __init__(self, seed: int, cap: int = DEFAULT_CAP):
        if cap < 1:
            raise ValueError("cap must be positive")
        self.seed = seed & MASK64
        self.cap = cap
        self.bits = _expand(self.seed, cap)

    @classmethod
    def for_node(cls, node_id: int, cap: int = DEFAULT_CAP) -> BitStream:
        return cls(seed_for_id(node_id), cap)

    @classmethod
    def with_prefix(cls, leading: str, seed: int = 0, cap: int = DEFAULT_CAP) -> BitStream:
        """A stream whose first bits are forced to ``leading`` (e.g. ``"01"``).

        The remaining bits come from ``seed``.  Used to build fixtures with
        hand-picked prefixes.
        """
        if any(c not in "01" for c in leading):
            raise ValueError(f"not a bit string: {leading!r}")
        if len(leading) > cap:
            raise LevelOverflow(f"prefix of length {len(leading)} exceeds cap {cap}")
        stream = cls(seed, cap)
        if leading:
            shift = cap - len(leading)
            tail = stream.bits & ((1 << shift) - 1)
            stream.bits = (int(leading, 2) << shift) | tail
        return stream

    def bit(self, j: int) -> int:
        if not 0 <= j < self.cap:
            raise LevelOverflow(f"bit index {j} outside [0, {self.cap})")
        return (self.bits >> (self.cap - 1 - j)) & 1

    def prefix(self, i: int) -> str:
        return prefix(self, i)

    def __eq__(self, other):
        if not isinstance(other, BitStream):
            return NotImplemented
        return self.cap == other.cap and self.bits == other.bits

    def __hash__(self):
        return hash((self.cap, self.bits))

    def __repr__(self):
        return f"BitStream(seed={self.seed:#x}, head={self.prefix(min(16, self.cap))}...)"


def prefix(stream: BitStream, i: int) -> str:
    """The first ``i`` bits of ``stream`` as a string of '0'/'1'."""
    if not 0 <= i <= stream.cap:
        raise LevelOverflow(f"prefix length {i} outside [0, {stream.cap}]")
    if i == 0:
        return ""
    return format(stream.bits >> (stream.cap - i), f"0{i}b")


def common_prefix(a: BitStream, b: BitStream) -> int:
    """Length of the longest common prefix of two streams.

    Raises LevelOverflow when the streams agree on all ``cap`` bits, which
    for distinct seeds signals corrupted input rather than bad luck.
    """
    if a.cap != b.cap:
        raise ValueError("streams with different caps are not comparable")
    diff = a.bits ^ b.bits
    if not diff:
        raise LevelOverflow("bit streams agree up to the cap")
    return a.cap - diff.bit_length()


def bandwidth_key(bw: float, node_id: int) -> tuple[float, int]:
    """Strict total order on nodes: by bandwidth, then by identifier."""
    return (bw, node_id)
