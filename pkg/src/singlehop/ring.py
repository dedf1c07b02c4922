"""Identifier-ring arithmetic: consistent hashing, successor/predecessor walks,
stretch membership and key ownership.

Peers and keys live on the same circular identifier space [0, 2**160).  All
arithmetic is modulo the ring size.  Ownership follows the successor
convention: a key belongs to the first peer clockwise at or after it.
"""

from __future__ import annotations

import hashlib
import struct
from bisect import bisect_left, insort
from dataclasses import dataclass

RING_BITS = 160
RING_SIZE = 1 << RING_BITS


class RingError(ValueError):
    pass


class NotAMemberError(RingError):
    pass


class EmptyRingError(RingError):
    pass


class IdCollisionError(RingError):
    pass


@dataclass(frozen=True, slots=True)
class PeerAddr:
    """An IPv4 endpoint: the event identity unit of the protocol."""

    ip: str
    port: int

    def packed(self) -> bytes:
        a, b, c, d = (int(x) for x in self.ip.split("."))
        return struct.pack(">BBBBH", a, b, c, d, self.port)

    @classmethod
    def from_packed(cls, data: bytes) -> "PeerAddr":
        a, b, c, d, port = struct.unpack(">BBBBH", data)
        return cls(f"{a}.{b}.{c}.{d}", port)

    def is_default_port(self, default_port: int) -> bool:
        return self.port == default_port

    def __str__(self) -> str:
        return f"{self.ip}:{self.port}"


def id_of(addr: PeerAddr) -> int:
    """Hash an address onto the ring (SHA-1 of the 6-byte ip||port encoding)."""
    return int.from_bytes(hashlib.sha1(addr.packed()).digest(), "big")


def in_arc(start: int, end: int, x: int) -> bool:
    """True iff x lies on the clockwise arc (start, end], modulo the ring.

    A degenerate arc with start == end covers the whole ring (a full lap).
    """
    if start < end:
        return start < x <= end
    return x > start or x <= end


class RingView:
    """An ordered snapshot of ring membership, used as the oracle for
    succ/pred/stretch walks and key ownership."""

    def __init__(self):
        self._ids: list[int] = []
        self._addrs: dict[int, PeerAddr] = {}

    @classmethod
    def from_addrs(cls, addrs) -> "RingView":
        view = cls()
        for addr in addrs:
            view.add(addr)
        return view

    def add(self, addr: PeerAddr) -> int:
        pid = id_of(addr)
        if pid in self._addrs:
            raise IdCollisionError(f"id collision for {addr} and {self._addrs[pid]}")
        insort(self._ids, pid)
        self._addrs[pid] = addr
        return pid

    def remove(self, pid: int) -> None:
        if pid not in self._addrs:
            raise NotAMemberError(f"{pid:#x} is not a member")
        self._ids.pop(bisect_left(self._ids, pid))
        del self._addrs[pid]

    def __len__(self) -> int:
        return len(self._ids)

    def __contains__(self, pid: int) -> bool:
        return pid in self._addrs

    def members(self) -> list[int]:
        return list(self._ids)

    def addr_of(self, pid: int) -> PeerAddr:
        return self._addrs[pid]

    def _index_of(self, pid: int) -> int:
        i = bisect_left(self._ids, pid)
        if i == len(self._ids) or self._ids[i] != pid:
            raise NotAMemberError(f"{pid:#x} is not a member")
        return i

    def succ(self, pid: int, steps: int) -> int:
        """The steps-th clockwise member after pid; succ(p, 0) == p."""
        i = self._index_of(pid)
        return self._ids[(i + steps) % len(self._ids)]

    def pred(self, pid: int, steps: int) -> int:
        """The steps-th counterclockwise member before pid; pred(p, 0) == p."""
        i = self._index_of(pid)
        return self._ids[(i - steps) % len(self._ids)]

    def stretch_contains(self, pid: int, k: int, x: int) -> bool:
        """True iff x is pid or one of its k clockwise successors."""
        i = self._index_of(pid)
        j = self._index_of(x)
        n = len(self._ids)
        return (j - i) % n <= min(k, n - 1)

    def owner_of(self, key: int) -> int:
        """The first member clockwise at or after key (successor ownership)."""
        if not self._ids:
            raise EmptyRingError("ring has no members")
        i = bisect_left(self._ids, key % RING_SIZE)
        return self._ids[i % len(self._ids)]
