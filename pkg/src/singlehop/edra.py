"""The single-hop peer state machine: event acknowledgment and buffering,
interval-close message generation, dynamic interval tuning and the routing
table every lookup resolves against.

Dissemination works on a TTL-indexed logarithmic pattern.  Each peer buffers
the events it acknowledges during an interval of ``theta`` seconds, then
emits up to ``rho = ceil(log2(n))`` maintenance messages: message M(l)
travels to the 2**l-th successor and carries every event acknowledged this
interval at a TTL above l.  The TTL=0 message doubles as the liveness signal
the successor's watchdog listens for, so it is sent even when empty.
"""

from __future__ import annotations

import math
from bisect import bisect_left, insort
from collections import deque
from dataclasses import dataclass, field

from .ring import PeerAddr, id_of, in_arc

JOIN = "join"
LEAVE = "leave"


def compute_rho(n: int) -> int:
    """Message fan-out depth ceil(log2(n)); 0 for a single-peer system."""
    if n < 1:
        raise ValueError("system size must be at least 1")
    return (n - 1).bit_length() if n > 1 else 0


def tune_theta(cfg: "EdraConfig", s_avg_observed: float, n: int) -> float:
    """Buffering interval that keeps stale-entry fraction under cfg.f.

    Evaluates theta = 4*f*S_avg / (16 + 3*rho) and clamps it into
    cfg.theta_bounds so bootstrap-time estimates cannot produce a
    pathological timer.
    """
    if s_avg_observed <= 0:
        raise ValueError("average session length must be positive")
    theta = 4.0 * cfg.f * s_avg_observed / (16 + 3 * compute_rho(n))
    lo, hi = cfg.theta_bounds
    return min(max(theta, lo), hi)


def event_cap(cfg: "EdraConfig", n: int) -> int:
    """Burst guard: maximum events buffered per interval, floor of
    8*f*n / (16 + 3*rho).  May be 0 for tiny systems; the peer treats
    that as 1 so the cap stays an early-close trigger."""
    return int(8.0 * cfg.f * n / (16 + 3 * compute_rho(n)))


@dataclass(frozen=True, slots=True)
class EdraConfig:
    f: float = 0.01
    system_id: int = 1
    default_port: int = 4170
    theta_bounds: tuple[float, float] = (0.5, 300.0)
    retransmit_timeout: float = 0.5
    retransmit_max: int = 3

    def __post_init__(self):
        if not 0 < self.f < 1:
            raise ValueError("f must be in (0, 1)")
        if self.theta_bounds[0] <= 0:
            raise ValueError("theta lower bound must be positive")
        if self.retransmit_max < 1:
            raise ValueError("retransmit_max must be at least 1")


@dataclass(frozen=True, slots=True)
class Event:
    """A join or leave of a subject peer.  Identity is (kind, subject)."""

    kind: str
    subject: PeerAddr
    subject_id: int = field(compare=False, default=0)

    @classmethod
    def join(cls, subject: PeerAddr) -> "Event":
        return cls(JOIN, subject, id_of(subject))

    @classmethod
    def leave(cls, subject: PeerAddr) -> "Event":
        return cls(LEAVE, subject, id_of(subject))

    def key(self):
        return (self.kind, self.subject)


@dataclass(slots=True)
class MaintenanceMsg:
    ttl: int
    events: tuple
    seq: int
    sender: PeerAddr


class AddressBook:
    """Shared id -> address registry.

    Each peer logically stores the 6-byte endpoint of every member; co-hosted
    peers (tests, the simulator) share one resolver so the payload is kept
    once instead of n times.
    """

    def __init__(self):
        self._addrs: dict[int, PeerAddr] = {}

    def register(self, addr: PeerAddr) -> int:
        pid = id_of(addr)
        known = self._addrs.get(pid)
        if known is not None and known != addr:
            raise ValueError(f"id collision between {addr} and {known}")
        self._addrs[pid] = addr
        return pid

    def addr_of(self, pid: int) -> PeerAddr:
        return self._addrs[pid]


class RoutingTable:
    """One peer's full membership view: a sorted id index over the shared
    address book.  Payload cost is 6 bytes per entry (IPv4 + port)."""

    __slots__ = ("book", "ids")

    def __init__(self, book: AddressBook):
        self.book = book
        self.ids: list[int] = []

    def clone(self) -> "RoutingTable":
        other = RoutingTable(self.book)
        other.ids = self.ids.copy()
        return other

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, pid: int) -> bool:
        i = bisect_left(self.ids, pid)
        return i < len(self.ids) and self.ids[i] == pid

    def add(self, pid: int) -> bool:
        i = bisect_left(self.ids, pid)
        if i < len(self.ids) and self.ids[i] == pid:
            return False
        self.ids.insert(i, pid)
        return True

    def remove(self, pid: int) -> bool:
        i = bisect_left(self.ids, pid)
        if i < len(self.ids) and self.ids[i] == pid:
            self.ids.pop(i)
            return True
        return False

    def succ_steps(self, pid: int, steps: int) -> int:
        i = bisect_left(self.ids, pid)
        return self.ids[(i + steps) % len(self.ids)]

    def pred_steps(self, pid: int, steps: int) -> int:
        i = bisect_left(self.ids, pid)
        return self.ids[(i - steps) % len(self.ids)]

    def owner_of(self, key: int) -> int:
        i = bisect_left(self.ids, key)
        return self.ids[i % len(self.ids)]

    def addr_of(self, pid: int) -> PeerAddr:
        return self.book.addr_of(pid)

    def payload_bytes(self) -> int:
        return 6 * len(self.ids)


class EdraPeer:
    """Protocol state for one peer.

    The peer is single-owner: the embedding host must serialize calls and
    supply monotonic timestamps.  Methods mutate the state and return the
    datagrams to transport, which keeps identical input sequences producing
    identical outputs.
    """

    __slots__ = (
        "cfg", "addr", "pid", "table", "theta", "buffers", "seen",
        "event_window", "window_anchor", "predecessor_watch", "seq_out",
        "pending", "interval_count", "ttls_seen",
    )

    def __init__(self, addr: PeerAddr, cfg: EdraConfig, book: AddressBook,
                 now: float = 0.0):
        self.cfg = cfg
        self.addr = addr
        self.pid = book.register(addr)
        self.table = RoutingTable(book)
        self.table.add(self.pid)
        self.theta = cfg.theta_bounds[1]  # no churn evidence yet
        self.window_anchor = now
        # event key -> [Event, highest ack TTL this interval]
        self.buffers: dict = {}
        # recently relayed events -> suppression expiry; stops duplicate
        # announcement waves without blocking genuine repeats
        self.seen: dict = {}
        self.event_window: deque = deque()
        self.predecessor_watch = now
        self.seq_out = 0
        self.pending: dict = {}
        self.interval_count = 0
        self.ttls_seen: set[int] = set()

    # -- derived quantities -------------------------------------------------

    @property
    def n_est(self) -> int:
        return len(self.table)

    @property
    def rho(self) -> int:
        return compute_rho(len(self.table))

    @property
    def t_detect(self) -> float:
        return 2.0 * self.theta

    def e_cap(self) -> int:
        return max(1, event_cap(self.cfg, len(self.table)))

    def successor_id(self) -> int:
        return self.table.succ_steps(self.pid, 1)

    def predecessor_id(self) -> int:
        return self.table.pred_steps(self.pid, 1)

    def next_seq(self) -> int:
        self.seq_out += 1
        return self.seq_out

    # -- state transitions --------------------------------------------------

    def bootstrap_from(self, table: RoutingTable, now: float) -> None:
        """Adopt a successor's table copy at join time."""
        self.table = table.clone()
        self.table.add(self.pid)
        self.predecessor_watch = now
        self.window_anchor = now
        self.ttls_seen = set()

    def _remember_span(self) -> float:
        # long enough to cover a full dissemination wave plus detection
        return min((self.rho + 6) * self.theta, 900.0)

    def ack_event(self, ev: Event, ttl: int, now: float) -> tuple[bool, bool]:
        """Record an acknowledged event.  Returns (fresh, early_close):
        fresh is False when this copy must not be relayed again, early_close
        is True when the buffered-event cap was reached and the interval
        should close immediately.

        A copy already buffered this interval is merged keeping the higher
        TTL.  The routing-table change is applied unconditionally (it is
        idempotent); relaying is suppressed only when the same event was
        already relayed recently, so duplicate announcement waves die out
        while an event that reaches a peer which learned the bare fact some
        other way (a lookup timeout, say) still gets forwarded down its
        branch of the dissemination tree.  A suppression entry is cancelled
        by the opposite event for the same subject, which keeps genuine
        leave/rejoin/leave sequences flowing at any pace.
        """
        key = ev.key()
        slot = self.buffers.get(key)
        if slot is not None:
            if ttl > slot[1]:
                slot[1] = ttl
            return False, False
        if ev.subject_id == self.pid:
            return False, False
        if ev.kind == JOIN:
            self.table.add(ev.subject_id)
            self.seen.pop((LEAVE, ev.subject), None)
        else:
            self.table.remove(ev.subject_id)
            self.seen.pop((JOIN, ev.subject), None)
        expiry = self.seen.get(key)
        if expiry is not None and expiry > now:
            return False, False
        self.seen[key] = now + self._remember_span()
        self.buffers[key] = [ev, ttl]
        self.event_window.append(now)
        return True, len(self.buffers) >= self.e_cap()

    def learn_sender(self, sender_id: int) -> None:
        """Passive learning: a message from an unknown peer implies its
        membership; its join announcement still relays via the seen check."""
        self.table.add(sender_id)

    def close_interval(self, now: float) -> list[tuple[int, MaintenanceMsg]]:
        """End the current interval: build the per-TTL messages, clear the
        buffers, and retune theta from the observed event rate.

        Returns (destination id, message) pairs.  M(l) goes to the 2**l-th
        successor carrying events acknowledged above TTL l, minus any event
        whose subject lies on the arc the message is about to cover (those
        peers are served by nearer branches of the dissemination tree).
        """
        out = []
        n = len(self.table)
        if n >= 2:
            buffered = list(self.buffers.values())
            for l in range(compute_rho(n)):
                dest = self.table.succ_steps(self.pid, 1 << l)
                if buffered:
                    events = tuple(
                        ev for ev, ttl in buffered
                        if ttl > l and not in_arc(self.pid, dest, ev.subject_id)
                    )
                else:
                    events = ()
                if l == 0 or events:
                    out.append((dest, MaintenanceMsg(l, events, self.next_seq(), self.addr)))
        self.buffers.clear()
        if len(self.seen) > 256:
            self.seen = {k: t for k, t in self.seen.items() if t > now}
        self._retune(now)
        self.interval_count += 1
        return out

    # rate estimation keeps at least this many events even when they are
    # older than the nominal window: sparse windows invert into wildly
    # overestimated intervals
    RATE_SAMPLE_FLOOR = 32

    def _retune(self, now: float) -> None:
        window = max(10.0 * self.theta, 60.0)
        cutoff = now - window
        event_window = self.event_window
        while len(event_window) > self.RATE_SAMPLE_FLOOR and \
                event_window[0] < cutoff:
            event_window.popleft()
        if not event_window:
            self.theta = self.cfg.theta_bounds[1]
            return
        rate = len(event_window) / max(now - event_window[0], 1.0)
        s_avg = 2.0 * len(self.table) / rate
        self.theta = tune_theta(self.cfg, s_avg, max(2, len(self.table)))

    def on_receive(self, msg: MaintenanceMsg, sender_id: int, now: float):
        """Apply one maintenance message.

        Returns (fresh_events, early_close, stabilize_hint): fresh_events
        lists the carried events that were news here, early_close is set
        when the event cap tripped, and stabilize_hint is set when a TTL 0/1
        message came from an unexpected sender and the predecessor chain
        needs probing.
        """
        if sender_id != self.pid:
            self.learn_sender(sender_id)
        fresh_events = []
        early = False
        for ev in msg.events:
            fresh, trip = self.ack_event(ev, msg.ttl, now)
            if fresh:
                fresh_events.append(ev)
            if trip:
                early = True
        stabilize = False
        if len(self.table) > 1:
            if sender_id == self.table.pred_steps(self.pid, 1):
                self.predecessor_watch = now
            elif msg.ttl <= 1 and sender_id != self.table.pred_steps(self.pid, 1 << msg.ttl):
                stabilize = True
        return fresh_events, early, stabilize

    def lookup(self, key: int) -> int:
        """One-hop lookup target: the key's owner per the local table."""
        return self.table.owner_of(key)

    def flush_for_leave(self) -> list[tuple[int, MaintenanceMsg]]:
        """Voluntary departure: hand the buffered events to the successor at
        their acknowledged TTLs so their propagation chains survive."""
        if len(self.table) < 2 or not self.buffers:
            self.buffers.clear()
            return []
        succ = self.table.succ_steps(self.pid, 1)
        by_ttl: dict[int, list[Event]] = {}
        for ev, ttl in self.buffers.values():
            if ev.subject_id != succ:
                by_ttl.setdefault(ttl, []).append(ev)
        self.buffers.clear()
        return [
            (succ, MaintenanceMsg(ttl, tuple(evs), self.next_seq(), self.addr))
            for ttl, evs in sorted(by_ttl.items())
        ]


def dissemination_tree(n: int):
    """The idealized single-event dissemination cascade on an n-ring,
    expressed as (clockwise distance from detector, ack TTL) pairs.

    The detector acknowledges at TTL=rho and forwards per the TTL rules:
    a node acknowledged at TTL=t relays to the 2**l-th successor for every
    l < t.  Distances are not reduced modulo n, so a cascade that laps the
    ring keeps counting: this is the unwrapped counting structure the
    per-TTL message-probability model is built on (the live protocol
    additionally cuts lapped branches so nobody hears an event twice).
    """
    rho = compute_rho(n)
    acks = [(0, rho)]
    frontier = [(0, rho)]
    while frontier:
        nxt = []
        for dist, ttl in frontier:
            for l in range(ttl):
                node = (dist + (1 << l), l)
                acks.append(node)
                if l > 0:
                    nxt.append(node)
        frontier = nxt
    return acks


def ack_ttl_census(n: int):
    """Brute-force Theorem-2 style census: run the idealized single-event
    cascade from every possible origin position and tally, for each fixed
    peer, how many acknowledgments it records at each TTL.

    Returns an n x (rho+1) list of counts: rows are peers (by ring
    position), columns are ack TTLs.
    """
    rho = compute_rho(n)
    counts = [[0] * (rho + 1) for _ in range(n)]
    tree = dissemination_tree(n)
    for origin in range(n):
        detector = (origin + 1) % n
        for dist, ttl in tree:
            counts[(detector + dist) % n][ttl] += 1
    return counts
