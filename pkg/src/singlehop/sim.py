"""Deterministic discrete-event simulator for the single-hop protocols.

Hosts n peer state machines over a simulated datagram network, churns them
with joins, voluntary leaves and abrupt kills, drives a lookup workload,
and measures what matters: one-hop ratio, acknowledgment latency, per-peer
maintenance bandwidth (accounted exactly as the wire module prescribes:
payload plus 28 bytes of IPv4/UDP headers per datagram), message counts,
staleness, and event conservation.

Simulated time is integer microseconds on an event heap; every random
choice comes from seeded substreams, so a configuration and seed determine
the run bit for bit.  Acknowledgments are not scheduled as heap events: a
datagram delivered to a live peer is acked within the retransmit window on
a loss-free link, so only deliveries to dead peers arm a retransmit timer.
"""

from __future__ import annotations

import math
import random
from bisect import bisect_left, insort
from dataclasses import dataclass, field
from heapq import heappush, heappop

from .edra import (
    JOIN, LEAVE, AddressBook, EdraConfig, EdraPeer, Event, MaintenanceMsg,
    compute_rho,
)
from .quarantine import (
    MEMBER, GatewayLimiter, QuarantineConfig, begin_quarantine, draw_session,
)
from .ring import PeerAddr, RING_BITS
from .wire import ACK_BYTES, CALOT_ACCOUNTED_BYTES, HEARTBEAT_BYTES, maintenance_bytes

US = 1_000_000

# heap event kinds
K_INTERVAL = 0
K_DELIVER = 1
K_RETRANS = 2
K_WATCHDOG = 3
K_PROBE_TIMEOUT = 4
K_CHURN = 5
K_SESSION_END = 6
K_REJOIN = 7
K_JOIN_DONE = 8
K_PROMOTE = 9
K_LOOKUP = 10
K_QLOOKUP = 11
K_STALE = 12
K_GROW = 13
K_MEASURE = 14
K_CALOT_HB = 15
K_SCRIPT = 16

D1HT = "d1ht"
CALOT = "calot"

CALOT_HEARTBEAT_PERIOD = 15.0      # four per minute
JOIN_HANDSHAKE = 0.05              # table-transfer latency floor, seconds


class SimulationAbort(RuntimeError):
    pass


@dataclass
class SimConfig:
    n_target: int
    s_avg: float
    f: float = 0.01
    delta_avg: float = 0.0
    delay_model: str = "exponential"        # constant | exponential | empirical
    delay_table: tuple = ()
    duration: float = 1800.0
    warmup_start: int | None = None         # None: start at full size
    warmup_join_rate: float = 1.0
    warmup_settle: float = 0.0
    lookup_rate: float = 1.0
    kill_fraction: float = 0.5
    rejoin_delay: float = 180.0
    reuse_ids: bool = True
    protocol: str = D1HT
    quarantine: QuarantineConfig | None = None
    session_phi: float | None = None
    churn_model: str = "stream"             # stream | sessions
    theta_bounds: tuple[float, float] = (0.5, 300.0)
    seed: int = 0
    trace: bool = False
    stale_sample_period: float = 30.0
    stale_sample_peers: int = 8
    script: tuple = ()                      # (t, action, arg) test hooks

    def __post_init__(self):
        if self.n_target < 2:
            raise ValueError("n_target must be at least 2")
        if not 0.0 <= self.kill_fraction <= 1.0:
            raise ValueError("kill_fraction must be in [0, 1]")
        if self.s_avg <= 0:
            raise ValueError("s_avg must be positive")
        if self.protocol not in (D1HT, CALOT):
            raise ValueError(f"unknown protocol {self.protocol!r}")
        if self.delay_model not in ("constant", "exponential", "empirical"):
            raise ValueError(f"unknown delay model {self.delay_model!r}")
        quarantine_on = self.quarantine is not None and self.quarantine.enabled
        if quarantine_on:
            # quarantine decisions need per-peer session lengths
            self.churn_model = "sessions"
        if self.session_phi is not None and not quarantine_on:
            raise ValueError("session_phi only applies with quarantine enabled")


@dataclass(slots=True)
class EventRecord:
    t_event: float
    live_at_event: int
    t_detect: float = -1.0
    n_acks: int = 0
    sum_dt: float = 0.0
    t_last: float = -1.0


@dataclass
class Metrics:
    """Measured outcomes of one run.

    Latency fields are per event: ``ack_mean_s`` averages, over events, the
    mean peer acknowledgment delay since the event occurred; ``ack_last_s``
    averages the delay from detection to the last acknowledgment.  The
    bandwidth fields count outgoing maintenance and failure-detection
    traffic only (wire-accounted bytes; lookups and bulk table transfers
    excluded).  ``events_lost_carrier`` counts buffered event copies lost
    with a peer killed mid-interval and ``events_forwarded`` the event
    copies carried by all sent messages; their ratio is the broken-chain
    loss rate.
    """

    n_target: int
    s_avg: float
    f: float
    delta_avg: float
    protocol: str
    seed: int
    duration: float
    lookups: int = 0
    one_hop: int = 0
    one_hop_fraction: float = 0.0
    routing_failures: int = 0
    quarantine_lookups: int = 0
    quarantine_two_hop: int = 0
    quarantine_rejected: int = 0
    events_generated: int = 0
    events_measured: int = 0
    events_lost_carrier: int = 0
    events_lost_transit: int = 0
    events_forwarded: int = 0
    events_acked: int = 0
    ack_mean_s: float = 0.0
    ack_mean_p99_s: float = 0.0
    ack_last_s: float = 0.0
    ack_last_p99_s: float = 0.0
    bandwidth_bps: float = 0.0
    bandwidth_bps_p5: float = 0.0
    bandwidth_bps_p95: float = 0.0
    msgs_per_interval_mean: float = 0.0
    msgs_per_interval_hist: dict = field(default_factory=dict)
    stale_fraction_mean: float = 0.0
    stale_series: list = field(default_factory=list)
    theta_mean_s: float = 0.0
    live_mean: float = 0.0
    churn_event_rate: float = 0.0
    trace_lines: list = field(default_factory=list)

    CSV_FIELDS = (
        "protocol", "n_target", "s_avg", "f", "delta_avg", "seed", "duration",
        "lookups", "one_hop_fraction", "routing_failures", "events_generated",
        "events_lost_carrier", "events_forwarded", "ack_mean_s", "ack_last_s",
        "bandwidth_bps", "msgs_per_interval_mean", "stale_fraction_mean",
        "theta_mean_s", "live_mean", "churn_event_rate",
        "quarantine_lookups", "quarantine_two_hop",
    )

    def to_row(self) -> dict:
        return {name: getattr(self, name) for name in self.CSV_FIELDS}


@dataclass(slots=True)
class SimPeer:
    inc: int                     # incarnation index
    addr: PeerAddr
    pid: int
    ep: EdraPeer
    alive: bool = True
    member: bool = False
    member_since: float = 0.0
    interval_epoch: int = 0
    probing: tuple | None = None          # (target_pid, attempt)
    stab_busy_until: float = -1.0
    handoff: tuple | None = None          # (dest inc, expires)
    bytes_out: int = 0
    secs_measured: float = 0.0
    phase: object = None                  # QuarantinePhase while quarantined
    limiter: GatewayLimiter | None = None
    last_hb_from_pred: float = 0.0


class Simulator:
    def __init__(self, config: SimConfig):
        self.cfg = config
        self.ecfg = EdraConfig(
            f=config.f,
            theta_bounds=config.theta_bounds,
            retransmit_timeout=max(4.0 * config.delta_avg, 0.2),
        )
        seed = config.seed
        self.rng_churn = random.Random(seed * 1_000_003 + 1)
        self.rng_lookup = random.Random(seed * 1_000_003 + 2)
        self.rng_delay = random.Random(seed * 1_000_003 + 3)
        self.rng_phase = random.Random(seed * 1_000_003 + 4)
        self.rng_misc = random.Random(seed * 1_000_003 + 5)

        self.book = AddressBook()
        self.peers: list[SimPeer] = []
        self.binding: dict[int, SimPeer] = {}
        self.live_ids: list[int] = []       # member pids, sorted (truth ring)
        self.live_set: set[int] = set()
        self.member_peers: list[SimPeer] = []   # lazily compacted
        self.n_members = 0
        self._reached_target = False
        self.quarantined: list[SimPeer] = []
        self.n_alive = 0

        self.heap: list = []
        self._tiebreak = 0
        self.now_us = 0
        self.measuring = False
        self.measure_start = 0.0
        self.measure_end = math.inf
        self.measure_end_us = None
        self.growth_done_at: float | None = None

        self.metrics = Metrics(
            n_target=config.n_target, s_avg=config.s_avg, f=config.f,
            delta_avg=config.delta_avg, protocol=config.protocol,
            seed=config.seed, duration=config.duration,
        )
        self.records: dict = {}
        self._means: list[float] = []
        self._lasts: list[float] = []
        self.stale_samples: list = []
        self.theta_samples: list = []
        self.live_integral = 0.0
        self.live_last_t = 0.0
        self._addr_counter = 0
        self._hist: dict[int, int] = {}

    # ---------------------------------------------------------- scaffolding

    def _next_addr(self) -> PeerAddr:
        self._addr_counter += 1
        c = self._addr_counter
        return PeerAddr(f"10.{(c >> 16) & 255}.{(c >> 8) & 255}.{c & 255}",
                        self.ecfg.default_port)

    def _push(self, t_us: int, kind: int, a=None, b=None) -> None:
        self._tiebreak += 1
        heappush(self.heap, (t_us, self._tiebreak, kind, a, b))

    def _delay_us(self) -> int:
        cfg = self.cfg
        if cfg.delta_avg <= 0.0:
            return 0
        if cfg.delay_model == "constant":
            d = cfg.delta_avg
        elif cfg.delay_model == "empirical":
            d = self.rng_delay.choice(cfg.delay_table)
        else:
            d = min(self.rng_delay.expovariate(1.0 / cfg.delta_avg),
                    10.0 * cfg.delta_avg)
        return round(d * US)

    @property
    def now(self) -> float:
        return self.now_us / US

    def _in_measure(self) -> bool:
        return self.measuring and self.now_us <= self.measure_end_us

    def _count(self, peer: SimPeer, nbytes: int) -> None:
        if self.measuring and self.now_us <= self.measure_end_us:
            peer.bytes_out += nbytes

    def _live_track(self) -> None:
        t = self.now
        self.live_integral += self.n_members * (t - self.live_last_t)
        self.live_last_t = t

    # ------------------------------------------------------------- topology

    def _spawn(self, addr: PeerAddr, now: float) -> SimPeer:
        ep = EdraPeer(addr, self.ecfg, self.book, now)
        peer = SimPeer(inc=len(self.peers), addr=addr, pid=ep.pid, ep=ep)
        peer.member_since = now
        peer.last_hb_from_pred = now
        self.peers.append(peer)
        self.binding[peer.pid] = peer
        self.n_alive += 1
        return peer

    def _make_member(self, peer: SimPeer, now: float) -> None:
        self._live_track()
        peer.member = True
        peer.member_since = now
        insort(self.live_ids, peer.pid)
        self.live_set.add(peer.pid)
        self.member_peers.append(peer)
        self.n_members += 1
        if self.n_members >= self.cfg.n_target:
            self._reached_target = True

    def _drop_member(self, peer: SimPeer) -> None:
        self._live_track()
        i = bisect_left(self.live_ids, peer.pid)
        if i < len(self.live_ids) and self.live_ids[i] == peer.pid:
            self.live_ids.pop(i)
            self.n_members -= 1
        self.live_set.discard(peer.pid)
        peer.member = False
        if len(self.member_peers) > 2 * self.n_members + 8:
            self.member_peers = [p for p in self.member_peers
                                 if p.alive and p.member]

    def _draw_member(self, rng) -> SimPeer:
        while True:
            peer = rng.choice(self.member_peers)
            if peer.alive and peer.member:
                return peer
            self.member_peers = [p for p in self.member_peers
                                 if p.alive and p.member]

    def true_owner(self, key: int) -> int:
        ids = self.live_ids
        i = bisect_left(ids, key)
        return ids[i % len(ids)]

    # ----------------------------------------------------------- bookkeeping

    def _register_event(self, kind: str, addr: PeerAddr, now: float) -> None:
        key = (kind, addr)
        old = self.records.pop(key, None)
        if old is not None:
            self._finalize_record(key, old)
        self.records[key] = EventRecord(now, self.n_members)
        self.metrics.events_generated += 1
        if self._in_measure():
            self.metrics.events_measured += 1

    def _finalize_record(self, key, rec: EventRecord) -> None:
        if rec.n_acks == 0:
            return
        if not (self.measure_start <= rec.t_event <= self._latency_cut()):
            return
        self._means.append(rec.sum_dt / rec.n_acks)
        if 0 <= rec.t_detect <= rec.t_last:
            self._lasts.append(rec.t_last - rec.t_detect)
        self.metrics.events_acked += rec.n_acks
        if self.cfg.trace:
            kind, addr = key
            self.metrics.trace_lines.append(
                f"{rec.t_event:.3f} {kind} {addr} acks={rec.n_acks} "
                f"mean_dt={rec.sum_dt / rec.n_acks:.3f} last={rec.t_last:.3f}")

    def _latency_cut(self) -> float:
        # events too close to the end are still spreading; keep them out of
        # the latency aggregates
        theta = self.theta_samples[-1] if self.theta_samples else 60.0
        rho = compute_rho(self.cfg.n_target)
        guard = 2.0 * (2.0 * theta + rho * (theta + 2 * self.cfg.delta_avg) / 4.0)
        return self.measure_end - guard

    def _note_ack(self, key, detect_ttl: int, now: float) -> None:
        rec = self.records.get(key)
        if rec is None:
            return
        rec.n_acks += 1
        rec.sum_dt += now - rec.t_event
        rec.t_last = now
        if detect_ttl >= 0 and rec.t_detect < 0:
            rec.t_detect = now

    def _ack(self, peer: SimPeer, ev: Event, ttl: int, now: float,
             detection: bool = False) -> None:
        fresh, early = peer.ep.ack_event(ev, ttl, now)
        if fresh:
            self._note_ack(ev.key(), ttl if detection else -1, now)
        if early:
            self._close_now(peer, now)

    # -------------------------------------------------------------- sending

    def _send_maint(self, src: SimPeer, dest_pid: int, msg: MaintenanceMsg,
                    now: float) -> None:
        default_port = self.ecfg.default_port
        n_alt = sum(1 for ev in msg.events if ev.subject.port != default_port)
        self._count(src, maintenance_bytes(len(msg.events) - n_alt, n_alt))
        if self._in_measure():
            self.metrics.events_forwarded += len(msg.events)
        src.ep.pending[msg.seq] = [dest_pid, msg, 1]
        self._push(self.now_us + self._delay_us(), K_DELIVER, dest_pid,
                   ("m", msg, src.inc))

    def _send_control(self, src: SimPeer, dest_pid: int, payload,
                      nbytes: int) -> None:
        self._count(src, nbytes)
        self._push(self.now_us + self._delay_us(), K_DELIVER, dest_pid, payload)

    def _close_now(self, peer: SimPeer, now: float) -> None:
        msgs = peer.ep.close_interval(now)
        for dest_pid, msg in msgs:
            self._send_maint(peer, dest_pid, msg, now)
        if self._in_measure() and len(peer.ep.table) > 1:
            n = len(msgs)
            self._hist[n] = self._hist.get(n, 0) + 1
        peer.interval_epoch += 1
        self._push(self.now_us + round(peer.ep.theta * US), K_INTERVAL,
                   peer.inc, peer.interval_epoch)

    # ------------------------------------------------------------- handlers

    def _h_interval(self, inc: int, epoch: int) -> None:
        peer = self.peers[inc]
        if peer.alive and peer.member and peer.interval_epoch == epoch:
            self._close_now(peer, self.now)

    def _h_deliver(self, dest_pid: int, payload) -> None:
        kind = payload[0]
        peer = self.binding.get(dest_pid)
        now = self.now
        if kind == "m":
            _, msg, src_inc = payload
            src = self.peers[src_inc]
            if peer is None or not peer.alive or not peer.member:
                if src.alive and msg.seq in src.ep.pending:
                    self._push(
                        self.now_us + round(self.ecfg.retransmit_timeout * US),
                        K_RETRANS, src_inc, msg.seq)
                return
            self._count(peer, ACK_BYTES)
            src.ep.pending.pop(msg.seq, None)
            fresh, early, stab = peer.ep.on_receive(msg, src.pid, now)
            peer.ep.ttls_seen.add(msg.ttl)
            for ev in fresh:
                self._note_ack(ev.key(), -1, now)
            if fresh and peer.handoff is not None:
                self._forward_handoff(peer, fresh, now)
            if early:
                self._close_now(peer, now)
            if stab:
                self._stabilize_back(peer, src.pid, now)
        elif kind == "probe":
            _, prober_inc = payload
            if peer is not None and peer.alive and peer.member:
                self._count(peer, HEARTBEAT_BYTES)
                prober = self.peers[prober_inc]
                self._push(self.now_us + self._delay_us(), K_DELIVER,
                           prober.pid, ("preply", peer.pid))
        elif kind == "preply":
            _, target_pid = payload
            if peer is None or not peer.alive:
                return
            if peer.probing and peer.probing[0] == target_pid:
                peer.probing = None
                peer.ep.predecessor_watch = now
                peer.last_hb_from_pred = now
                self._arm_watchdog(peer)
        elif kind == "leave":
            _, leaver_addr = payload
            if peer is None or not peer.alive or not peer.member:
                return
            ev = Event.leave(leaver_addr)
            if self.cfg.protocol == CALOT:
                self._calot_detect(peer, ev, now)
            else:
                self._ack(peer, ev, peer.ep.rho, now, detection=True)
            peer.ep.predecessor_watch = now
            peer.last_hb_from_pred = now
        elif kind == "c":
            _, ev, src_inc, seq = payload
            src = self.peers[src_inc]
            if peer is None or not peer.alive or not peer.member:
                if src.alive and seq in src.ep.pending:
                    self._push(
                        self.now_us + round(self.ecfg.retransmit_timeout * US),
                        K_RETRANS, src_inc, seq)
                return
            self._count(peer, ACK_BYTES)
            src.ep.pending.pop(seq, None)
            self._calot_apply(peer, ev, now)
        elif kind == "chb":
            _, src_pid = payload
            if peer is None or not peer.alive or not peer.member:
                return
            if len(peer.ep.table) > 1 and \
                    src_pid == peer.ep.table.pred_steps(peer.pid, 1):
                peer.last_hb_from_pred = now

    def _h_retrans(self, src_inc: int, seq: int) -> None:
        src = self.peers[src_inc]
        if not src.alive:
            return
        entry = src.ep.pending.get(seq)
        if entry is None:
            return
        dest_pid, msg, tries = entry
        if tries >= self.ecfg.retransmit_max:
            del src.ep.pending[seq]
            self._give_up(src, dest_pid, msg)
            return
        entry[2] = tries + 1
        if isinstance(msg, MaintenanceMsg):
            default_port = self.ecfg.default_port
            n_alt = sum(1 for ev in msg.events
                        if ev.subject.port != default_port)
            self._count(src, maintenance_bytes(len(msg.events) - n_alt, n_alt))
            self._push(self.now_us + self._delay_us(), K_DELIVER, dest_pid,
                       ("m", msg, src_inc))
        else:  # calot notification payload: (event, seq)
            self._count(src, CALOT_ACCOUNTED_BYTES)
            self._push(self.now_us + self._delay_us(), K_DELIVER, dest_pid,
                       ("c", msg[0], src_inc, seq))

    def _give_up(self, src: SimPeer, dest_pid: int, msg) -> None:
        """Retries exhausted: the destination is gone.  Repair locally; a
        dead immediate successor is also announced, since its silence to our
        TTL=0 stream is a stabilization-grade discovery."""
        now = self.now
        if not isinstance(msg, MaintenanceMsg):
            return
        if self._in_measure():
            self.metrics.events_lost_transit += len(msg.events)
        dest = self.binding.get(dest_pid)
        if dest is not None and dest.alive and dest.member:
            return
        if msg.ttl == 0:
            ev = Event.leave(self.book.addr_of(dest_pid))
            self._ack(src, ev, src.ep.rho, now, detection=True)
        else:
            src.ep.table.remove(dest_pid)

    def _forward_handoff(self, peer: SimPeer, fresh_events, now: float) -> None:
        """A join sponsor copies every event it acknowledges to the newcomer
        until the newcomer has seen messages at every TTL."""
        dest_inc, expires = peer.handoff
        dest = self.peers[dest_inc]
        if now > expires or not dest.alive or not dest.member or \
                len(dest.ep.ttls_seen) >= dest.ep.rho:
            peer.handoff = None
            return
        msg = MaintenanceMsg(0, tuple(fresh_events), peer.ep.next_seq(), peer.addr)
        self._send_maint(peer, dest.pid, msg, now)

    # --------------------------------------- watchdog / probes / stabilize

    def _arm_watchdog(self, peer: SimPeer) -> None:
        if self.cfg.protocol == CALOT:
            due = peer.last_hb_from_pred + 2.0 * CALOT_HEARTBEAT_PERIOD
        else:
            due = peer.ep.predecessor_watch + peer.ep.t_detect
        self._push(round(due * US) + 1, K_WATCHDOG, peer.inc, None)

    def _h_watchdog(self, inc: int, _unused) -> None:
        peer = self.peers[inc]
        now = self.now
        if not peer.alive or not peer.member:
            return
        if peer.probing is not None:
            return
        if len(peer.ep.table) < 2:
            self._push(self.now_us + round(30.0 * US), K_WATCHDOG, inc, None)
            return
        if self.cfg.protocol == CALOT:
            due = peer.last_hb_from_pred + 2.0 * CALOT_HEARTBEAT_PERIOD
        else:
            due = peer.ep.predecessor_watch + peer.ep.t_detect
        if now < due:
            self._arm_watchdog(peer)
            return
        self._probe_predecessor(peer, now)

    def _probe_predecessor(self, peer: SimPeer, now: float, attempt: int = 1) -> None:
        target = peer.ep.table.pred_steps(peer.pid, 1)
        peer.probing = (target, attempt)
        self._send_control(peer, target, ("probe", peer.inc), HEARTBEAT_BYTES)
        if self.cfg.protocol == CALOT:
            cap = CALOT_HEARTBEAT_PERIOD / 2.0
        else:
            cap = peer.ep.theta / 2.0
        wait = min(cap, max(8.0 * self.cfg.delta_avg, 1.0))
        self._push(self.now_us + round(wait * US) + 1, K_PROBE_TIMEOUT,
                   peer.inc, (target, attempt))

    def _h_probe_timeout(self, inc: int, what) -> None:
        peer = self.peers[inc]
        target, attempt = what
        now = self.now
        if not peer.alive or not peer.member or peer.probing != (target, attempt):
            return
        if attempt == 1:
            self._probe_predecessor(peer, now, attempt=2)
            return
        # probe budget exhausted: the predecessor is confirmed dead
        peer.probing = None
        ev = Event.leave(self.book.addr_of(target))
        if self.cfg.protocol == CALOT:
            self._calot_detect(peer, ev, now)
        else:
            self._ack(peer, ev, peer.ep.rho, now, detection=True)
        peer.ep.predecessor_watch = now
        peer.last_hb_from_pred = now
        if not peer.alive or not peer.member:
            return
        # walk on: the next candidate may be part of the same failed run
        if len(peer.ep.table) > 1:
            self._probe_predecessor(peer, now)
        else:
            self._arm_watchdog(peer)

    def _stabilize_back(self, peer: SimPeer, sender_pid: int, now: float) -> None:
        """An unexpected low-TTL sender hints the predecessor chain is stale:
        probe the current predecessor unless a check is already running."""
        if peer.probing is not None or now < peer.stab_busy_until:
            return
        if peer.ep.table.pred_steps(peer.pid, 1) == sender_pid:
            return
        peer.stab_busy_until = now + peer.ep.theta
        self._probe_predecessor(peer, now)

    # ----------------------------------------------------------- churn flow

    def _h_churn(self, _a, _b) -> None:
        now = self.now
        if now < self.measure_end and self.n_members > 2:
            victim = self._draw_member(self.rng_churn)
            kill = self.rng_churn.random() < self.cfg.kill_fraction
            self._depart(victim, now, kill)
            self._schedule_rejoin(victim)
        if now < self.measure_end:
            # the stream rate follows the system size: current size while
            # growing, the nominal size once reached (peers waiting out the
            # rejoin delay still count as part of the system)
            if self._reached_target:
                rate_n = self.cfg.n_target
            else:
                rate_n = max(self.n_members, 2)
            self._push(self.now_us + round(self.rng_churn.expovariate(
                rate_n / self.cfg.s_avg) * US), K_CHURN)

    def _h_session_end(self, inc: int, _b) -> None:
        now = self.now
        peer = self.peers[inc]
        if not peer.alive or now >= self.measure_end:
            return
        if peer.member and self.n_members <= 2:
            self._push(self.now_us + round(30.0 * US), K_SESSION_END, inc)
            return
        if peer.member:
            kill = self.rng_churn.random() < self.cfg.kill_fraction
            self._depart(peer, now, kill)
        else:
            # quarantined peer folds silently: nobody ever hears of it
            peer.alive = False
            self.n_alive -= 1
        self._schedule_rejoin(peer)

    def _schedule_rejoin(self, peer: SimPeer) -> None:
        addr = peer.addr if self.cfg.reuse_ids else None
        self._push(self.now_us + round(self.cfg.rejoin_delay * US),
                   K_REJOIN, addr)

    def _depart(self, victim: SimPeer, now: float, kill: bool) -> None:
        if not kill:
            if self.cfg.protocol == D1HT:
                for dest_pid, msg in victim.ep.flush_for_leave():
                    self._send_maint(victim, dest_pid, msg, now)
            succ = victim.ep.table.succ_steps(victim.pid, 1)
            self._send_control(victim, succ, ("leave", victim.addr),
                               HEARTBEAT_BYTES)
        else:
            if self._in_measure():
                self.metrics.events_lost_carrier += sum(
                    1 for _ev, ttl in victim.ep.buffers.values() if ttl > 0)
        if self.measuring:
            victim.secs_measured += now - max(victim.member_since,
                                              self.measure_start)
        victim.alive = False
        self.n_alive -= 1
        self._drop_member(victim)
        self._register_event(LEAVE, victim.addr, now)

    def _h_rejoin(self, addr: PeerAddr | None, _b) -> None:
        now = self.now
        if now >= self.measure_end:
            return
        addr = addr or self._next_addr()
        q = self.cfg.quarantine
        if q is not None and q.enabled:
            self._enter_quarantine(addr, q, now)
        else:
            self._start_join(addr, now)

    def _session_for(self, inc: int, now: float, floor: float = 0.0) -> None:
        if self.cfg.churn_model != "sessions":
            return
        t_q = self.cfg.quarantine.t_q if self.cfg.quarantine else 0.0
        s = draw_session(self.rng_churn, self.cfg.s_avg, t_q,
                         self.cfg.session_phi)
        while s < floor:   # warm-start members already outlasted probation
            s = draw_session(self.rng_churn, self.cfg.s_avg, t_q,
                             self.cfg.session_phi)
        if math.isfinite(s):
            self._push(self.now_us + round(s * US), K_SESSION_END, inc)

    def _enter_quarantine(self, addr: PeerAddr, q: QuarantineConfig,
                          now: float) -> None:
        pid = self.book.register(addr)
        bootstrap = self._draw_member(self.rng_misc)
        succ = self.binding.get(self.true_owner(pid))
        candidates = []
        for cand in (bootstrap, succ):
            if cand is not None and cand.alive and cand.member:
                probe_delay = self._delay_us() / US + 1e-4
                candidates.append((cand.addr, probe_delay,
                                   now - cand.member_since))
        if not candidates:
            self._start_join(addr, now)
            return
        peer = self._spawn(addr, now)
        peer.member = False
        peer.phase = begin_quarantine(candidates, q, now)
        self.quarantined.append(peer)
        self._session_for(peer.inc, now)
        self._push(self.now_us + round(q.t_q * US), K_PROMOTE, peer.inc)

    def _start_join(self, addr: PeerAddr, now: float,
                    promoted: SimPeer | None = None) -> None:
        succ_pid = self.true_owner(self.book.register(addr))
        delay = (self._delay_us() + self._delay_us()) / US + JOIN_HANDSHAKE
        self._push(self.now_us + round(delay * US), K_JOIN_DONE,
                   (addr, succ_pid, promoted.inc if promoted else None))

    def _h_join_done(self, what, _b) -> None:
        addr, succ_pid, promoted_inc = what
        now = self.now
        if now >= self.measure_end:
            return
        promoted = self.peers[promoted_inc] if promoted_inc is not None else None
        if promoted is not None and not promoted.alive:
            return
        sponsor = self.binding.get(succ_pid)
        if sponsor is None or not sponsor.alive or not sponsor.member:
            # sponsor vanished mid-transfer: retry through the current ring
            self._start_join(addr, now, promoted)
            return
        if promoted is not None:
            peer = promoted
            self.quarantined = [p for p in self.quarantined
                                if p.alive and p.inc != peer.inc]
            peer.phase.phase = MEMBER
        else:
            peer = self._spawn(addr, now)
            self._session_for(peer.inc, now)
        peer.ep.bootstrap_from(sponsor.ep.table, now)
        peer.ep.theta = sponsor.ep.theta   # inherit the system's current tune
        self._make_member(peer, now)
        ev = Event.join(addr)
        self._register_event(JOIN, addr, now)
        if self.cfg.protocol == CALOT:
            self._calot_detect(sponsor, ev, now)
            self._push(self.now_us + round(CALOT_HEARTBEAT_PERIOD * US),
                       K_CALOT_HB, peer.inc)
            self._arm_watchdog(peer)
        else:
            self._ack(sponsor, ev, sponsor.ep.rho, now, detection=True)
            sponsor.handoff = (peer.inc,
                               now + (sponsor.ep.rho + 2) * sponsor.ep.theta)
            self._push(self.now_us +
                       round(self.rng_phase.uniform(0, peer.ep.theta) * US) + 1,
                       K_INTERVAL, peer.inc, peer.interval_epoch)
            self._arm_watchdog(peer)

    # ------------------------------------------------------------ quarantine

    def _h_promote(self, inc: int, _b) -> None:
        peer = self.peers[inc]
        if not peer.alive or peer.member or self.now >= self.measure_end:
            return
        self._start_join(peer.addr, self.now, promoted=peer)

    def _h_qlookup(self, _a, _b) -> None:
        now = self.now
        if now >= self.measure_end:
            return
        live_q = [p for p in self.quarantined if p.alive and not p.member]
        self.quarantined = live_q
        if live_q and self._in_measure():
            client = self.rng_lookup.choice(live_q)
            key = self.rng_lookup.getrandbits(RING_BITS)
            self._gateway_lookup(client, key, now)
        rate = max(len(live_q), 1) * max(self.cfg.lookup_rate, 1e-6)
        self._push(self.now_us + round(self.rng_lookup.expovariate(rate) * US),
                   K_QLOOKUP)

    def _gateway_lookup(self, client: SimPeer, key: int, now: float) -> None:
        self.metrics.quarantine_lookups += 1
        for gw_addr in client.phase.gateway_addrs:
            gw = self.binding.get(self.book.register(gw_addr))
            if gw is None or not gw.alive or not gw.member:
                continue
            if gw.limiter is None:
                gw.limiter = GatewayLimiter(self.cfg.quarantine.gateway_rate_limit)
            if not gw.limiter.allow(client.addr, now):
                continue
            # gateway resolves in one hop and relays: two hops client-side
            self.metrics.quarantine_two_hop += 1
            return
        self.metrics.quarantine_rejected += 1

    # --------------------------------------------------------------- lookups

    def _h_lookup(self, _a, _b) -> None:
        now = self.now
        if now >= self.measure_end:
            return
        if self._in_measure() and self.n_members >= 2:
            origin = self._draw_member(self.rng_lookup)
            key = self.rng_lookup.getrandbits(RING_BITS)
            self._resolve(origin, key)
        rate = max(self.n_members, 2) * max(self.cfg.lookup_rate, 1e-6)
        self._push(self.now_us + round(self.rng_lookup.expovariate(rate) * US),
                   K_LOOKUP)

    def _resolve(self, origin: SimPeer, key: int) -> None:
        truth = self.true_owner(key)
        target = origin.ep.lookup(key)
        hops = 1
        while target != truth and hops <= 8:
            tp = self.binding.get(target)
            if tp is None or not tp.alive or not tp.member:
                # timed out: drop the stale entry and retry from our table
                origin.ep.table.remove(target)
                target = origin.ep.lookup(key)
            else:
                # wrong peer answers with its own view of the key's owner
                target = tp.ep.lookup(key)
            hops += 1
        self.metrics.lookups += 1
        if hops == 1:
            self.metrics.one_hop += 1
        else:
            self.metrics.routing_failures += 1
            if target == truth:
                # the retry walk taught us the key's real owner
                origin.ep.table.add(truth)

    # ----------------------------------------------------------------- calot

    def _calot_apply(self, peer: SimPeer, ev: Event, now: float) -> None:
        if ev.subject_id == peer.pid:
            return
        if ev.kind == JOIN:
            fresh = peer.ep.table.add(ev.subject_id)
        else:
            fresh = peer.ep.table.remove(ev.subject_id)
        if fresh:
            self._note_ack(ev.key(), -1, now)

    def _calot_detect(self, detector: SimPeer, ev: Event, now: float) -> None:
        """Unbuffered dissemination: one acked notification per known peer."""
        if ev.subject_id != detector.pid:
            if ev.kind == JOIN:
                detector.ep.table.add(ev.subject_id)
            else:
                detector.ep.table.remove(ev.subject_id)
            self._note_ack(ev.key(), detector.ep.rho, now)
        for pid in detector.ep.table.ids:
            if pid == detector.pid or pid == ev.subject_id:
                continue
            seq = detector.ep.next_seq()
            detector.ep.pending[seq] = [pid, (ev, seq), 1]
            self._count(detector, CALOT_ACCOUNTED_BYTES)
            self._push(self.now_us + self._delay_us(), K_DELIVER, pid,
                       ("c", ev, detector.inc, seq))

    def _h_calot_hb(self, inc: int, _b) -> None:
        peer = self.peers[inc]
        now = self.now
        if not peer.alive or not peer.member or now >= self.measure_end:
            return
        if len(peer.ep.table) > 1:
            succ = peer.ep.table.succ_steps(peer.pid, 1)
            self._send_control(peer, succ, ("chb", peer.pid), HEARTBEAT_BYTES)
        self._push(self.now_us + round(CALOT_HEARTBEAT_PERIOD * US),
                   K_CALOT_HB, inc)

    # ---------------------------------------------------------------- stale

    def _h_stale(self, _a, _b) -> None:
        now = self.now
        if now >= self.measure_end:
            return
        if self._in_measure() and self.n_members:
            k = min(self.cfg.stale_sample_peers, self.n_members)
            total = 0.0
            for _ in range(k):
                peer = self._draw_member(self.rng_misc)
                diff = len(set(peer.ep.table.ids) ^ self.live_set)
                total += diff / max(len(self.live_set), 1)
                self.theta_samples.append(peer.ep.theta)
            self.stale_samples.append((now, total / k))
        self._push(self.now_us + round(self.cfg.stale_sample_period * US),
                   K_STALE)

    # ------------------------------------------------------------------ grow

    def _h_grow(self, _a, _b) -> None:
        if self.n_members >= self.cfg.n_target:
            self.growth_done_at = self.now
            return
        self._start_join(self._next_addr(), self.now)
        self._push(self.now_us + round(US / self.cfg.warmup_join_rate), K_GROW)

    def _h_script(self, what, _b) -> None:
        action, arg = what
        now = self.now
        if action == "join":
            self._start_join(self._next_addr(), now)
        elif action in ("kill", "leave"):
            members = sorted((p for p in self.member_peers
                              if p.alive and p.member), key=lambda p: p.pid)
            victim = members[arg % len(members)]
            self._depart(victim, now, kill=(action == "kill"))

    # ------------------------------------------------------------------- run

    def _build_initial(self) -> None:
        cfg = self.cfg
        start = cfg.warmup_start if cfg.warmup_start is not None else cfg.n_target
        start = max(2, min(start, cfg.n_target))
        peers = [self._spawn(self._next_addr(), 0.0) for _ in range(start)]
        all_ids = sorted(p.pid for p in peers)
        for p in peers:
            p.ep.table.ids = all_ids.copy()
            self._make_member(p, 0.0)
        for p in peers:
            if cfg.protocol == D1HT:
                self._push(round(self.rng_phase.uniform(0, p.ep.theta) * US) + 1,
                           K_INTERVAL, p.inc, p.interval_epoch)
                self._arm_watchdog(p)
            else:
                self._push(round(self.rng_phase.uniform(
                    0, CALOT_HEARTBEAT_PERIOD) * US) + 1, K_CALOT_HB, p.inc)
                self._arm_watchdog(p)
            q = self.cfg.quarantine
            self._session_for(p.inc, 0.0,
                              floor=q.t_q if q is not None else 0.0)

    def run(self) -> Metrics:
        cfg = self.cfg
        self._build_initial()
        growing = self.n_members < cfg.n_target
        if growing:
            self._push(round(US / cfg.warmup_join_rate), K_GROW)
        if cfg.churn_model == "stream":
            rate = max(self.n_members, 2) / cfg.s_avg
            self._push(round(self.rng_churn.expovariate(rate) * US), K_CHURN)
        for t, action, arg in cfg.script:
            self._push(round(t * US), K_SCRIPT, (action, arg))

        measure_armed = not growing
        if measure_armed:
            self._arm_measurement(cfg.warmup_settle)
        growth_deadline = (cfg.n_target / cfg.warmup_join_rate) * 20 + 7200

        grace = 120.0
        heap = self.heap
        while heap:
            t_us, _tie, kind, a, b = heappop(heap)
            self.now_us = t_us
            now = t_us / US
            if now > self.measure_end + grace:
                break
            if not measure_armed:
                if self.growth_done_at is not None:
                    measure_armed = True
                    self._arm_measurement(cfg.warmup_settle)
                elif now > growth_deadline:
                    raise SimulationAbort("growth phase never completed")
            if kind == K_DELIVER:
                self._h_deliver(a, b)
            elif kind == K_INTERVAL:
                self._h_interval(a, b)
            elif kind == K_LOOKUP:
                self._h_lookup(a, b)
            elif kind == K_WATCHDOG:
                self._h_watchdog(a, b)
            elif kind == K_RETRANS:
                self._h_retrans(a, b)
            elif kind == K_PROBE_TIMEOUT:
                self._h_probe_timeout(a, b)
            elif kind == K_CHURN:
                self._h_churn(a, b)
            elif kind == K_SESSION_END:
                self._h_session_end(a, b)
            elif kind == K_REJOIN:
                self._h_rejoin(a, b)
            elif kind == K_JOIN_DONE:
                self._h_join_done(a, b)
            elif kind == K_PROMOTE:
                self._h_promote(a, b)
            elif kind == K_QLOOKUP:
                self._h_qlookup(a, b)
            elif kind == K_STALE:
                self._h_stale(a, b)
            elif kind == K_GROW:
                self._h_grow(a, b)
            elif kind == K_MEASURE:
                self._begin_measurement(a)
            elif kind == K_CALOT_HB:
                self._h_calot_hb(a, b)
            elif kind == K_SCRIPT:
                self._h_script(a, b)
            if self.n_members < 2 and self.n_alive < 2:
                raise SimulationAbort("fewer than two peers left alive")
        return self._finish()

    def _arm_measurement(self, settle: float) -> None:
        start = self.now + settle
        self._push(round(start * US) + 1, K_MEASURE, start)

    def _begin_measurement(self, start: float) -> None:
        self.measuring = True
        self.measure_start = start
        self.measure_end = start + self.cfg.duration
        self.measure_end_us = round(self.measure_end * US)
        self.live_last_t = start
        self.live_integral = 0.0
        for p in self.peers:
            if p.alive and p.member:
                p.bytes_out = 0
                p.secs_measured = 0.0
        self._push(self.now_us + 1000, K_LOOKUP)
        self._push(self.now_us + 1000, K_STALE)
        if self.cfg.quarantine is not None and self.cfg.quarantine.enabled:
            self._push(self.now_us + 1000, K_QLOOKUP)

    def _finish(self) -> Metrics:
        m = self.metrics
        end = self.measure_end
        if not self.measuring:
            raise SimulationAbort("run ended before the measurement phase")
        self.now_us = self.measure_end_us
        self._live_track()
        span = end - self.measure_start
        for p in self.peers:
            if p.alive and p.member:
                p.secs_measured += end - max(p.member_since, self.measure_start)
        per_peer = []
        total_bits = 0
        total_secs = 0.0
        for p in self.peers:
            if p.secs_measured > 0:
                total_bits += p.bytes_out * 8
                total_secs += p.secs_measured
            if p.secs_measured >= 30.0:
                per_peer.append(p.bytes_out * 8 / p.secs_measured)
        m.bandwidth_bps = total_bits / total_secs if total_secs else 0.0
        per_peer.sort()
        if per_peer:
            m.bandwidth_bps_p5 = per_peer[int(0.05 * (len(per_peer) - 1))]
            m.bandwidth_bps_p95 = per_peer[int(0.95 * (len(per_peer) - 1))]
        m.one_hop_fraction = m.one_hop / m.lookups if m.lookups else 0.0
        m.msgs_per_interval_hist = dict(sorted(self._hist.items()))
        closes = sum(self._hist.values())
        if closes:
            m.msgs_per_interval_mean = sum(
                k * v for k, v in self._hist.items()) / closes
        if self.stale_samples:
            m.stale_series = self.stale_samples
            m.stale_fraction_mean = sum(
                f for _, f in self.stale_samples) / len(self.stale_samples)
        if self.theta_samples:
            m.theta_mean_s = sum(self.theta_samples) / len(self.theta_samples)
        m.live_mean = self.live_integral / span if span else 0.0
        m.churn_event_rate = m.events_measured / span if span else 0.0
        for key, rec in self.records.items():
            self._finalize_record(key, rec)
        if self._means:
            self._means.sort()
            m.ack_mean_s = sum(self._means) / len(self._means)
            m.ack_mean_p99_s = self._means[int(0.99 * (len(self._means) - 1))]
        if self._lasts:
            self._lasts.sort()
            m.ack_last_s = sum(self._lasts) / len(self._lasts)
            m.ack_last_p99_s = self._lasts[int(0.99 * (len(self._lasts) - 1))]
        return m


def run(config: SimConfig) -> Metrics:
    """Execute one simulation; deterministic for a given config and seed."""
    return Simulator(config).run()


@dataclass(slots=True)
class CascadeResult:
    """One delay-free single-event experiment: who acknowledged the crash,
    at which TTL, after how many interval boundaries, and which messages
    carried it."""

    n: int
    rho: int
    theta: float
    origin_pid: int
    detector_pid: int
    ack_ttl: dict
    ack_time: dict
    deliveries: dict
    messages: list   # (src_pid, dest_pid, ttl)

    def mean_ack_s(self) -> float:
        return sum(self.ack_time.values()) / len(self.ack_time)


class SingleEventLab:
    """Synchronized-interval, delay-free cascades over the real peer state
    machines.

    All peers share one interval clock and messages arrive instantly at the
    next boundary, the setting under which dissemination is provably
    exact-once with mean acknowledgment time at most rho*theta/2.  The peer
    pool is built once; each experiment crashes one origin and rolls the
    pool back afterwards, so sweeping every origin stays cheap.
    """

    def __init__(self, n: int, theta: float = 2.0):
        if n < 2:
            raise ValueError("need at least two peers")
        self.n = n
        self.theta = theta
        self.cfg = EdraConfig(theta_bounds=(theta, theta))
        self.book = AddressBook()
        eps = {}
        counter = 0
        while len(eps) < n:
            counter += 1
            addr = PeerAddr(f"172.{(counter >> 16) & 255}."
                            f"{(counter >> 8) & 255}.{counter & 255}", 4170)
            ep = EdraPeer(addr, self.cfg, self.book, 0.0)
            eps[ep.pid] = ep
        self.eps = eps
        self.order = sorted(eps)
        for ep in eps.values():
            ep.table.ids = self.order.copy()

    def run_origin(self, pos: int) -> CascadeResult:
        """Crash the peer at ring position pos and run the cascade to
        quiescence."""
        order = self.order
        n = self.n
        origin = order[pos % n]
        detector_pid = order[(pos + 1) % n]
        rho = compute_rho(n)
        ev = Event.leave(self.book.addr_of(origin))
        theta = self.theta

        detector = self.eps[detector_pid]
        detector.ack_event(ev, rho, 0.0)
        ack_ttl = {detector_pid: rho}
        ack_time = {detector_pid: 0.0}
        deliveries: dict = {}
        messages = []
        touched = [detector_pid]

        frontier = [detector_pid]
        rnd = 0
        while frontier:
            rnd += 1
            t = rnd * theta
            nxt = []
            for pid in frontier:
                for dest, msg in self.eps[pid].close_interval(t):
                    if not msg.events:
                        continue
                    messages.append((pid, dest, msg.ttl))
                    if dest == origin:
                        continue  # message to the dead peer: recorded, dropped
                    deliveries[dest] = deliveries.get(dest, 0) + 1
                    receiver = self.eps[dest]
                    fresh, _early, _stab = receiver.on_receive(msg, pid, t)
                    if fresh:
                        ack_ttl[dest] = msg.ttl
                        ack_time[dest] = t
                        nxt.append(dest)
                        touched.append(dest)
            frontier = nxt

        result = CascadeResult(n, rho, theta, origin, detector_pid,
                               ack_ttl, ack_time, deliveries, messages)
        # roll the pool back for the next origin
        for pid in touched:
            ep = self.eps[pid]
            ep.table.add(origin)
            ep.buffers.clear()
            ep.event_window.clear()
            ep.seen.clear()
        return result

    def sweep(self):
        """Run one experiment per origin position."""
        return [self.run_origin(i) for i in range(self.n)]
