"""Bit-exact datagram codecs and the byte accounting behind every bandwidth
figure.

All sizes are accounted with 28 bytes of IPv4+UDP header overhead per
datagram; the headers themselves are never serialized.  The fixed parts are:

    maintenance   12-byte payload -> 40 bytes / 320 bits accounted
    ack           8-byte payload  -> 36 bytes / 288 bits accounted
    heartbeat     8-byte payload  -> 36 bytes / 288 bits (ack shape, own type)
    notify        20-byte payload -> 48 bytes / 384 bits (one event per msg)

Maintenance payload layout (byte offsets):

    [0]     Type
    [1:3]   SeqNo
    [3:5]   PortNo (sender port)
    [5]     SystemID
    [6]     TTL
    [7]     flags (reserved, zero)
    [8]     count of default-port joins     [9]   default-port leaves
    [10]    count of alternate-port joins   [11]  alternate-port leaves
    [12:]   4-byte addresses for the two default-port lists, then
            6-byte addr+port for the two alternate-port lists

Events about peers on the instance default port cost 4 bytes (32 bits); any
other port costs 6 bytes (48 bits).  The "notify" frame is the unbuffered
single-event message used by the heartbeat-style comparison protocol.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from .edra import JOIN, LEAVE, Event, MaintenanceMsg
from .ring import PeerAddr, id_of

NET_OVERHEAD_BYTES = 28

TYPE_MAINTENANCE = 1
TYPE_ACK = 2
TYPE_HEARTBEAT = 3
TYPE_CALOT = 4
TYPE_PROBE = 5
TYPE_PROBE_REPLY = 6
TYPE_LEAVE_NOTICE = 7

_CONTROL_TYPES = (TYPE_ACK, TYPE_HEARTBEAT, TYPE_PROBE, TYPE_PROBE_REPLY,
                  TYPE_LEAVE_NOTICE)

MAINTENANCE_FIXED_BYTES = 12
CONTROL_BYTES = 8
CALOT_BYTES = 20


@dataclass(frozen=True, slots=True)
class WireCosts:
    """Accounted datagram costs, in bits, shared by simulator and models."""

    v_m: int = (MAINTENANCE_FIXED_BYTES + NET_OVERHEAD_BYTES) * 8   # 320
    v_a: int = (CONTROL_BYTES + NET_OVERHEAD_BYTES) * 8             # 288
    v_h: int = (CONTROL_BYTES + NET_OVERHEAD_BYTES) * 8             # 288
    v_c: int = (CALOT_BYTES + NET_OVERHEAD_BYTES) * 8               # 384
    m_default: int = 32
    m_alt: int = 48
    net_overhead: int = NET_OVERHEAD_BYTES


class WireError(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class EncodedDatagram:
    payload: bytes

    @property
    def accounted_bytes(self) -> int:
        return len(self.payload) + NET_OVERHEAD_BYTES

    @property
    def accounted_bits(self) -> int:
        return self.accounted_bytes * 8


def maintenance_bytes(n_default_events: int, n_alt_events: int) -> int:
    """Accounted size of one maintenance datagram carrying the given event
    mix: 40 bytes fixed plus 4 or 6 per event."""
    return 40 + 4 * n_default_events + 6 * n_alt_events


ACK_BYTES = CONTROL_BYTES + NET_OVERHEAD_BYTES          # 36
HEARTBEAT_BYTES = ACK_BYTES
CALOT_ACCOUNTED_BYTES = CALOT_BYTES + NET_OVERHEAD_BYTES  # 48


def _split_counts(events, default_port):
    jd, ld, ja, la = [], [], [], []
    for ev in events:
        default = ev.subject.port == default_port
        if ev.kind == JOIN:
            (jd if default else ja).append(ev.subject)
        elif ev.kind == LEAVE:
            (ld if default else la).append(ev.subject)
        else:
            raise WireError(f"unknown event kind {ev.kind!r}")
    return jd, ld, ja, la


def encode_maintenance(msg: MaintenanceMsg, system_id: int,
                       default_port: int) -> EncodedDatagram:
    """Encode one maintenance message.  Each per-class event count must fit
    a byte; callers split larger batches across datagrams."""
    if not 0 <= msg.ttl <= 255:
        raise WireError(f"TTL {msg.ttl} out of range")
    jd, ld, ja, la = _split_counts(msg.events, default_port)
    for group in (jd, ld, ja, la):
        if len(group) > 255:
            raise WireError("event count overflows one datagram; split first")
    head = struct.pack(
        ">BHHBBBBBBB",
        TYPE_MAINTENANCE, msg.seq & 0xFFFF, msg.sender.port, system_id & 0xFF,
        msg.ttl, 0, len(jd), len(ld), len(ja), len(la),
    )
    parts = [head]
    for subj in jd + ld:
        parts.append(subj.packed()[:4])
    for subj in ja + la:
        parts.append(subj.packed())
    return EncodedDatagram(b"".join(parts))


def encode_control(type_: int, seq: int, system_id: int, port: int) -> EncodedDatagram:
    if type_ not in _CONTROL_TYPES:
        raise WireError(f"not a control frame type: {type_}")
    payload = struct.pack(">BHHBxx", type_, seq & 0xFFFF, port, system_id & 0xFF)
    return EncodedDatagram(payload)


def encode_ack(seq: int, system_id: int, port: int) -> EncodedDatagram:
    return encode_control(TYPE_ACK, seq, system_id, port)


def encode_heartbeat(seq: int, system_id: int, port: int) -> EncodedDatagram:
    return encode_control(TYPE_HEARTBEAT, seq, system_id, port)


def encode_calot(event: Event, seq: int, system_id: int, port: int,
                 origin_epoch: int = 0) -> EncodedDatagram:
    """The unbuffered comparison protocol's notification: exactly one event
    per datagram, 48 accounted bytes."""
    if not isinstance(event, Event):
        raise WireError("notification frames carry exactly one event")
    kind = 1 if event.kind == JOIN else 2
    payload = struct.pack(
        ">BHHBBx6sIxx",
        TYPE_CALOT, seq & 0xFFFF, port, system_id & 0xFF,
        kind, event.subject.packed(), origin_epoch & 0xFFFFFFFF,
    )
    return EncodedDatagram(payload)


@dataclass(frozen=True, slots=True)
class DecodedControl:
    type: int
    seq: int
    port: int
    system_id: int


@dataclass(frozen=True, slots=True)
class DecodedMaintenance:
    seq: int
    port: int
    system_id: int
    ttl: int
    events: tuple


@dataclass(frozen=True, slots=True)
class DecodedCalot:
    seq: int
    port: int
    system_id: int
    event: Event
    origin_epoch: int


def _need(data: bytes, count: int, what: str) -> None:
    if len(data) < count:
        raise WireError(f"truncated datagram: {what} needs {count} bytes, have {len(data)}")


def decode(data: bytes, default_port: int):
    """Decode one datagram payload.  Raises WireError on any malformed or
    truncated input; never reads past the buffer."""
    _need(data, 1, "type byte")
    type_ = data[0]
    if type_ in _CONTROL_TYPES:
        _need(data, CONTROL_BYTES, "control frame")
        if len(data) != CONTROL_BYTES:
            raise WireError(f"control frame must be {CONTROL_BYTES} bytes, got {len(data)}")
        _, seq, port, system_id = struct.unpack(">BHHBxx", data)
        return DecodedControl(type_, seq, port, system_id)
    if type_ == TYPE_CALOT:
        if len(data) != CALOT_BYTES:
            raise WireError(f"notify frame must be {CALOT_BYTES} bytes, got {len(data)}")
        _, seq, port, system_id, kind, subject, epoch = struct.unpack(">BHHBBx6sIxx", data)
        if kind not in (1, 2):
            raise WireError(f"unknown event kind code {kind}")
        addr = PeerAddr.from_packed(subject)
        ev = Event.join(addr) if kind == 1 else Event.leave(addr)
        return DecodedCalot(seq, port, system_id, ev, epoch)
    if type_ != TYPE_MAINTENANCE:
        raise WireError(f"unknown datagram type {type_}")
    _need(data, MAINTENANCE_FIXED_BYTES, "maintenance header")
    _, seq, port, system_id, ttl, _flags, njd, nld, nja, nla = struct.unpack(
        ">BHHBBBBBBB", data[:MAINTENANCE_FIXED_BYTES])
    expect = MAINTENANCE_FIXED_BYTES + 4 * (njd + nld) + 6 * (nja + nla)
    if len(data) != expect:
        raise WireError(f"maintenance length {len(data)} does not match counts (want {expect})")
    events = []
    off = MAINTENANCE_FIXED_BYTES
    default_tail = struct.pack(">H", default_port)
    for kind, count in ((JOIN, njd), (LEAVE, nld)):
        for _ in range(count):
            addr = PeerAddr.from_packed(data[off:off + 4] + default_tail)
            events.append(Event(kind, addr, id_of(addr)))
            off += 4
    for kind, count in ((JOIN, nja), (LEAVE, nla)):
        for _ in range(count):
            addr = PeerAddr.from_packed(data[off:off + 6])
            events.append(Event(kind, addr, id_of(addr)))
            off += 6
    return DecodedMaintenance(seq, port, system_id, ttl, tuple(events))
