import random

import pytest

from singlehop.edra import Event, MaintenanceMsg
from singlehop.ring import PeerAddr, id_of
from singlehop import wire

DEFAULT_PORT = 4170


def addr(ip, port=DEFAULT_PORT):
    return PeerAddr(ip, port)


def test_empty_maintenance_is_40_bytes_accounted():
    msg = MaintenanceMsg(0, (), 1, addr("10.0.0.1"))
    enc = wire.encode_maintenance(msg, system_id=1, default_port=DEFAULT_PORT)
    assert len(enc.payload) == 12
    assert enc.accounted_bytes == 40
    assert enc.accounted_bits == 320


def test_maintenance_event_mix_sizes():
    # 3 default-port joins + 1 alternate-port leave: 40 + 3*4 + 6 = 58
    events = (
        Event.join(addr("10.0.0.2")),
        Event.join(addr("10.0.0.3")),
        Event.join(addr("10.0.0.4")),
        Event.leave(addr("10.0.0.5", 9999)),
    )
    msg = MaintenanceMsg(2, events, 7, addr("10.0.0.1"))
    enc = wire.encode_maintenance(msg, 1, DEFAULT_PORT)
    assert enc.accounted_bytes == 58
    assert enc.accounted_bytes == wire.maintenance_bytes(3, 1)


def test_ack_heartbeat_sizes():
    ack = wire.encode_ack(12, 1, DEFAULT_PORT)
    hb = wire.encode_heartbeat(12, 1, DEFAULT_PORT)
    assert ack.accounted_bits == 288
    assert hb.accounted_bits == 288
    assert len(ack.payload) == 8
    assert ack.payload != hb.payload  # distinct type byte


def test_calot_size():
    enc = wire.encode_calot(Event.leave(addr("10.9.9.9")), 3, 1, DEFAULT_PORT)
    assert len(enc.payload) == 20
    assert enc.accounted_bytes == 48
    assert enc.accounted_bits == 384


def test_costs_match_codec():
    costs = wire.WireCosts()
    assert costs.v_m == 320
    assert costs.v_a == 288
    assert costs.v_h == 288
    assert costs.v_c == 384
    assert costs.v_m - costs.net_overhead * 8 == 96    # 12-byte payload
    assert costs.v_a - costs.net_overhead * 8 == 64    # 8-byte payload
    assert costs.m_default == 32 and costs.m_alt == 48


# type 01, seq 002a, port 104a, sysid 05, ttl 03, flags 00,
# counts 01/00/01/00, join 10.0.0.2 (4-byte), join 10.0.0.3:2500 (6-byte)
GOLDEN_MAINTENANCE = "01002a104a050300010001000a0000020a00000309c4"

# type 02, seq 0007, port 104a, sysid 05, two pad bytes
GOLDEN_ACK = "020007104a050000"

# type 04, seq 0003, port 104a, sysid 05, kind 02 (leave), pad,
# subject 10.99.0.3:4322, origin epoch 21, two pad bytes
GOLDEN_CALOT = "040003104a0502000a63000310e2000000150000"


def test_golden_maintenance():
    events = (Event.join(addr("10.0.0.2")),
              Event.join(addr("10.0.0.3", 2500)))
    msg = MaintenanceMsg(3, events, 0x2A, addr("10.0.0.1"))
    enc = wire.encode_maintenance(msg, 5, DEFAULT_PORT)
    assert enc.payload.hex() == GOLDEN_MAINTENANCE
    dec = wire.decode(enc.payload, DEFAULT_PORT)
    assert dec.ttl == 3 and dec.seq == 0x2A and dec.system_id == 5
    assert dec.port == DEFAULT_PORT
    assert {(e.kind, e.subject) for e in dec.events} == \
        {(e.kind, e.subject) for e in events}


def test_golden_ack():
    enc = wire.encode_ack(7, 5, DEFAULT_PORT)
    assert enc.payload.hex() == GOLDEN_ACK
    dec = wire.decode(enc.payload, DEFAULT_PORT)
    assert dec.type == wire.TYPE_ACK and dec.seq == 7 and dec.system_id == 5


def test_golden_calot():
    ev = Event.leave(addr("10.99.0.3", 4322))
    enc = wire.encode_calot(ev, 3, 5, DEFAULT_PORT, origin_epoch=21)
    assert enc.payload.hex() == GOLDEN_CALOT
    dec = wire.decode(enc.payload, DEFAULT_PORT)
    assert dec.event.kind == ev.kind and dec.event.subject == ev.subject
    assert dec.origin_epoch == 21


def random_maintenance(rng):
    events = []
    for _ in range(rng.randrange(0, 8)):
        a = addr(f"{rng.randrange(1, 255)}.{rng.randrange(256)}."
                 f"{rng.randrange(256)}.{rng.randrange(256)}",
                 DEFAULT_PORT if rng.random() < 0.7 else rng.randrange(1, 65536))
        ev = Event.join(a) if rng.random() < 0.5 else Event.leave(a)
        events.append(ev)
    return MaintenanceMsg(rng.randrange(0, 32), tuple(events),
                          rng.randrange(0, 65536), addr("10.0.0.1"))


def test_roundtrip_fuzz():
    rng = random.Random(2024)
    for _ in range(30_000):
        msg = random_maintenance(rng)
        enc = wire.encode_maintenance(msg, 9, DEFAULT_PORT)
        dec = wire.decode(enc.payload, DEFAULT_PORT)
        assert dec.ttl == msg.ttl
        assert dec.seq == msg.seq
        assert sorted((e.kind, e.subject.ip, e.subject.port) for e in dec.events) == \
            sorted((e.kind, e.subject.ip, e.subject.port) for e in msg.events)
        for e in dec.events:
            assert e.subject_id == id_of(e.subject)


def test_roundtrip_control_and_calot_fuzz():
    rng = random.Random(55)
    for _ in range(20_000):
        seq, sysid, port = rng.randrange(65536), rng.randrange(256), rng.randrange(1, 65536)
        ack = wire.encode_ack(seq, sysid, port)
        dec = wire.decode(ack.payload, DEFAULT_PORT)
        assert (dec.seq, dec.system_id, dec.port) == (seq, sysid, port)
        a = addr(f"{rng.randrange(1, 255)}.0.0.{rng.randrange(256)}",
                 rng.randrange(1, 65536))
        ev = Event.join(a) if rng.random() < 0.5 else Event.leave(a)
        cal = wire.encode_calot(ev, seq, sysid, port)
        dec = wire.decode(cal.payload, DEFAULT_PORT)
        assert dec.event.subject == a and dec.event.kind == ev.kind


def test_truncation_fuzz_never_crashes():
    rng = random.Random(77)
    cases = 0
    while cases < 50_000:
        msg = random_maintenance(rng)
        payload = wire.encode_maintenance(msg, 9, DEFAULT_PORT).payload
        cut = rng.randrange(0, len(payload))
        with pytest.raises(wire.WireError):
            wire.decode(payload[:cut], DEFAULT_PORT)
        cases += 1


def test_garbage_rejected():
    rng = random.Random(31)
    rejected = 0
    for _ in range(5000):
        blob = bytes(rng.randrange(256) for _ in range(rng.randrange(0, 64)))
        try:
            wire.decode(blob, DEFAULT_PORT)
        except wire.WireError:
            rejected += 1
    assert rejected > 4900  # essentially all random blobs are malformed


def test_count_overflow_rejected():
    events = tuple(Event.join(addr(f"10.1.{i >> 8}.{i & 255}")) for i in range(256))
    msg = MaintenanceMsg(1, events, 1, addr("10.0.0.1"))
    with pytest.raises(wire.WireError):
        wire.encode_maintenance(msg, 1, DEFAULT_PORT)


def test_calot_requires_single_event():
    with pytest.raises(wire.WireError):
        wire.encode_calot((Event.join(addr("10.0.0.2")),
                           Event.join(addr("10.0.0.3"))), 1, 1, DEFAULT_PORT)


def test_ttl_out_of_range_rejected():
    msg = MaintenanceMsg(300, (), 1, addr("10.0.0.1"))
    with pytest.raises(wire.WireError):
        wire.encode_maintenance(msg, 1, DEFAULT_PORT)
