import random

import pytest
from scipy.stats import chi2

from singlehop.ring import (
    RING_BITS, RING_SIZE, EmptyRingError, NotAMemberError, PeerAddr, RingView,
    id_of, in_arc,
)


def make_view(n, seed=0):
    rng = random.Random(seed)
    addrs = set()
    while len(addrs) < n:
        addrs.add(PeerAddr(f"{rng.randrange(1, 224)}.{rng.randrange(256)}."
                           f"{rng.randrange(256)}.{rng.randrange(256)}",
                           rng.randrange(1024, 65535)))
    return RingView.from_addrs(addrs)


def test_id_is_deterministic():
    a = PeerAddr("192.168.0.1", 4170)
    assert id_of(a) == id_of(a)
    assert id_of(a) == id_of(PeerAddr("192.168.0.1", 4170))


def test_id_distinguishes_port():
    assert id_of(PeerAddr("192.168.0.1", 4170)) != id_of(PeerAddr("192.168.0.1", 4171))


def test_id_range():
    for i in range(64):
        v = id_of(PeerAddr(f"10.0.0.{i}", 4170))
        assert 0 <= v < RING_SIZE


def test_id_uniformity_chi_square():
    # 1e5 random addresses over 64 equal arcs, alpha = 0.01
    rng = random.Random(1234)
    arcs = [0] * 64
    for _ in range(100_000):
        addr = PeerAddr(f"{rng.randrange(256)}.{rng.randrange(256)}."
                        f"{rng.randrange(256)}.{rng.randrange(256)}",
                        rng.randrange(65536))
        arcs[id_of(addr) >> (RING_BITS - 6)] += 1
    expected = 100_000 / 64
    stat = sum((c - expected) ** 2 / expected for c in arcs)
    assert stat < chi2.ppf(0.99, 63)


def test_succ_identity_and_wrap():
    view = make_view(17)
    for pid in view.members():
        assert view.succ(pid, 0) == pid
        assert view.succ(pid, len(view)) == pid
        assert view.pred(pid, 0) == pid


def test_succ_pred_inverse():
    view = make_view(23)
    for pid in view.members():
        assert view.pred(view.succ(pid, 1), 1) == pid
        assert view.succ(view.pred(pid, 5), 5) == pid


def test_succ_enumerates_all_members_once():
    view = make_view(31)
    start = view.members()[7]
    walked = {view.succ(start, i) for i in range(len(view))}
    assert walked == set(view.members())


def test_non_member_raises():
    view = make_view(8)
    with pytest.raises(NotAMemberError):
        view.succ(12345, 1)
    with pytest.raises(NotAMemberError):
        view.pred(12345, 1)


def test_stretch_basics():
    view = make_view(16)
    members = view.members()
    p = members[3]
    assert view.stretch_contains(p, 0, p)
    # stretch(p, n-1) covers the whole ring
    for x in members:
        assert view.stretch_contains(p, len(view) - 1, x)
    assert view.stretch_contains(p, 2, view.succ(p, 2))
    assert not view.stretch_contains(p, 2, view.succ(p, 3))


def test_stretch_wraparound():
    view = make_view(11)
    last = view.members()[-1]  # highest id: successors wrap to the start
    assert view.stretch_contains(last, 2, view.succ(last, 1))
    assert view.stretch_contains(last, 2, view.succ(last, 2))


def test_owner_of_member_key_is_member():
    view = make_view(12)
    for pid in view.members():
        assert view.owner_of(pid) == pid


def test_owner_single_member():
    view = make_view(1)
    only = view.members()[0]
    rng = random.Random(5)
    for _ in range(50):
        assert view.owner_of(rng.getrandbits(RING_BITS)) == only


def test_owner_empty_raises():
    with pytest.raises(EmptyRingError):
        RingView().owner_of(1)


def test_owner_matches_linear_scan():
    view = make_view(64, seed=3)
    members = view.members()
    rng = random.Random(99)
    for _ in range(10_000):
        key = rng.getrandbits(RING_BITS)
        best = min(members, key=lambda m: (m - key) % RING_SIZE)
        assert view.owner_of(key) == best


def test_owner_partitions_key_space():
    view = make_view(32, seed=8)
    rng = random.Random(77)
    keys = [rng.getrandbits(RING_BITS) for _ in range(500)]
    before = {k: view.owner_of(k) for k in keys}
    moved = view.members()[10]
    pred = view.pred(moved, 1)
    view.remove(moved)
    for k in keys:
        after = view.owner_of(k)
        if before[k] == moved:
            # keys in the vacated arc flow to the old successor
            assert after == view.owner_of(moved)
        else:
            assert after == before[k]
    del pred


def test_in_arc():
    assert in_arc(10, 20, 15)
    assert in_arc(10, 20, 20)
    assert not in_arc(10, 20, 10)
    assert not in_arc(10, 20, 25)
    # wrapped arc
    assert in_arc(20, 10, 25)
    assert in_arc(20, 10, 5)
    assert not in_arc(20, 10, 15)


def test_packed_roundtrip():
    a = PeerAddr("203.0.113.7", 65000)
    assert PeerAddr.from_packed(a.packed()) == a
