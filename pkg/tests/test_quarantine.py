import random
import statistics

import pytest

from singlehop.quarantine import (
    MEMBER, QUARANTINED, GatewayLimiter, QuarantineConfig, QuarantinePhase,
    begin_quarantine, draw_session, member_session_fraction, select_gateways,
    session_mixture_tail_mean,
)
from singlehop.ring import PeerAddr


def test_config_validation():
    with pytest.raises(ValueError):
        QuarantineConfig(t_q=-1.0)
    with pytest.raises(ValueError):
        QuarantineConfig(gateways=0)
    assert not QuarantineConfig(t_q=0.0).enabled
    assert QuarantineConfig().enabled


def test_gateway_selection_prefers_nearest_then_uptime():
    a, b, c = (PeerAddr(f"10.0.0.{i}", 4170) for i in (1, 2, 3))
    picked = select_gateways([(a, 0.020, 100.0), (b, 0.005, 50.0),
                              (c, 0.005, 900.0)], 2)
    assert picked == [c, b]   # same delay: longer uptime wins


def test_begin_quarantine_phase():
    a = PeerAddr("10.0.0.1", 4170)
    phase = begin_quarantine([(a, 0.01, 10.0)], QuarantineConfig(), 42.0)
    assert phase.phase == QUARANTINED
    assert phase.entered_at == 42.0
    assert phase.gateway_addrs == [a]
    assert not phase.eligible(QuarantineConfig(), 42.0 + 599.0)
    assert phase.eligible(QuarantineConfig(), 42.0 + 600.0)


def test_limiter_half_rejected_at_double_rate():
    gw = GatewayLimiter(10.0)
    client = PeerAddr("10.0.0.9", 4170)
    accepted = 0
    for i in range(200):         # 20 offered per second for 10 seconds
        if gw.allow(client, i * 0.05):
            accepted += 1
    assert accepted == 100


def test_limiter_is_per_client():
    gw = GatewayLimiter(1.0)
    a = PeerAddr("10.0.0.1", 4170)
    b = PeerAddr("10.0.0.2", 4170)
    assert gw.allow(a, 0.1)
    assert not gw.allow(a, 0.2)
    assert gw.allow(b, 0.3)


def test_member_session_fraction():
    # a typical long session spends ~94% of its length as a member
    assert member_session_fraction(174 * 60.0, 600.0) == pytest.approx(0.9425, abs=1e-3)
    assert member_session_fraction(100.0, 600.0) == 0.0


def test_session_mixture_mean_and_mass():
    rng = random.Random(7)
    s_avg, t_q, phi = 10440.0, 600.0, 0.31
    draws = [draw_session(rng, s_avg, t_q, phi) for _ in range(40_000)]
    short = sum(1 for s in draws if s < t_q) / len(draws)
    assert short == pytest.approx(phi, abs=0.01)
    assert statistics.fmean(draws) == pytest.approx(s_avg, rel=0.03)


def test_session_plain_exponential_when_phi_none():
    rng = random.Random(7)
    draws = [draw_session(rng, 1000.0, 600.0, None) for _ in range(40_000)]
    assert statistics.fmean(draws) == pytest.approx(1000.0, rel=0.03)


def test_mixture_tail_mean_rejects_impossible():
    with pytest.raises(ValueError):
        session_mixture_tail_mean(500.0, 600.0, 0.31)
