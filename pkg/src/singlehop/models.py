"""Closed-form overhead models for the buffered single-hop protocol and its
unbuffered heartbeat-style contemporary.

The chain, for a system of n peers with average session length S_avg and a
target routing-failure fraction f:

    event rate        r = 2n / S_avg
    fan-out depth     rho = ceil(log2 n)
    buffer interval   theta = 4 f S_avg / (16 + 3 rho)
    mean ack time     T_avg = 2 theta + rho (theta + 2 delta_avg) / 4
    event cap         E = 8 f n / (16 + 3 rho)
    send probability  P(l) = 1 - (1 - 2 r theta / n) ** 2**(rho-l-1)
    messages/interval N = 1 + sum_{l=1}^{rho-1} P(l)
    bandwidth         (N (v_m + v_a) + r m theta) / theta  bits/s per peer

Curve sweeps over several decades of n can optionally use the real-valued
log2 instead of the integer ceiling ("smooth" mode): the integer stair makes
per-peer cost jump at powers of two, which turns size-trend comparisons into
a sawtooth; the smooth form is the trend those comparisons are about.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .edra import compute_rho, event_cap, EdraConfig
from .wire import WireCosts


@dataclass(frozen=True, slots=True)
class ModelParams:
    n: float
    s_avg: float
    f: float = 0.01
    delta_avg: float = 0.25
    wire: WireCosts = field(default_factory=WireCosts)
    m_avg: float = 32.0

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if self.s_avg <= 0 or self.f <= 0 or self.f >= 1:
            raise ValueError("s_avg must be positive and f in (0, 1)")


def _rho(n: float, smooth: bool) -> float:
    if smooth:
        return math.log2(n)
    return compute_rho(math.ceil(n))


def event_rate(p: ModelParams) -> float:
    """System-wide events per second: two per session."""
    return 2.0 * p.n / p.s_avg


def theta(p: ModelParams, smooth: bool = False) -> float:
    """Buffering interval keeping stale entries below f (delay folded in as
    a quarter interval)."""
    return 4.0 * p.f * p.s_avg / (16 + 3 * _rho(p.n, smooth))


def theta_with_delay(p: ModelParams, smooth: bool = False) -> float:
    """Buffering interval with the message delay kept explicit."""
    rho = _rho(p.n, smooth)
    return (2.0 * p.f * p.s_avg - 2.0 * rho * p.delta_avg) / (8 + rho)


def t_avg(theta_s: float, rho: float, delta_avg: float) -> float:
    """Upper bound on the mean acknowledgment time for an event, including
    the worst-case failure-detection wait of two intervals."""
    return 2.0 * theta_s + rho * (theta_s + 2.0 * delta_avg) / 4.0


def e_cap(p: ModelParams) -> int:
    """Per-interval buffered-event cap (shared with the peer state machine)."""
    return event_cap(EdraConfig(f=p.f), math.ceil(p.n))


def p_msg(p: ModelParams, l: int, smooth: bool = False) -> float:
    """Probability that a peer sends the TTL=l message at an interval end:
    at least one of the 2**(rho-l-1) peers it reports at TTL > l must have
    suffered an event during the interval."""
    rho = _rho(p.n, smooth)
    if not 1 <= l < rho:
        raise ValueError(f"TTL {l} out of range [1, {rho})")
    if math.isinf(p.s_avg):
        return 0.0   # no churn: nothing beyond the TTL=0 message
    per_peer = 2.0 * event_rate(p) * theta(p, smooth) / p.n
    return 1.0 - (1.0 - per_peer) ** (2.0 ** (rho - l - 1))


def n_msgs(p: ModelParams, smooth: bool = False) -> float:
    """Expected maintenance messages per interval; the TTL=0 message always
    goes out."""
    rho = _rho(p.n, smooth)
    return 1.0 + sum(p_msg(p, l, smooth) for l in range(1, math.ceil(rho)))


def d1ht_bandwidth(p: ModelParams, smooth: bool = False) -> float:
    """Average per-peer maintenance traffic in bits/s (incoming equals
    outgoing): per interval, N messages with their acks plus the event
    payloads; the payload term r*m*theta divided by theta is written as r*m
    so the zero-churn limit stays well defined."""
    th = theta(p, smooth)
    n = n_msgs(p, smooth)
    return n * (p.wire.v_m + p.wire.v_a) / th + event_rate(p) * p.m_avg


AS_PRINTED = "as_printed"
PER_PEER_HEARTBEAT = "per_peer_heartbeat"


def calot_bandwidth(p: ModelParams, variant: str = PER_PEER_HEARTBEAT) -> float:
    """Per-peer maintenance traffic of the unbuffered comparison protocol:
    every event costs one notification plus ack per peer, and each peer
    sends four heartbeats per minute.

    The published closed form multiplies the heartbeat term by n, which
    contradicts both its per-peer reading and the magnitudes on the curves
    derived from it; the default charges each peer its own four heartbeats.
    The verbatim form is retained as ``as_printed``.
    """
    r = event_rate(p)
    base = r * (p.wire.v_c + p.wire.v_a)
    if variant == AS_PRINTED:
        return base + 4.0 * p.n * p.wire.v_h / 60.0
    if variant == PER_PEER_HEARTBEAT:
        return base + 4.0 * p.wire.v_h / 60.0
    raise ValueError(f"unknown variant {variant!r}")


def quarantine_gain(p: ModelParams, phi: float, smooth: bool = True) -> float:
    """Fractional maintenance-bandwidth reduction when joiners wait out a
    probation period that a fraction phi of sessions never outlast.

    Only (1 - phi) of the peers enter the overlay, and the event rate drops
    by the same factor (session length held fixed, which overestimates the
    churn of the surviving peers).  Defaults to the smooth size model: the
    integer fan-out stair would make the reduction sawtooth across
    power-of-two boundaries, and this quantity exists to show the size trend.
    """
    if not 0 <= phi < 1:
        raise ValueError("phi must be in [0, 1)")
    if phi == 0.0:
        return 0.0
    reduced = ModelParams(n=(1.0 - phi) * p.n, s_avg=p.s_avg, f=p.f,
                          delta_avg=p.delta_avg, wire=p.wire, m_avg=p.m_avg)
    return 1.0 - d1ht_bandwidth(reduced, smooth) / d1ht_bandwidth(p, smooth)


def log_grid(lo: float, hi: float, per_decade: int = 4) -> list[float]:
    """Geometric grid from lo to hi inclusive."""
    if lo <= 0 or hi < lo:
        raise ValueError("need 0 < lo <= hi")
    steps = round(math.log10(hi / lo) * per_decade)
    return [lo * 10 ** (k / per_decade) for k in range(steps + 1)]


def bandwidth_sweep_rows(ns, s_avgs, f: float = 0.01,
                         include_quarantine_phi=(), smooth: bool = False):
    """Rows for the bandwidth-comparison curves: one per (n, s_avg, model,
    variant), with columns n, s_avg, model, variant, bandwidth_bps."""
    rows = []
    for n in ns:
        for s_avg in s_avgs:
            p = ModelParams(n=n, s_avg=s_avg, f=f)
            rows.append({"n": n, "s_avg": s_avg, "model": "d1ht", "variant": "",
                         "bandwidth_bps": d1ht_bandwidth(p, smooth)})
            for variant in (PER_PEER_HEARTBEAT, AS_PRINTED):
                rows.append({"n": n, "s_avg": s_avg, "model": "calot",
                             "variant": variant,
                             "bandwidth_bps": calot_bandwidth(p, variant)})
            for phi in include_quarantine_phi:
                gain = quarantine_gain(p, phi)
                rows.append({"n": n, "s_avg": s_avg, "model": "d1ht",
                             "variant": f"quarantine_phi={phi:g}",
                             "bandwidth_bps": d1ht_bandwidth(p, smooth) * (1.0 - gain)})
    return rows
