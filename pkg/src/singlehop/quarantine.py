"""Join probation: a new peer waits out a quarantine period before entering
the overlay, resolving its lookups through gateway members in the meantime.

While quarantined, the peer appears in no routing table, owns no keys, and
generates no maintenance events; if it departs before the period ends, the
system never hears about it at all.  Only survivors are announced, so the
most volatile peers cost nothing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .ring import PeerAddr

QUARANTINED = "quarantined"
PROMOTING = "promoting"
MEMBER = "member"


@dataclass(frozen=True, slots=True)
class QuarantineConfig:
    t_q: float = 600.0
    gateways: int = 1
    gateway_rate_limit: float = 10.0   # forwarded lookups per second per client

    def __post_init__(self):
        if self.t_q < 0:
            raise ValueError("t_q must be non-negative (0 disables quarantine)")
        if self.gateways < 1:
            raise ValueError("need at least one gateway")

    @property
    def enabled(self) -> bool:
        return self.t_q > 0


@dataclass(slots=True)
class QuarantinePhase:
    phase: str
    entered_at: float
    gateway_addrs: list[PeerAddr] = field(default_factory=list)

    def eligible(self, cfg: QuarantineConfig, now: float) -> bool:
        return now - self.entered_at >= cfg.t_q


def select_gateways(candidates, count: int) -> list[PeerAddr]:
    """Pick gateway peers from the contacted set: nearest by measured probe
    delay first, longest uptime breaking ties."""
    ranked = sorted(candidates, key=lambda c: (c[1], -c[2]))
    return [addr for addr, _delay, _uptime in ranked[:count]]


def begin_quarantine(candidates, cfg: QuarantineConfig, now: float) -> QuarantinePhase:
    """Enter probation with gateways chosen from the contacted members.
    candidates: (addr, measured_delay, uptime) triples."""
    if not candidates:
        raise ValueError("no reachable members to quarantine against")
    return QuarantinePhase(QUARANTINED, now, select_gateways(candidates, cfg.gateways))


class GatewayLimiter:
    """Per-client fixed-window rate limiter for relayed lookups."""

    __slots__ = ("limit", "_window", "_counts")

    def __init__(self, limit: float):
        self.limit = limit
        self._window = -1
        self._counts: dict = {}

    def allow(self, client: PeerAddr, now: float) -> bool:
        window = int(now)
        if window != self._window:
            self._window = window
            self._counts = {}
        used = self._counts.get(client, 0)
        if used >= self.limit:
            return False
        self._counts[client] = used + 1
        return True


def member_session_fraction(session_len: float, t_q: float) -> float:
    """Fraction of a session spent as a full one-hop member."""
    if session_len <= 0:
        raise ValueError("session length must be positive")
    return max(0.0, session_len - t_q) / session_len


def session_mixture_tail_mean(s_avg: float, t_q: float, phi: float) -> float:
    """Mean of the long-session component in the two-part session model.

    Sessions are short (uniform on [0, t_q)) with probability phi, else
    t_q plus an exponential tail; the tail mean is set so the overall mean
    stays s_avg.
    """
    if not 0 <= phi < 1:
        raise ValueError("phi must be in [0, 1)")
    tail = (s_avg - phi * t_q / 2.0) / (1.0 - phi) - t_q
    if tail <= 0:
        raise ValueError("s_avg too short for this quarantine period and phi")
    return tail


def draw_session(rng, s_avg: float, t_q: float, phi: float | None) -> float:
    """Draw one session length.  Without phi, sessions are exponential with
    mean s_avg; with phi, a mass phi of sessions falls below t_q.  An
    infinite s_avg means sessions never end."""
    if math.isinf(s_avg):
        return math.inf
    if phi is None or phi <= 0.0:
        return rng.expovariate(1.0 / s_avg)
    if rng.random() < phi:
        return rng.random() * t_q
    return t_q + rng.expovariate(1.0 / session_mixture_tail_mean(s_avg, t_q, phi))
