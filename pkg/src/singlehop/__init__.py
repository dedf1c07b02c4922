"""Single-hop DHT protocol kit.

A library implementation of a full-routing-table overlay whose peers buffer
membership events for a dynamically tuned interval and disseminate them
over a TTL-indexed logarithmic message pattern, plus a join-probation
(quarantine) mechanism, bit-exact datagram codecs, a deterministic churn
simulator, and the closed-form maintenance-bandwidth models the simulator
is validated against.
"""

from .edra import (
    EdraConfig, EdraPeer, Event, MaintenanceMsg, RoutingTable, AddressBook,
    compute_rho, tune_theta, event_cap, dissemination_tree, ack_ttl_census,
)
from .models import (
    ModelParams, event_rate, theta, theta_with_delay, t_avg, e_cap, p_msg,
    n_msgs, d1ht_bandwidth, calot_bandwidth, quarantine_gain,
)
from .quarantine import QuarantineConfig, QuarantinePhase
from .ring import PeerAddr, RingView, id_of, in_arc, RING_BITS, RING_SIZE
from .sim import Metrics, SimConfig, Simulator, SingleEventLab, SimulationAbort, run
from .wire import (
    WireCosts, EncodedDatagram, WireError, encode_maintenance, encode_ack,
    encode_heartbeat, encode_calot, decode, maintenance_bytes,
)

__version__ = "0.1.0"
