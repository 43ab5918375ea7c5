"""Deterministic mesh-network simulation plus a loopback datagram transport.

The simulator is a single-threaded discrete-event loop over a virtual
clock. Every random draw (loss, jitter) comes from a per-directed-link
generator seeded from the link seed and the endpoint ids, so identical
configs and seeds replay identical delivery traces bit for bit.

Link model per message:

    delivery = tx_start + bytes / effective_bandwidth + max(0, latency + jitter)

where tx_start serializes messages through the sender's outbound radio
(at most one in flight per node, rate capped at the node bandwidth) and
jitter is a zero-mean Gaussian sample; the total link delay is floored at
zero. Deliveries on one directed link never reorder (FIFO clamp); across
links they may. Under ``shared_medium`` contention every node's effective
bandwidth is the per-node limit divided by the number of transmitting
nodes in the mesh.

The loopback transport exposes the same send/receive-callback surface
over UDP datagrams on 127.0.0.1 (port = base_port + agent_id) and runs on
wall-clock time, so it is excluded from exact-value assertions.
"""

from __future__ import annotations

import hashlib
import heapq
import math
import random
import socket
import struct
import threading
import time
from dataclasses import dataclass, field

from .errors import ConfigError, MeasurementError, TopologyError
from .wire import header_size

DEFAULT_BANDWIDTH_BPS = 6_000_000
DEFAULT_BASE_PORT = 47000


def derive_seed(base: int, *parts: int) -> int:
    """Stable 64-bit seed derivation (platform- and run-independent)."""
    h = hashlib.blake2b(digest_size=8)
    h.update(struct.pack("<Q", base & (2**64 - 1)))
    for p in parts:
        h.update(struct.pack("<q", p))
    return int.from_bytes(h.digest(), "little")


@dataclass
class LinkModel:
    base_latency_ns: int = 0
    jitter_stddev_ns: float = 0.0
    loss_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.loss_prob <= 1.0:
            raise ConfigError("network.loss_prob", f"{self.loss_prob} outside [0, 1]")
        if self.base_latency_ns < 0 or self.jitter_stddev_ns < 0:
            raise ConfigError("network.base_latency_ms", "latency and jitter must be >= 0")


@dataclass
class MediumModel:
    per_node_bandwidth_bps: float = DEFAULT_BANDWIDTH_BPS
    envelope_overhead_bytes: int = header_size(1)
    contention: str = "none"  # none | shared_medium

    def __post_init__(self):
        if self.per_node_bandwidth_bps <= 0:
            raise ConfigError("network.per_node_bandwidth", "must be positive")
        if self.contention not in ("none", "shared_medium"):
            raise ConfigError("network.contention", f"unknown contention {self.contention!r}")

    def effective_bandwidth(self, transmitters: int) -> float:
        if self.contention == "shared_medium" and transmitters > 1:
            return self.per_node_bandwidth_bps / transmitters
        return self.per_node_bandwidth_bps


@dataclass
class Topology:
    """Undirected adjacency with a link model per edge."""

    agents: list[int]
    links: dict = field(default_factory=dict)  # (lo, hi) -> LinkModel

    @staticmethod
    def full_mesh(agents, link: LinkModel | None = None) -> "Topology":
        agents = sorted(int(a) for a in agents)
        link = link or LinkModel()
        links = {}
        for i, a in enumerate(agents):
            for b in agents[i + 1 :]:
                links[(a, b)] = link
        return Topology(agents, links)

    def __post_init__(self):
        self.agents = sorted(int(a) for a in self.agents)
        known = set(self.agents)
        normalized = {}
        for (a, b), link in self.links.items():
            if a == b:
                raise TopologyError(f"self-edge on agent {a}")
            if a not in known or b not in known:
                raise TopologyError(f"edge ({a}, {b}) references unknown agents")
            key = (min(a, b), max(a, b))
            if key in normalized:
                raise TopologyError(f"edge {key} listed twice")
            normalized[key] = link
        self.links = normalized

    def has_edge(self, a: int, b: int) -> bool:
        return (min(a, b), max(a, b)) in self.links

    def link(self, a: int, b: int) -> LinkModel:
        try:
            return self.links[(min(a, b), max(a, b))]
        except KeyError:
            raise TopologyError(f"no link between {a} and {b}") from None

    def neighbors(self, a: int) -> list[int]:
        out = []
        for (x, y) in self.links:
            if x == a:
                out.append(y)
            elif y == a:
                out.append(x)
        return sorted(out)


class MeshSimulator:
    """Event-driven mesh with bandwidth, latency, jitter, and loss.

    Receive callbacks are ``cb(data: bytes, now_ns: int)``; they run on the
    simulator loop when the virtual clock reaches the delivery time.
    """

    def __init__(self, topology: Topology, medium: MediumModel | None = None,
                 start_ns: int = 0, record_tx: bool = False):
        self.topology = topology
        self.medium = medium or MediumModel()
        self._now = int(start_ns)
        self._events: list = []
        self._counter = 0
        self._tx_free = {a: int(start_ns) for a in topology.agents}
        self._last_delivery: dict = {}
        self._rngs: dict = {}
        self._receivers: dict = {}
        self.sent = 0
        self.dropped = 0
        self.delivered = 0
        self.tx_log = [] if record_tx else None

    @property
    def now_ns(self) -> int:
        return self._now

    def register(self, agent_id: int, callback) -> None:
        if agent_id not in self._tx_free:
            raise TopologyError(f"agent {agent_id} not in topology")
        self._receivers[agent_id] = callback

    def _rng(self, frm: int, to: int, link: LinkModel) -> random.Random:
        key = (frm, to)
        rng = self._rngs.get(key)
        if rng is None:
            rng = random.Random(derive_seed(link.seed, frm, to))
            self._rngs[key] = rng
        return rng

    def send(self, frm: int, to: int, data: bytes):
        """Schedule a delivery; returns the delivery time or None if lost.

        Transmission always consumes the sender's airtime; the Bernoulli
        loss draw then decides whether the receiver ever sees the message.
        """
        link = self.topology.link(frm, to)
        self.sent += 1
        bandwidth = self.medium.effective_bandwidth(len(self.topology.agents))
        tx_start = max(self._now, self._tx_free[frm])
        tx_ns = int(round(len(data) * 1e9 / bandwidth))
        self._tx_free[frm] = tx_start + tx_ns
        if self.tx_log is not None:
            self.tx_log.append((frm, tx_start, tx_start + tx_ns, len(data)))
        rng = self._rng(frm, to, link)
        lost = rng.random() < link.loss_prob if link.loss_prob > 0 else False
        if lost:
            self.dropped += 1
            return None
        jitter = rng.gauss(0.0, link.jitter_stddev_ns) if link.jitter_stddev_ns > 0 else 0.0
        delay = max(0.0, link.base_latency_ns + jitter)
        t = tx_start + tx_ns + int(round(delay))
        t = max(t, self._last_delivery.get((frm, to), 0))  # FIFO per directed link
        self._last_delivery[(frm, to)] = t
        self._counter += 1
        heapq.heappush(self._events, (t, self._counter, to, data))
        return t

    def run_until(self, t_ns: int) -> None:
        while self._events and self._events[0][0] <= t_ns:
            when, _, to, payload = heapq.heappop(self._events)
            self._now = when
            self.delivered += 1
            cb = self._receivers.get(to)
            if cb is not None:
                cb(payload, when)
        self._now = max(self._now, int(t_ns))

    def run_for(self, dt_ns: int) -> None:
        self.run_until(self._now + int(dt_ns))

    def drain(self) -> None:
        """Deliver everything still in flight."""
        while self._events:
            self.run_until(self._events[0][0])


@dataclass
class LinkQuality:
    latency_mean_ns: float
    jitter_ns: float
    loss_pct: float
    throughput_msgs_per_s: float


def measure_link_quality(sim: MeshSimulator, frm: int, to: int, payload_bytes: int,
                         rate_hz: float, duration_s: float) -> LinkQuality:
    """Probe one directed link and report delay, jitter, loss, throughput.

    Sends index-stamped probes at the offered rate for the given duration
    of virtual time; needs at least 100 probes for stable statistics.
    """
    n_probes = int(rate_hz * duration_s)
    if n_probes < 100:
        raise MeasurementError(
            f"{n_probes} probes from {rate_hz} Hz x {duration_s} s; need >= 100"
        )
    if payload_bytes < 8:
        raise MeasurementError("probe payload must fit an 8-byte index stamp")
    send_ns: dict[int, int] = {}
    delays: list[int] = []

    def on_receive(data: bytes, now_ns: int) -> None:
        (index,) = struct.unpack_from("<Q", data)
        delays.append(now_ns - send_ns[index])

    previous = sim._receivers.get(to)
    sim.register(to, on_receive)
    try:
        interval_ns = int(1e9 / rate_hz)
        start = sim.now_ns
        for i in range(n_probes):
            sim.run_until(start + i * interval_ns)
            send_ns[i] = sim.now_ns
            sim.send(frm, to, struct.pack("<Q", i).ljust(payload_bytes, b"\0"))
        sim.drain()
    finally:
        if previous is not None:
            sim.register(to, previous)
        else:
            sim._receivers.pop(to, None)
    if not delays:
        raise MeasurementError(
            f"no probes delivered over {frm}->{to}; check loss and connectivity"
        )
    mean = sum(delays) / len(delays)
    var = sum((d - mean) ** 2 for d in delays) / len(delays)
    return LinkQuality(
        latency_mean_ns=mean,
        jitter_ns=math.sqrt(var),
        loss_pct=100.0 * (n_probes - len(delays)) / n_probes,
        throughput_msgs_per_s=len(delays) / duration_s,
    )


def closed_form_link_throughput(team_size: int, payload_bytes: int, offered_hz: float,
                                medium: MediumModel) -> float:
    """Analytic per-link delivery rate for the all-to-all publish pattern.

    Each node offers ``offered_hz`` messages to each of its N-1 peers; its
    radio serializes at the effective bandwidth, so the per-link rate is
    min(offered, bandwidth / ((N-1) * wire_bytes)).
    """
    wire = payload_bytes + medium.envelope_overhead_bytes
    bandwidth = medium.effective_bandwidth(team_size)
    return min(offered_hz, bandwidth / ((team_size - 1) * wire))


@dataclass
class SweepRow:
    team_size: int
    offered_hz: float
    delivered_mean: float
    delivered_std: float
    oracle_value: float


def scalability_sweep(team_sizes, payload_bytes: int = 128, offered_hz: float = 200.0,
                      medium: MediumModel | None = None, duration_s: float = 0.6,
                      measure_from_s: float | None = None) -> list[SweepRow]:
    """Measure per-link throughput for full-mesh all-to-all publishing.

    Every agent publishes a payload to all peers at the offered rate; the
    measurement window covers the second half of the run (steady state).
    The closed-form oracle value is attached to every row.
    """
    medium = medium or MediumModel()
    if measure_from_s is None:
        measure_from_s = duration_s / 2
    rows = []
    wire_bytes = payload_bytes + medium.envelope_overhead_bytes
    blob = bytes(wire_bytes)
    for n in team_sizes:
        agents = list(range(n))
        topo = Topology.full_mesh(agents)
        sim = MeshSimulator(topo, medium)
        counts = {a: 0 for a in agents}
        window_start_ns = int(measure_from_s * 1e9)

        def receiver(aid):
            def cb(data, now_ns, _aid=aid):
                if now_ns >= window_start_ns:
                    counts[_aid] += 1

            return cb

        for a in agents:
            sim.register(a, receiver(a))
        interval_ns = int(1e9 / offered_hz)
        ticks = int(duration_s * 1e9 / interval_ns)
        for k in range(ticks):
            sim.run_until(k * interval_ns)
            for a in agents:
                for b in agents:
                    if a != b:
                        sim.send(a, b, blob)
        sim.run_until(int(duration_s * 1e9))
        window_s = duration_s - measure_from_s
        links_per_agent = n - 1
        per_agent_rates = [counts[a] / (links_per_agent * window_s) for a in agents]
        mean = sum(per_agent_rates) / n
        var = sum((r - mean) ** 2 for r in per_agent_rates) / n
        rows.append(
            SweepRow(
                team_size=n,
                offered_hz=offered_hz,
                delivered_mean=mean,
                delivered_std=math.sqrt(var),
                oracle_value=closed_form_link_throughput(n, payload_bytes, offered_hz, medium),
            )
        )
    return rows


class SimTransport:
    """Per-agent view of a MeshSimulator with the common transport surface."""

    def __init__(self, sim: MeshSimulator, agent_id: int):
        self.sim = sim
        self.agent_id = agent_id

    def send(self, to: int, data: bytes):
        return self.sim.send(self.agent_id, to, data)

    def broadcast(self, data: bytes) -> None:
        for nb in self.sim.topology.neighbors(self.agent_id):
            self.sim.send(self.agent_id, nb, data)

    def on_receive(self, callback) -> None:
        self.sim.register(self.agent_id, callback)


class LoopbackTransport:
    """UDP datagram transport on 127.0.0.1, one port per agent.

    Wall-clock timestamps; a daemon thread funnels received datagrams into
    the registered callback.
    """

    def __init__(self, agent_id: int, base_port: int = DEFAULT_BASE_PORT, host: str = "127.0.0.1"):
        self.agent_id = agent_id
        self.base_port = base_port
        self.host = host
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._sock.bind((host, base_port + agent_id))
        self._sock.settimeout(0.1)
        self._callback = None
        self._closing = threading.Event()
        self._thread = threading.Thread(
            target=self._recv_loop, name=f"loopback-{agent_id}", daemon=True
        )
        self._thread.start()

    def send(self, to: int, data: bytes) -> None:
        self._sock.sendto(data, (self.host, self.base_port + to))

    def on_receive(self, callback) -> None:
        self._callback = callback

    def _recv_loop(self) -> None:
        while not self._closing.is_set():
            try:
                data, _ = self._sock.recvfrom(65536)
            except socket.timeout:
                continue
            except OSError:
                return
            cb = self._callback
            if cb is not None:
                cb(data, time.monotonic_ns())

    def close(self) -> None:
        self._closing.set()
        self._thread.join(timeout=2.0)
        self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
