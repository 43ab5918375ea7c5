"""Feature aggregation: reduction and broadcast paradigms plus the
neighborhood-resolution policy (blocking / best-effort / single-robot).

Arithmetic convention: float32 features are accumulated in float64, rows in
a fixed order (self first, then neighbors ascending by id), and the result
is rounded back to float32. Both the distributed runtime and the
centralized reference in :func:`centralized_rounds` follow this convention,
which is what makes decentralized and centralized outputs bit-identical.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigError,
    InsufficientNeighborsError,
    NeighborhoodTimeoutError,
    ShapeError,
)
from .tensors import DTYPE, MlpSpec, mlp_forward
from .wire import NeighborBuffer

REDUCTION_KINDS = ("sum", "mean", "max", "diff_sum")


@dataclass
class AggregationConfig:
    paradigm: str = "reduction"  # reduction | broadcast
    kind: str = "mean"  # sum | mean | max | diff_sum
    mode: str = "best_effort"  # blocking | best_effort
    timeout_ns: int = 500_000_000
    min_neighbors: int = 0
    rounds: int = 1

    def __post_init__(self):
        if self.paradigm not in ("reduction", "broadcast"):
            raise ConfigError("aggregation.paradigm", f"unknown paradigm {self.paradigm!r}")
        if self.paradigm == "reduction" and self.kind not in REDUCTION_KINDS:
            raise ConfigError("aggregation.kind", f"unknown reduction kind {self.kind!r}")
        if self.mode not in ("blocking", "best_effort"):
            raise ConfigError("aggregation.mode", f"unknown mode {self.mode!r}")
        if self.mode == "blocking" and self.timeout_ns <= 0:
            raise ConfigError("aggregation.timeout_ms", "blocking mode needs a positive timeout")
        if self.min_neighbors < 0:
            raise ConfigError("aggregation.min_neighbors", "must be >= 0")
        if self.rounds < 1:
            raise ConfigError("aggregation.rounds", "at least one communication round")
        if self.paradigm == "broadcast" and self.rounds != 1:
            raise ConfigError(
                "aggregation.rounds", "broadcast pairing is defined for a single round"
            )


def _vectors(self_feature, neighbors):
    f = np.ascontiguousarray(self_feature, dtype=DTYPE)
    if f.ndim != 1:
        raise ShapeError(f"self feature must be 1-D, got shape {f.shape}")
    out = []
    for i, n in enumerate(neighbors):
        n = np.ascontiguousarray(n, dtype=DTYPE)
        if n.shape != f.shape:
            raise ShapeError(
                f"neighbor[{i}] has shape {n.shape}, self feature has {f.shape}"
            )
        out.append(n)
    return f, out


def reduce_aggregate(kind: str, self_feature, neighbors) -> np.ndarray:
    """Elementwise sum/mean/max over the self feature and its neighbors.

    With no neighbors the reduction covers {self} alone, so the self
    feature passes through unchanged: the single-robot fallback.
    """
    if kind == "diff_sum":
        raise ShapeError("diff_sum needs a pairwise network; use diff_sum_aggregate")
    if kind not in ("sum", "mean", "max"):
        raise ShapeError(f"unknown reduction kind {kind!r}")
    f, nbrs = _vectors(self_feature, neighbors)
    acc = f.astype(np.float64)
    if kind == "max":
        for n in nbrs:
            acc = np.maximum(acc, n.astype(np.float64))
    else:
        acc = acc.copy()
        for n in nbrs:
            acc += n.astype(np.float64)
        if kind == "mean":
            acc /= 1 + len(nbrs)
    return acc.astype(DTYPE)


def diff_sum_aggregate(g: MlpSpec, self_feature, neighbors) -> np.ndarray:
    """Sum of g(f_j - f_i) over neighbors j; zero vector when there are none."""
    f, nbrs = _vectors(self_feature, neighbors)
    if g.input_dim != f.shape[0]:
        raise ShapeError(
            f"pairwise network expects {g.input_dim} inputs, features have {f.shape[0]}"
        )
    acc = np.zeros(g.output_dim, dtype=np.float64)
    for n in nbrs:
        acc += mlp_forward(g, n - f).astype(np.float64)
    return acc.astype(DTYPE)


def broadcast_aggregate(self_feature, neighbors) -> np.ndarray:
    """Pair the self feature with each neighbor: row m is concat(self, neighbor_m).

    Callers must pass neighbors in ascending-id order (buffer snapshots
    already do). Pairwise semantics are undefined for zero neighbors, so an
    empty list is an error rather than an identity.
    """
    f, nbrs = _vectors(self_feature, neighbors)
    if len(nbrs) == 0:
        raise ShapeError("broadcast aggregation needs at least one neighbor")
    return np.stack([np.concatenate([f, n]) for n in nbrs]).astype(DTYPE)


class ResolutionStatus(enum.Enum):
    READY = "ready"
    PENDING = "pending"
    SINGLE_ROBOT = "single_robot"


@dataclass
class Resolution:
    status: ResolutionStatus
    features: list  # (neighbor_id, vector) pairs, ascending by id


def resolve_neighborhood(
    config: AggregationConfig,
    buf: NeighborBuffer,
    now_ns: int,
    waiting_since_ns: int | None = None,
    round_index: int | None = None,
) -> Resolution:
    """Decide what neighbor set an aggregation step may proceed with.

    Blocking mode returns READY only once every registered neighbor has a
    live envelope; before the timeout it reports PENDING, after it raises
    NeighborhoodTimeoutError listing the silent neighbors. Best-effort
    mode decides immediately: the live subset if it meets min_neighbors,
    SINGLE_ROBOT when empty and min_neighbors is 0, otherwise
    InsufficientNeighborsError.
    """
    live = buf.snapshot(now_ns, round_index)
    features = [(nid, vec) for nid, vec, _ in live]
    if config.mode == "blocking":
        missing = sorted(buf.neighbor_ids - {nid for nid, _ in features})
        if not missing:
            return Resolution(ResolutionStatus.READY, features)
        waited = 0 if waiting_since_ns is None else now_ns - waiting_since_ns
        if waited >= config.timeout_ns:
            raise NeighborhoodTimeoutError(missing, waited)
        return Resolution(ResolutionStatus.PENDING, [])
    if not features:
        if config.min_neighbors == 0:
            return Resolution(ResolutionStatus.SINGLE_ROBOT, [])
        raise InsufficientNeighborsError(0, config.min_neighbors)
    if len(features) < config.min_neighbors:
        raise InsufficientNeighborsError(len(features), config.min_neighbors)
    return Resolution(ResolutionStatus.READY, features)


def run_rounds(
    config: AggregationConfig,
    self_feature,
    buffer: NeighborBuffer,
    aggregate_fn,
    publish=None,
    now_fn=None,
    advance=None,
) -> np.ndarray:
    """Drive one agent through L exchange-and-aggregate rounds.

    ``aggregate_fn(h, features)`` folds the round's neighbor features
    (ascending-id list of vectors) into the running feature. ``publish(l, h)``
    sends the round-l feature to neighbors; ``advance()`` lets a surrounding
    event loop make progress while a blocking round is pending. Each round
    consumes only envelopes tagged with its own round index, so rounds can
    never contaminate each other.

    Peers must be making progress concurrently (worker threads, or an
    ``advance`` hook pumping a simulator); for lockstep simulation across a
    whole team use :func:`run_team_rounds`. The clock defaults to wall time
    so a blocking round with a silent neighbor always reaches its timeout.
    """
    h = np.ascontiguousarray(self_feature, dtype=DTYPE)
    now_fn = now_fn or time.monotonic_ns
    for l in range(config.rounds):
        if publish is not None:
            publish(l, h)
        started = now_fn()
        while True:
            res = resolve_neighborhood(
                config, buffer, now_fn(), waiting_since_ns=started, round_index=l
            )
            if res.status is not ResolutionStatus.PENDING:
                break
            if advance is not None:
                advance()
        h = aggregate_fn(h, [vec for _, vec in res.features])
    return h


def run_team_rounds(team, features: dict, config: AggregationConfig, aggregate_fn,
                    settle, now_fn=None):
    """Synchronous L-round exchange for a whole team over a real transport.

    ``team`` maps agent_id -> (publish_fn, buffer) where ``publish_fn(env_bytes)``
    fans the encoded envelope out to the agent's neighbors. ``settle()`` runs
    the transport until in-flight messages are delivered and returns the
    current clock. Every agent advances in lockstep: all publish round l,
    the network settles, all aggregate round l.
    """
    from .wire import MessageEnvelope, encode_envelope

    h = {aid: np.ascontiguousarray(features[aid], dtype=DTYPE) for aid in team}
    seq = {aid: 0 for aid in team}
    for l in range(config.rounds):
        stamp = now_fn() if now_fn else 0
        for aid in sorted(team):
            publish_fn, _ = team[aid]
            seq[aid] += 1
            env = MessageEnvelope(
                sender_id=aid, seq=seq[aid], timestamp_ns=stamp, round=l, payload=h[aid]
            )
            publish_fn(encode_envelope(env))
        now = settle()
        new_h = {}
        for aid in sorted(team):
            _, buf = team[aid]
            res = resolve_neighborhood(config, buf, now, waiting_since_ns=0, round_index=l)
            new_h[aid] = aggregate_fn(h[aid], [vec for _, vec in res.features])
        h = new_h
    return h


def build_sim_team(topology, medium=None, staleness_ns: int = 10**12):
    """Wire one buffer per agent into a fresh MeshSimulator.

    Returns (sim, team, settle) where ``team`` feeds straight into
    :func:`run_team_rounds` and ``settle`` drains in-flight deliveries.
    """
    from .netsim import MeshSimulator

    sim = MeshSimulator(topology, medium)
    team = {}
    for aid in topology.agents:
        buf = NeighborBuffer(topology.neighbors(aid), staleness_ns=staleness_ns)
        sim.register(aid, (lambda b: lambda data, now: b.insert_bytes(data, now))(buf))

        def publish(data, _aid=aid):
            for nb in topology.neighbors(_aid):
                sim.send(_aid, nb, data)

        team[aid] = (publish, buf)

    def settle():
        sim.drain()
        return sim.now_ns

    return sim, team, settle


def centralized_rounds(adjacency: dict, features: dict, kind: str, rounds: int) -> dict:
    """Reference L-round propagation computed with full global knowledge.

    Implements the synchronous update h_i <- reduce({h_i} u {h_j : j adjacent})
    directly on the whole graph, with no buffers, envelopes, or transport.
    Serves as the centralized counterpart that decentralized execution must
    reproduce bit-for-bit on lossless links.
    """
    h = {i: np.ascontiguousarray(features[i], dtype=DTYPE) for i in features}
    for _ in range(rounds):
        nxt = {}
        for i in sorted(h):
            acc = h[i].astype(np.float64)
            peers = sorted(adjacency.get(i, ()))
            if kind == "max":
                for j in peers:
                    acc = np.maximum(acc, h[j].astype(np.float64))
            elif kind in ("sum", "mean"):
                acc = acc.copy()
                for j in peers:
                    acc += h[j].astype(np.float64)
                if kind == "mean":
                    acc /= 1 + len(peers)
            else:
                raise ShapeError(f"unsupported kind {kind!r} for centralized reference")
            nxt[i] = acc.astype(DTYPE)
        h = nxt
    return h
