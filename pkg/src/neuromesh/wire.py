"""Inter-agent message format and per-neighbor keep-latest buffering.

Wire layout (all multi-byte fields little-endian):

    magic "NMSH" (4 B) | version u8 = 1 | sender_id u16 | seq u32 |
    timestamp_ns u64 | round u8 | ndims u8 | dims u32 x ndims |
    payload f32 x prod(dims)

Protocol constants:

    MAGIC             b"NMSH"
    VERSION           1
    MAX_DIMS          8 dims per payload shape
    DEFAULT_STALENESS_NS   500 ms

Buffer semantics: one slot per registered neighbor holding the
highest-sequence envelope accepted so far. Arrivals with a sequence index
at or below the stored one are rejected (out of order or duplicate).
Eviction removes envelopes whose sender timestamp is older than the
staleness threshold; an envelope aged exactly the threshold is retained.
Staleness compares the sender timestamp against the local clock, so
deployments over real links must synchronize clocks externally.
"""

from __future__ import annotations

import struct
import threading
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadMagicError,
    BadVersionError,
    PayloadLengthError,
    ProtocolLimitError,
    TruncatedMessageError,
    UnknownSenderError,
)

MAGIC = b"NMSH"
VERSION = 1
MAX_DIMS = 8
DEFAULT_STALENESS_NS = 500_000_000

_HEADER = struct.Struct("<4sBHIQBB")  # magic, version, sender, seq, timestamp, round, ndims

_U16 = 1 << 16
_U32 = 1 << 32
_U64 = 1 << 64


@dataclass
class MessageEnvelope:
    """One inter-agent message: routing header plus a float32 tensor payload."""

    sender_id: int
    seq: int
    timestamp_ns: int
    round: int
    payload: np.ndarray

    def __post_init__(self):
        self.payload = np.ascontiguousarray(self.payload, dtype="<f4")

    def __eq__(self, other):
        if not isinstance(other, MessageEnvelope):
            return NotImplemented
        return (
            self.sender_id == other.sender_id
            and self.seq == other.seq
            and self.timestamp_ns == other.timestamp_ns
            and self.round == other.round
            and self.payload.shape == other.payload.shape
            and self.payload.tobytes() == other.payload.tobytes()
        )


def _check_range(name: str, value: int, limit: int) -> None:
    if not 0 <= value < limit:
        raise ProtocolLimitError(name, f"{name} {value} outside [0, {limit})")


def header_size(ndims: int) -> int:
    """Byte length of the wire header for a payload of the given rank."""
    return _HEADER.size + 4 * ndims


def encode_envelope(env: MessageEnvelope) -> bytes:
    """Serialize to the exact byte layout documented in the module header."""
    _check_range("sender_id", env.sender_id, _U16)
    _check_range("seq", env.seq, _U32)
    _check_range("timestamp_ns", env.timestamp_ns, _U64)
    _check_range("round", env.round, 256)
    shape = env.payload.shape
    if len(shape) == 0:
        raise ProtocolLimitError("ndims", "scalar payloads must use shape [1], not []")
    if len(shape) > MAX_DIMS:
        raise ProtocolLimitError("ndims", f"{len(shape)} dims exceed the limit of {MAX_DIMS}")
    for d in shape:
        _check_range("dim", d, _U32)
    parts = [
        _HEADER.pack(
            MAGIC, VERSION, env.sender_id, env.seq, env.timestamp_ns, env.round, len(shape)
        ),
        struct.pack(f"<{len(shape)}I", *shape),
        env.payload.tobytes(),
    ]
    return b"".join(parts)


def decode_envelope(data: bytes) -> MessageEnvelope:
    """Parse wire bytes; raises a distinct error kind per malformed field."""
    if len(data) < 4:
        raise TruncatedMessageError("magic", 4, len(data))
    if data[:4] != MAGIC:
        raise BadMagicError(bytes(data[:4]))
    if len(data) < 5:
        raise TruncatedMessageError("version", 5, len(data))
    if data[4] != VERSION:
        raise BadVersionError(data[4], VERSION)
    if len(data) < _HEADER.size:
        raise TruncatedMessageError("header", _HEADER.size, len(data))
    _, _, sender_id, seq, timestamp_ns, round_, ndims = _HEADER.unpack_from(data)
    if ndims == 0 or ndims > MAX_DIMS:
        raise ProtocolLimitError("ndims", f"ndims {ndims} outside [1, {MAX_DIMS}]")
    dims_end = _HEADER.size + 4 * ndims
    if len(data) < dims_end:
        raise TruncatedMessageError("dims", dims_end, len(data))
    shape = struct.unpack_from(f"<{ndims}I", data, _HEADER.size)
    count = 1
    for d in shape:
        count *= d
    expected = 4 * count
    got = len(data) - dims_end
    if got < expected:
        raise TruncatedMessageError("payload", expected, got)
    if got > expected:
        raise PayloadLengthError(expected, got)
    payload = np.frombuffer(data, dtype="<f4", count=count, offset=dims_end).reshape(shape)
    return MessageEnvelope(sender_id, seq, timestamp_ns, round_, payload.copy())


class NeighborBuffer:
    """Keep-latest store with one slot per registered neighbor.

    Insert and snapshot hold an internal lock, so a transport receive
    thread and the aggregation stage can share a buffer without observing
    partially applied updates.
    """

    def __init__(self, neighbor_ids, staleness_ns: int = DEFAULT_STALENESS_NS):
        self._neighbors = frozenset(int(n) for n in neighbor_ids)
        self.staleness_ns = int(staleness_ns)
        self._slots: dict[int, tuple[MessageEnvelope, int]] = {}
        self._lock = threading.Lock()

    @property
    def neighbor_ids(self) -> frozenset[int]:
        return self._neighbors

    def insert(self, env: MessageEnvelope, now_ns: int) -> bool:
        """Accept iff the slot is empty or ``env.seq`` strictly increases."""
        if env.sender_id not in self._neighbors:
            raise UnknownSenderError(env.sender_id)
        with self._lock:
            held = self._slots.get(env.sender_id)
            if held is not None and env.seq <= held[0].seq:
                return False
            self._slots[env.sender_id] = (env, now_ns)
            return True

    def insert_bytes(self, data: bytes, now_ns: int) -> bool:
        """Decode-and-insert convenience for transport receive callbacks."""
        return self.insert(decode_envelope(data), now_ns)

    def evict_stale(self, now_ns: int) -> int:
        """Drop envelopes older than the threshold; age == threshold survives."""
        with self._lock:
            return self._evict_locked(now_ns)

    def _evict_locked(self, now_ns: int) -> int:
        stale = [
            nid
            for nid, (env, _) in self._slots.items()
            if now_ns - env.timestamp_ns > self.staleness_ns
        ]
        for nid in stale:
            del self._slots[nid]
        return len(stale)

    def snapshot(self, now_ns: int, round_index: int | None = None):
        """Evict, then list live (neighbor_id, payload, age_ns) ascending by id.

        ``round_index`` restricts the view to envelopes tagged with that
        communication round.
        """
        with self._lock:
            self._evict_locked(now_ns)
            out = []
            for nid in sorted(self._slots):
                env, _ = self._slots[nid]
                if round_index is not None and env.round != round_index:
                    continue
                out.append((nid, env.payload, now_ns - env.timestamp_ns))
            return out

    def live_ids(self, now_ns: int, round_index: int | None = None) -> list[int]:
        return [nid for nid, _, _ in self.snapshot(now_ns, round_index)]

    def clear(self) -> None:
        with self._lock:
            self._slots.clear()
