"""Exception types shared across the runtime.

Every error raised by this package derives from :class:`NeuromeshError`, so
callers can catch runtime failures without swallowing genuine bugs.
"""

from __future__ import annotations


class NeuromeshError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(NeuromeshError, ValueError):
    """Tensor dimensions do not match what an operation requires."""


class WeightFormatError(NeuromeshError, ValueError):
    """A weight file is malformed or does not match the expected layout."""


class WireError(NeuromeshError, ValueError):
    """Base class for wire-format encode/decode failures.

    ``field`` names the offending wire field.
    """

    def __init__(self, field: str, message: str):
        super().__init__(message)
        self.field = field


class BadMagicError(WireError):
    def __init__(self, got: bytes):
        super().__init__("magic", f"bad magic: expected b'NMSH', got {got!r}")


class BadVersionError(WireError):
    def __init__(self, got: int, expected: int):
        super().__init__("version", f"unsupported version {got}, expected {expected}")


class TruncatedMessageError(WireError):
    def __init__(self, field: str, needed: int, available: int):
        super().__init__(
            field, f"truncated {field}: need {needed} bytes, have {available}"
        )


class PayloadLengthError(WireError):
    def __init__(self, expected: int, got: int):
        super().__init__(
            "payload", f"payload length mismatch: shape implies {expected} bytes, got {got}"
        )


class ProtocolLimitError(WireError):
    """A field value exceeds a documented protocol constant."""


class UnknownSenderError(NeuromeshError, KeyError):
    """A message arrived from an agent that is not a registered neighbor."""

    def __init__(self, sender_id: int):
        super().__init__(f"unknown sender {sender_id}")
        self.sender_id = sender_id


class NeighborhoodTimeoutError(NeuromeshError, TimeoutError):
    """Blocking aggregation gave up waiting; ``missing`` lists silent neighbors."""

    def __init__(self, missing: list[int], waited_ns: int):
        super().__init__(
            f"timed out after {waited_ns / 1e6:.1f} ms waiting for neighbors {sorted(missing)}"
        )
        self.missing = sorted(missing)
        self.waited_ns = waited_ns


class InsufficientNeighborsError(NeuromeshError, RuntimeError):
    """Best-effort aggregation found fewer live neighbors than required."""

    def __init__(self, live: int, required: int):
        super().__init__(f"only {live} live neighbors, need at least {required}")
        self.live = live
        self.required = required


class TopologyError(NeuromeshError, ValueError):
    """A send was attempted over a link that does not exist."""


class MeasurementError(NeuromeshError, RuntimeError):
    """A link-quality measurement could not produce valid statistics."""


class ConfigError(NeuromeshError, ValueError):
    """A scenario config is invalid; ``path`` is the dotted field path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
