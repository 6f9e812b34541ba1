"""Exception types shared across the profiler."""

from __future__ import annotations


class ProfilerError(Exception):
    """Base class for all errors raised by this package."""


# --- metric tree ---------------------------------------------------------


class EmptyNameError(ProfilerError):
    """A node or custom-kind label was empty (or too long)."""


class DuplicateChildError(ProfilerError):
    """A child with this name already exists under the parent."""


class NotStartedError(ProfilerError):
    """Timing operation on a node that has no start timestamp."""


class AlreadyStoppedError(ProfilerError):
    """stop was called twice on the same node."""


class StopBeforeStartError(ProfilerError):
    """Same-clock stop timestamp precedes the start timestamp."""


class NegativeQuantityError(ProfilerError):
    """A size/count/throughput value was negative."""


class DepthLimitError(ProfilerError):
    """Tree exceeds the depth cap (guards adversarial wire metadata)."""


class MalformedError(ProfilerError):
    """Bytes could not be decoded into a valid tree or frame."""


class UnknownVersionError(ProfilerError):
    """Serialized tree declares an encoding version we do not speak."""


class NoMatchError(ProfilerError):
    """A metric path matched no closed node."""


# --- transport -----------------------------------------------------------


class TransportError(ProfilerError):
    """Base class for channel/framing failures."""


class ProtocolVersionError(TransportError):
    """Peer speaks a different wire-format version."""


class HandshakeError(TransportError):
    """Connection handshake failed (bad reply or name mismatch)."""


class SequenceError(TransportError):
    """Received sequence number regressed for a sender."""


class UnknownDeviceError(TransportError):
    """Device name not present in the network configuration."""


class PayloadTooLargeError(TransportError):
    """Frame exceeds the datagram size limit; nothing was sent."""


class TransportTimeout(TransportError):
    """No frame arrived within the receive timeout."""


class ConnectError(TransportError):
    """Could not establish a connection to the peer."""


class BindError(TransportError):
    """Could not bind the listening socket."""


class ChannelClosed(TransportError):
    """Peer closed the connection."""


# --- stages / pipeline ----------------------------------------------------


class StageFailedError(ProfilerError):
    """A sensor or compute stage failed."""

    def __init__(self, message: str, exit_code: int | None = None):
        super().__init__(message)
        self.exit_code = exit_code


class ThroughputUndefinedError(ProfilerError):
    """Throughput requested for a nonpositive latency."""


class RunAborted(ProfilerError):
    """Benchmark run gave up (too many drops, or no clock sync)."""


# --- cli -------------------------------------------------------------------


class UsageError(ProfilerError):
    """Command line arguments were invalid."""


class ConfigError(ProfilerError):
    """A configuration file or selector could not be used."""
