"""Clock-offset estimation and one-way delay correction.

Two estimators are combined:

* a four-timestamp probe exchange over the control channel (minimum-RTT
  sample selection), giving a first offset estimate without any external
  time daemon, and
* a payload-size sweep whose measured one-way latencies are fit with
  ordinary least squares; since the ideal latency-vs-size line passes
  through zero, the fitted intercept estimates the leftover offset error,
  which can then be folded into the model as a residual correction.

Offsets are expressed as (server clock) - (client clock) in nanoseconds.
Corrected latencies may come out negative when the model over-corrects;
they are returned as-is with a flag, never clamped, because clamping would
hide exactly the error the sweep calibration needs to see.
"""

from __future__ import annotations

import math
import struct
import time
from dataclasses import dataclass, replace
from enum import Enum
from typing import NamedTuple, Sequence

from .errors import RunAborted, ThroughputUndefinedError, TransportTimeout

#: bytes in a probe-request body; keeps request and response frames the same
#: size so bandwidth-limited links delay both directions equally.
PROBE_BODY_BYTES = 16

DEFAULT_PROBE_COUNT = 16
DEFAULT_PROBE_SPACING_MS = 50.0

MB = 2**20  # byte convention used in all reported units


class SyncMethod(str, Enum):
    PROBE = "probe"
    RESIDUAL_CALIBRATED = "residual-calibrated"


class Direction(Enum):
    CLIENT_TO_SERVER = "client-to-server"
    SERVER_TO_CLIENT = "server-to-client"


@dataclass(frozen=True)
class ProbeSample:
    """Four timestamps of one probe exchange.

    t1/t4 are client send/receive (client clock); t2/t3 are server
    receive/send (server clock).
    """

    t1: int
    t2: int
    t3: int
    t4: int

    def __post_init__(self):
        if self.t4 < self.t1:
            raise ValueError("t4 precedes t1 on the client clock")
        if self.t3 < self.t2:
            raise ValueError("t3 precedes t2 on the server clock")

    @property
    def rtt_ns(self) -> int:
        return (self.t4 - self.t1) - (self.t3 - self.t2)

    @property
    def offset_ns(self) -> int:
        return _half_toward_zero((self.t2 - self.t1) + (self.t3 - self.t4))


@dataclass(frozen=True)
class ClockModel:
    """Estimated offset between server and client clocks."""

    offset_ns: int
    rtt_ns: int
    method: SyncMethod
    n_samples: int
    residual_ns: int | None = None

    def __post_init__(self):
        if self.rtt_ns < 0:
            raise ValueError("rtt_ns must be nonnegative")
        if self.method is SyncMethod.RESIDUAL_CALIBRATED and self.residual_ns is None:
            raise ValueError("calibrated model requires residual_ns")

    @property
    def effective_offset_ns(self) -> int:
        """Offset applied by corrections: probe offset plus any residual."""
        return self.offset_ns + (self.residual_ns or 0)

    def as_dict(self) -> dict:
        return {
            "offset_ns": self.offset_ns,
            "rtt_ns": self.rtt_ns,
            "method": self.method.value,
            "n_samples": self.n_samples,
            "residual_ns": self.residual_ns,
            "effective_offset_ns": self.effective_offset_ns,
        }


@dataclass(frozen=True)
class SweepPoint:
    """One payload-sweep measurement: size sent vs observed one-way ns."""

    payload_bytes: int
    measured_one_way_ns: int

    def __post_init__(self):
        if self.payload_bytes <= 0:
            raise ValueError("payload_bytes must be positive")


@dataclass(frozen=True)
class LineFit:
    slope_ns_per_byte: float
    intercept_ns: float
    r2: float


class Corrected(NamedTuple):
    """A corrected one-way latency; ``negative`` flags an over-correction."""

    ns: int
    negative: bool


def estimate_offset(samples: Sequence[ProbeSample]) -> ClockModel:
    """Offset from probe samples, using the minimum-RTT sample.

    offset = ((t2 - t1) + (t3 - t4)) / 2 of the fastest exchange, rounded
    toward zero. Exact when path delays are symmetric; biased by
    (up - down) / 2 on asymmetric paths.
    """
    if not samples:
        raise ValueError("need at least one probe sample")
    best = min(samples, key=lambda s: s.rtt_ns)
    return ClockModel(
        offset_ns=best.offset_ns,
        rtt_ns=best.rtt_ns,
        method=SyncMethod.PROBE,
        n_samples=len(samples),
    )


def fit_intercept(points: Sequence[SweepPoint]) -> LineFit:
    """Ordinary least squares of measured one-way ns on payload bytes."""
    if len(points) < 3:
        raise ValueError("need at least 3 sweep points")
    xs = [float(p.payload_bytes) for p in points]
    ys = [float(p.measured_one_way_ns) for p in points]
    n = len(xs)
    mx = math.fsum(xs) / n
    my = math.fsum(ys) / n
    sxx = math.fsum((x - mx) ** 2 for x in xs)
    if sxx == 0.0:
        raise ValueError("all payload sizes identical; fit is singular")
    slope = math.fsum((x - mx) * (y - my) for x, y in zip(xs, ys)) / sxx
    intercept = my - slope * mx
    ss_res = math.fsum((y - (intercept + slope * x)) ** 2 for x, y in zip(xs, ys))
    ss_tot = math.fsum((y - my) ** 2 for y in ys)
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return LineFit(slope_ns_per_byte=slope, intercept_ns=intercept, r2=r2)


def residual_calibrate(model: ClockModel, points: Sequence[SweepPoint]) -> ClockModel:
    """Fold the sweep intercept into the model as a residual correction.

    The sweep points should already be corrected by ``model``'s probe offset
    (the pipeline does this), so the intercept is the leftover error.
    """
    fit = fit_intercept(points)
    return replace(
        model,
        residual_ns=round(fit.intercept_ns),
        method=SyncMethod.RESIDUAL_CALIBRATED,
    )


def correct_one_way(raw_ns: int, model: ClockModel, direction: Direction) -> Corrected:
    """Remove the clock offset from a raw receiver-minus-sender latency."""
    eff = model.effective_offset_ns
    if direction is Direction.CLIENT_TO_SERVER:
        corrected = raw_ns - eff
    else:
        corrected = raw_ns + eff
    return Corrected(ns=corrected, negative=corrected < 0)


def throughput(payload_bytes: int, corrected_latency_ns: int) -> float:
    """Bytes per second for a transfer of ``payload_bytes``."""
    if corrected_latency_ns <= 0:
        raise ThroughputUndefinedError(
            f"latency {corrected_latency_ns} ns is not positive"
        )
    return payload_bytes * 1e9 / corrected_latency_ns


def collect_probes(
    channel,
    count: int = DEFAULT_PROBE_COUNT,
    spacing_ms: float = DEFAULT_PROBE_SPACING_MS,
    timeout_ms: float = 5_000.0,
) -> list[ProbeSample]:
    """Run ``count`` probe exchanges over an open channel.

    Lost probes (timeouts) are retried up to 3x count attempts; fewer
    samples than requested is fine as long as at least one survives.
    """
    from .transport import Envelope, MsgType  # local import avoids a cycle

    samples: list[ProbeSample] = []
    attempts = 0
    while len(samples) < count and attempts < count * 3:
        attempts += 1
        env = Envelope(MsgType.PROBE_REQ, payload=b"\0" * PROBE_BODY_BYTES)
        channel.send(env)
        try:
            reply, t4 = channel.recv(timeout_ms)
        except TransportTimeout:
            continue
        if reply.msg_type is not MsgType.PROBE_RESP:
            continue
        t2, t3 = struct.unpack(">qq", reply.payload[:16])
        samples.append(ProbeSample(t1=env.send_ts, t2=t2, t3=t3, t4=t4))
        if spacing_ms > 0 and len(samples) < count:
            channel.wait_ns(int(spacing_ms * 1e6))
    if not samples:
        raise RunAborted("clock probe phase got no responses")
    return samples


def probe_response_payload(t2: int, t3: int) -> bytes:
    """Server-side body of a probe response: t2 and t3 as big-endian i64."""
    return struct.pack(">qq", t2, t3)


def _half_toward_zero(v: int) -> int:
    q = abs(v) // 2
    return q if v >= 0 else -q


def wall_clock_ns() -> int:
    return time.time_ns()
