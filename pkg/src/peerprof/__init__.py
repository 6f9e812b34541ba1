"""peerprof: per-stage latency profiling for offloaded-compute pipelines.

The pieces: a serializable tree-structured metrics log that travels inside
messages (`metrics_tree`), probe-based clock-offset estimation with
payload-sweep residual calibration (`clock_sync`), framed TCP/UDP/simulated
transport (`transport`), pluggable sensor and compute stages (`stages`), the
client/server benchmark loop (`pipeline`), exports and figures (`reporting`,
`plots`), and the command line (`cli`).
"""

__version__ = "0.1.0"

from . import errors
from .clock_sync import (
    ClockModel,
    Corrected,
    Direction,
    LineFit,
    ProbeSample,
    SweepPoint,
    SyncMethod,
    correct_one_way,
    estimate_offset,
    fit_intercept,
    residual_calibrate,
    throughput,
)
from .metrics_tree import (
    COUNT,
    GROUP,
    LATENCY,
    SIZE,
    THROUGHPUT,
    MetricKind,
    MetricNode,
    SummaryStats,
    custom,
    deserialize,
    new_root,
)
from .pipeline import (
    IterationRecord,
    RunManifest,
    RunResult,
    RunSettings,
    ServerSession,
    run_client,
    run_local,
    run_server,
    run_sim,
)
from .transport import Envelope, MsgType, NetworkConfig, SimLinkSpec, SimNetwork

__all__ = [
    "COUNT",
    "GROUP",
    "LATENCY",
    "SIZE",
    "THROUGHPUT",
    "ClockModel",
    "Corrected",
    "Direction",
    "Envelope",
    "IterationRecord",
    "LineFit",
    "MetricKind",
    "MetricNode",
    "MsgType",
    "NetworkConfig",
    "ProbeSample",
    "RunManifest",
    "RunResult",
    "RunSettings",
    "ServerSession",
    "SimLinkSpec",
    "SimNetwork",
    "SummaryStats",
    "SweepPoint",
    "SyncMethod",
    "correct_one_way",
    "custom",
    "deserialize",
    "errors",
    "estimate_offset",
    "fit_intercept",
    "new_root",
    "residual_calibrate",
    "run_client",
    "run_local",
    "run_server",
    "run_sim",
    "throughput",
]
