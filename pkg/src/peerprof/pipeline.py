"""Offloaded-compute benchmark loop.

One iteration on the client: sample the sensor, upload the datum with an
open upload timer riding in the message metadata, wait for the result,
merge the server's subtree back into the local log, correct the raw
cross-clock timings with the clock model, and emit one record with all
eight transfer metrics. The server mirrors it: stop the in-flight upload
timer with its own clock, run the compute stage inside a timed node, and
attach the updated subtree to the reply.

A transport failure drops the iteration (flagged, loop continues); more
than half of the iterations dropping aborts the run. Warmup iterations run
normally but are flagged so summaries can exclude them.

Sequential request/response only: one client session talks to one server
session at a time.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

from . import __version__
from .clock_sync import (
    DEFAULT_PROBE_COUNT,
    DEFAULT_PROBE_SPACING_MS,
    ClockModel,
    Direction,
    SweepPoint,
    collect_probes,
    correct_one_way,
    estimate_offset,
    fit_intercept,
    probe_response_payload,
    residual_calibrate,
    throughput,
)
from .errors import (
    ChannelClosed,
    MalformedError,
    ProfilerError,
    RunAborted,
    StageFailedError,
    TransportTimeout,
)
from .metrics_tree import LATENCY, SIZE, THROUGHPUT, MetricNode, deserialize, new_root
from .transport import Envelope, MsgType, SimLinkSpec, SimNetwork

BYE = b"BYE"

#: payload sizes for the offset-residual calibration sweep (doubling steps)
DEFAULT_SWEEP_SIZES = tuple(1024 << k for k in range(8))
DEFAULT_SWEEP_REPEATS = 5

_MIN_ATTEMPTS_BEFORE_ABORT = 8


@dataclass
class RunSettings:
    """Knobs for one benchmark run."""

    iterations: int
    warmup: int = 1
    sync_probes: int = DEFAULT_PROBE_COUNT
    probe_spacing_ms: float = DEFAULT_PROBE_SPACING_MS
    calibrate: bool = False
    calib_sizes: tuple = DEFAULT_SWEEP_SIZES
    calib_repeats: int = DEFAULT_SWEEP_REPEATS
    timeout_ms: float = 10_000.0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0 <= self.warmup < self.iterations:
            raise ValueError("warmup must be in 0..iterations-1")


@dataclass
class IterationRecord:
    """The per-iteration metrics; network fields are None on local runs
    and on dropped iterations."""

    iteration: int
    sensing_ns: int | None = None
    upload_size_bytes: int | None = None
    upload_latency_ns: int | None = None
    upload_throughput_bps: float | None = None
    inference_ns: int | None = None
    download_size_bytes: int | None = None
    download_latency_ns: int | None = None
    download_throughput_bps: float | None = None
    total_ns: int | None = None
    flags: list = field(default_factory=list)


@dataclass
class RunManifest:
    """Enough configuration snapshot to rerun the benchmark."""

    artifact_version: str
    role: str
    started_unix_ns: int
    iterations: int
    warmup: int
    network: str
    self_name: str
    peer: str | None = None
    sensor: str | None = None
    compute: str | None = None
    sync_probes: int = DEFAULT_PROBE_COUNT
    probe_spacing_ms: float = DEFAULT_PROBE_SPACING_MS
    calibrate: bool = False
    sim: dict | None = None
    clock_model: dict | None = None
    calibration_fit: dict | None = None

    def to_json(self) -> bytes:
        import json

        return json.dumps(asdict(self), indent=2).encode("utf-8") + b"\n"


@dataclass
class RunResult:
    records: list
    tree: MetricNode
    manifest: RunManifest
    clock_model: ClockModel | None


@dataclass
class ServerSummary:
    probes: int = 0
    data_msgs: int = 0
    errors: int = 0
    bytes_in: int = 0
    probes_before_first_data: int = 0


class ServerSession:
    """Server side of one client session; usable inline on the sim link."""

    def __init__(self, compute):
        self.compute = compute
        self.summary = ServerSummary()

    def handle(self, channel, env: Envelope, recv_ts: int) -> bool:
        """Process one envelope; returns False when the session is over."""
        if env.msg_type is MsgType.PROBE_REQ:
            self.summary.probes += 1
            if self.summary.data_msgs == 0:
                self.summary.probes_before_first_data += 1
            t3 = channel.clock()
            channel.send(
                Envelope(MsgType.PROBE_RESP, payload=probe_response_payload(recv_ts, t3))
            )
            return True
        if env.msg_type is MsgType.CONTROL:
            return env.payload != BYE
        if env.msg_type is MsgType.RESULT:
            return True  # clients never send results; ignore
        # DATA
        self.summary.data_msgs += 1
        self.summary.bytes_in += len(env.payload)
        if env.metadata is None:
            self._error_reply(channel, "missing-metadata")
            return True
        try:
            remote = deserialize(env.metadata)
        except ProfilerError:
            self._error_reply(channel, "malformed-metadata")
            return True
        upload = remote.child("upload")
        if upload is not None and upload.start_ts is not None and upload.stop_ts is None:
            upload.stop_timing(recv_ts, cross_clock=True)

        inference = remote.start_timing("inference", LATENCY, now=channel.clock())
        try:
            out, inference_ns = self.compute.infer(env.payload)
        except StageFailedError as exc:
            self.summary.errors += 1
            self._error_reply(channel, "stage-failed", exit_code=exc.exit_code)
            return True
        channel.advance(inference_ns)  # no-op on real clocks
        inference.stop_timing(channel.clock())

        serialize_result = remote.start_timing(
            "serialize_result", LATENCY, now=channel.clock()
        )
        payload = bytes(out)
        serialize_result.stop_timing(channel.clock())
        remote.record_value("result_size", SIZE, len(payload), "bytes")

        channel.send(Envelope(MsgType.RESULT, payload=payload, metadata=remote.serialize()))
        return True

    def _error_reply(self, channel, code: str, exit_code=None) -> None:
        import json

        body = {"error": code}
        if exit_code is not None:
            body["exit"] = exit_code
        channel.send(Envelope(MsgType.CONTROL, payload=json.dumps(body).encode()))


def run_server(channel, compute, idle_timeout_ms: float = 60_000.0) -> ServerSummary:
    """Serve one client session until BYE, disconnect, or idle timeout."""
    session = ServerSession(compute)
    while True:
        try:
            env, recv_ts = channel.recv(idle_timeout_ms)
        except (ChannelClosed, TransportTimeout):
            break
        except MalformedError:
            continue  # damaged frame; maybe the next one is fine
        if not session.handle(channel, env, recv_ts):
            break
    return session.summary


def run_client(
    channel,
    sensor,
    settings: RunSettings,
    network: str = "tcp",
    compute_desc: str | None = None,
    sim_spec: SimLinkSpec | None = None,
) -> RunResult:
    """Probe, optionally calibrate, then run the benchmark loop."""
    started = time.time_ns()
    samples = collect_probes(
        channel, settings.sync_probes, settings.probe_spacing_ms, settings.timeout_ms
    )
    model = estimate_offset(samples)
    calibration_fit = None
    if settings.calibrate:
        points = calibration_sweep(
            channel, model, settings.calib_sizes, settings.calib_repeats, settings.timeout_ms
        )
        fit = fit_intercept(points)
        calibration_fit = {
            "slope_ns_per_byte": fit.slope_ns_per_byte,
            "intercept_ns": fit.intercept_ns,
            "r2": fit.r2,
            "points": len(points),
        }
        model = residual_calibrate(model, points)

    tree = new_root("run")
    records: list[IterationRecord] = []
    drops = 0
    for i in range(settings.iterations):
        rec = _client_iteration(channel, sensor, tree, model, i, settings)
        records.append(rec)
        if "dropped" in rec.flags:
            drops += 1
        attempts = i + 1
        if attempts >= _MIN_ATTEMPTS_BEFORE_ABORT and drops * 2 > attempts:
            raise RunAborted(f"{drops}/{attempts} iterations dropped")

    try:
        channel.send(Envelope(MsgType.CONTROL, payload=BYE))
    except ProfilerError:
        pass

    manifest = RunManifest(
        artifact_version=__version__,
        role="client",
        started_unix_ns=started,
        iterations=settings.iterations,
        warmup=settings.warmup,
        network=network,
        self_name=channel.self_name,
        peer=channel.peer_name,
        sensor=_describe(sensor),
        compute=compute_desc,
        sync_probes=settings.sync_probes,
        probe_spacing_ms=settings.probe_spacing_ms,
        calibrate=settings.calibrate,
        sim=sim_spec.as_dict() if sim_spec else None,
        clock_model=model.as_dict(),
        calibration_fit=calibration_fit,
    )
    return RunResult(records=records, tree=tree, manifest=manifest, clock_model=model)


def run_sim(spec: SimLinkSpec, sensor, compute, settings: RunSettings,
            client_name: str = "client", server_name: str = "server") -> RunResult:
    """Single-process run: client loop against an inline server on the
    virtual link."""
    net = SimNetwork(spec)
    client = net.client_channel(client_name, server_name)
    session = ServerSession(compute)
    net.set_server_handler(session.handle)
    result = run_client(
        client,
        sensor,
        settings,
        network="sim",
        compute_desc=_describe(compute),
        sim_spec=spec,
    )
    result.server_summary = session.summary
    result.sim_network = net  # ground-truth delivery log for oracles
    return result


def run_local(sensor, compute, settings: RunSettings) -> RunResult:
    """The same loop without a network: sensing, inference, total only."""
    started = time.time_ns()
    clock = time.time_ns
    tree = new_root("run")
    records: list[IterationRecord] = []
    drops = 0
    for i in range(settings.iterations):
        flags = ["warmup"] if i < settings.warmup else []
        rec = IterationRecord(iteration=i, flags=flags)
        it_node = tree.start_timing(f"iteration-{i:06d}", LATENCY, now=clock())
        try:
            sensing = it_node.start_timing("sensing", LATENCY, now=clock())
            data, _ = sensor.sample()
            sensing.stop_timing(clock())
            rec.sensing_ns = sensing.value

            inference = it_node.start_timing("inference", LATENCY, now=clock())
            compute.infer(data)
            inference.stop_timing(clock())
            rec.inference_ns = inference.value
        except StageFailedError:
            flags.append("dropped")
            it_node.warning = "dropped"
            drops += 1
        if "dropped" not in flags:
            it_node.stop_timing(clock())
            rec.total_ns = it_node.value
        records.append(rec)
        attempts = i + 1
        if attempts >= _MIN_ATTEMPTS_BEFORE_ABORT and drops * 2 > attempts:
            raise RunAborted(f"{drops}/{attempts} iterations dropped")

    manifest = RunManifest(
        artifact_version=__version__,
        role="local",
        started_unix_ns=started,
        iterations=settings.iterations,
        warmup=settings.warmup,
        network="none",
        self_name="local",
        sensor=_describe(sensor),
        compute=_describe(compute),
        sync_probes=0,
        probe_spacing_ms=0.0,
    )
    return RunResult(records=records, tree=tree, manifest=manifest, clock_model=None)


def calibration_sweep(
    channel,
    model: ClockModel,
    sizes=DEFAULT_SWEEP_SIZES,
    repeats: int = DEFAULT_SWEEP_REPEATS,
    timeout_ms: float = 10_000.0,
) -> list[SweepPoint]:
    """Measure probe-corrected one-way latency across payload sizes.

    The returned points already have the model's probe offset removed, so a
    least-squares intercept over them is the leftover offset error.
    """
    import struct

    max_datagram = getattr(channel, "max_datagram", None)
    usable = [
        s for s in sizes if max_datagram is None or s + 512 <= max_datagram
    ]
    points: list[SweepPoint] = []
    for size in usable:
        for _ in range(repeats):
            env = Envelope(MsgType.PROBE_REQ, payload=bytes(size))
            channel.send(env)
            try:
                reply, _ = channel.recv(timeout_ms)
            except TransportTimeout:
                continue
            if reply.msg_type is not MsgType.PROBE_RESP:
                continue
            (t2,) = struct.unpack(">q", reply.payload[:8])
            raw = t2 - env.send_ts
            points.append(SweepPoint(size, raw - model.offset_ns))
    if len(points) < 3:
        raise RunAborted("calibration sweep collected fewer than 3 points")
    return points


# --- client iteration internals ------------------------------------------------


def _client_iteration(channel, sensor, tree, model, i, settings) -> IterationRecord:
    flags = ["warmup"] if i < settings.warmup else []
    rec = IterationRecord(iteration=i, flags=flags)
    tag = f"remote-{i:06d}"
    it_node = tree.start_timing(f"iteration-{i:06d}", LATENCY, now=channel.clock())

    sensing = it_node.start_timing("sensing", LATENCY, now=channel.clock())
    try:
        data, sensing_ns = sensor.sample()
    except StageFailedError:
        sensing.stop_timing(channel.clock())
        return _drop(it_node, channel, rec, "sensor-failed")
    channel.advance(sensing_ns)
    sensing.stop_timing(channel.clock())
    rec.sensing_ns = sensing.value
    rec.upload_size_bytes = len(data)
    it_node.record_value("upload_size", SIZE, len(data), "bytes")

    remote = new_root(tag)
    remote.start_timing("upload", LATENCY, now=channel.clock())
    metadata = remote.serialize()  # metadata serialization counts as upload
    env = Envelope(MsgType.DATA, payload=data, metadata=metadata)
    try:
        channel.send(env)
        reply, recv_ts, remote_back = _await_reply(channel, tag, settings.timeout_ms)
    except (TransportTimeout, ChannelClosed, MalformedError) as exc:
        return _drop(it_node, channel, rec, _drop_reason(exc))
    if reply.msg_type is MsgType.CONTROL:
        return _drop(it_node, channel, rec, "server-error")

    download = it_node.start_timing("download", LATENCY, now=reply.send_ts)
    download.stop_timing(recv_ts, cross_clock=True)
    it_node.merge_remote(remote_back)

    upload_back = remote_back.child("upload")
    inference_back = remote_back.child("inference")
    if upload_back is None or upload_back.value is None or inference_back is None:
        return _drop(it_node, channel, rec, "bad-metadata")

    rec.inference_ns = inference_back.value
    rec.download_size_bytes = len(reply.payload)

    up = correct_one_way(upload_back.value, model, Direction.CLIENT_TO_SERVER)
    down = correct_one_way(download.value, model, Direction.SERVER_TO_CLIENT)
    rec.upload_latency_ns = up.ns
    rec.download_latency_ns = down.ns
    it_node.record_value("upload_latency", LATENCY, up.ns, "ns")
    it_node.record_value("download_latency", LATENCY, down.ns, "ns")
    it_node.record_value("download_size", SIZE, len(reply.payload), "bytes")
    if up.negative or down.negative:
        flags.append("negative-corrected-latency")
    if up.ns > 0:
        rec.upload_throughput_bps = throughput(len(data), up.ns)
        it_node.record_value(
            "upload_throughput", THROUGHPUT, rec.upload_throughput_bps, "bytes/s"
        )
    if down.ns > 0:
        rec.download_throughput_bps = throughput(len(reply.payload), down.ns)
        it_node.record_value(
            "download_throughput", THROUGHPUT, rec.download_throughput_bps, "bytes/s"
        )

    it_node.stop_timing(channel.clock())
    rec.total_ns = it_node.value
    return rec


def _await_reply(channel, tag: str, timeout_ms: float):
    """Receive until the reply for this iteration arrives.

    Stale frames (late results of earlier iterations, leftover probe
    responses) are discarded. Control frames are returned: they carry the
    server's error replies.
    """
    deadline = channel.clock() + int(timeout_ms * 1e6)
    while True:
        remaining_ms = (deadline - channel.clock()) / 1e6
        if remaining_ms <= 0:
            raise TransportTimeout(f"no reply for {tag} within {timeout_ms} ms")
        reply, recv_ts = channel.recv(remaining_ms)
        if reply.msg_type is MsgType.CONTROL:
            return reply, recv_ts, None
        if reply.msg_type is MsgType.RESULT and reply.metadata is not None:
            remote_back = deserialize(reply.metadata)
            if remote_back.name == tag:
                return reply, recv_ts, remote_back
        # anything else is stale; keep waiting


def _drop(it_node, channel, rec: IterationRecord, reason: str) -> IterationRecord:
    # The iteration node stays open: an absent total keeps tree summaries
    # consistent with the record (whose total is None).
    rec.flags.append("dropped")
    rec.flags.append(reason)
    it_node.warning = "dropped"
    return rec


def _drop_reason(exc) -> str:
    if isinstance(exc, TransportTimeout):
        return "timeout"
    if isinstance(exc, ChannelClosed):
        return "channel-closed"
    return "malformed-reply"


def _describe(stage) -> str:
    describe = getattr(stage, "describe", None)
    return describe() if describe else type(stage).__name__
