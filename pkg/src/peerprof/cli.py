"""Command line for running benchmarks.

One executable, three roles::

    peerprof --server --name cluster --network tcp --network-config net.json \
             --compute echo --iterations 10005

    peerprof --client --name jetson --network tcp --network-config net.json \
             --sensor synthetic:1048576 --peer cluster --iterations 100 \
             --result-loc out --generate-plots

    peerprof --local --sensor synthetic:4096 --compute sleep:18.55:3.34 \
             --iterations 500 --result-loc out

`--network sim` runs client and server in one process against a virtual
link (delays, jitter, bandwidth, loss, and clock skew set by --sim-* flags),
which is the reproducible desk-scale path.

Exit codes: 0 success, 1 usage/config error, 2 aborted run.

The client writes metrics.json (the full metric tree), records.csv,
manifest.json, summary.md, and with --generate-plots per-metric SVG
histograms plus PNG figures — all into --result-loc (fallback: the
PEERPROF_RESULT_LOC environment variable), written atomically.
"""

from __future__ import annotations

import argparse
import os
import shutil
import sys
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError, ProfilerError, RunAborted, TransportError, UsageError
from .pipeline import RunSettings, run_client, run_local, run_server, run_sim
from .reporting import export_csv, histogram_svg, render_summary_md, summary_table
from .stages import TruncateSensor, make_compute, make_sensor
from .transport import SimLinkSpec, connect, load_network_config, serve

_ENV_RESULT_LOC = "PEERPROF_RESULT_LOC"

_HIST_METRICS = (
    ("sensing", "sensing_ns"),
    ("upload_latency", "upload_latency_ns"),
    ("inference", "inference_ns"),
    ("download_latency", "download_latency_ns"),
    ("total", "total_ns"),
)


@dataclass
class CliConfig:
    role: str
    name: str
    network: str
    network_config: str | None
    peer: str | None
    sensor: str | None
    compute: str | None
    iterations: int
    warmup: int
    result_loc: str
    generate_plots: bool
    sync_probes: int
    probe_spacing_ms: float
    calibrate: bool
    timeout_ms: float
    max_datagram: int
    truncate_bytes: int | None
    histogram_bins: int
    sim: SimLinkSpec | None


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    p = _Parser(prog="peerprof", add_help=True, description=__doc__.split("\n\n")[0])
    role = p.add_mutually_exclusive_group(required=True)
    role.add_argument("--server", action="store_true", help="run the compute side")
    role.add_argument("--client", action="store_true", help="run the sensing side")
    role.add_argument("--local", action="store_true", help="run both stages locally, no network")
    p.add_argument("--name", help="this device's name in the network config")
    p.add_argument("--network", choices=("tcp", "udp", "sim"), default="tcp")
    p.add_argument("--network-config", help="path to the JSON device map")
    p.add_argument("--peer", help="device name to benchmark against (client)")
    p.add_argument("--sensor", help="sensor selector: synthetic:<bytes>[:zero|random[:seed]], dataset:<dir>, command:<argv>")
    p.add_argument("--compute", help="compute selector: echo, checksum, sleep[:mean_ms[:std_ms[:seed]]], command:<argv>")
    p.add_argument("--iterations", type=int, default=100, help="number of trials (includes warmup)")
    p.add_argument("--warmup", type=int, default=1, help="leading iterations excluded from summaries")
    p.add_argument("--result-loc", help=f"output directory (fallback: ${_ENV_RESULT_LOC}, then ./results)")
    p.add_argument("--generate-plots", action="store_true", help="write SVG histograms and PNG figures")
    p.add_argument("--sync-probes", type=int, default=16, help="clock probe exchanges before the run")
    p.add_argument("--probe-spacing-ms", type=float, default=50.0)
    p.add_argument("--calibrate", action="store_true", help="payload sweep to refine the clock offset")
    p.add_argument("--timeout-ms", type=float, default=10_000.0)
    p.add_argument("--max-datagram", type=int, default=60_000, help="UDP frame size limit")
    p.add_argument("--truncate-bytes", type=int, help="cut samples to this size before upload (inside sensing)")
    p.add_argument("--histogram-bins", type=int, default=20)
    p.add_argument("--sim-up-ms", type=float, default=0.0, help="sim: client->server propagation delay")
    p.add_argument("--sim-down-ms", type=float, default=0.0, help="sim: server->client propagation delay")
    p.add_argument("--sim-jitter-ms", type=float, default=0.0, help="sim: uniform +/- jitter")
    p.add_argument("--sim-bandwidth-mbps", type=float, help="sim: link bandwidth in MB/s (MB = 2^20)")
    p.add_argument("--sim-loss", type=float, default=0.0, help="sim: uplink frame loss probability")
    p.add_argument("--sim-skew-ms", type=float, default=0.0, help="sim: server clock minus client clock")
    p.add_argument("--sim-seed", type=int, default=0)
    return p


def parse_args(argv) -> CliConfig:
    """Validate argv into a CliConfig; raises UsageError naming the problem."""
    args = _build_parser().parse_args(argv)
    role = "server" if args.server else "client" if args.client else "local"

    if args.iterations < 1:
        raise UsageError("--iterations must be >= 1")
    if not 0 <= args.warmup < args.iterations:
        raise UsageError("--warmup must be in 0..iterations-1")
    if args.sync_probes < 1:
        raise UsageError("--sync-probes must be >= 1")
    if args.truncate_bytes is not None and args.truncate_bytes < 1:
        raise UsageError("--truncate-bytes must be >= 1")
    if args.histogram_bins < 1:
        raise UsageError("--histogram-bins must be >= 1")

    sim = None
    if args.network == "sim":
        if role == "server":
            raise UsageError("--network sim runs both roles in one process; use --client")
        if role == "client":
            try:
                sim = SimLinkSpec(
                    up_delay_ns=int(args.sim_up_ms * 1e6),
                    down_delay_ns=int(args.sim_down_ms * 1e6),
                    jitter_ns=int(args.sim_jitter_ms * 1e6),
                    bandwidth_bytes_per_s=(
                        int(args.sim_bandwidth_mbps * 2**20)
                        if args.sim_bandwidth_mbps is not None
                        else None
                    ),
                    loss_prob=args.sim_loss,
                    clock_skew_ns=int(args.sim_skew_ms * 1e6),
                    seed=args.sim_seed,
                )
            except ValueError as exc:
                raise UsageError(f"bad --sim-* value: {exc}") from exc

    if role == "server":
        if not args.compute:
            raise UsageError("--server requires --compute")
        if not args.network_config:
            raise UsageError("--server requires --network-config")
        if not args.name:
            raise UsageError("--server requires --name")
    elif role == "client":
        if not args.sensor:
            raise UsageError("--client requires --sensor")
        if args.network == "sim":
            args.name = args.name or "client"
            args.peer = args.peer or "server"
            args.compute = args.compute or "echo"
        else:
            if not args.peer:
                raise UsageError("--client requires --peer")
            if not args.network_config:
                raise UsageError("--client requires --network-config")
            if not args.name:
                raise UsageError("--client requires --name")
    else:  # local
        if not args.sensor:
            raise UsageError("--local requires --sensor")
        if not args.compute:
            raise UsageError("--local requires --compute")

    result_loc = args.result_loc or os.environ.get(_ENV_RESULT_LOC) or "results"

    return CliConfig(
        role=role,
        name=args.name or role,
        network=args.network,
        network_config=args.network_config,
        peer=args.peer,
        sensor=args.sensor,
        compute=args.compute,
        iterations=args.iterations,
        warmup=args.warmup,
        result_loc=result_loc,
        generate_plots=args.generate_plots,
        sync_probes=args.sync_probes,
        probe_spacing_ms=args.probe_spacing_ms,
        calibrate=args.calibrate,
        timeout_ms=args.timeout_ms,
        max_datagram=args.max_datagram,
        truncate_bytes=args.truncate_bytes,
        histogram_bins=args.histogram_bins,
        sim=sim,
    )


def main(config: CliConfig) -> int:
    """Run the configured role; returns the process exit code."""
    try:
        return _run(config)
    except (UsageError, ConfigError, ValueError) as exc:
        print(f"peerprof: config error: {exc}", file=sys.stderr)
        return 1
    except (RunAborted, TransportError) as exc:
        print(f"peerprof: run aborted: {exc}", file=sys.stderr)
        return 2
    except ProfilerError as exc:
        print(f"peerprof: error: {exc}", file=sys.stderr)
        return 2


def _run(config: CliConfig) -> int:
    settings = RunSettings(
        iterations=config.iterations,
        warmup=config.warmup,
        sync_probes=config.sync_probes,
        probe_spacing_ms=config.probe_spacing_ms,
        calibrate=config.calibrate,
        timeout_ms=config.timeout_ms,
    )

    if config.role == "server":
        compute = _build_compute(config.compute)
        net = load_network_config(config.network_config, config.name)
        listener = serve(net, config.network, max_datagram=config.max_datagram)
        try:
            channel = listener.accept(timeout_ms=None)
            summary = run_server(channel, compute)
        finally:
            listener.close()
        print(
            f"served {summary.data_msgs} data messages, {summary.probes} probes, "
            f"{summary.errors} errors"
        )
        return 0

    if config.role == "local":
        sensor = _build_sensor(config)
        compute = _build_compute(config.compute)
        result = run_local(sensor, compute, settings)
    elif config.network == "sim":
        sensor = _build_sensor(config)
        compute = _build_compute(config.compute)
        result = run_sim(config.sim, sensor, compute, settings,
                         client_name=config.name, server_name=config.peer)
    else:
        sensor = _build_sensor(config)
        net = load_network_config(config.network_config, config.name)
        channel = connect(
            net,
            config.peer,
            config.network,
            timeout_ms=config.timeout_ms,
            max_datagram=config.max_datagram,
        )
        try:
            result = run_client(channel, sensor, settings, network=config.network)
        finally:
            channel.close()

    out = _write_results(result, Path(config.result_loc), config)
    print(f"wrote {len(result.records)} records to {out}")
    for line in _summary_lines(result):
        print(line)
    return 0


def _build_sensor(config: CliConfig):
    try:
        sensor = make_sensor(config.sensor)
        if config.truncate_bytes is not None:
            sensor = TruncateSensor(sensor, config.truncate_bytes)
        return sensor
    except ValueError as exc:
        raise ConfigError(f"--sensor: {exc}") from exc


def _build_compute(selector: str):
    try:
        return make_compute(selector)
    except ValueError as exc:
        raise ConfigError(f"--compute: {exc}") from exc


def _summary_lines(result) -> list[str]:
    try:
        rows = summary_table(result.records)
    except ValueError:
        return ["(no non-warmup records to summarize)"]
    text = render_summary_md(rows).decode("utf-8")
    return text.splitlines()[2:-2]


def _write_results(result, loc: Path, config: CliConfig) -> Path:
    """Assemble the results directory in a temp dir, then swap it in."""
    tmp = loc.parent / f"{loc.name}.tmp-{os.getpid()}"
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)
    try:
        (tmp / "metrics.json").write_bytes(result.tree.serialize())
        (tmp / "records.csv").write_bytes(export_csv(result.records))
        (tmp / "manifest.json").write_bytes(result.manifest.to_json())
        try:
            rows = summary_table(result.records)
        except ValueError:
            rows = []
        (tmp / "summary.md").write_bytes(render_summary_md(rows))
        if config.generate_plots:
            _write_histograms(result.records, tmp, config.histogram_bins)
            from .plots import render_figures

            render_figures(result.records, tmp)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise

    if loc.exists():
        old = loc.parent / f"{loc.name}.old-{os.getpid()}"
        if old.exists():
            shutil.rmtree(old)
        loc.rename(old)
        tmp.rename(loc)
        shutil.rmtree(old)
    else:
        tmp.rename(loc)
    return loc


def _write_histograms(records, out_dir: Path, bins: int) -> None:
    included = [r for r in records if "warmup" not in r.flags and "dropped" not in r.flags]
    for metric, fieldname in _HIST_METRICS:
        values = [getattr(r, fieldname) for r in included]
        values = [v / 1e6 for v in values if v is not None]
        if not values:
            continue
        svg = histogram_svg(values, bins, f"{metric} (ms)")
        (out_dir / f"hist_{metric}.svg").write_bytes(svg)


def entry(argv=None) -> int:
    try:
        config = parse_args(sys.argv[1:] if argv is None else argv)
    except UsageError as exc:
        print(f"peerprof: usage error: {exc}", file=sys.stderr)
        return 1
    return main(config)


if __name__ == "__main__":
    sys.exit(entry())
