"""Pluggable sensor (data source) and compute stages.

Sensors produce one datum per sample() call together with the wall-time cost
of producing it; compute stages map input bytes to output bytes and report
the time spent. External programs plug in as child processes: payload on
stdin, result on stdout, exit 0 or the stage fails.

Stages never mutate their inputs. Seeded stages are bit-reproducible: the
same seed yields the same draw sequence across runs.
"""

from __future__ import annotations

import os
import subprocess
import time
import zlib
from pathlib import Path
from random import Random

from .errors import StageFailedError

MAX_SYNTHETIC_BYTES = 2**30
DEFAULT_STAGE_TIMEOUT_S = 30.0


def _elapsed(t0: int) -> int:
    return time.perf_counter_ns() - t0


# --- sensors ----------------------------------------------------------------


class SyntheticSensor:
    """Generates payloads of a fixed size: zero-filled or seeded-random."""

    def __init__(self, size_bytes: int, fill: str = "zero", seed: int = 0):
        if not 0 < size_bytes <= MAX_SYNTHETIC_BYTES:
            raise ValueError(f"size must be in 1..{MAX_SYNTHETIC_BYTES}")
        if fill not in ("zero", "random"):
            raise ValueError(f"unknown fill {fill!r}")
        self.size_bytes = size_bytes
        self.fill = fill
        self.seed = seed
        self._rng = Random(seed)

    def sample(self) -> tuple[bytes, int]:
        t0 = time.perf_counter_ns()
        if self.fill == "zero":
            data = bytes(self.size_bytes)
        else:
            data = self._rng.randbytes(self.size_bytes)
        return data, _elapsed(t0)

    def describe(self) -> str:
        if self.fill == "zero":
            return f"synthetic:{self.size_bytes}"
        return f"synthetic:{self.size_bytes}:random:{self.seed}"


class DatasetDirSensor:
    """Serves files from a directory in lexicographic order, cycling."""

    def __init__(self, path):
        self.path = Path(path)
        if not self.path.is_dir():
            raise ValueError(f"dataset directory {self.path} does not exist")
        self._files = sorted(p for p in self.path.iterdir() if p.is_file())
        if not self._files:
            raise ValueError(f"dataset directory {self.path} is empty")
        self._index = 0
        self.wraps = 0

    def sample(self) -> tuple[bytes, int]:
        t0 = time.perf_counter_ns()
        path = self._files[self._index]
        self._index += 1
        if self._index == len(self._files):
            self._index = 0
            self.wraps += 1
        try:
            data = path.read_bytes()
        except OSError as exc:
            raise StageFailedError(f"unreadable dataset file {path}: {exc}") from exc
        return data, _elapsed(t0)

    def describe(self) -> str:
        return f"dataset:{self.path}"


class CommandSensor:
    """Runs a child process per sample and captures its stdout."""

    def __init__(self, argv, timeout_s: float = DEFAULT_STAGE_TIMEOUT_S):
        if not argv:
            raise ValueError("command sensor needs an argv")
        self.argv = list(argv)
        self.timeout_s = timeout_s

    def sample(self) -> tuple[bytes, int]:
        t0 = time.perf_counter_ns()
        out = _run_child(self.argv, None, self.timeout_s)
        return out, _elapsed(t0)

    def describe(self) -> str:
        return "command:" + " ".join(self.argv)


class TruncateSensor:
    """Pre-upload transform: cut the sample to a target size.

    Stands in for on-device downsampling; the cut happens inside the
    sensing measurement, so it inflates sensing time and deflates upload
    size, matching how resize-before-send behaves.
    """

    def __init__(self, inner, target_bytes: int):
        if target_bytes <= 0:
            raise ValueError("target_bytes must be positive")
        self.inner = inner
        self.target_bytes = target_bytes

    def sample(self) -> tuple[bytes, int]:
        t0 = time.perf_counter_ns()
        data, _ = self.inner.sample()
        return data[: self.target_bytes], _elapsed(t0)

    def describe(self) -> str:
        return f"{self.inner.describe()}|truncate:{self.target_bytes}"


# --- compute stages -----------------------------------------------------------


class EchoCompute:
    """Returns its input unchanged."""

    def infer(self, data: bytes) -> tuple[bytes, int]:
        t0 = time.perf_counter_ns()
        return data, _elapsed(t0)

    def describe(self) -> str:
        return "echo"


class ChecksumCompute:
    """Returns the CRC32 of the input as 4 big-endian bytes."""

    def infer(self, data: bytes) -> tuple[bytes, int]:
        t0 = time.perf_counter_ns()
        out = (zlib.crc32(data) & 0xFFFFFFFF).to_bytes(4, "big")
        return out, _elapsed(t0)

    def describe(self) -> str:
        return "checksum"


class SleepCompute:
    """Emulates a compute stage by sleeping a truncated-normal duration.

    Durations are drawn from N(mean_ms, std_ms) redrawn until nonnegative;
    the sleep spin-finishes the last millisecond so the realized duration
    tracks the draw to within microseconds. Output is empty (the stage
    models time, not data).
    """

    def __init__(self, mean_ms: float, std_ms: float = 0.0, seed: int = 0):
        if mean_ms <= 0:
            raise ValueError("mean_ms must be positive")
        if std_ms < 0:
            raise ValueError("std_ms must be nonnegative")
        self.mean_ms = mean_ms
        self.std_ms = std_ms
        self.seed = seed
        self._rng = Random(seed)

    def draw_duration_ns(self) -> int:
        while True:
            d_ms = self._rng.gauss(self.mean_ms, self.std_ms)
            if d_ms >= 0:
                return int(d_ms * 1e6)

    def infer(self, data: bytes) -> tuple[bytes, int]:
        t0 = time.perf_counter_ns()
        _sleep_precise_ns(self.draw_duration_ns())
        return b"", _elapsed(t0)

    def describe(self) -> str:
        return f"sleep:{self.mean_ms}:{self.std_ms}:{self.seed}"


class CommandCompute:
    """Pipes the payload through a child process."""

    def __init__(self, argv, timeout_s: float = DEFAULT_STAGE_TIMEOUT_S):
        if not argv:
            raise ValueError("command compute needs an argv")
        self.argv = list(argv)
        self.timeout_s = timeout_s

    def infer(self, data: bytes) -> tuple[bytes, int]:
        t0 = time.perf_counter_ns()
        out = _run_child(self.argv, data, self.timeout_s)
        return out, _elapsed(t0)

    def describe(self) -> str:
        return "command:" + " ".join(self.argv)


def _run_child(argv, stdin_data: bytes | None, timeout_s: float) -> bytes:
    try:
        proc = subprocess.run(
            argv,
            input=stdin_data,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            timeout=timeout_s,
        )
    except subprocess.TimeoutExpired as exc:
        raise StageFailedError(f"{argv[0]} timed out after {timeout_s}s") from exc
    except OSError as exc:
        raise StageFailedError(f"cannot run {argv[0]}: {exc}") from exc
    if proc.returncode != 0:
        tail = proc.stderr[-200:].decode("utf-8", "replace") if proc.stderr else ""
        raise StageFailedError(
            f"{argv[0]} exited {proc.returncode}: {tail}", exit_code=proc.returncode
        )
    return proc.stdout


def _sleep_precise_ns(ns: int) -> None:
    deadline = time.perf_counter_ns() + ns
    coarse = ns - 1_200_000  # leave ~1.2 ms for the spin tail
    if coarse > 0:
        time.sleep(coarse / 1e9)
    while time.perf_counter_ns() < deadline:
        pass


# --- module-level ops matching the operation surface ---------------------------


def sample(sensor) -> tuple[bytes, int]:
    """Next datum from ``sensor`` plus the ns spent producing it."""
    return sensor.sample()


def infer(compute, data: bytes) -> tuple[bytes, int]:
    """Run ``compute`` on ``data``; returns output bytes and elapsed ns."""
    return compute.infer(data)


# --- cli selectors ---------------------------------------------------------------


def make_sensor(selector: str):
    """Build a sensor from a CLI selector.

    ``synthetic:<bytes>[:zero|random[:<seed>]]``, ``dataset:<dir>``, or
    ``command:<shell words>``.
    """
    import shlex

    head, _, rest = selector.partition(":")
    if head == "synthetic":
        parts = rest.split(":") if rest else []
        if not parts or not parts[0]:
            raise ValueError("synthetic sensor needs a size, e.g. synthetic:1048576")
        size = _parse_size(parts[0])
        fill = parts[1] if len(parts) > 1 else "zero"
        seed = int(parts[2]) if len(parts) > 2 else 0
        return SyntheticSensor(size, fill=fill, seed=seed)
    if head == "dataset":
        if not rest:
            raise ValueError("dataset sensor needs a directory")
        return DatasetDirSensor(rest)
    if head == "command":
        argv = shlex.split(rest)
        return CommandSensor(argv)
    raise ValueError(f"unknown sensor selector {selector!r}")


def make_compute(selector: str):
    """Build a compute stage from a CLI selector.

    ``echo``, ``checksum``, ``sleep[:<mean_ms>[:<std_ms>[:<seed>]]]`` (default
    18.55/3.34 ms, the stock local-inference emulation profile), or
    ``command:<shell words>``.
    """
    import shlex

    head, _, rest = selector.partition(":")
    if head == "echo":
        return EchoCompute()
    if head == "checksum":
        return ChecksumCompute()
    if head == "sleep":
        parts = rest.split(":") if rest else []
        mean_ms = float(parts[0]) if parts and parts[0] else 18.55
        std_ms = float(parts[1]) if len(parts) > 1 else 3.34
        seed = int(parts[2]) if len(parts) > 2 else 0
        return SleepCompute(mean_ms, std_ms, seed=seed)
    if head == "command":
        argv = shlex.split(rest)
        return CommandCompute(argv)
    raise ValueError(f"unknown compute selector {selector!r}")


def _parse_size(text: str) -> int:
    text = text.strip().lower()
    mult = 1
    for suffix, m in (("kb", 2**10), ("mb", 2**20), ("gb", 2**30), ("k", 2**10), ("m", 2**20), ("g", 2**30)):
        if text.endswith(suffix):
            text = text[: -len(suffix)]
            mult = m
            break
    return int(text) * mult
