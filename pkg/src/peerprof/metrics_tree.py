"""Tree-structured metrics log with serializable nodes.

Nodes represent timed or measured events of a benchmark run. A subtree can be
serialized, shipped inside a network message, and grafted into the tree on the
receiving side, which is how a single log ends up holding timings that span
two devices and two clocks.

Encoding is canonical JSON: UTF-8, object keys in the fixed order
``name, kind, start_ts, stop_ts, value, unit, warning, children``, absent
fields omitted, no insignificant whitespace, integer nanosecond timestamps,
shortest round-trip decimals for real values. The same tree always produces
the same bytes, and ``deserialize(serialize(t)) == t`` field for field.

Timestamps are nanoseconds since the Unix epoch (signed 64-bit). A latency
node closed with timestamps from two different clocks may carry a negative
value; it is kept as-is (with a ``cross-clock-raw`` warning) because the
offset calibration downstream needs the raw number.

Trees are single-owner: mutate from one thread at a time.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .errors import (
    AlreadyStoppedError,
    DepthLimitError,
    DuplicateChildError,
    EmptyNameError,
    MalformedError,
    NegativeQuantityError,
    NoMatchError,
    NotStartedError,
    StopBeforeStartError,
    UnknownVersionError,
)

MAX_DEPTH = 64
MAX_CHILDREN = 100_000
MAX_NAME_BYTES = 256
MAX_CUSTOM_LABEL_BYTES = 64

_I64_MAX = 2**63 - 1

CROSS_CLOCK_WARNING = "cross-clock-raw"


@dataclass(frozen=True)
class MetricKind:
    """What a node measures. Use the module constants or :func:`custom`."""

    name: str
    label: str | None = None

    def encode(self) -> str:
        if self.name == "custom":
            return f"custom:{self.label}"
        return self.name

    @property
    def nonnegative(self) -> bool:
        """Whether recorded values of this kind must be >= 0."""
        return self.name in ("size", "throughput", "count")


LATENCY = MetricKind("latency")
SIZE = MetricKind("size")
THROUGHPUT = MetricKind("throughput")
COUNT = MetricKind("count")
GROUP = MetricKind("custom", "group")  # structural container nodes

_BUILTIN_KINDS = {k.name: k for k in (LATENCY, SIZE, THROUGHPUT, COUNT)}


def custom(label: str) -> MetricKind:
    """A user-defined kind, e.g. tokens, power draw, temperature."""
    _check_label(label)
    return MetricKind("custom", label)


def _check_label(label: str) -> None:
    if not isinstance(label, str) or not label:
        raise EmptyNameError("custom kind label must be non-empty")
    if len(label.encode("utf-8")) > MAX_CUSTOM_LABEL_BYTES:
        raise EmptyNameError(
            f"custom kind label exceeds {MAX_CUSTOM_LABEL_BYTES} bytes"
        )


def _decode_kind(text: str) -> MetricKind:
    if text in _BUILTIN_KINDS:
        return _BUILTIN_KINDS[text]
    if text.startswith("custom:"):
        label = text[len("custom:"):]
        try:
            _check_label(label)
        except EmptyNameError as exc:
            raise MalformedError(f"bad custom kind {text!r}") from exc
        return MetricKind("custom", label)
    raise MalformedError(f"unknown metric kind {text!r}")


def _check_name(name: str) -> None:
    if not isinstance(name, str) or not name:
        raise EmptyNameError("node name must be non-empty")
    if len(name.encode("utf-8")) > MAX_NAME_BYTES:
        raise EmptyNameError(f"node name exceeds {MAX_NAME_BYTES} bytes")


@dataclass(frozen=True)
class SummaryStats:
    """Sample statistics over matched node values."""

    n: int
    mean: float
    std: float
    min: float
    max: float


def basic_stats(values) -> SummaryStats:
    """Mean / sample std (n-1; 0 when n == 1) / min / max of ``values``.

    Shared by tree summaries and the report tables so both paths produce
    bit-identical numbers for the same inputs.
    """
    vals = list(values)
    if not vals:
        raise NoMatchError("no values to summarize")
    n = len(vals)
    mean = math.fsum(vals) / n
    if n > 1:
        std = math.sqrt(math.fsum((v - mean) ** 2 for v in vals) / (n - 1))
    else:
        std = 0.0
    return SummaryStats(n=n, mean=mean, std=std, min=min(vals), max=max(vals))


@dataclass
class MetricNode:
    """One event in the log: a timed span, a recorded value, or a container.

    ``value`` of a latency node is derived (stop - start, in ns) when the
    node is stopped; other kinds carry whatever was recorded.
    """

    name: str
    kind: MetricKind = GROUP
    start_ts: int | None = None
    stop_ts: int | None = None
    value: int | float | None = None
    unit: str | None = None
    warning: str | None = None
    children: list["MetricNode"] = field(default_factory=list)

    # -- construction ------------------------------------------------------

    def _check_new_child(self, name: str) -> None:
        _check_name(name)
        if any(c.name == name for c in self.children):
            raise DuplicateChildError(f"child {name!r} already exists under {self.name!r}")

    def start_timing(
        self, child_name: str, kind: MetricKind = LATENCY, now: int | None = None
    ) -> "MetricNode":
        """Open a timed child; returns the child so it can be stopped later."""
        self._check_new_child(child_name)
        node = MetricNode(name=child_name, kind=kind, start_ts=_now_or(now))
        self.children.append(node)
        return node

    def stop_timing(self, now: int | None = None, cross_clock: bool = False) -> int:
        """Close this node and return elapsed ns.

        With ``cross_clock=True`` the stop timestamp comes from a different
        device clock: a negative elapsed value is legal, preserved, and marked
        with the ``cross-clock-raw`` warning so it can be corrected later.
        On a single clock a stop before start is an error.
        """
        if self.start_ts is None:
            raise NotStartedError(f"node {self.name!r} was never started")
        if self.stop_ts is not None:
            raise AlreadyStoppedError(f"node {self.name!r} already stopped")
        now = _now_or(now)
        if not cross_clock and now < self.start_ts:
            raise StopBeforeStartError(
                f"stop {now} precedes start {self.start_ts} on the same clock"
            )
        self.stop_ts = now
        elapsed = now - self.start_ts
        if cross_clock and elapsed < 0:
            self.warning = CROSS_CLOCK_WARNING
        if self.kind == LATENCY:
            self.value = elapsed
        return elapsed

    def record_value(
        self,
        child_name: str,
        kind: MetricKind,
        value: int | float,
        unit: str | None = None,
    ) -> "MetricNode":
        """Attach a value leaf (no timestamps) under this node."""
        self._check_new_child(child_name)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise TypeError("value must be a real number")
        if isinstance(value, float) and not math.isfinite(value):
            raise ValueError("value must be finite")
        if kind.nonnegative and value < 0:
            raise NegativeQuantityError(
                f"{kind.encode()} value must be nonnegative, got {value}"
            )
        node = MetricNode(name=child_name, kind=kind, value=value, unit=unit)
        self.children.append(node)
        return node

    def merge_remote(self, remote_subtree: "MetricNode") -> None:
        """Graft a subtree received from another device, verbatim."""
        self._check_new_child(remote_subtree.name)
        self.children.append(remote_subtree)

    # -- queries -----------------------------------------------------------

    def child(self, name: str) -> "MetricNode | None":
        for c in self.children:
            if c.name == name:
                return c
        return None

    @property
    def closed(self) -> bool:
        return self.start_ts is not None and self.stop_ts is not None

    def summarize(self, metric_path: str) -> SummaryStats:
        """Statistics over nodes matched by a slash-separated path.

        Path segments are matched against children starting at this node;
        ``*`` matches every child at that level (typically the per-iteration
        level). Only matched nodes that carry a value contribute.
        """
        segments = [s for s in metric_path.split("/") if s]
        if not segments:
            raise NoMatchError("empty metric path")
        nodes: list[MetricNode] = [self]
        for seg in segments:
            nxt: list[MetricNode] = []
            for nd in nodes:
                if seg == "*":
                    nxt.extend(nd.children)
                else:
                    c = nd.child(seg)
                    if c is not None:
                        nxt.append(c)
            nodes = nxt
        values = [n.value for n in nodes if n.value is not None]
        if not values:
            raise NoMatchError(f"path {metric_path!r} matched no closed node")
        return basic_stats(values)

    # -- serialization -----------------------------------------------------

    def serialize(self) -> bytes:
        """Canonical JSON bytes for this subtree."""
        return json.dumps(
            self._to_obj(depth=1), separators=(",", ":"), ensure_ascii=False
        ).encode("utf-8")

    def _to_obj(self, depth: int) -> dict:
        if depth > MAX_DEPTH:
            raise DepthLimitError(f"tree deeper than {MAX_DEPTH}")
        obj: dict = {"name": self.name, "kind": self.kind.encode()}
        if self.start_ts is not None:
            obj["start_ts"] = self.start_ts
        if self.stop_ts is not None:
            obj["stop_ts"] = self.stop_ts
        if self.value is not None:
            obj["value"] = self.value
        if self.unit is not None:
            obj["unit"] = self.unit
        if self.warning is not None:
            obj["warning"] = self.warning
        if self.children:
            obj["children"] = [c._to_obj(depth + 1) for c in self.children]
        return obj


def new_root(name: str, kind: MetricKind = GROUP) -> MetricNode:
    """A fresh root node with no children and no timestamps."""
    _check_name(name)
    return MetricNode(name=name, kind=kind)


def _now_or(now: int | None) -> int:
    if now is None:
        import time

        return time.time_ns()
    if isinstance(now, bool) or not isinstance(now, int):
        raise TypeError("timestamp must be an int (ns since epoch)")
    return now


_NODE_KEYS = ("name", "kind", "start_ts", "stop_ts", "value", "unit", "warning", "children")


def deserialize(data: bytes | str) -> MetricNode:
    """Decode canonical JSON bytes back into a tree.

    Raises MalformedError for anything that is not a valid encoded tree,
    UnknownVersionError if the blob declares a version other than 1 (a
    top-level ``version`` key is the forward-compatibility hook; version-1
    bytes simply omit it), and DepthLimitError past the depth cap.
    """
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedError("not UTF-8") from exc
    try:
        obj = json.loads(data, parse_constant=_reject_constant)
    except ValueError as exc:
        raise MalformedError(f"invalid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise MalformedError("top-level value is not an object")
    if "version" in obj:
        version = obj.pop("version")
        if version != 1:
            raise UnknownVersionError(f"unsupported tree encoding version {version!r}")
    return _node_from_obj(obj, depth=1)


def _reject_constant(name: str):
    raise MalformedError(f"non-finite constant {name!r}")


def _node_from_obj(obj, depth: int) -> MetricNode:
    if depth > MAX_DEPTH:
        raise DepthLimitError(f"tree deeper than {MAX_DEPTH}")
    if not isinstance(obj, dict):
        raise MalformedError("node is not an object")
    unknown = set(obj) - set(_NODE_KEYS)
    if unknown:
        raise MalformedError(f"unknown node fields {sorted(unknown)}")

    name = obj.get("name")
    if not isinstance(name, str):
        raise MalformedError("node name missing or not a string")
    try:
        _check_name(name)
    except EmptyNameError as exc:
        raise MalformedError(str(exc)) from exc

    kind_text = obj.get("kind")
    if not isinstance(kind_text, str):
        raise MalformedError("node kind missing or not a string")
    kind = _decode_kind(kind_text)

    start_ts = _opt_i64(obj, "start_ts")
    stop_ts = _opt_i64(obj, "stop_ts")

    value = obj.get("value")
    if value is not None:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise MalformedError("node value is not a number")
        if isinstance(value, float) and not math.isfinite(value):
            raise MalformedError("node value is not finite")

    unit = _opt_str(obj, "unit")
    warning = _opt_str(obj, "warning")

    raw_children = obj.get("children", [])
    if not isinstance(raw_children, list):
        raise MalformedError("children is not a list")
    if len(raw_children) > MAX_CHILDREN:
        raise MalformedError(f"more than {MAX_CHILDREN} children")
    children = [_node_from_obj(c, depth + 1) for c in raw_children]
    names = [c.name for c in children]
    if len(set(names)) != len(names):
        raise MalformedError(f"duplicate sibling names under {name!r}")

    return MetricNode(
        name=name,
        kind=kind,
        start_ts=start_ts,
        stop_ts=stop_ts,
        value=value,
        unit=unit,
        warning=warning,
        children=children,
    )


def _opt_i64(obj: dict, key: str) -> int | None:
    v = obj.get(key)
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, int):
        raise MalformedError(f"{key} is not an integer")
    if abs(v) > _I64_MAX:
        raise MalformedError(f"{key} out of signed 64-bit range")
    return v


def _opt_str(obj: dict, key: str) -> str | None:
    v = obj.get(key)
    if v is None:
        return None
    if not isinstance(v, str):
        raise MalformedError(f"{key} is not a string")
    return v
