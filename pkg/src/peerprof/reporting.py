"""Exports: CSV records, summary tables, and SVG histograms.

Everything here is a pure function of its inputs, so outputs are
byte-identical across runs — no timestamps, no randomness, no plotting
library. Latencies are kept in nanoseconds internally and rendered as
milliseconds with two decimals in the markdown summary; throughput renders
as MB/s with MB = 2**20 bytes.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

from .metrics_tree import basic_stats

CSV_HEADER = (
    "iteration,sensing_ns,upload_size_bytes,upload_latency_ns,upload_throughput_bps,"
    "inference_ns,download_size_bytes,download_latency_ns,download_throughput_bps,"
    "total_ns,flags"
)

_FIELDS = (
    "sensing_ns",
    "upload_size_bytes",
    "upload_latency_ns",
    "upload_throughput_bps",
    "inference_ns",
    "download_size_bytes",
    "download_latency_ns",
    "download_throughput_bps",
    "total_ns",
)

#: (metric name, record field, source unit)
METRICS = (
    ("sensing", "sensing_ns", "ns"),
    ("upload_size", "upload_size_bytes", "bytes"),
    ("upload_latency", "upload_latency_ns", "ns"),
    ("upload_throughput", "upload_throughput_bps", "bytes/s"),
    ("inference", "inference_ns", "ns"),
    ("download_size", "download_size_bytes", "bytes"),
    ("download_latency", "download_latency_ns", "ns"),
    ("download_throughput", "download_throughput_bps", "bytes/s"),
    ("total", "total_ns", "ns"),
)

DEFAULT_EXCLUDE_FLAGS = ("warmup", "dropped")


@dataclass(frozen=True)
class SummaryRow:
    """Statistics for one metric, in its source unit."""

    metric: str
    n: int
    mean: float
    std: float
    min: float
    max: float
    unit: str


def export_csv(records) -> bytes:
    """RFC-4180 CSV of the records; the flags column joins with ';' and is
    quoted whenever non-empty."""
    if not records:
        raise ValueError("no records to export")
    lines = [CSV_HEADER]
    for rec in records:
        cells = [str(rec.iteration)]
        for name in _FIELDS:
            cells.append(_format_cell(getattr(rec, name)))
        cells.append(_format_flags(rec.flags))
        lines.append(",".join(cells))
    return ("\r\n".join(lines) + "\r\n").encode("utf-8")


def parse_csv(data: bytes):
    """Rows of the exported CSV as dicts (numbers parsed, flags split)."""
    text = data.decode("utf-8")
    reader = csv.DictReader(io.StringIO(text))
    rows = []
    for row in reader:
        parsed = {"iteration": int(row["iteration"])}
        for name in _FIELDS:
            cell = row[name]
            if cell == "":
                parsed[name] = None
            elif name.endswith("_bps"):
                parsed[name] = float(cell)
            else:
                parsed[name] = int(cell)
        parsed["flags"] = row["flags"].split(";") if row["flags"] else []
        rows.append(parsed)
    return rows


def summary_table(records, exclude_flags=DEFAULT_EXCLUDE_FLAGS) -> list[SummaryRow]:
    """One row of sample statistics per metric.

    Records carrying any of ``exclude_flags`` are skipped (warmup and
    dropped iterations by default); metrics absent from every included
    record (e.g. transfers in a local run) are omitted.
    """
    excluded = set(exclude_flags)
    included = [r for r in records if not excluded.intersection(r.flags)]
    if not included:
        raise ValueError("all records excluded from the summary")
    rows = []
    for metric, fieldname, unit in METRICS:
        values = [getattr(r, fieldname) for r in included]
        values = [v for v in values if v is not None]
        if not values:
            continue
        s = basic_stats(values)
        rows.append(
            SummaryRow(metric=metric, n=s.n, mean=s.mean, std=s.std,
                       min=s.min, max=s.max, unit=unit)
        )
    return rows


def render_summary_md(rows, title: str = "Run summary") -> bytes:
    """Markdown table of the summary rows, display-converted per unit."""
    out = [f"# {title}", ""]
    out.append("| metric | n | mean | std | min | max | unit |")
    out.append("|---|---|---|---|---|---|---|")
    for row in rows:
        mean, std, lo, hi, unit = _display(row)
        out.append(
            f"| {row.metric} | {row.n} | {mean} | {std} | {lo} | {hi} | {unit} |"
        )
    out.append("")
    out.append("Latencies in ms (2 decimals); throughput in MB/s with MB = 2^20 bytes.")
    return ("\n".join(out) + "\n").encode("utf-8")


def _display(row: SummaryRow):
    if row.unit == "ns":
        conv = 1e6
        fmt = "{:.2f}"
        unit = "ms"
    elif row.unit == "bytes/s":
        conv = 2**20
        fmt = "{:.2f}"
        unit = "MB/s"
    else:
        conv = 1
        fmt = "{:.0f}"
        unit = row.unit
    vals = (row.mean / conv, row.std / conv, row.min / conv, row.max / conv)
    return (*(fmt.format(v) for v in vals), unit)


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _format_flags(flags) -> str:
    if not flags:
        return ""
    joined = ";".join(flags)
    return '"' + joined.replace('"', '""') + '"'


# --- histograms ------------------------------------------------------------------

SVG_WIDTH = 640
SVG_HEIGHT = 400
_MARGIN_L, _MARGIN_R, _MARGIN_T, _MARGIN_B = 60, 15, 40, 45


def histogram_bins(values, bins: int):
    """Counts and edges of equal-width bins over [min, max].

    A degenerate range (all values equal) collapses to a single bin of
    width 1 starting at the value.
    """
    if not values:
        raise ValueError("no values to bin")
    if bins < 1:
        raise ValueError("bins must be >= 1")
    lo = min(values)
    hi = max(values)
    if lo == hi:
        return [len(values)], [lo, lo + 1]
    counts = [0] * bins
    span = hi - lo
    for v in values:
        idx = int((v - lo) * bins / span)
        if idx == bins:  # v == hi lands in the last bin
            idx -= 1
        counts[idx] += 1
    edges = [lo + span * i / bins for i in range(bins + 1)]
    return counts, edges


def histogram_svg(values, bins: int, title: str) -> bytes:
    """Deterministic SVG histogram: fixed 640x400 canvas, equal-width bins,
    bar heights proportional to counts. Each bar carries data-count and
    data-lo/data-hi attributes so the numbers are machine-readable."""
    counts, edges = histogram_bins(list(values), bins)
    n_bins = len(counts)
    max_count = max(counts)
    plot_w = SVG_WIDTH - _MARGIN_L - _MARGIN_R
    plot_h = SVG_HEIGHT - _MARGIN_T - _MARGIN_B

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_WIDTH}" '
        f'height="{SVG_HEIGHT}" viewBox="0 0 {SVG_WIDTH} {SVG_HEIGHT}">',
        f'<rect width="{SVG_WIDTH}" height="{SVG_HEIGHT}" fill="white"/>',
        f'<text x="{SVG_WIDTH / 2:.1f}" y="24" text-anchor="middle" '
        f'font-family="sans-serif" font-size="15">{_escape(title)}</text>',
    ]
    for i, count in enumerate(counts):
        bar_w = plot_w / n_bins
        x = _MARGIN_L + i * bar_w
        h = plot_h * count / max_count if max_count else 0
        y = _MARGIN_T + plot_h - h
        parts.append(
            f'<rect x="{x:.2f}" y="{y:.2f}" width="{max(bar_w - 1.0, 0.5):.2f}" '
            f'height="{h:.2f}" fill="#4878a8" '
            f'data-count="{count}" data-lo="{edges[i]!r}" data-hi="{edges[i + 1]!r}"/>'
        )
    axis_y = _MARGIN_T + plot_h
    parts.append(
        f'<line x1="{_MARGIN_L}" y1="{axis_y}" x2="{SVG_WIDTH - _MARGIN_R}" '
        f'y2="{axis_y}" stroke="black"/>'
    )
    parts.append(
        f'<line x1="{_MARGIN_L}" y1="{_MARGIN_T}" x2="{_MARGIN_L}" '
        f'y2="{axis_y}" stroke="black"/>'
    )
    parts.append(
        f'<text x="{_MARGIN_L}" y="{axis_y + 18}" text-anchor="start" '
        f'font-family="sans-serif" font-size="11">{edges[0]:.6g}</text>'
    )
    parts.append(
        f'<text x="{SVG_WIDTH - _MARGIN_R}" y="{axis_y + 18}" text-anchor="end" '
        f'font-family="sans-serif" font-size="11">{edges[-1]:.6g}</text>'
    )
    parts.append(
        f'<text x="{_MARGIN_L - 6}" y="{_MARGIN_T + 4}" text-anchor="end" '
        f'font-family="sans-serif" font-size="11">{max_count}</text>'
    )
    parts.append("</svg>")
    return ("\n".join(parts) + "\n").encode("utf-8")


def _escape(text: str) -> str:
    return (
        text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
    )


def stats_from_svg(data: bytes) -> list[int]:
    """Bar counts parsed back out of a histogram SVG."""
    import re

    return [int(m) for m in re.findall(rb'data-count="(\d+)"', data)]
