"""Matplotlib figures for the report directory.

These complement the deterministic SVG histograms with richer PNG figures:
a per-iteration latency timeline and a stage-breakdown bar chart. Rendered
only when plots are requested, so matplotlib import cost stays off the
benchmark path.
"""

from __future__ import annotations

from pathlib import Path

_STAGE_FIELDS = (
    ("sensing", "sensing_ns"),
    ("upload", "upload_latency_ns"),
    ("inference", "inference_ns"),
    ("download", "download_latency_ns"),
)


def render_figures(records, out_dir, exclude_flags=("warmup", "dropped")) -> list[Path]:
    """Write latency_timeline.png and stage_breakdown.png; returns paths."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    excluded = set(exclude_flags)
    included = [r for r in records if not excluded.intersection(r.flags)]
    if not included:
        return []
    written = []

    fig, ax = plt.subplots(figsize=(8, 4.5))
    iterations = [r.iteration for r in included]
    for label, fieldname in _STAGE_FIELDS + (("total", "total_ns"),):
        series = [getattr(r, fieldname) for r in included]
        if all(v is None for v in series):
            continue
        ax.plot(iterations, [v / 1e6 if v is not None else None for v in series],
                label=label, linewidth=1.0)
    ax.set_xlabel("iteration")
    ax.set_ylabel("latency (ms)")
    ax.set_title("Per-iteration latency")
    ax.legend(loc="upper right", fontsize=8)
    ax.grid(True, alpha=0.3)
    path = out_dir / "latency_timeline.png"
    fig.savefig(path, dpi=110)
    plt.close(fig)
    written.append(path)

    labels, means, stds = [], [], []
    for label, fieldname in _STAGE_FIELDS:
        values = [getattr(r, fieldname) for r in included]
        values = [v for v in values if v is not None]
        if not values:
            continue
        mean = sum(values) / len(values)
        var = sum((v - mean) ** 2 for v in values) / (len(values) - 1) if len(values) > 1 else 0.0
        labels.append(label)
        means.append(mean / 1e6)
        stds.append(var**0.5 / 1e6)
    if labels:
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.bar(labels, means, yerr=stds, capsize=4, color="#4878a8")
        ax.set_ylabel("mean latency (ms)")
        ax.set_title("Stage breakdown")
        ax.grid(True, axis="y", alpha=0.3)
        path = out_dir / "stage_breakdown.png"
        fig.savefig(path, dpi=110)
        plt.close(fig)
        written.append(path)

    return written
