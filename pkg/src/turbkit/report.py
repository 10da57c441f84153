"""Evaluation report writers: CSV/JSON tables plus matplotlib figures.

Every report path emits the delimited data first and renders companion PNG
figures next to it.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .metrics import LineDeviationReport
from .pipeline import LatencyReport


def _finite_or_none(value):
    if value is None:
        return None
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def write_metric_table(rows: list[dict], out_dir, stem: str = "metrics") -> dict[str, Path]:
    """Write per-frame metric rows as CSV and JSON; +inf PSNR serializes as
    null with an `identical` flag."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    columns = []
    for row in rows:
        for key in row:
            if key not in columns:
                columns.append(key)
    csv_path = out / f"{stem}.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow(["" if _finite_or_none(row.get(c)) is None else row.get(c) for c in columns])
    json_path = out / f"{stem}.json"
    payload = []
    for row in rows:
        entry = {}
        for key, value in row.items():
            clean = _finite_or_none(value)
            entry[key] = clean
            if clean is None and isinstance(value, float) and value == math.inf:
                entry["identical"] = True
        payload.append(entry)
    json_path.write_text(json.dumps(payload, indent=2))
    return {"csv": csv_path, "json": json_path}


def metric_figure(rows: list[dict], keys: list[str], out_path, title: str = "Per-frame metrics"):
    """Line plot of the selected metric columns over frame index."""
    fig, axes = plt.subplots(len(keys), 1, figsize=(7, 2.2 * len(keys)), sharex=True, squeeze=False)
    frames = [r.get("frame", i) for i, r in enumerate(rows)]
    for ax, key in zip(axes[:, 0], keys):
        values = [_finite_or_none(r.get(key)) for r in rows]
        xs = [f for f, v in zip(frames, values) if v is not None]
        ys = [v for v in values if v is not None]
        ax.plot(xs, ys, marker="o", ms=3, lw=1)
        ax.set_ylabel(key)
        ax.grid(alpha=0.3)
    axes[-1, 0].set_xlabel("frame")
    axes[0, 0].set_title(title)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return Path(out_path)


def line_deviation_figure(ldr: LineDeviationReport, out_path):
    """Rolling mean with a +-1 std band over the defined per-frame scores."""
    defined = [(e.frame_index, e.score) for e in ldr.entries if e.defined]
    xs = [f for f, _ in defined]
    scores = [s for _, s in defined]
    mean = list(ldr.rolling_mean)
    std = list(ldr.rolling_std)
    fig, ax = plt.subplots(figsize=(7, 3))
    ax.plot(xs, scores, ".", ms=4, alpha=0.6, label="per-frame")
    ax.plot(xs, mean, lw=1.5, label=f"rolling mean (w={ldr.window})")
    ax.fill_between(
        xs,
        [m - s for m, s in zip(mean, std)],
        [m + s for m, s in zip(mean, std)],
        alpha=0.2,
        label="+-1 std",
    )
    ax.set_xlabel("frame")
    ax.set_ylabel("deviation (deg)")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return Path(out_path)


def latency_figure(latency: LatencyReport, out_path):
    """Horizontal bar chart of per-stage seconds per frame."""
    names = list(latency.stage_seconds)
    values = [latency.stage_seconds[n] for n in names]
    fig, ax = plt.subplots(figsize=(7, 0.5 * max(len(names), 3) + 1.2))
    ax.barh(names[::-1], values[::-1])
    w, h = latency.resolution
    ax.set_xlabel("seconds per frame")
    ax.set_title(f"Per-stage latency at {w}x{h}")
    ax.grid(alpha=0.3, axis="x")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return Path(out_path)


def write_latency_report(latency: LatencyReport, out_dir) -> dict[str, Path]:
    """CSV + JSON + figure for a latency report."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "latency.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stage", "seconds_per_frame"])
        for name, sec in latency.stage_seconds.items():
            writer.writerow([name, f"{sec:.6f}"])
        writer.writerow(["total", f"{latency.total_seconds:.6f}"])
    json_path = out / "latency.json"
    json_path.write_text(
        json.dumps(
            {
                "resolution": list(latency.resolution),
                "frames": latency.frames,
                "stage_seconds_per_frame": latency.stage_seconds,
                "total_seconds_per_frame": latency.total_seconds,
                "io_seconds_per_frame": latency.io_seconds,
                "cache_stats": latency.cache_stats,
            },
            indent=2,
        )
    )
    fig_path = latency_figure(latency, out / "latency.png")
    return {"csv": csv_path, "json": json_path, "figure": fig_path}
