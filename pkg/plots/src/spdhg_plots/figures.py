"""Figure rendering from benchmark CSV files.

Three figure kinds mirror the benchmark artifacts: convergence curves
(squared relative error on a log axis, with min/max band and a dashed
precomputed theory line), a histogram of per-partition rates, and
per-batch-size rate distributions with the partition-free rate marked.

Rendering is pure: no numbers are computed beyond squaring the error
columns for display; the dashed line values come straight from the CSV.
Output is byte-stable (fixed SVG hash salt, no embedded timestamps).
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import matplotlib
import numpy as np
from matplotlib.figure import Figure

matplotlib.rcParams["svg.hashsalt"] = "spdhg-plots"

PNG_METADATA = {"Software": "spdhg-plots"}
SVG_METADATA = {"Date": None}

CURVE_REQUIRED = ("epoch", "mean")
CURVE_OPTIONAL = ("min", "max", "theory")


class SchemaError(ValueError):
    """A CSV does not match the benchmark schema; names the bad column."""


def _read_rows(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaError(f"{path}: empty file, no header row")
        return reader.fieldnames, list(reader)


def _column(rows, name, path, required=True):
    out = []
    for row in rows:
        val = row.get(name, "")
        if val == "" or val is None:
            if required:
                raise SchemaError(f"{path}: column '{name}' has empty entries")
            return None
        try:
            out.append(float(val))
        except ValueError as exc:
            raise SchemaError(f"{path}: column '{name}' is not numeric: {val!r}") from exc
    return np.array(out)


@dataclass
class CurveData:
    label: str
    epoch: np.ndarray
    mean: np.ndarray
    lo: np.ndarray | None
    hi: np.ndarray | None
    theory: np.ndarray | None


def read_curves_csv(path) -> CurveData:
    """Parse one convergence-curves CSV plus its optional meta sidecar."""
    names, rows = _read_rows(path)
    for col in CURVE_REQUIRED:
        if col not in names:
            raise SchemaError(f"{path}: missing required column '{col}'")
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    epoch = _column(rows, "epoch", path)
    mean = _column(rows, "mean", path)
    lo = _column(rows, "min", path, required=False) if "min" in names else None
    hi = _column(rows, "max", path, required=False) if "max" in names else None
    theory = _column(rows, "theory", path, required=False) if "theory" in names else None
    label = os.path.basename(str(path)).removesuffix(".csv").removeprefix("curves_")
    meta_path = str(path) + ".meta.txt"
    if os.path.exists(meta_path):
        for line in open(meta_path):
            if line.startswith("label="):
                label = line.strip().split("=", 1)[1]
    return CurveData(label, epoch, mean, lo, hi, theory)


def build_curves_figure(paths, title=None) -> Figure:
    """Squared-error convergence curves with envelopes and theory lines.

    The error columns hold the relative primal error; they are squared
    for display because the linear rate per epoch applies on that scale,
    which is also the scale the ``theory`` column is precomputed on.
    """
    fig = Figure(figsize=(6.4, 4.4))
    ax = fig.subplots()
    for k, path in enumerate(paths):
        data = read_curves_csv(path)
        color = f"C{k}"
        ax.semilogy(data.epoch, data.mean ** 2, color=color, label=data.label)
        if data.lo is not None and data.hi is not None:
            ax.fill_between(data.epoch, data.lo ** 2, data.hi ** 2,
                            color=color, alpha=0.25, linewidth=0)
        if data.theory is not None:
            ax.semilogy(data.epoch, data.theory, color=color, linestyle="--",
                        label=f"{data.label} (theory)")
    ax.set_xlabel("epoch")
    ax.set_ylabel("squared relative error")
    if title:
        ax.set_title(title)
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    return fig


def read_rate_column(path, column="theta_epoch"):
    names, rows = _read_rows(path)
    if column not in names:
        raise SchemaError(f"{path}: missing required column '{column}'")
    return _column(rows, column, path)


def build_histogram_figure(path, bins=40, title=None) -> Figure:
    """Histogram of per-partition convergence rates."""
    rates = read_rate_column(path)
    fig = Figure(figsize=(6.4, 4.0))
    ax = fig.subplots()
    ax.hist(rates, bins=bins, color="C0", edgecolor="white")
    ax.set_xlabel("convergence rate per epoch")
    ax.set_ylabel("number of partitions")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return fig


def build_per_b_figure(path, title=None) -> Figure:
    """Per-batch-size rate distributions with the partition-free rate marked."""
    names, rows = _read_rows(path)
    for col in ("b", "kind", "theta_epoch"):
        if col not in names:
            raise SchemaError(f"{path}: missing required column '{col}'")
    serial, nice = {}, {}
    for row in rows:
        try:
            b = int(row["b"])
            val = float(row["theta_epoch"])
        except ValueError as exc:
            raise SchemaError(f"{path}: non-numeric entry in 'b' or 'theta_epoch'") from exc
        if row["kind"] == "b_serial":
            serial.setdefault(b, []).append(val)
        elif row["kind"] == "b_nice":
            nice[b] = val
        else:
            raise SchemaError(f"{path}: column 'kind' has unknown value {row['kind']!r}")
    bs = sorted(serial)
    fig = Figure(figsize=(6.4, 4.0))
    ax = fig.subplots()
    ax.boxplot([serial[b] for b in bs], positions=range(len(bs)), widths=0.6)
    marked = [b for b in bs if b in nice]
    ax.plot([bs.index(b) for b in marked], [nice[b] for b in marked], "C0D",
            markersize=7, linestyle="none", label="b-nice (partition free)")
    ax.set_xticks(range(len(bs)), [str(b) for b in bs])
    ax.set_xlabel("batch size b")
    ax.set_ylabel("convergence rate per epoch")
    if title:
        ax.set_title(title)
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    return fig


KINDS = ("curves", "histogram", "per_b_distribution")


@dataclass
class FigureSpec:
    """One figure request: kind, input CSVs, output stem, options."""

    kind: str
    inputs: list[str] = field(default_factory=list)
    output: str = "figure"
    bins: int = 40
    title: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"unknown figure kind {self.kind!r}; expected one of {KINDS}")
        if not self.inputs:
            raise SchemaError("figure spec needs at least one input CSV")

    @classmethod
    def from_json(cls, path) -> "FigureSpec":
        with open(path) as fh:
            return cls(**json.load(fh))


def build_figure(spec: FigureSpec) -> Figure:
    if spec.kind == "curves":
        return build_curves_figure(spec.inputs, title=spec.title)
    if spec.kind == "histogram":
        return build_histogram_figure(spec.inputs[0], bins=spec.bins, title=spec.title)
    return build_per_b_figure(spec.inputs[0], title=spec.title)


def render(spec: FigureSpec) -> list[str]:
    """Render a spec to ``<output>.png`` and ``<output>.svg``; returns paths."""
    fig = build_figure(spec)
    out_dir = os.path.dirname(spec.output)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    png = spec.output + ".png"
    svg = spec.output + ".svg"
    fig.savefig(png, format="png", dpi=150, metadata=PNG_METADATA)
    fig.savefig(svg, format="svg", metadata=SVG_METADATA)
    return [png, svg]
