"""Log-log convergence plots from study CSV reports.

Reads the CSV tables written by the study runner (columns such as
``dof``, ``h_max``, ``err_1``, ``zeta``) and renders log-log curves
with optional reference-slope guide lines.  Every figure write also
emits a plain-text sidecar (<image>.data.txt) holding the exact plotted
arrays, so the output is testable without parsing images.

Usage::

    lameeig-plot --spec spec.json
    lameeig-plot run1.csv [run2.csv ...] --x dof --y err_1 [--y zeta]
                 --out fig.png [--slope -1.0]
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

__all__ = ["PlotSpec", "MissingColumnError", "plot_convergence", "main"]


class MissingColumnError(KeyError):
    def __init__(self, column, path):
        self.column = column
        self.path = path
        super().__init__(f"column {column!r} not found in {path}")

    def __str__(self):
        return f"column {self.column!r} not found in {self.path}"


@dataclass
class PlotSpec:
    """What to plot: input CSVs, x/y columns, guides, output image."""

    csv_paths: list
    x: str = "dof"
    y: list = field(default_factory=lambda: ["err_1"])
    slopes: list = field(default_factory=list)  # reference-slope exponents
    out: str = "convergence.png"
    title: str = ""

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            doc = json.load(fh)
        known = {"csv_paths", "x", "y", "slopes", "out", "title"}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown plot spec keys: {sorted(unknown)}")
        return cls(**doc)


def _read_columns(path, columns):
    """Columns from one CSV as float arrays; empty cells become NaN."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise MissingColumnError(columns[0], path)
        for col in columns:
            if col not in reader.fieldnames:
                raise MissingColumnError(col, path)
        rows = list(reader)
    out = {}
    for col in columns:
        out[col] = np.array(
            [float(r[col]) if r[col] not in ("", None) else np.nan for r in rows]
        )
    return out


def _write_sidecar(path, curves):
    """Plain-text record of the exact plotted arrays."""
    lines = []
    for label, xs, ys in curves:
        lines.append(f"# {label}")
        for x, y in zip(xs, ys):
            lines.append(f"{float(x)!r} {float(y)!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_sidecar(path):
    """Parse a sidecar file back into (label, x array, y array) curves."""
    curves = []
    label, xs, ys = None, [], []
    for line in Path(path).read_text().splitlines():
        if line.startswith("# "):
            if label is not None:
                curves.append((label, np.array(xs), np.array(ys)))
            label, xs, ys = line[2:], [], []
        elif line.strip():
            a, b = line.split()
            xs.append(float(a))
            ys.append(float(b))
    if label is not None:
        curves.append((label, np.array(xs), np.array(ys)))
    return curves


def plot_convergence(spec):
    """Render the figure described by a PlotSpec; returns the image path.

    Writes the image plus the data sidecar <image>.data.txt.
    """
    curves = []
    for path in spec.csv_paths:
        cols = _read_columns(path, [spec.x] + list(spec.y))
        stem = Path(path).stem
        for ycol in spec.y:
            label = f"{stem}:{ycol}" if len(spec.csv_paths) > 1 else ycol
            good = ~np.isnan(cols[ycol])
            if good.sum() < 2:
                raise ValueError(f"need >= 2 data rows for {ycol} in {path}")
            curves.append((f"{label} vs {spec.x}", cols[spec.x][good], cols[ycol][good]))

    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    for label, xs, ys in curves:
        ax.loglog(xs, ys, marker="o", label=label)
    # anchor guide lines at the first curve's last point
    _, x0, y0 = curves[0]
    xg = np.array([x0.min(), x0.max()])
    for s in spec.slopes:
        yg = y0[-1] * (xg / x0[-1]) ** s
        ax.loglog(xg, yg, "k--", linewidth=0.8)
        ax.annotate(f"slope {s:g}", (xg[0], yg[0]), fontsize=8)
    ax.set_xlabel(spec.x)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    if spec.title:
        ax.set_title(spec.title)
    fig.tight_layout()
    fig.savefig(spec.out)
    plt.close(fig)
    _write_sidecar(str(spec.out) + ".data.txt", curves)
    return spec.out


def main(argv=None):
    parser = argparse.ArgumentParser(prog="lameeig-plot", description=__doc__)
    parser.add_argument("csv", nargs="*", help="input study CSV files")
    parser.add_argument("--spec", help="JSON plot specification")
    parser.add_argument("--x", default="dof")
    parser.add_argument("--y", action="append", default=None)
    parser.add_argument("--slope", action="append", type=float, default=None)
    parser.add_argument("--out", default="convergence.png")
    parser.add_argument("--title", default="")
    args = parser.parse_args(argv)

    try:
        if args.spec:
            spec = PlotSpec.from_json(args.spec)
        else:
            if not args.csv:
                parser.error("provide CSV files or --spec")
            spec = PlotSpec(
                csv_paths=args.csv,
                x=args.x,
                y=args.y or ["err_1"],
                slopes=args.slope or [],
                out=args.out,
                title=args.title,
            )
        plot_convergence(spec)
    except MissingColumnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
