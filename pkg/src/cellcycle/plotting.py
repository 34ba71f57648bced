"""Static figures: matplotlib PNGs plus gnuplot scripts reading the same CSVs."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _read_columns(csv_path) -> dict:
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [r for r in reader if r]
    cols = {}
    for k, name in enumerate(header):
        try:
            cols[name] = np.array([float(r[k]) for r in rows])
        except ValueError:
            cols[name] = np.array([r[k] for r in rows])
    return cols


def gnuplot_script(csv_path, x: str, ys, out_png, title: str = "", logy: bool = False,
                   xlabel: str | None = None, ylabel: str = "") -> str:
    """gnuplot commands drawing columns ``ys`` against ``x`` from ``csv_path``."""
    with open(csv_path, newline="") as fh:
        header = next(csv.reader(fh))
    col = {name: k + 1 for k, name in enumerate(header)}
    lines = [
        "set datafile separator ','",
        "set terminal pngcairo size 800,500",
        "set output '%s'" % Path(out_png).name,
        "set title '%s'" % title,
        "set xlabel '%s'" % (xlabel or x),
        "set ylabel '%s'" % ylabel,
        "set key outside",
    ]
    if logy:
        lines.append("set logscale y")
    plots = ["'%s' every ::1 using %d:%d with lines title '%s'"
             % (Path(csv_path).name, col[x], col[y], y) for y in ys]
    lines.append("plot " + ", \\\n     ".join(plots))
    return "\n".join(lines) + "\n"


def line_plot(csv_path, x: str, ys, out_png, title: str = "", logy: bool = False,
              xlabel: str | None = None, ylabel: str = "") -> list[Path]:
    """Render a PNG with matplotlib and write the matching ``.gp`` script.

    Returns the paths written.
    """
    cols = _read_columns(csv_path)
    out_png = Path(out_png)
    fig, ax = plt.subplots(figsize=(8, 5))
    for y in ys:
        vals = cols[y]
        if logy:
            vals = np.where(vals > 0, vals, np.nan)
        ax.plot(cols[x], vals, label=y)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel or x)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    if len(ys) > 1:
        ax.legend()
    fig.tight_layout()
    fig.savefig(out_png, dpi=100, metadata={"Software": None})
    plt.close(fig)
    gp = out_png.with_suffix(".gp")
    gp.write_text(gnuplot_script(csv_path, x, ys, out_png, title, logy, xlabel, ylabel))
    return [out_png, gp]
