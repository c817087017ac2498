"""Deterministic SVG figures with the plotted data embedded as a comment."""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .errors import ConfigError  # noqa: E402

STYLE = {
    "svg.hashsalt": "nssim",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.2,
    "figure.figsize": (5.0, 3.2),
}


@dataclass
class Series:
    label: str
    x: list
    y: list
    marker: str = ""
    linestyle: str = "-"


def _data_comment(series, xlabel, ylabel) -> str:
    lines = [f"nssim plot data: series,{xlabel},{ylabel}"]
    for s in series:
        for a, b in zip(s.x, s.y):
            a = a if isinstance(a, str) else repr(float(a))
            lines.append(f"{s.label},{a},{float(b)!r}")
    text = "\n".join(lines).replace("--", "- -")
    return f"<!--\n{text}\n-->\n"


def emit_plot(series, path, title="", xlabel="x", ylabel="y", logx=False, logy=False,
              kind="line") -> Path:
    """Render ``series`` to an SVG file; same input gives identical bytes.

    ``kind="bar"`` draws one bar per point of the first series (x values are
    category labels).  Each series is drawn as one artist with gid
    ``series<i>``.
    """
    series = [s for s in series if len(s.x)]
    if not series:
        raise ConfigError("cannot plot an empty series")
    path = Path(path)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        if kind == "bar":
            s = series[0]
            bars = ax.bar([str(v) for v in s.x], s.y, label=s.label)
            for j, patch in enumerate(bars.patches):
                patch.set_gid(f"series0-bar{j}")
            ax.tick_params(axis="x", labelrotation=30)
        else:
            for i, s in enumerate(series):
                (line,) = ax.plot(s.x, s.y, label=s.label, marker=s.marker or None, linestyle=s.linestyle)
                line.set_gid(f"series{i}")
        if logx:
            ax.set_xscale("log")
        if logy:
            ax.set_yscale("log")
        ax.set_title(title)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if len(series) > 1 or series[0].label:
            ax.legend(loc="best")
        fig.tight_layout()
        buf = io.StringIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
        plt.close(fig)
    svg = buf.getvalue()
    head, sep, rest = svg.partition("?>\n")
    svg = head + sep + _data_comment(series, xlabel, ylabel) + rest if sep else _data_comment(series, xlabel, ylabel) + svg
    path.write_text(svg)
    return path
