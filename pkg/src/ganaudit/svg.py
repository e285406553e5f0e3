"""Self-contained SVG histograms of per-group values.

Groups are drawn in order of first appearance, coloured from ``COLORS``
(black, blue, red, green, orange, purple, then cycling). Each group gets a
dashed vertical line at its mean; an optional shaded band marks
``centre +/- eps``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from xml.sax.saxutils import escape, quoteattr

import numpy as np

from ganaudit.analysis import histogram

COLORS = ("#000000", "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd")

WIDTH, HEIGHT = 640, 400
MARGIN = {"left": 60, "right": 20, "top": 30, "bottom": 50}


class PlotError(ValueError):
    """Input to a plot is malformed."""


@dataclass(frozen=True)
class AxisMap:
    """Linear map from data units to pixels."""

    lo: float
    hi: float
    px_lo: float
    px_hi: float

    def __call__(self, v):
        return self.px_lo + (np.asarray(v, dtype=np.float64) - self.lo) * self.scale

    @property
    def scale(self) -> float:
        return (self.px_hi - self.px_lo) / (self.hi - self.lo)


def read_groups(text: str, column: str, group_column: str = "group") -> dict[str, np.ndarray]:
    """Parse CSV text into ``{group: values}`` preserving first-appearance order."""
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None:
        raise PlotError("empty CSV")
    for col in (column, group_column):
        if col not in reader.fieldnames:
            raise PlotError(f"CSV has no {col!r} column (columns: {', '.join(reader.fieldnames)})")
    groups: dict[str, list] = {}
    for line, row in enumerate(reader, start=2):
        try:
            value = float(row[column])
        except (TypeError, ValueError):
            raise PlotError(f"line {line}: {column}={row[column]!r} is not a number") from None
        groups.setdefault(row[group_column], []).append(value)
    if not groups:
        raise PlotError("CSV has no data rows")
    return {k: np.asarray(v) for k, v in groups.items()}


def render_histogram(groups: dict, bins: int = 30, centre: float | None = None, epsilon: float | None = None,
                     title: str = "", xlabel: str = "") -> str:
    values = np.concatenate(list(groups.values()))
    lo, hi = float(values.min()), float(values.max())
    if centre is not None and epsilon is not None:
        lo, hi = min(lo, centre - epsilon), max(hi, centre + epsilon)
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    lo, hi = float(lo), float(hi)
    pad = 0.02 * (hi - lo)
    lo, hi = lo - pad, hi + pad
    x0, x1 = MARGIN["left"], WIDTH - MARGIN["right"]
    y0, y1 = HEIGHT - MARGIN["bottom"], MARGIN["top"]
    xmap = AxisMap(lo, hi, x0, x1)
    hists = {name: histogram(v, bins, (lo, hi)) for name, v in groups.items()}
    peak = max(int(h.counts.max()) for h in hists.values()) or 1
    ymap = AxisMap(0.0, float(peak), y0, y1)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" data-x-lo="{lo!r}" data-x-hi="{hi!r}" '
           f'data-px-lo="{x0}" data-px-hi="{x1}">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>']
    if centre is not None and epsilon is not None:
        a, b = xmap(centre - epsilon), xmap(centre + epsilon)
        out.append(f'<rect class="eps-band" x="{a:.4f}" y="{y1}" width="{b - a:.4f}" '
                   f'height="{y0 - y1}" fill="#888888" fill-opacity="0.2"/>')
    for i, (name, h) in enumerate(hists.items()):
        colour = COLORS[i % len(COLORS)]
        out.append(f'<g class="group" data-name={quoteattr(name)} fill={quoteattr(colour)}>')
        for left, right, count in zip(h.edges[:-1], h.edges[1:], h.counts):
            if count == 0:
                continue
            xa, xb, top = xmap(left), xmap(right), ymap(count)
            out.append(f'<rect class="bar" x="{xa:.4f}" y="{top:.4f}" width="{xb - xa:.4f}" '
                       f'height="{y0 - top:.4f}" fill-opacity="0.5"/>')
        m = xmap(float(groups[name].mean()))
        out.append(f'<line class="mean" x1="{m:.4f}" x2="{m:.4f}" y1="{y0}" y2="{y1}" '
                   f'stroke={quoteattr(colour)} stroke-dasharray="6,4" stroke-width="1.5"/>')
        out.append("</g>")
        out.append(f'<text x="{x1 - 4}" y="{y1 + 14 * (i + 1)}" text-anchor="end" font-size="12" '
                   f'fill={quoteattr(colour)}>{escape(name)}</text>')
    out.append(f'<line x1="{x0}" x2="{x1}" y1="{y0}" y2="{y0}" stroke="black"/>')
    out.append(f'<line x1="{x0}" x2="{x0}" y1="{y0}" y2="{y1}" stroke="black"/>')
    for t in np.linspace(lo, hi, 5):
        out.append(f'<text x="{xmap(t):.4f}" y="{y0 + 16}" text-anchor="middle" font-size="11">{t:.3g}</text>')
    if xlabel:
        out.append(f'<text x="{(x0 + x1) / 2}" y="{HEIGHT - 10}" text-anchor="middle" '
                   f'font-size="12">{escape(xlabel)}</text>')
    if title:
        out.append(f'<text x="{(x0 + x1) / 2}" y="18" text-anchor="middle" font-size="14">{escape(title)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_svg_histogram(csv_in, svg_out, column: str = "ll_nats", bins: int = 30,
                       centre: float | None = None, epsilon: float | None = None,
                       group_column: str = "group", title: str = "") -> Path:
    """Render the histogram of ``column`` per group from a CSV file into ``svg_out``."""
    text = Path(csv_in).read_text(encoding="utf-8")
    groups = read_groups(text, column, group_column)
    svg = render_histogram(groups, bins, centre, epsilon, title, xlabel=column)
    svg_out = Path(svg_out)
    svg_out.write_text(svg, encoding="utf-8")
    return svg_out
