"""Self-contained SVG line/band plots.

The figures needed here are all of one shape: a handful of lines over a
correlation grid, optional shaded confidence bands, a dashed marker for the
training correlation, and a solid reference line.  A few hundred lines of
SVG assembly cover that without pulling in a plotting stack.
"""

from __future__ import annotations

from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#2ca02c", "#d62728", "#9467bd", "#ff7f0e", "#8c564b")

WIDTH, HEIGHT = 640, 420
MARGIN_LEFT, MARGIN_RIGHT, MARGIN_TOP, MARGIN_BOTTOM = 64, 20, 34, 48


@dataclass(frozen=True)
class Series:
    """One plotted line, with an optional lo..hi band around it."""

    label: str
    x: tuple
    y: tuple
    lo: tuple = None
    hi: tuple = None
    color: str = None

    def __post_init__(self):
        x, y = np.asarray(self.x, dtype=float), np.asarray(self.y, dtype=float)
        if x.ndim != 1 or x.shape != y.shape or x.size == 0:
            raise ValueError(f"series {self.label!r}: x and y must be equal-length 1-D")
        for name in ("lo", "hi"):
            band = getattr(self, name)
            if band is not None and np.asarray(band, dtype=float).shape != x.shape:
                raise ValueError(f"series {self.label!r}: {name} must match x")
        if (self.lo is None) != (self.hi is None):
            raise ValueError(f"series {self.label!r}: lo and hi must come together")


def _ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    raw = np.linspace(lo, hi, n)
    return [float(t) for t in raw]


def _fmt(value):
    text = f"{value:.3g}"
    return "0" if text == "-0" else text


class _Mapper:
    def __init__(self, xlim, ylim):
        self.xlim, self.ylim = xlim, ylim
        self.x_span = max(xlim[1] - xlim[0], 1e-12)
        self.y_span = max(ylim[1] - ylim[0], 1e-12)

    def px(self, x):
        frac = (x - self.xlim[0]) / self.x_span
        return MARGIN_LEFT + frac * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)

    def py(self, y):
        frac = (y - self.ylim[0]) / self.y_span
        return HEIGHT - MARGIN_BOTTOM - frac * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)


def _points(mapper, xs, ys):
    return " ".join(f"{mapper.px(x):.2f},{mapper.py(y):.2f}" for x, y in zip(xs, ys))


def svg_line_plot(
    series,
    xlabel="",
    ylabel="",
    title="",
    vline=None,
    vline_label=None,
    hline=None,
    hline_label=None,
):
    """Render series as an SVG document string.

    ``vline`` draws a dashed vertical marker (training correlation),
    ``hline`` a solid black horizontal reference (uncorrelated baseline).
    """
    series = list(series)
    if not series:
        raise ValueError("need at least one series")

    xs = np.concatenate([np.asarray(s.x, dtype=float) for s in series])
    ys = [np.asarray(s.y, dtype=float) for s in series]
    ys += [np.asarray(s.lo, dtype=float) for s in series if s.lo is not None]
    ys += [np.asarray(s.hi, dtype=float) for s in series if s.hi is not None]
    yall = np.concatenate(ys)
    if hline is not None:
        yall = np.append(yall, hline)
    if vline is not None:
        xs = np.append(xs, vline)

    def padded(arr):
        lo, hi = float(arr.min()), float(arr.max())
        pad = 0.05 * (hi - lo) if hi > lo else 0.5
        return lo - pad, hi + pad

    mapper = _Mapper(padded(xs), padded(yall))
    left, right = mapper.px(mapper.xlim[0]), mapper.px(mapper.xlim[1])
    top, bottom = mapper.py(mapper.ylim[1]), mapper.py(mapper.ylim[0])

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
    ]
    if title:
        parts.append(
            f'<text x="{WIDTH / 2:.0f}" y="20" text-anchor="middle" '
            f'font-size="14">{escape(title)}</text>'
        )

    for tick in _ticks(*mapper.xlim):
        px = mapper.px(tick)
        parts.append(
            f'<line x1="{px:.2f}" y1="{bottom:.2f}" x2="{px:.2f}" y2="{bottom + 5:.2f}" '
            f'stroke="black"/>'
        )
        parts.append(
            f'<text x="{px:.2f}" y="{bottom + 18:.2f}" text-anchor="middle">'
            f"{_fmt(tick)}</text>"
        )
    for tick in _ticks(*mapper.ylim):
        py = mapper.py(tick)
        parts.append(
            f'<line x1="{left - 5:.2f}" y1="{py:.2f}" x2="{left:.2f}" y2="{py:.2f}" '
            f'stroke="black"/>'
        )
        parts.append(
            f'<text x="{left - 8:.2f}" y="{py + 4:.2f}" text-anchor="end">{_fmt(tick)}</text>'
        )
        parts.append(
            f'<line x1="{left:.2f}" y1="{py:.2f}" x2="{right:.2f}" y2="{py:.2f}" '
            f'stroke="#dddddd"/>'
        )
    if xlabel:
        parts.append(
            f'<text x="{(left + right) / 2:.0f}" y="{HEIGHT - 8}" '
            f'text-anchor="middle">{escape(xlabel)}</text>'
        )
    if ylabel:
        parts.append(
            f'<text x="16" y="{(top + bottom) / 2:.0f}" text-anchor="middle" '
            f'transform="rotate(-90 16 {(top + bottom) / 2:.0f})">{escape(ylabel)}</text>'
        )

    if hline is not None:
        py = mapper.py(hline)
        parts.append(
            f'<line x1="{left:.2f}" y1="{py:.2f}" x2="{right:.2f}" y2="{py:.2f}" '
            f'stroke="black" stroke-width="1.5" class="hline"/>'
        )
    if vline is not None:
        px = mapper.px(vline)
        parts.append(
            f'<line x1="{px:.2f}" y1="{top:.2f}" x2="{px:.2f}" y2="{bottom:.2f}" '
            f'stroke="#888888" stroke-dasharray="5,4" class="vline"/>'
        )

    for i, s in enumerate(series):
        color = s.color or PALETTE[i % len(PALETTE)]
        if s.lo is not None:
            forward = _points(mapper, s.x, s.lo)
            backward = _points(mapper, list(reversed(s.x)), list(reversed(s.hi)))
            parts.append(
                f'<polygon points="{forward} {backward}" fill="{color}" '
                f'fill-opacity="0.18" stroke="none" class="band"/>'
            )
        parts.append(
            f'<polyline points="{_points(mapper, s.x, s.y)}" fill="none" '
            f'stroke="{color}" stroke-width="2" class="series"/>'
        )

    legend_entries = [(s.label, s.color or PALETTE[i % len(PALETTE)]) for i, s in enumerate(series)]
    if vline is not None and vline_label:
        legend_entries.append((vline_label, "#888888"))
    if hline is not None and hline_label:
        legend_entries.append((hline_label, "black"))
    ly = top + 10
    for label, color in legend_entries:
        parts.append(
            f'<line x1="{right - 150:.2f}" y1="{ly:.2f}" x2="{right - 126:.2f}" '
            f'y2="{ly:.2f}" stroke="{color}" stroke-width="2"/>'
        )
        parts.append(f'<text x="{right - 120:.2f}" y="{ly + 4:.2f}">{escape(label)}</text>')
        ly += 16

    parts.append(
        f'<rect x="{left:.2f}" y="{top:.2f}" width="{right - left:.2f}" '
        f'height="{bottom - top:.2f}" fill="none" stroke="black"/>'
    )
    parts.append("</svg>")
    return "\n".join(parts)


def write_svg(path, svg_text):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(svg_text)
    return path
