"""Standalone SVG charts (no display server, no plotting dependency).

Line charts for learning curves and scatter plots for the embedding probe.
Axis bounds track the data min/max exactly so tests can pin them.
"""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

WIDTH, HEIGHT = 640, 400
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 60, 20, 36, 46

PALETTE = ["#1f6fb2", "#d95f02", "#1b9e77", "#7570b3", "#e7298a", "#66a61e"]


def _finite(vals):
    return [v for v in vals if math.isfinite(v)]


def _bounds(vals):
    vals = _finite(vals)
    if not vals:
        raise ValueError("no finite data to plot")
    lo, hi = min(vals), max(vals)
    if lo == hi:  # avoid a zero-width axis
        lo, hi = lo - 0.5, hi + 0.5
    return lo, hi


class _Frame:
    """Maps data coordinates into the plot rectangle."""

    def __init__(self, xlo, xhi, ylo, yhi):
        self.xlo, self.xhi, self.ylo, self.yhi = xlo, xhi, ylo, yhi

    def x(self, v):
        return MARGIN_L + (v - self.xlo) / (self.xhi - self.xlo) * (WIDTH - MARGIN_L - MARGIN_R)

    def y(self, v):
        return HEIGHT - MARGIN_B - (v - self.ylo) / (self.yhi - self.ylo) * (HEIGHT - MARGIN_T - MARGIN_B)


def _ticks(lo, hi, n=5):
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def _fmt(v):
    if v == 0:
        return "0"
    if abs(v) >= 1000 or abs(v) < 0.01:
        return f"{v:.2e}"
    return f"{v:.3g}"


def _chrome(frame, title, xlabel, ylabel):
    parts = [
        f'<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{WIDTH - MARGIN_L - MARGIN_R}" '
        f'height="{HEIGHT - MARGIN_T - MARGIN_B}" fill="none" stroke="#444"/>',
        f'<text x="{WIDTH / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<text x="{WIDTH / 2}" y="{HEIGHT - 8}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
        f'<text x="14" y="{HEIGHT / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {HEIGHT / 2})">{escape(ylabel)}</text>',
    ]
    for tx in _ticks(frame.xlo, frame.xhi):
        px = frame.x(tx)
        parts.append(f'<line x1="{px:.1f}" y1="{HEIGHT - MARGIN_B}" x2="{px:.1f}" '
                     f'y2="{HEIGHT - MARGIN_B + 4}" stroke="#444"/>')
        parts.append(f'<text x="{px:.1f}" y="{HEIGHT - MARGIN_B + 16}" text-anchor="middle" '
                     f'font-size="10">{_fmt(tx)}</text>')
    for ty in _ticks(frame.ylo, frame.yhi):
        py = frame.y(ty)
        parts.append(f'<line x1="{MARGIN_L - 4}" y1="{py:.1f}" x2="{MARGIN_L}" '
                     f'y2="{py:.1f}" stroke="#444"/>')
        parts.append(f'<text x="{MARGIN_L - 6}" y="{py + 3:.1f}" text-anchor="end" '
                     f'font-size="10">{_fmt(ty)}</text>')
    return parts


def _document(parts):
    body = "\n".join(parts)
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" '
            f'height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">\n'
            f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>\n'
            f"{body}\n</svg>\n")


def line_chart(series, title, xlabel, ylabel):
    """series: list of (label, xs, ys). Returns SVG text.

    Points with non-finite y are skipped (they break the polyline).
    """
    if not series:
        raise ValueError("no series to plot")
    all_x, all_y = [], []
    for _, xs, ys in series:
        if len(xs) != len(ys):
            raise ValueError("series x/y length mismatch")
        all_x.extend(xs)
        all_y.extend(y for y in ys if math.isfinite(y))
    frame = _Frame(*_bounds(all_x), *_bounds(all_y))
    parts = _chrome(frame, title, xlabel, ylabel)
    for i, (label, xs, ys) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{frame.x(x):.1f},{frame.y(y):.1f}"
                       for x, y in zip(xs, ys) if math.isfinite(y))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = MARGIN_T + 14 + 14 * i
        parts.append(f'<line x1="{WIDTH - 150}" y1="{ly - 4}" x2="{WIDTH - 130}" '
                     f'y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{WIDTH - 125}" y="{ly}" font-size="11">{escape(label)}</text>')
    return _document(parts)


def scatter_chart(xs, ys, title, xlabel, ylabel):
    """Single scatter series; one <circle> per point. Returns SVG text."""
    if len(xs) != len(ys):
        raise ValueError("scatter x/y length mismatch")
    frame = _Frame(*_bounds(list(xs)), *_bounds(list(ys)))
    parts = _chrome(frame, title, xlabel, ylabel)
    for x, y in zip(xs, ys):
        parts.append(f'<circle cx="{frame.x(x):.1f}" cy="{frame.y(y):.1f}" r="3.5" '
                     f'fill="{PALETTE[0]}" fill-opacity="0.8"/>')
    return _document(parts)
