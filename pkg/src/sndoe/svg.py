"""Minimal SVG line plots (inspection aids only, no plotting dependency)."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


@dataclass
class Series:
    x: np.ndarray
    y: np.ndarray
    label: str = ""
    color: str | None = None
    dashed: bool = False
    marker: bool = False


@dataclass
class Panel:
    series: list = field(default_factory=list)
    title: str = ""
    xlabel: str = ""
    ylabel: str = ""
    logx: bool = False
    logy: bool = False
    equal: bool = False

    def add(self, x, y, label="", color=None, dashed=False, marker=False):
        self.series.append(Series(np.asarray(x, float), np.asarray(y, float), label, color, dashed, marker))
        return self


def _fmt(v):
    return f"{v:.3g}"


def _limits(vals, log):
    vals = vals[np.isfinite(vals)]
    if log:
        vals = vals[vals > 0]
    if vals.size == 0:
        return (0.0, 1.0)
    lo, hi = (np.log10(vals.min()), np.log10(vals.max())) if log else (vals.min(), vals.max())
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    pad = 0.04 * (hi - lo)
    return lo - pad, hi + pad


def _panel_svg(p: Panel, x0, y0, w, h):
    left, right, top, bottom = 58, 12, 26, 40
    pw, ph = w - left - right, h - top - bottom
    xs = np.concatenate([s.x for s in p.series]) if p.series else np.zeros(1)
    ys = np.concatenate([s.y for s in p.series]) if p.series else np.zeros(1)
    xl, yl = _limits(xs, p.logx), _limits(ys, p.logy)
    if p.equal:
        span = max(xl[1] - xl[0], yl[1] - yl[0])
        xc, yc = sum(xl) / 2, sum(yl) / 2
        xl, yl = (xc - span / 2, xc + span / 2), (yc - span / 2, yc + span / 2)

    def sx(v):
        v = np.log10(v) if p.logx else v
        return x0 + left + (v - xl[0]) / (xl[1] - xl[0]) * pw

    def sy(v):
        v = np.log10(v) if p.logy else v
        return y0 + top + ph - (v - yl[0]) / (yl[1] - yl[0]) * ph

    out = [
        f'<rect x="{x0 + left}" y="{y0 + top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
        f'<text x="{x0 + left + pw / 2}" y="{y0 + 16}" text-anchor="middle" font-size="13">{escape(p.title)}</text>',
        f'<text x="{x0 + left + pw / 2}" y="{y0 + h - 6}" text-anchor="middle" font-size="11">{escape(p.xlabel)}</text>',
        f'<text x="{x0 + 12}" y="{y0 + top + ph / 2}" text-anchor="middle" font-size="11" '
        f'transform="rotate(-90 {x0 + 12} {y0 + top + ph / 2})">{escape(p.ylabel)}</text>',
    ]
    for k in range(5):
        fx = xl[0] + k / 4 * (xl[1] - xl[0])
        fy = yl[0] + k / 4 * (yl[1] - yl[0])
        px = x0 + left + k / 4 * pw
        py = y0 + top + ph - k / 4 * ph
        lx = 10**fx if p.logx else fx
        ly = 10**fy if p.logy else fy
        out.append(f'<text x="{px:.1f}" y="{y0 + top + ph + 14}" text-anchor="middle" font-size="9">{_fmt(lx)}</text>')
        out.append(f'<text x="{x0 + left - 4}" y="{py + 3:.1f}" text-anchor="end" font-size="9">{_fmt(ly)}</text>')
    for i, s in enumerate(p.series):
        color = s.color or PALETTE[i % len(PALETTE)]
        keep = np.isfinite(s.x) & np.isfinite(s.y)
        if p.logx:
            keep &= s.x > 0
        if p.logy:
            keep &= s.y > 0
        px, py = sx(s.x[keep]), sy(s.y[keep])
        if px.size == 0:
            continue
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px, py))
        dash = ' stroke-dasharray="5,3"' if s.dashed else ""
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.4"{dash}/>')
        if s.marker:
            out += [f'<circle cx="{a:.2f}" cy="{b:.2f}" r="2.5" fill="{color}"/>' for a, b in zip(px, py)]
        if s.label:
            ly = y0 + top + 12 + 12 * i
            out.append(f'<text x="{x0 + left + pw - 4}" y="{ly}" text-anchor="end" font-size="10" fill="{color}">{escape(s.label)}</text>')
    return out


def write(path, panels, width=460, height=340, columns=None):
    """Write panels on a grid (one row unless ``columns`` is given)."""
    panels = list(panels)
    cols = len(panels) if columns is None else columns
    rows = -(-len(panels) // cols)
    body = []
    for i, p in enumerate(panels):
        body += _panel_svg(p, (i % cols) * width, (i // cols) * height, width, height)
    doc = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{cols * width}" height="{rows * height}" '
        f'font-family="sans-serif">\n<rect width="100%" height="100%" fill="white"/>\n' + "\n".join(body) + "\n</svg>\n"
    )
    Path(path).write_text(doc)
    return path
