"""Minimal SVG 1.1 figures: line plots with optional bands, and heat maps."""

from __future__ import annotations

import math
from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 640, 420
MARGIN = dict(left=70, right=150, top=40, bottom=55)
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")


@dataclass(frozen=True)
class Series:
    name: str
    x: np.ndarray
    y: np.ndarray
    dashed: bool = False


@dataclass(frozen=True)
class Band:
    name: str
    x: np.ndarray
    lower: np.ndarray
    upper: np.ndarray


def _header(w, h):
    return [
        '<?xml version="1.0" encoding="UTF-8" standalone="no"?>',
        '<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
        f'<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>',
    ]


def _nice_ticks(lo, hi, n=5):
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    return [start + i * step for i in range(int((hi - start) / step + 1e-9) + 1)]


def _limits(values):
    vals = np.concatenate([np.asarray(v, float).ravel() for v in values])
    vals = vals[np.isfinite(vals)]
    if vals.size == 0:
        return 0.0, 1.0
    lo, hi = float(vals.min()), float(vals.max())
    if hi - lo < 1e-12 * max(1.0, abs(hi)):
        lo, hi = lo - 0.5, hi + 0.5
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def line_plot(series, bands=(), xlabel="x", ylabel="y", title=""):
    """One polyline per series, bands as translucent polygons, and a legend."""
    ml, mr, mt, mb = MARGIN["left"], MARGIN["right"], MARGIN["top"], MARGIN["bottom"]
    pw, ph = WIDTH - ml - mr, HEIGHT - mt - mb
    xlo, xhi = _limits([s.x for s in series] + [b.x for b in bands])
    ylo, yhi = _limits([s.y for s in series] + [b.lower for b in bands] + [b.upper for b in bands])

    def sx(x):
        return ml + (np.asarray(x, float) - xlo) / (xhi - xlo) * pw

    def sy(y):
        return mt + ph - (np.asarray(y, float) - ylo) / (yhi - ylo) * ph

    out = _header(WIDTH, HEIGHT)
    if title:
        out.append(f'<text x="{WIDTH / 2:.1f}" y="22" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="15">{escape(title)}</text>')
    out.append(f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    for t in _nice_ticks(xlo, xhi):
        x = float(sx(t))
        out.append(f'<line x1="{x:.2f}" y1="{mt + ph}" x2="{x:.2f}" y2="{mt + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{x:.2f}" y="{mt + ph + 18}" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="11">{t:g}</text>')
    for t in _nice_ticks(ylo, yhi):
        y = float(sy(t))
        out.append(f'<line x1="{ml - 5}" y1="{y:.2f}" x2="{ml}" y2="{y:.2f}" stroke="black"/>')
        out.append(f'<text x="{ml - 8}" y="{y + 4:.2f}" text-anchor="end" '
                   f'font-family="sans-serif" font-size="11">{t:.3g}</text>')
    out.append(f'<text class="xlabel" x="{ml + pw / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle" '
               f'font-family="sans-serif" font-size="13">{escape(xlabel)}</text>')
    out.append(f'<text class="ylabel" x="18" y="{mt + ph / 2:.1f}" text-anchor="middle" '
               f'font-family="sans-serif" font-size="13" '
               f'transform="rotate(-90 18 {mt + ph / 2:.1f})">{escape(ylabel)}</text>')

    legend = []
    for i, b in enumerate(bands):
        colour = PALETTE[i % len(PALETTE)]
        xs = np.concatenate([sx(b.x), sx(b.x)[::-1]])
        ys = np.concatenate([sy(b.upper), sy(b.lower)[::-1]])
        ok = np.isfinite(xs) & np.isfinite(ys)
        pts = " ".join(f"{a:.2f},{c:.2f}" for a, c in zip(xs[ok], ys[ok]))
        out.append(f'<polygon points="{pts}" fill="{colour}" fill-opacity="0.2" stroke="none">'
                   f'<title>{escape(b.name)}</title></polygon>')
        legend.append((b.name, colour, "band"))
    for i, s in enumerate(series):
        colour = PALETTE[(i + len(bands)) % len(PALETTE)]
        xs, ys = sx(s.x), sy(s.y)
        ok = np.isfinite(xs) & np.isfinite(ys)
        pts = " ".join(f"{a:.2f},{c:.2f}" for a, c in zip(xs[ok], ys[ok]))
        dash = ' stroke-dasharray="6,4"' if s.dashed else ""
        out.append(f'<polyline points="{pts}" fill="none" stroke="{colour}" stroke-width="1.8"{dash}>'
                   f'<title>{escape(s.name)}</title></polyline>')
        legend.append((s.name, colour, "line"))
    lx, ly = WIDTH - mr + 12, mt + 10
    for j, (name, colour, kind) in enumerate(legend):
        y = ly + 18 * j
        if kind == "band":
            out.append(f'<rect x="{lx}" y="{y - 6}" width="18" height="10" fill="{colour}" fill-opacity="0.3"/>')
        else:
            out.append(f'<line x1="{lx}" y1="{y}" x2="{lx + 18}" y2="{y}" stroke="{colour}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 24}" y="{y + 4}" font-family="sans-serif" font-size="11">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _colour(u):
    # blue -> white -> red ramp on [0, 1]
    u = min(max(u, 0.0), 1.0)
    if u < 0.5:
        a = u / 0.5
        r, g, b = 40 + 215 * a, 70 + 185 * a, 160 + 95 * a
    else:
        a = (u - 0.5) / 0.5
        r, g, b = 255, 255 - 185 * a, 255 - 215 * a
    return f"#{int(r):02x}{int(g):02x}{int(b):02x}"


def heat_map(values, extent, xlabel="x", ylabel="y", title="", vmax=None):
    """``values[i, j]`` at x_i, y_j over ``extent = (x0, x1, y0, y1)``."""
    values = np.asarray(values, float)
    nx, ny = values.shape
    x0, x1, y0, y1 = extent
    size = 420
    ml, mt = 70, 40
    w, h = size + ml + 110, size + mt + 55
    lo = float(np.nanmin(values))
    hi = float(np.nanmax(values)) if vmax is None else float(vmax)
    span = hi - lo if hi > lo else 1.0
    cw, ch = size / nx, size / ny
    out = _header(w, h)
    if title:
        out.append(f'<text x="{w / 2:.1f}" y="22" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="15">{escape(title)}</text>')
    out.append('<g shape-rendering="crispEdges">')
    for i in range(nx):
        for j in range(ny):
            c = _colour((min(values[i, j], hi) - lo) / span)
            out.append(f'<rect x="{ml + i * cw:.2f}" y="{mt + size - (j + 1) * ch:.2f}" '
                       f'width="{cw + 0.05:.2f}" height="{ch + 0.05:.2f}" fill="{c}"/>')
    out.append("</g>")
    out.append(f'<rect x="{ml}" y="{mt}" width="{size}" height="{size}" fill="none" stroke="black"/>')
    for t in _nice_ticks(x0, x1):
        x = ml + (t - x0) / (x1 - x0) * size
        out.append(f'<text x="{x:.2f}" y="{mt + size + 18}" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="11">{t:g}</text>')
    for t in _nice_ticks(y0, y1):
        y = mt + size - (t - y0) / (y1 - y0) * size
        out.append(f'<text x="{ml - 8}" y="{y + 4:.2f}" text-anchor="end" '
                   f'font-family="sans-serif" font-size="11">{t:g}</text>')
    out.append(f'<text class="xlabel" x="{ml + size / 2}" y="{h - 12}" text-anchor="middle" '
               f'font-family="sans-serif" font-size="13">{escape(xlabel)}</text>')
    out.append(f'<text class="ylabel" x="18" y="{mt + size / 2}" text-anchor="middle" '
               f'font-family="sans-serif" font-size="13" '
               f'transform="rotate(-90 18 {mt + size / 2})">{escape(ylabel)}</text>')
    # colour bar
    bx = ml + size + 25
    for k in range(50):
        u = k / 49
        out.append(f'<rect x="{bx}" y="{mt + size - (k + 1) * size / 50:.2f}" width="16" '
                   f'height="{size / 50 + 0.05:.2f}" fill="{_colour(u)}"/>')
    out.append(f'<text x="{bx + 20}" y="{mt + size}" font-family="sans-serif" font-size="11">{lo:.3g}</text>')
    out.append(f'<text x="{bx + 20}" y="{mt + 10}" font-family="sans-serif" font-size="11">{hi:.3g}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
