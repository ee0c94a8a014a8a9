"""Minimal dependency-free SVG line plots.

Only what the experiment reports need: several series on shared axes,
optional error bands, optional log-scaled y axis, ticks and a legend.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

__all__ = ["Series", "Plot", "write_svg"]

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


@dataclass
class Series:
    x: np.ndarray
    y: np.ndarray
    label: str = ""
    err: np.ndarray | None = None
    dashed: bool = False
    markers: bool = False


@dataclass
class Plot:
    title: str = ""
    xlabel: str = ""
    ylabel: str = ""
    logy: bool = False
    series: list[Series] = field(default_factory=list)

    def add(self, x, y, label="", err=None, dashed=False, markers=False) -> "Plot":
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if x.shape != y.shape:
            raise ValueError("x and y must have the same shape")
        e = None if err is None else np.asarray(err, dtype=float)
        self.series.append(Series(x, y, label, e, dashed, markers))
        return self


def _nice_ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    if not math.isfinite(lo) or not math.isfinite(hi):
        return []
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / count
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=10 * mag)
    first = math.ceil(lo / step) * step
    ticks = []
    v = first
    while v <= hi + 1e-9 * step:
        ticks.append(round(v, 12))
        v += step
    return ticks


def _fmt(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1e4 or abs(v) < 1e-3:
        return f"{v:.0e}"
    return f"{v:g}"


def write_svg(plot: Plot, path, width: int = 640, height: int = 420) -> None:
    """Render ``plot`` to ``path``; points that are non-finite (or <= 0 on a log axis) are dropped."""
    left, right, top, bottom = 70, 20, 36, 52
    pw, ph = width - left - right, height - top - bottom

    def ty(v):
        return np.log10(v) if plot.logy else v

    xs, ys = [], []
    for s in plot.series:
        lo = s.y - s.err if s.err is not None else s.y
        hi = s.y + s.err if s.err is not None else s.y
        for arr in (lo, hi, s.y):
            ok = np.isfinite(arr) & np.isfinite(s.x) & ((arr > 0) if plot.logy else True)
            xs.append(s.x[ok])
            ys.append(ty(arr[ok]))
    xs = np.concatenate(xs) if xs else np.array([])
    ys = np.concatenate(ys) if ys else np.array([])
    if xs.size == 0:
        x0, x1, y0, y1 = 0.0, 1.0, 0.0, 1.0
    else:
        x0, x1, y0, y1 = xs.min(), xs.max(), ys.min(), ys.max()
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = 0.04 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad

    def px(v):
        return left + (v - x0) / (x1 - x0) * pw

    def py(v):
        return top + (1 - (v - y0) / (y1 - y0)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for v in _nice_ticks(x0, x1):
        X = px(v)
        out.append(f'<line x1="{X:.2f}" y1="{top + ph}" x2="{X:.2f}" y2="{top + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{X:.2f}" y="{top + ph + 17}" text-anchor="middle">{_fmt(v)}</text>')
    for v in _nice_ticks(y0, y1):
        Y = py(v)
        label = _fmt(10**v) if plot.logy else _fmt(v)
        out.append(f'<line x1="{left - 5}" y1="{Y:.2f}" x2="{left}" y2="{Y:.2f}" stroke="black"/>')
        out.append(f'<text x="{left - 8}" y="{Y + 4:.2f}" text-anchor="end">{label}</text>')
    out.append(f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="13">{escape(plot.title)}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{height - 12}" text-anchor="middle">{escape(plot.xlabel)}</text>')
    out.append(f'<text x="16" y="{top + ph / 2}" text-anchor="middle" '
               f'transform="rotate(-90 16 {top + ph / 2})">{escape(plot.ylabel)}</text>')

    for k, s in enumerate(plot.series):
        color = _PALETTE[k % len(_PALETTE)]
        if s.err is not None:
            lo, hi = s.y - s.err, s.y + s.err
            ok = np.isfinite(lo) & np.isfinite(hi) & ((lo > 0) if plot.logy else True)
            if ok.sum() > 1:
                upper = [f"{px(a):.2f},{py(ty(b)):.2f}" for a, b in zip(s.x[ok], hi[ok])]
                lower = [f"{px(a):.2f},{py(ty(b)):.2f}" for a, b in zip(s.x[ok][::-1], lo[ok][::-1])]
                out.append(f'<polygon points="{" ".join(upper + lower)}" fill="{color}" '
                           f'fill-opacity="0.2" stroke="none"/>')
        ok = np.isfinite(s.y) & np.isfinite(s.x) & ((s.y > 0) if plot.logy else True)
        pts = [f"{px(a):.2f},{py(ty(b)):.2f}" for a, b in zip(s.x[ok], s.y[ok])]
        if s.markers:
            for p in pts:
                cx, cy = p.split(",")
                out.append(f'<circle cx="{cx}" cy="{cy}" r="2.5" fill="{color}"/>')
        elif len(pts) > 1:
            dash = ' stroke-dasharray="6,4"' if s.dashed else ""
            out.append(f'<polyline points="{" ".join(pts)}" fill="none" stroke="{color}" '
                       f'stroke-width="1.5"{dash}/>')
        if s.label:
            ly = top + 14 + 15 * k
            out.append(f'<line x1="{left + pw - 150}" y1="{ly - 4}" x2="{left + pw - 130}" y2="{ly - 4}" '
                       f'stroke="{color}" stroke-width="2"/>')
            out.append(f'<text x="{left + pw - 125}" y="{ly}">{escape(s.label)}</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")
