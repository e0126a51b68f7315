"""Minimal self-contained SVG output: line panels and raster heatmaps."""

from __future__ import annotations

from dataclasses import dataclass, field
from xml.sax.saxutils import escape

import numpy as np

MAX_POINTS = 3000
PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#000000")


def _f(x: float) -> str:
    return f"{x:.2f}"


def nice_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** np.floor(np.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = np.ceil(lo / step) * step
    return [float(v) for v in np.arange(start, hi + 0.5 * step, step) if lo - 1e-12 <= v <= hi + 1e-12]


@dataclass
class Panel:
    """A rectangular axes area in pixel coordinates."""

    x0: float
    y0: float
    width: float
    height: float
    xlim: tuple
    ylim: tuple
    title: str = ""
    xlabel: str = ""
    ylabel: str = ""
    items: list = field(default_factory=list)

    def px(self, x):
        a, b = self.xlim
        return self.x0 + (np.asarray(x, dtype=float) - a) / (b - a) * self.width

    def py(self, y):
        a, b = self.ylim
        return self.y0 + self.height - (np.asarray(y, dtype=float) - a) / (b - a) * self.height

    def polyline(self, x, y, color="#000000", width=1.5, label=None, dash=None, max_points=MAX_POINTS):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if x.size > max_points:
            keep = np.unique(np.linspace(0, x.size - 1, max_points).astype(int))
            x, y = x[keep], y[keep]
        pts = " ".join(f"{_f(a)},{_f(b)}" for a, b in zip(self.px(x), self.py(y)))
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        self.items.append(f'<polyline fill="none" stroke="{color}" stroke-width="{width}"{extra} '
                          f'points="{pts}"/>')
        if label:
            self.items.append(f"<!-- {escape(label)} -->")

    def rect(self, x_lo, y_lo, x_hi, y_hi, fill, opacity=1.0, stroke="none"):
        xa, xb = self.px([x_lo, x_hi])
        ya, yb = self.py([y_hi, y_lo])
        self.items.append(f'<rect x="{_f(xa)}" y="{_f(ya)}" width="{_f(xb - xa)}" '
                          f'height="{_f(yb - ya)}" fill="{fill}" fill-opacity="{opacity}" '
                          f'stroke="{stroke}"/>')

    def segments(self, segs, color="#000000", width=1.5):
        if not segs:
            return
        d = " ".join(f"M{_f(self.px(a))},{_f(self.py(b))} L{_f(self.px(c))},{_f(self.py(e))}"
                     for a, b, c, e in segs)
        self.items.append(f'<path class="boundary" d="{d}" stroke="{color}" '
                          f'stroke-width="{width}" fill="none"/>')

    def star(self, x, y, r=8.0, color="#000000"):
        cx, cy = float(self.px(x)), float(self.py(y))
        ang = np.pi / 2 + np.arange(10) * np.pi / 5
        rad = np.where(np.arange(10) % 2 == 0, r, 0.4 * r)
        pts = " ".join(f"{_f(cx + q * np.cos(a))},{_f(cy - q * np.sin(a))}" for q, a in zip(rad, ang))
        self.items.append(f'<polygon class="gain-marker" points="{pts}" fill="{color}"/>')

    def text(self, x, y, s, size=11):
        self.items.append(f'<text x="{_f(self.px(x))}" y="{_f(self.py(y))}" '
                          f'font-size="{size}">{escape(s)}</text>')

    def render(self) -> list[str]:
        out = [f'<g clip-path="none">']
        out += self.items
        out.append(f'<rect x="{_f(self.x0)}" y="{_f(self.y0)}" width="{_f(self.width)}" '
                   f'height="{_f(self.height)}" fill="none" stroke="#000000"/>')
        bottom = self.y0 + self.height
        for v in nice_ticks(*self.xlim):
            x = float(self.px(v))
            out.append(f'<line x1="{_f(x)}" y1="{_f(bottom)}" x2="{_f(x)}" y2="{_f(bottom + 4)}" '
                       f'stroke="#000000"/>')
            out.append(f'<text x="{_f(x)}" y="{_f(bottom + 16)}" font-size="10" '
                       f'text-anchor="middle">{v:g}</text>')
        for v in nice_ticks(*self.ylim):
            y = float(self.py(v))
            out.append(f'<line x1="{_f(self.x0 - 4)}" y1="{_f(y)}" x2="{_f(self.x0)}" y2="{_f(y)}" '
                       f'stroke="#000000"/>')
            out.append(f'<text x="{_f(self.x0 - 6)}" y="{_f(y + 3)}" font-size="10" '
                       f'text-anchor="end">{v:.4g}</text>')
        if self.title:
            out.append(f'<text x="{_f(self.x0 + self.width / 2)}" y="{_f(self.y0 - 8)}" '
                       f'font-size="12" text-anchor="middle">{escape(self.title)}</text>')
        if self.xlabel:
            out.append(f'<text x="{_f(self.x0 + self.width / 2)}" y="{_f(bottom + 32)}" '
                       f'font-size="11" text-anchor="middle">{escape(self.xlabel)}</text>')
        if self.ylabel:
            cx, cy = self.x0 - 48, self.y0 + self.height / 2
            out.append(f'<text x="{_f(cx)}" y="{_f(cy)}" font-size="11" text-anchor="middle" '
                       f'transform="rotate(-90 {_f(cx)} {_f(cy)})">{escape(self.ylabel)}</text>')
        out.append("</g>")
        return out


def document(panels, width: float, height: float, legend: list | None = None) -> str:
    lines = ['<?xml version="1.0" encoding="UTF-8"?>',
             f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(width)}" height="{_f(height)}" '
             f'viewBox="0 0 {_f(width)} {_f(height)}">',
             f'<rect x="0" y="0" width="{_f(width)}" height="{_f(height)}" fill="#ffffff"/>']
    for p in panels:
        lines += p.render()
    for k, (name, color) in enumerate(legend or []):
        y = 16 + 14 * k
        lines.append(f'<line x1="{_f(width - 120)}" y1="{_f(y)}" x2="{_f(width - 100)}" y2="{_f(y)}" '
                     f'stroke="{color}" stroke-width="2"/>')
        lines.append(f'<text x="{_f(width - 95)}" y="{_f(y + 4)}" font-size="10">{escape(name)}</text>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def padded(lo: float, hi: float, frac: float = 0.05) -> tuple[float, float]:
    if hi <= lo:
        return lo - 0.5, hi + 0.5
    pad = frac * (hi - lo)
    return lo - pad, hi + pad


def mask_boundary(mask: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> list[tuple]:
    """Cell-edge segments separating True from False cells of mask[iy, ix]."""
    dx = xs[1] - xs[0] if xs.size > 1 else 1.0
    dy = ys[1] - ys[0] if ys.size > 1 else 1.0
    m = np.pad(mask.astype(bool), 1, constant_values=False)
    segs = []
    ny, nx = mask.shape
    # vertical edges
    diff = m[1:-1, 1:] != m[1:-1, :-1]
    for iy, ix in zip(*np.nonzero(diff)):
        x = xs[0] + (ix - 0.5) * dx
        segs.append((x, ys[iy] - dy / 2, x, ys[iy] + dy / 2))
    diff = m[1:, 1:-1] != m[:-1, 1:-1]
    for iy, ix in zip(*np.nonzero(diff)):
        y = ys[0] + (iy - 0.5) * dy
        segs.append((xs[ix] - dx / 2, y, xs[ix] + dx / 2, y))
    return segs


def heatmap(panel: Panel, values: np.ndarray, xs: np.ndarray, ys: np.ndarray, colors: dict) -> None:
    """Raster of integer-valued cells, run-length merged along rows."""
    dx = xs[1] - xs[0] if xs.size > 1 else 1.0
    dy = ys[1] - ys[0] if ys.size > 1 else 1.0
    for iy in range(values.shape[0]):
        row = values[iy]
        start = 0
        for ix in range(1, row.size + 1):
            if ix == row.size or row[ix] != row[start]:
                panel.rect(xs[start] - dx / 2, ys[iy] - dy / 2, xs[ix - 1] + dx / 2, ys[iy] + dy / 2,
                           colors[int(row[start])])
                start = ix
