"""Minimal SVG charts: polylines, scatter points, axes and a legend."""

from __future__ import annotations

import math
from typing import Dict, Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


def _ticks(lo: float, hi: float, n: int = 5):
    if not math.isfinite(lo) or not math.isfinite(hi) or hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    return list(np.arange(start, hi + 0.5 * step, step))


class Chart:
    """Accumulates series, then renders one SVG document."""

    def __init__(self, title: str = "", xlabel: str = "", ylabel: str = "",
                 width: int = 640, height: int = 420, equal_aspect: bool = False):
        self.title, self.xlabel, self.ylabel = title, xlabel, ylabel
        self.width, self.height = width, height
        self.equal_aspect = equal_aspect
        self.series = []

    def line(self, x, y, label: str = "", color: Optional[str] = None,
             dashed: bool = False):
        self.series.append(("line", np.asarray(x, float), np.asarray(y, float),
                            label, color, dashed))
        return self

    def points(self, x, y, label: str = "", color: Optional[str] = None):
        self.series.append(("points", np.asarray(x, float),
                            np.asarray(y, float), label, color, False))
        return self

    def _bounds(self):
        xs = np.concatenate([s[1] for s in self.series] or [np.zeros(1)])
        ys = np.concatenate([s[2] for s in self.series] or [np.zeros(1)])
        ok = np.isfinite(xs) & np.isfinite(ys)
        xs, ys = (xs[ok], ys[ok]) if ok.any() else (np.zeros(1), np.zeros(1))
        x0, x1, y0, y1 = xs.min(), xs.max(), ys.min(), ys.max()
        if x1 == x0:
            x0, x1 = x0 - 1, x1 + 1
        if y1 == y0:
            y0, y1 = y0 - 1, y1 + 1
        pad = 0.05 * (y1 - y0)
        return x0, x1, y0 - pad, y1 + pad

    def render(self) -> str:
        W, H = self.width, self.height
        ml, mr, mt, mb = 64, 20, 36, 48
        pw, ph = W - ml - mr, H - mt - mb
        x0, x1, y0, y1 = self._bounds()
        if self.equal_aspect:
            span = max(x1 - x0, (y1 - y0) * pw / ph)
            cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
            x0, x1 = cx - span / 2, cx + span / 2
            y0, y1 = cy - span * ph / pw / 2, cy + span * ph / pw / 2

        def X(v):
            return ml + (v - x0) / (x1 - x0) * pw

        def Y(v):
            return mt + ph - (v - y0) / (y1 - y0) * ph

        out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" '
               f'height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" '
               'font-size="12">',
               f'<rect width="{W}" height="{H}" fill="white"/>',
               f'<text x="{W / 2}" y="20" text-anchor="middle" '
               f'font-size="14">{escape(self.title)}</text>',
               f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" '
               'fill="none" stroke="black"/>']
        for t in _ticks(x0, x1):
            out.append(f'<line x1="{X(t):.1f}" y1="{mt + ph}" x2="{X(t):.1f}" '
                       f'y2="{mt + ph + 4}" stroke="black"/>')
            out.append(f'<text x="{X(t):.1f}" y="{mt + ph + 16}" '
                       f'text-anchor="middle">{t:.3g}</text>')
        for t in _ticks(y0, y1):
            out.append(f'<line x1="{ml - 4}" y1="{Y(t):.1f}" x2="{ml}" '
                       f'y2="{Y(t):.1f}" stroke="black"/>')
            out.append(f'<text x="{ml - 6}" y="{Y(t) + 4:.1f}" '
                       f'text-anchor="end">{t:.3g}</text>')
        out.append(f'<text x="{ml + pw / 2}" y="{H - 10}" '
                   f'text-anchor="middle">{escape(self.xlabel)}</text>')
        out.append(f'<text x="14" y="{mt + ph / 2}" text-anchor="middle" '
                   f'transform="rotate(-90 14 {mt + ph / 2})">'
                   f'{escape(self.ylabel)}</text>')
        out.append(f'<clipPath id="plot"><rect x="{ml}" y="{mt}" width="{pw}" '
                   f'height="{ph}"/></clipPath><g clip-path="url(#plot)">')
        legend = []
        for i, (kind, xs, ys, label, color, dashed) in enumerate(self.series):
            color = color or PALETTE[i % len(PALETTE)]
            ok = np.isfinite(xs) & np.isfinite(ys)
            if kind == "line":
                pts = " ".join(f"{X(a):.2f},{Y(b):.2f}"
                               for a, b in zip(xs[ok], ys[ok]))
                dash = ' stroke-dasharray="6 4"' if dashed else ""
                out.append(f'<polyline points="{pts}" fill="none" '
                           f'stroke="{color}" stroke-width="1.5"{dash}/>')
            else:
                out += [f'<circle cx="{X(a):.2f}" cy="{Y(b):.2f}" r="3" '
                        f'fill="{color}"/>' for a, b in zip(xs[ok], ys[ok])]
            if label:
                legend.append((label, color))
        out.append("</g>")
        for j, (label, color) in enumerate(legend):
            y = mt + 14 + 16 * j
            out.append(f'<line x1="{ml + pw - 120}" y1="{y - 4}" '
                       f'x2="{ml + pw - 100}" y2="{y - 4}" stroke="{color}" '
                       'stroke-width="2"/>')
            out.append(f'<text x="{ml + pw - 94}" y="{y}">{escape(label)}</text>')
        out.append("</svg>")
        return "\n".join(out) + "\n"

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.render())


def eigenvalue_chart(eigs: Dict[str, Sequence[complex]], title: str = "") -> Chart:
    """Eigenvalues in the complex plane with the unit circle."""
    th = np.linspace(0, 2 * np.pi, 200)
    ch = Chart(title, "Re", "Im", equal_aspect=True)
    ch.line(np.cos(th), np.sin(th), "unit circle", "#888888", dashed=True)
    for name, lam in eigs.items():
        lam = np.asarray(lam)
        ch.points(lam.real, lam.imag, name)
    return ch
