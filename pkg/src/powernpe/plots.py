"""Minimal SVG output: metric-vs-temperature line charts and posterior
scatter panels. Plain polylines, circles and text; no plotting library."""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .errors import IOFailure

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


class _Canvas:
    def __init__(self, width: int, height: int):
        self.width, self.height = width, height
        self.items: list[str] = []

    def add(self, item: str):
        self.items.append(item)

    def text(self, x, y, s, size=12, anchor="middle"):
        self.add(f'<text x="{x:.1f}" y="{y:.1f}" font-size="{size}" '
                 f'text-anchor="{anchor}" font-family="sans-serif">{escape(str(s))}</text>')

    def svg(self) -> str:
        head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" '
                f'height="{self.height}" viewBox="0 0 {self.width} {self.height}">')
        return "\n".join([head, '<rect width="100%" height="100%" fill="white"/>',
                          *self.items, "</svg>"]) + "\n"

    def save(self, path) -> Path:
        path = Path(path)
        try:
            path.write_text(self.svg())
        except OSError as exc:
            raise IOFailure(f"cannot write {path}: {exc}") from exc
        return path


def _limits(values, pad=0.05):
    lo, hi = float(np.min(values)), float(np.max(values))
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    span = hi - lo
    return lo - pad * span, hi + pad * span


class _Axes:
    def __init__(self, canvas, left, top, width, height, xlim, ylim):
        self.c, self.left, self.top, self.w, self.h = canvas, left, top, width, height
        self.xlim, self.ylim = xlim, ylim
        canvas.add(f'<rect x="{left}" y="{top}" width="{width}" height="{height}" '
                   'fill="none" stroke="#444"/>')

    def px(self, x, y):
        (x0, x1), (y0, y1) = self.xlim, self.ylim
        return (self.left + (np.asarray(x) - x0) / (x1 - x0) * self.w,
                self.top + self.h - (np.asarray(y) - y0) / (y1 - y0) * self.h)

    def ticks(self, n=5):
        for v in np.linspace(*self.xlim, n):
            x, _ = self.px(v, self.ylim[0])
            self.c.text(x, self.top + self.h + 14, f"{v:.2g}", size=10)
        for v in np.linspace(*self.ylim, n):
            _, y = self.px(self.xlim[0], v)
            self.c.text(self.left - 4, y + 3, f"{v:.2g}", size=10, anchor="end")


def line_chart(path, series: dict, xlabel: str, ylabel: str, title: str = "") -> Path:
    """``series`` maps a legend label to ``(xs, ys)``."""
    canvas = _Canvas(520, 360)
    xs = np.concatenate([np.asarray(v[0], float) for v in series.values()])
    ys = np.concatenate([np.asarray(v[1], float) for v in series.values()])
    ax = _Axes(canvas, 60, 40, 420, 260, _limits(xs), _limits(ys))
    ax.ticks()
    for k, (label, (x, y)) in enumerate(series.items()):
        colour = PALETTE[k % len(PALETTE)]
        px, py = ax.px(np.asarray(x, float), np.asarray(y, float))
        pts = " ".join(f"{a:.1f},{b:.1f}" for a, b in zip(px, py))
        canvas.add(f'<polyline points="{pts}" fill="none" stroke="{colour}" stroke-width="2"/>')
        for a, b in zip(px, py):
            canvas.add(f'<circle cx="{a:.1f}" cy="{b:.1f}" r="3" fill="{colour}"/>')
        canvas.text(490, 60 + 16 * k, label, size=11, anchor="end")
        canvas.add(f'<line x1="495" y1="{56 + 16 * k}" x2="510" y2="{56 + 16 * k}" '
                   f'stroke="{colour}" stroke-width="2"/>')
    canvas.text(270, 336, xlabel)
    canvas.text(16, 170, ylabel, anchor="start")
    if title:
        canvas.text(270, 24, title, size=14)
    return canvas.save(path)


def scatter_panels(path, rows: list[tuple[str, np.ndarray, np.ndarray]], limits=None,
                   max_points: int = 1000, column_titles=("reference", "model")) -> Path:
    """One row per ``(label, reference, model)``; columns are the two sets.

    Only the first two coordinates are drawn.
    """
    cell, margin = 220, 40
    canvas = _Canvas(2 * cell + 2 * margin, len(rows) * cell + margin)
    if limits is None:
        pooled = np.concatenate([np.concatenate([r[1][:, :2], r[2][:, :2]]) for r in rows])
        limits = (_limits(pooled[:, 0]), _limits(pooled[:, 1]))
    for col, title in enumerate(column_titles):
        canvas.text(margin + col * cell + cell / 2, 24, title, size=13)
    for i, (label, ref, model) in enumerate(rows):
        top = margin + i * cell
        canvas.text(12, top + cell / 2, label, size=11, anchor="start")
        for j, pts in enumerate((ref, model)):
            ax = _Axes(canvas, margin + 30 + j * cell, top + 5, cell - 40, cell - 40, *limits)
            pts = np.asarray(pts)[:max_points, :2]
            px, py = ax.px(pts[:, 0], pts[:, 1])
            colour = PALETTE[j]
            canvas.add("".join(f'<circle cx="{a:.1f}" cy="{b:.1f}" r="1.2" fill="{colour}" '
                               'fill-opacity="0.5"/>' for a, b in zip(px, py)))
    return canvas.save(path)


def count_panels(svg_text: str) -> int:
    """Number of axes frames in an SVG produced here."""
    return svg_text.count('fill="none" stroke="#444"')
