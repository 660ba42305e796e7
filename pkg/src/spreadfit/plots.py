"""Minimal static SVG line/scatter charts (no plotting dependency)."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 640, 400
MARGIN = dict(left=70, right=120, top=40, bottom=50)
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


def _nice_ticks(lo: float, hi: float, count: int = 6) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / max(count - 1, 1)
    mag = 10 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw)
    start = math.floor(lo / step) * step
    ticks = []
    t = start
    while t <= hi + 1e-9 * step:
        if t >= lo - 1e-9 * step:
            ticks.append(round(t, 12))
        t += step
    return ticks


def _fmt(v: float) -> str:
    return f"{v:g}"


def line_chart(
    curves: dict[str, tuple[np.ndarray, np.ndarray]],
    scatter: tuple[np.ndarray, np.ndarray] | None = None,
    *,
    title: str = "",
    xlabel: str = "days",
    ylabel: str = "thousands",
    scatter_label: str = "data",
) -> str:
    """Render curves and optional unfilled-circle data points as an SVG string."""
    xs = [np.asarray(x, float) for x, _ in curves.values()]
    ys = [np.asarray(y, float) for _, y in curves.values()]
    if scatter is not None:
        xs.append(np.asarray(scatter[0], float))
        ys.append(np.asarray(scatter[1], float))
    x_all = np.concatenate(xs) if xs else np.array([0.0, 1.0])
    y_all = np.concatenate(ys) if ys else np.array([0.0, 1.0])
    x_lo, x_hi = float(x_all.min()), float(x_all.max())
    y_lo, y_hi = min(0.0, float(y_all.min())), float(y_all.max())
    if x_hi <= x_lo:
        x_hi = x_lo + 1.0
    if y_hi <= y_lo:
        y_hi = y_lo + 1.0
    y_hi *= 1.05

    plot_w = WIDTH - MARGIN["left"] - MARGIN["right"]
    plot_h = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def px(x):
        return MARGIN["left"] + (x - x_lo) / (x_hi - x_lo) * plot_w

    def py(y):
        return MARGIN["top"] + (1.0 - (y - y_lo) / (y_hi - y_lo)) * plot_h

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{WIDTH / 2:.1f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>')

    x0, y0 = MARGIN["left"], MARGIN["top"] + plot_h
    out.append(f'<line x1="{x0}" y1="{y0}" x2="{x0 + plot_w}" y2="{y0}" stroke="black"/>')
    out.append(f'<line x1="{x0}" y1="{MARGIN["top"]}" x2="{x0}" y2="{y0}" stroke="black"/>')
    for t in _nice_ticks(x_lo, x_hi):
        X = px(t)
        out.append(f'<line x1="{X:.2f}" y1="{y0}" x2="{X:.2f}" y2="{y0 + 5}" stroke="black"/>')
        out.append(f'<text x="{X:.2f}" y="{y0 + 18}" text-anchor="middle">{_fmt(t)}</text>')
    for t in _nice_ticks(y_lo, y_hi):
        Y = py(t)
        out.append(f'<line x1="{x0 - 5}" y1="{Y:.2f}" x2="{x0}" y2="{Y:.2f}" stroke="black"/>')
        out.append(f'<text x="{x0 - 8}" y="{Y + 4:.2f}" text-anchor="end">{_fmt(t)}</text>')
    out.append(f'<text x="{x0 + plot_w / 2:.1f}" y="{HEIGHT - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{MARGIN["top"] + plot_h / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {MARGIN["top"] + plot_h / 2:.1f})">{escape(ylabel)}</text>')

    legend_y = MARGIN["top"] + 10
    legend_x = x0 + plot_w + 15
    for idx, (name, (x, y)) in enumerate(curves.items()):
        color = COLORS[idx % len(COLORS)]
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, y) if math.isfinite(b))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{pts}"/>')
        out.append(f'<line x1="{legend_x}" y1="{legend_y}" x2="{legend_x + 20}" y2="{legend_y}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{legend_x + 25}" y="{legend_y + 4}">{escape(name)}</text>')
        legend_y += 18
    if scatter is not None:
        for a, b in zip(*scatter):
            out.append(f'<circle cx="{px(a):.2f}" cy="{py(b):.2f}" r="3.5" fill="none" stroke="black"/>')
        out.append(f'<circle cx="{legend_x + 10}" cy="{legend_y}" r="3.5" fill="none" stroke="black"/>')
        out.append(f'<text x="{legend_x + 25}" y="{legend_y + 4}">{escape(scatter_label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
