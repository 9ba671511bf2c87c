"""Minimal hand-emitted SVG charts: line plots, heatmaps, and box plots.

Deliberately dependency-free; these are diagnostic renderings of the CSV
outputs, not a plotting library.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

PALETTE = ("#1f77b4", "#2ca02c", "#d62728", "#9467bd", "#ff7f0e", "#8c564b")


def _svg(width: int, height: int, body: list[str]) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
            f'height="{height}" viewBox="0 0 {width} {height}">')
    return "\n".join([head, '<rect width="100%" height="100%" fill="white"/>']
                     + body + ["</svg>"]) + "\n"


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def line_chart(series: dict[str, Sequence[tuple[float, float]]], path: str | Path,
               title: str = "", x_label: str = "", y_label: str = "",
               width: int = 640, height: int = 420) -> None:
    margin = 56
    pw, ph = width - 2 * margin, height - 2 * margin
    pts = [p for s in series.values() for p in s]
    if not pts:
        Path(path).write_text(_svg(width, height, [
            f'<text x="{width / 2}" y="{height / 2}" text-anchor="middle">no data</text>']))
        return
    xs = [p[0] for p in pts]
    ys = [p[1] for p in pts]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0

    def sx(v):
        return margin + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return height - margin - (v - y0) / (y1 - y0) * ph

    body = [f'<rect x="{margin}" y="{margin}" width="{pw}" height="{ph}" '
            'fill="none" stroke="#888"/>']
    if title:
        body.append(f'<text x="{width / 2}" y="24" text-anchor="middle" '
                    f'font-size="15">{title}</text>')
    body.append(f'<text x="{width / 2}" y="{height - 12}" text-anchor="middle" '
                f'font-size="12">{x_label}</text>')
    body.append(f'<text x="16" y="{height / 2}" text-anchor="middle" '
                f'font-size="12" transform="rotate(-90 16 {height / 2})">{y_label}</text>')
    for tick in (x0, (x0 + x1) / 2, x1):
        body.append(f'<text x="{sx(tick):.1f}" y="{height - margin + 16}" '
                    f'text-anchor="middle" font-size="10">{_fmt(tick)}</text>')
    for tick in (y0, (y0 + y1) / 2, y1):
        body.append(f'<text x="{margin - 6}" y="{sy(tick):.1f}" '
                    f'text-anchor="end" font-size="10">{_fmt(tick)}</text>')
    for idx, (name, data) in enumerate(series.items()):
        color = PALETTE[idx % len(PALETTE)]
        coords = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in data)
        body.append(f'<polyline points="{coords}" fill="none" '
                    f'stroke="{color}" stroke-width="1.5"/>')
        body.append(f'<text x="{margin + 8}" y="{margin + 16 + 14 * idx}" '
                    f'font-size="11" fill="{color}">{name}</text>')
    Path(path).write_text(_svg(width, height, body))


def _heat_color(t: float) -> str:
    """Blue (low) to red (high) through white."""
    t = min(max(t, 0.0), 1.0)
    if t < 0.5:
        f = t / 0.5
        r, g, b = int(255 * f), int(255 * f), 255
    else:
        f = (t - 0.5) / 0.5
        r, g, b = 255, int(255 * (1 - f)), int(255 * (1 - f))
    return f"#{r:02x}{g:02x}{b:02x}"


def heatmap(matrix, path: str | Path, title: str = "",
            row_labels: Sequence[str] | None = None,
            col_labels: Sequence[str] | None = None,
            vmin: float | None = None, vmax: float | None = None,
            cell: int = 34) -> None:
    import numpy as np

    m = np.asarray(matrix, dtype=float)
    rows, cols = m.shape
    margin = 70
    width = margin + cols * cell + 30
    height = margin + rows * cell + 30
    finite = m[np.isfinite(m)]
    lo = vmin if vmin is not None else (float(finite.min()) if finite.size else 0.0)
    hi = vmax if vmax is not None else (float(finite.max()) if finite.size else 1.0)
    if hi == lo:
        hi = lo + 1.0
    body = []
    if title:
        body.append(f'<text x="{width / 2}" y="22" text-anchor="middle" '
                    f'font-size="14">{title}</text>')
    for i in range(rows):
        for j in range(cols):
            v = m[i, j]
            x = margin + j * cell
            y = margin + i * cell
            if np.isfinite(v):
                color = _heat_color((v - lo) / (hi - lo))
                body.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" '
                            f'fill="{color}" stroke="#ccc"/>')
                body.append(f'<text x="{x + cell / 2}" y="{y + cell / 2 + 3}" '
                            f'text-anchor="middle" font-size="9">{v:.2f}</text>')
            else:
                body.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" '
                            f'fill="#eee" stroke="#ccc"/>')
    for i in range(rows):
        label = row_labels[i] if row_labels else str(i)
        body.append(f'<text x="{margin - 6}" y="{margin + i * cell + cell / 2 + 3}" '
                    f'text-anchor="end" font-size="10">{label}</text>')
    for j in range(cols):
        label = col_labels[j] if col_labels else str(j)
        body.append(f'<text x="{margin + j * cell + cell / 2}" y="{margin - 8}" '
                    f'text-anchor="middle" font-size="10">{label}</text>')
    Path(path).write_text(_svg(width, height, body))


def box_plot(stats: dict, path: str | Path, title: str = "",
             y_label: str = "", width: int = 720, height: int = 420) -> None:
    """stats maps group label -> BoxStats-like object (q1, median, q3,
    lo_whisker, hi_whisker, outliers)."""
    margin = 56
    pw, ph = width - 2 * margin, height - 2 * margin
    if not stats:
        Path(path).write_text(_svg(width, height, [
            f'<text x="{width / 2}" y="{height / 2}" text-anchor="middle">no data</text>']))
        return
    all_vals = []
    for s in stats.values():
        all_vals += [s.lo_whisker, s.hi_whisker] + list(s.outliers)
    y0, y1 = min(all_vals), max(all_vals)
    if y1 == y0:
        y1 = y0 + 1.0

    def sy(v):
        return height - margin - (v - y0) / (y1 - y0) * ph

    n = len(stats)
    slot = pw / n
    bw = slot * 0.5
    body = [f'<rect x="{margin}" y="{margin}" width="{pw}" height="{ph}" '
            'fill="none" stroke="#888"/>']
    if title:
        body.append(f'<text x="{width / 2}" y="24" text-anchor="middle" '
                    f'font-size="15">{title}</text>')
    body.append(f'<text x="16" y="{height / 2}" text-anchor="middle" font-size="12" '
                f'transform="rotate(-90 16 {height / 2})">{y_label}</text>')
    for tick in (y0, (y0 + y1) / 2, y1):
        body.append(f'<text x="{margin - 6}" y="{sy(tick):.1f}" text-anchor="end" '
                    f'font-size="10">{_fmt(tick)}</text>')
    for idx, (label, s) in enumerate(stats.items()):
        cx = margin + slot * (idx + 0.5)
        body.append(f'<line x1="{cx:.1f}" y1="{sy(s.lo_whisker):.1f}" '
                    f'x2="{cx:.1f}" y2="{sy(s.hi_whisker):.1f}" stroke="#333"/>')
        body.append(f'<rect x="{cx - bw / 2:.1f}" y="{sy(s.q3):.1f}" width="{bw:.1f}" '
                    f'height="{max(sy(s.q1) - sy(s.q3), 0.5):.1f}" '
                    'fill="#9ecae1" stroke="#333"/>')
        body.append(f'<line x1="{cx - bw / 2:.1f}" y1="{sy(s.median):.1f}" '
                    f'x2="{cx + bw / 2:.1f}" y2="{sy(s.median):.1f}" '
                    'stroke="#d62728" stroke-width="1.5"/>')
        for o in s.outliers:
            body.append(f'<circle cx="{cx:.1f}" cy="{sy(o):.1f}" r="2" '
                        'fill="none" stroke="#333"/>')
        body.append(f'<text x="{cx:.1f}" y="{height - margin + 16}" '
                    f'text-anchor="middle" font-size="10">{label}</text>')
    Path(path).write_text(_svg(width, height, body))
