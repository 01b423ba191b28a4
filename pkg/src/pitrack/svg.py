"""Hand-rolled SVG emitters for heat maps and line plots.

CSV files are the canonical outputs; these exist so assignment matrices and
DET curves can be eyeballed without a plotting stack.
"""

from __future__ import annotations

import math


def _esc(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _heat_color(v: float) -> str:
    """0 -> near white, 1 -> dark blue."""
    v = min(1.0, max(0.0, v))
    r = int(247 - 215 * v)
    g = int(251 - 180 * v)
    b = int(255 - 108 * v)
    return f"rgb({r},{g},{b})"


def heatmap(matrix, col_labels, row_labels, path, title="", cell=26):
    """Write a labeled heat map of values in [0, 1]."""
    rows = len(matrix)
    cols = len(matrix[0]) if rows else 0
    left, top = 64, 42
    width = left + cols * cell + 16
    height = top + rows * cell + 28
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="monospace" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    if title:
        parts.append(f'<text x="{left}" y="16" font-size="13">{_esc(title)}</text>')
    for j, label in enumerate(col_labels):
        x = left + j * cell + cell // 2
        parts.append(
            f'<text x="{x}" y="{top - 6}" text-anchor="middle">{_esc(str(label))}</text>'
        )
    for i, row in enumerate(matrix):
        y = top + i * cell
        parts.append(
            f'<text x="{left - 6}" y="{y + cell * 0.65}" text-anchor="end">'
            f"{_esc(str(row_labels[i]))}</text>"
        )
        for j, v in enumerate(row):
            x = left + j * cell
            parts.append(
                f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" '
                f'fill="{_heat_color(float(v))}" stroke="#ccc" stroke-width="0.5"/>'
            )
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts))
        fh.write("\n")


def line_plot(series, path, title="", x_label="", y_label="", size=(460, 340)):
    """Plot named (x, y) series; series is {name: (xs, ys)}."""
    width, height = size
    left, right, top, bottom = 58, 16, 34, 44
    plot_w, plot_h = width - left - right, height - top - bottom

    all_x = [x for xs, _ in series.values() for x in xs]
    all_y = [y for _, ys in series.values() for y in ys]
    if not all_x:
        all_x, all_y = [0.0, 1.0], [0.0, 1.0]
    x_lo, x_hi = min(all_x), max(all_x)
    y_lo, y_hi = min(all_y), max(all_y)
    if math.isclose(x_lo, x_hi):
        x_hi = x_lo + 1.0
    if math.isclose(y_lo, y_hi):
        y_hi = y_lo + 1.0

    def sx(x):
        return left + (x - x_lo) / (x_hi - x_lo) * plot_w

    def sy(y):
        return top + plot_h - (y - y_lo) / (y_hi - y_lo) * plot_h

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="monospace" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{left}" y="{top}" width="{plot_w}" height="{plot_h}" '
        f'fill="none" stroke="#333"/>',
    ]
    if title:
        parts.append(f'<text x="{left}" y="18" font-size="13">{_esc(title)}</text>')
    for k in range(5):
        fx = x_lo + (x_hi - x_lo) * k / 4
        fy = y_lo + (y_hi - y_lo) * k / 4
        parts.append(
            f'<text x="{sx(fx):.1f}" y="{height - bottom + 16}" text-anchor="middle">'
            f"{fx:.3g}</text>"
        )
        parts.append(
            f'<text x="{left - 6}" y="{sy(fy):.1f}" text-anchor="end">{fy:.3g}</text>'
        )
    if x_label:
        parts.append(
            f'<text x="{left + plot_w / 2:.0f}" y="{height - 8}" text-anchor="middle">'
            f"{_esc(x_label)}</text>"
        )
    if y_label:
        parts.append(
            f'<text x="14" y="{top + plot_h / 2:.0f}" text-anchor="middle" '
            f'transform="rotate(-90 14 {top + plot_h / 2:.0f})">{_esc(y_label)}</text>'
        )
    for k, (name, (xs, ys)) in enumerate(series.items()):
        color = colors[k % len(colors)]
        pts = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in zip(xs, ys))
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.6"/>'
        )
        for x, y in zip(xs, ys):
            parts.append(f'<circle cx="{sx(x):.1f}" cy="{sy(y):.1f}" r="2.4" fill="{color}"/>')
        parts.append(
            f'<text x="{width - right - 6}" y="{top + 14 + 14 * k}" text-anchor="end" '
            f'fill="{color}">{_esc(name)}</text>'
        )
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts))
        fh.write("\n")
