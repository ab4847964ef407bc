"""Minimal SVG renderings of report data: bars, curves and heatmaps.

Output is deterministic text (fixed number formatting, no ids or dates).
"""
from __future__ import annotations

from html import escape

import numpy as np


def _num(v):
    return f"{v:.2f}"


def _doc(width, height, body, comment=None):
    head = f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">'
    lines = [head]
    if comment:
        lines.append(f"<!-- {escape(comment)} -->")
    lines.append(f'<rect width="{width}" height="{height}" fill="white"/>')
    lines += body
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def bar_chart(labels, values, title="", comment=None) -> str:
    """Horizontal bars, longest first as given."""
    values = np.asarray(values, dtype=float)
    row, left, width = 18, 120, 260
    height = 30 + row * len(labels) + 10
    vmax = float(values.max()) if len(values) and values.max() > 0 else 1.0
    body = [f'<text x="8" y="16" font-weight="bold">{escape(title)}</text>']
    for i, (lab, v) in enumerate(zip(labels, values)):
        y = 26 + i * row
        w = max(0.0, v) / vmax * width
        body.append(f'<text x="{left - 6}" y="{_num(y + 12)}" text-anchor="end">{escape(str(lab))}</text>')
        body.append(f'<rect x="{left}" y="{y}" width="{_num(w)}" height="{row - 4}" fill="#4c72b0"/>')
        body.append(f'<text x="{_num(left + w + 4)}" y="{_num(y + 12)}">{v:.4g}</text>')
    return _doc(left + width + 70, height, body, comment)


def line_panels(curves, title="", comment=None, cols=3) -> str:
    """One small panel per ``(name, x, y)`` curve."""
    pw, ph, pad = 200, 130, 30
    n = len(curves)
    rows = max(1, -(-n // cols))
    body = [f'<text x="8" y="16" font-weight="bold">{escape(title)}</text>']
    for k, (name, x, y) in enumerate(curves):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        ox = 10 + (k % cols) * (pw + pad)
        oy = 26 + (k // cols) * (ph + pad)
        body.append(f'<rect x="{ox}" y="{oy}" width="{pw}" height="{ph}" fill="none" stroke="#999"/>')
        body.append(f'<text x="{ox + 4}" y="{oy + 12}">{escape(str(name))}</text>')
        xr = np.ptp(x) or 1.0
        yr = np.ptp(y) or 1.0
        px = ox + 8 + (x - x.min()) / xr * (pw - 16)
        py = oy + ph - 8 - (y - y.min()) / yr * (ph - 28)
        pts = " ".join(f"{_num(a)},{_num(b)}" for a, b in zip(px, py))
        body.append(f'<polyline points="{pts}" fill="none" stroke="#c44e52" stroke-width="1.5"/>')
    return _doc(10 + cols * (pw + pad), 26 + rows * (ph + pad), body, comment)


def heatmap(labels, matrix, title="", comment=None, col_labels=None, vmin=-1.0, vmax=1.0) -> str:
    """Diverging blue-white-red cells with the value printed inside."""
    M = np.asarray(matrix, dtype=float)
    col_labels = labels if col_labels is None else col_labels
    cell, left, top = 44, 120, 110
    body = [f'<text x="8" y="16" font-weight="bold">{escape(title)}</text>']
    for j, lab in enumerate(col_labels):
        x = left + j * cell + cell / 2
        body.append(f'<text x="{_num(x)}" y="{top - 6}" transform="rotate(-45 {_num(x)} {top - 6})">{escape(str(lab))}</text>')
    for i, lab in enumerate(labels):
        y = top + i * cell
        body.append(f'<text x="{left - 6}" y="{_num(y + cell / 2 + 4)}" text-anchor="end">{escape(str(lab))}</text>')
        for j in range(M.shape[1]):
            v = M[i, j]
            if np.isnan(v):
                fill, txt = "#dddddd", "NA"
            else:
                t = float(np.clip((v - vmin) / (vmax - vmin), 0, 1)) * 2 - 1
                if t >= 0:
                    c = int(round(255 * (1 - t)))
                    fill = f"#ff{c:02x}{c:02x}"
                else:
                    c = int(round(255 * (1 + t)))
                    fill = f"#{c:02x}{c:02x}ff"
                txt = f"{v:.2f}"
            body.append(f'<rect x="{left + j * cell}" y="{y}" width="{cell}" height="{cell}" fill="{fill}" stroke="white"/>')
            body.append(f'<text x="{_num(left + j * cell + cell / 2)}" y="{_num(y + cell / 2 + 4)}" text-anchor="middle">{txt}</text>')
    return _doc(left + cell * M.shape[1] + 20, top + cell * M.shape[0] + 20, body, comment)
