"""Self-contained SVG line charts (no plotting dependency)."""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")
MARKERS = ("circle", "square", "diamond", "triangle")


def _fmt(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".")


def _marker(shape, x, y, color):
    if shape == "circle":
        return f'<circle cx="{_fmt(x)}" cy="{_fmt(y)}" r="4" fill="{color}"/>'
    if shape == "square":
        return f'<rect x="{_fmt(x - 4)}" y="{_fmt(y - 4)}" width="8" height="8" fill="{color}"/>'
    if shape == "diamond":
        pts = f"{_fmt(x)},{_fmt(y - 5)} {_fmt(x + 5)},{_fmt(y)} {_fmt(x)},{_fmt(y + 5)} {_fmt(x - 5)},{_fmt(y)}"
    else:
        pts = f"{_fmt(x)},{_fmt(y - 5)} {_fmt(x + 5)},{_fmt(y + 4)} {_fmt(x - 5)},{_fmt(y + 4)}"
    return f'<polygon points="{pts}" fill="{color}"/>'


def line_chart(series, title: str, x_label: str, y_label: str, y_range=None, width=640, height=420) -> str:
    """Render ``series`` ({name: [(x, y), ...]}) as an SVG document string.

    Each series becomes exactly one ``<polyline>``.
    """
    if not series:
        raise ValueError("no series to plot")
    xs = sorted({x for pts in series.values() for x, _ in pts})
    ys = [y for pts in series.values() for _, y in pts]
    if not xs:
        raise ValueError("series are empty")
    lo, hi = y_range if y_range else (min(ys), max(ys))
    if hi - lo < 1e-9:
        lo, hi = lo - 0.05, hi + 0.05
    left, right, top, bottom = 70, width - 150, 40, height - 60
    x0, x1 = xs[0], xs[-1] if xs[-1] > xs[0] else xs[0] + 1.0

    def px(x):
        return left + (x - x0) / (x1 - x0) * (right - left)

    def py(y):
        return bottom - (y - lo) / (hi - lo) * (bottom - top)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.0f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{bottom}" stroke="black"/>',
    ]
    for x in xs:
        out.append(f'<line x1="{_fmt(px(x))}" y1="{bottom}" x2="{_fmt(px(x))}" y2="{bottom + 5}" stroke="black"/>')
        out.append(f'<text x="{_fmt(px(x))}" y="{bottom + 18}" text-anchor="middle">{_fmt(x)}</text>')
    for k in range(6):
        y = lo + (hi - lo) * k / 5
        out.append(f'<line x1="{left - 5}" y1="{_fmt(py(y))}" x2="{right}" y2="{_fmt(py(y))}" stroke="#dddddd"/>')
        out.append(f'<text x="{left - 8}" y="{_fmt(py(y) + 4)}" text-anchor="end">{y:.2f}</text>')
    out.append(f'<text x="{(left + right) / 2:.0f}" y="{height - 18}" text-anchor="middle">{escape(x_label)}</text>')
    out.append(
        f'<text x="18" y="{(top + bottom) / 2:.0f}" text-anchor="middle" transform="rotate(-90 18 {(top + bottom) / 2:.0f})">{escape(y_label)}</text>'
    )
    for k, (name, pts) in enumerate(series.items()):
        color = COLORS[k % len(COLORS)]
        pts = sorted(pts)
        coords = " ".join(f"{_fmt(px(x))},{_fmt(py(y))}" for x, y in pts)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{coords}"><title>{escape(name)}</title></polyline>')
        shape = MARKERS[k % len(MARKERS)]
        out.extend(_marker(shape, px(x), py(y), color) for x, y in pts)
        ly = top + 10 + 20 * k
        out.append(f'<line x1="{right + 15}" y1="{ly}" x2="{right + 40}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{right + 46}" y="{ly + 4}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_line_chart(path, series, **kwargs) -> Path:
    path = Path(path)
    path.write_text(line_chart(series, **kwargs))
    return path
