"""Minimal self-contained SVG line and bar charts."""

from __future__ import annotations

from xml.sax.saxutils import escape

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
           "#bcbd22", "#17becf"]

WIDTH, HEIGHT = 640, 400
MARGIN = {"left": 60, "right": 150, "top": 40, "bottom": 50}


def _frame(title, xlabel, ylabel, ymin, ymax):
    plot_w = WIDTH - MARGIN["left"] - MARGIN["right"]
    plot_h = HEIGHT - MARGIN["top"] - MARGIN["bottom"]
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<rect x="{MARGIN["left"]}" y="{MARGIN["top"]}" width="{plot_w}" height="{plot_h}" '
        f'fill="none" stroke="black"/>',
        f'<text x="{MARGIN["left"] + plot_w / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle">'
        f'{escape(xlabel)}</text>',
        f'<text x="15" y="{MARGIN["top"] + plot_h / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 15 {MARGIN["top"] + plot_h / 2:.1f})">{escape(ylabel)}</text>',
    ]
    for i in range(5):
        v = ymin + (ymax - ymin) * i / 4
        y = MARGIN["top"] + plot_h * (1 - i / 4)
        out.append(f'<line x1="{MARGIN["left"] - 4}" y1="{y:.1f}" x2="{MARGIN["left"]}" y2="{y:.1f}" '
                   f'stroke="black"/>')
        out.append(f'<text x="{MARGIN["left"] - 6}" y="{y + 4:.1f}" text-anchor="end">{v:.0f}</text>')
    return out, plot_w, plot_h


def _legend(out, names):
    x = WIDTH - MARGIN["right"] + 10
    for i, name in enumerate(names):
        y = MARGIN["top"] + 10 + 18 * i
        color = PALETTE[i % len(PALETTE)]
        out.append(f'<rect x="{x}" y="{y - 9}" width="12" height="12" fill="{color}"/>')
        out.append(f'<text x="{x + 18}" y="{y + 2}">{escape(name)}</text>')


def line_chart(series: dict, title="", xlabel="", ylabel="", ymin=0.0, ymax=100.0) -> str:
    """``series`` maps a name to a list of ``(x, y)`` points."""
    xs = [x for pts in series.values() for x, _ in pts] or [0, 1]
    xmin, xmax = min(xs), max(xs)
    if xmax == xmin:
        xmax = xmin + 1
    out, plot_w, plot_h = _frame(title, xlabel, ylabel, ymin, ymax)

    def px(x):
        return MARGIN["left"] + plot_w * (x - xmin) / (xmax - xmin)

    def py(y):
        return MARGIN["top"] + plot_h * (1 - (y - ymin) / (ymax - ymin))

    for x in sorted(set(xs)):
        out.append(f'<text x="{px(x):.1f}" y="{MARGIN["top"] + plot_h + 16}" text-anchor="middle">'
                   f'{x:g}</text>')
    for i, (name, pts) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        coords = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in pts)
        out.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="2">'
                   f'<title>{escape(name)}</title></polyline>')
        for x, y in pts:
            out.append(f'<circle cx="{px(x):.1f}" cy="{py(y):.1f}" r="3" fill="{color}"/>')
    _legend(out, list(series))
    out.append("</svg>")
    return "\n".join(out) + "\n"


def bar_chart(values: dict, title="", ylabel="", ymin=0.0, ymax=100.0) -> str:
    """One bar per entry of ``values`` (name -> height), labelled with its value."""
    out, plot_w, plot_h = _frame(title, "", ylabel, ymin, ymax)
    n = max(len(values), 1)
    slot = plot_w / n
    for i, (name, v) in enumerate(values.items()):
        color = PALETTE[i % len(PALETTE)]
        h = plot_h * (min(max(v, ymin), ymax) - ymin) / (ymax - ymin)
        x = MARGIN["left"] + slot * i + slot * 0.15
        y = MARGIN["top"] + plot_h - h
        out.append(f'<rect x="{x:.1f}" y="{y:.1f}" width="{slot * 0.7:.1f}" height="{h:.1f}" fill="{color}">'
                   f'<title>{escape(name)}: {v:.2f}</title></rect>')
        out.append(f'<text x="{x + slot * 0.35:.1f}" y="{y - 4:.1f}" text-anchor="middle">{v:.2f}</text>')
        out.append(f'<text x="{x + slot * 0.35:.1f}" y="{MARGIN["top"] + plot_h + 16}" '
                   f'text-anchor="middle">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
