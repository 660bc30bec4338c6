"""F1-versus-anticipation-time line plot as a standalone SVG file."""

from xml.sax.saxutils import escape

from ..errors import ContractError

WIDTH, HEIGHT = 480, 320
MARGIN = 48
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _x_map(times):
    lo, hi = min(times), max(times)
    span = hi - lo
    inner = WIDTH - 2 * MARGIN

    # largest t_a on the left, so the action approaches to the right
    def x(t):
        return MARGIN + (inner / 2 if span == 0 else inner * (hi - t) / span)

    return x


def _y(f1):
    return HEIGHT - MARGIN - (HEIGHT - 2 * MARGIN) * f1


def polyline_points(report, x):
    rows = sorted(report.rows, key=lambda r: -r.t_a)
    return [(x(r.t_a), _y(r.f1)) for r in rows]


def render_svg(reports):
    """SVG text with one polyline per ``(name, report)`` pair."""
    if not reports:
        raise ContractError("plot needs at least one report")
    times = [r.t_a for _, rep in reports for r in rep.rows]
    if not times:
        raise ContractError("plot needs reports with at least one anticipation time")
    x = _x_map(times)
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - MARGIN}" '
        f'y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
    ]
    for v in (0.0, 0.5, 1.0):
        out.append(f'<text x="{MARGIN - 6}" y="{_y(v) + 4:.2f}" font-size="10" '
                   f'text-anchor="end">{v:.1f}</text>')
    for t in sorted(set(times), reverse=True):
        out.append(f'<text x="{x(t):.2f}" y="{HEIGHT - MARGIN + 14}" font-size="10" '
                   f'text-anchor="middle">{t:g}</text>')
    out.append(f'<text x="{WIDTH / 2:.0f}" y="{HEIGHT - 10}" font-size="11" '
               f'text-anchor="middle">anticipation time (s)</text>')
    out.append(f'<text x="12" y="{HEIGHT / 2:.0f}" font-size="11" text-anchor="middle" '
               f'transform="rotate(-90 12 {HEIGHT / 2:.0f})">F1</text>')
    for i, (name, rep) in enumerate(reports):
        color = COLORS[i % len(COLORS)]
        pts = " ".join(f"{px:.2f},{py:.2f}" for px, py in polyline_points(rep, x))
        out.append(f'<polyline data-name="{escape(str(name))}" points="{pts}" fill="none" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{WIDTH - MARGIN + 4}" y="{MARGIN + 14 * i}" font-size="10" '
                   f'fill="{color}">{escape(str(name))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def plot_f1_over_time(reports, path):
    svg = render_svg(reports)
    with open(path, "w") as fh:
        fh.write(svg)
    return path
