"""Dependency-free SVG bar and line charts.

Every chart the pipeline emits is paired with CSV/JSON of the same
numbers; these renderings are for eyeballs only. Output is deterministic
(fixed canvas, coordinates rounded to 2 decimals).
"""

from __future__ import annotations

W, H = 640, 400
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 20, 40, 110

PALETTE = ["#2b6cb0", "#c05621", "#2f855a", "#9b2c2c", "#6b46c1", "#4a5568"]


def _esc(text: str) -> str:
    return (str(text).replace("&", "&amp;").replace("<", "&lt;")
            .replace(">", "&gt;"))


def _frame(title: str, body: list[str]) -> str:
    head = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
        f'viewBox="0 0 {W} {H}">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2}" y="24" text-anchor="middle" '
        f'font-family="sans-serif" font-size="16">{_esc(title)}</text>',
    ]
    return "\n".join(head + body + ["</svg>"]) + "\n"


def _yticks(lo: float, hi: float, plot_h: float):
    if hi <= lo:
        hi = lo + 1.0
    lines = []
    for i in range(5):
        val = lo + (hi - lo) * i / 4
        y = round(MARGIN_T + plot_h * (1 - i / 4), 2)
        lines.append(
            f'<line x1="{MARGIN_L}" y1="{y}" x2="{W - MARGIN_R}" y2="{y}" '
            f'stroke="#ddd"/>'
            f'<text x="{MARGIN_L - 8}" y="{y + 4}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11">{val:.3g}</text>'
        )
    return lines, lo, hi


def bar_chart_svg(labels, values, title: str) -> str:
    values = [float(v) for v in values]
    plot_w = W - MARGIN_L - MARGIN_R
    plot_h = H - MARGIN_T - MARGIN_B
    lo = min(0.0, min(values, default=0.0))
    hi = max(0.0, max(values, default=1.0))
    body, lo, hi = _yticks(lo, hi, plot_h)
    n = max(len(values), 1)
    step = plot_w / n
    for i, (lab, val) in enumerate(zip(labels, values)):
        frac_top = (max(val, 0.0) - lo) / (hi - lo)
        frac_bot = (min(val, 0.0) - lo) / (hi - lo)
        y = round(MARGIN_T + plot_h * (1 - frac_top), 2)
        h = round(plot_h * (frac_top - frac_bot), 2)
        x = round(MARGIN_L + step * i + step * 0.15, 2)
        body.append(
            f'<rect x="{x}" y="{y}" width="{round(step * 0.7, 2)}" '
            f'height="{h}" fill="{PALETTE[0]}"/>'
        )
        cx = round(MARGIN_L + step * (i + 0.5), 2)
        ty = H - MARGIN_B + 14
        body.append(
            f'<text x="{cx}" y="{ty}" text-anchor="end" '
            f'font-family="sans-serif" font-size="10" '
            f'transform="rotate(-45 {cx} {ty})">{_esc(lab)}</text>'
        )
    return _frame(title, body)


def line_chart_svg(series: dict, title: str, x_label: str = "epoch") -> str:
    plot_w = W - MARGIN_L - MARGIN_R
    plot_h = H - MARGIN_T - MARGIN_B
    all_vals = [float(v) for ys in series.values() for v in ys]
    lo = min(all_vals, default=0.0)
    hi = max(all_vals, default=1.0)
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    body, lo, hi = _yticks(lo, hi, plot_h)
    n = max((len(ys) for ys in series.values()), default=1)
    for si, (name, ys) in enumerate(series.items()):
        pts = []
        for i, v in enumerate(ys):
            x = MARGIN_L + (plot_w * i / max(n - 1, 1))
            y = MARGIN_T + plot_h * (1 - (float(v) - lo) / (hi - lo))
            pts.append(f"{round(x, 2)},{round(y, 2)}")
        color = PALETTE[si % len(PALETTE)]
        body.append(
            f'<polyline points="{" ".join(pts)}" fill="none" '
            f'stroke="{color}" stroke-width="2"/>'
        )
        body.append(
            f'<text x="{W - MARGIN_R - 4}" y="{MARGIN_T + 16 + 14 * si}" '
            f'text-anchor="end" font-family="sans-serif" font-size="11" '
            f'fill="{color}">{_esc(name)}</text>'
        )
    body.append(
        f'<text x="{MARGIN_L + plot_w / 2}" y="{H - 8}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12">{_esc(x_label)}</text>'
    )
    return _frame(title, body)


def save_svg(path, svg: str):
    with open(path, "w") as fh:
        fh.write(svg)
