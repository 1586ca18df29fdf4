"""Minimal SVG line charts of solver convergence."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"]


def _nice_ticks(lo, hi, n=5):
    if not math.isfinite(lo) or not math.isfinite(hi):
        return [0.0, 1.0]
    if hi <= lo:
        hi = lo + (abs(lo) or 1.0)
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=10 * mag)
    start = math.floor(lo / step) * step
    ticks = []
    v = start
    while v <= hi + 1e-9 * step:
        ticks.append(round(v, 12))
        v += step
    if ticks[-1] < hi:
        ticks.append(round(ticks[-1] + step, 12))
    return ticks


def _panel(x0, y0, w, h, title, ylabel, series):
    """One chart; ``series`` is a list of (label, values)."""
    out = []
    values = [v for _, vals in series for v in vals if math.isfinite(v)]
    n_max = max((len(vals) for _, vals in series), default=1)
    yt = _nice_ticks(0.0, max(values, default=1.0))
    xt = _nice_ticks(0.0, max(n_max - 1, 1))
    ymax, xmax = yt[-1], xt[-1]

    def px(i):
        return x0 + w * i / xmax

    def py(v):
        return y0 + h - h * v / ymax

    out.append(f'<text x="{x0 + w / 2:.1f}" y="{y0 - 10:.1f}" text-anchor="middle" '
               f'font-size="14">{escape(title)}</text>')
    out.append(f'<rect x="{x0}" y="{y0}" width="{w}" height="{h}" fill="none" stroke="#333"/>')
    for v in yt:
        y = py(v)
        out.append(f'<line x1="{x0}" y1="{y:.1f}" x2="{x0 + w}" y2="{y:.1f}" stroke="#ddd"/>')
        out.append(f'<text x="{x0 - 6}" y="{y + 4:.1f}" text-anchor="end" font-size="11">{v:g}</text>')
    for v in xt:
        x = px(v)
        out.append(f'<text x="{x:.1f}" y="{y0 + h + 16}" text-anchor="middle" font-size="11">{v:g}</text>')
    out.append(f'<text x="{x0 + w / 2:.1f}" y="{y0 + h + 34}" text-anchor="middle" '
               f'font-size="12">iteration</text>')
    out.append(f'<text x="{x0 - 44}" y="{y0 + h / 2:.1f}" text-anchor="middle" font-size="12" '
               f'transform="rotate(-90 {x0 - 44} {y0 + h / 2:.1f})">{escape(ylabel)}</text>')
    for k, (label, vals) in enumerate(series):
        pts = " ".join(f"{px(i):.1f},{py(v):.1f}" for i, v in enumerate(vals) if math.isfinite(v))
        if pts:
            out.append(f'<polyline points="{pts}" fill="none" stroke="{PALETTE[k % len(PALETTE)]}" '
                       f'stroke-width="2"/>')
    return out


def convergence_svg(reports, width=900, height=360):
    """Side-by-side ATE_pos and ATE_rot versus iteration for each
    ``(label, SolveReport)``.  Reports without ground-truth tracking fall
    back to a single cost panel."""
    reports = list(reports)
    tracked = [r for _, r in reports if r.ate_pos]
    margin_l, margin_t, gap = 70, 40, 90
    legend_h = 22 * len(reports) + 10
    ph = height - margin_t - 60
    parts = []
    if tracked and len(tracked) == len(reports):
        pw = (width - margin_l - gap - 20) / 2
        parts += _panel(margin_l, margin_t, pw, ph, "Translation error", "ATE_pos (m)",
                        [(lab, r.ate_pos) for lab, r in reports])
        parts += _panel(margin_l + pw + gap, margin_t, pw, ph, "Rotation error", "ATE_rot (deg)",
                        [(lab, r.ate_rot) for lab, r in reports])
    else:
        pw = width - margin_l - 20
        parts += _panel(margin_l, margin_t, pw, ph, "Cost", "cost", [(lab, r.cost) for lab, r in reports])
    ly = height + 10
    for k, (label, _) in enumerate(reports):
        y = ly + 22 * k
        c = PALETTE[k % len(PALETTE)]
        parts.append(f'<line x1="{margin_l}" y1="{y}" x2="{margin_l + 24}" y2="{y}" stroke="{c}" '
                     f'stroke-width="3"/>')
        parts.append(f'<text x="{margin_l + 32}" y="{y + 4}" font-size="12">{escape(str(label))}</text>')
    total_h = height + legend_h
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{total_h}" '
            f'viewBox="0 0 {width} {total_h}" font-family="sans-serif">')
    return "\n".join([head, f'<rect width="{width}" height="{total_h}" fill="white"/>', *parts,
                      "</svg>"]) + "\n"
