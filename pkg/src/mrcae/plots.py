"""Minimal static SVG line charts with optional log axes."""
from __future__ import annotations

import math
from xml.sax.saxutils import escape

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"]

_W, _H = 640, 440
_L, _R, _T, _B = 80, 150, 40, 60


def _axis(values, log):
    vals = [v for v in values if math.isfinite(v) and (v > 0 or not log)]
    if not vals:
        return (0.0, 1.0), lambda v: 0.0
    f = math.log10 if log else (lambda v: v)
    lo, hi = min(f(v) for v in vals), max(f(v) for v in vals)
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    floor = min(vals)

    def to_unit(v):
        if log:
            v = max(v, floor)
        return (f(v) - lo) / (hi - lo)

    return (lo, hi), to_unit


def _ticks(lo, hi, log):
    if log:
        a, b = math.floor(lo), math.ceil(hi)
        return [(e, f"1e{e}") for e in range(a, b + 1) if lo - 1e-9 <= e <= hi + 1e-9] or [(lo, f"{10**lo:.3g}")]
    return [(lo + (hi - lo) * i / 4, f"{lo + (hi - lo) * i / 4:.3g}") for i in range(5)]


def line_chart(series: dict[str, list[tuple[float, float]]], title: str, xlabel: str, ylabel: str,
               logx: bool = False, logy: bool = True) -> str:
    """Render ``{name: [(x, y), ...]}`` as an SVG document with one polyline per series."""
    xs = [x for pts in series.values() for x, _ in pts]
    ys = [y for pts in series.values() for _, y in pts]
    (xlo, xhi), ux = _axis(xs, logx)
    (ylo, yhi), uy = _axis(ys, logy)
    pw, ph = _W - _L - _R, _H - _T - _B

    def px(x, y):
        return _L + ux(x) * pw, _T + (1.0 - uy(y)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}">',
        f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2:.1f}" y="24" text-anchor="middle" font-size="15">{escape(title)}</text>',
        f'<rect x="{_L}" y="{_T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for v, label in _ticks(xlo, xhi, logx):
        x = _L + (v - xlo) / (xhi - xlo) * pw
        out.append(f'<line x1="{x:.1f}" y1="{_T + ph}" x2="{x:.1f}" y2="{_T + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{x:.1f}" y="{_T + ph + 18}" text-anchor="middle" font-size="11">{label}</text>')
    for v, label in _ticks(ylo, yhi, logy):
        y = _T + (1.0 - (v - ylo) / (yhi - ylo)) * ph
        out.append(f'<line x1="{_L - 5}" y1="{y:.1f}" x2="{_L}" y2="{y:.1f}" stroke="black"/>')
        out.append(f'<text x="{_L - 8}" y="{y + 4:.1f}" text-anchor="end" font-size="11">{label}</text>')
    out.append(f'<text x="{_L + pw / 2:.1f}" y="{_H - 15}" text-anchor="middle" font-size="13">{escape(xlabel)}</text>')
    out.append(f'<text x="18" y="{_T + ph / 2:.1f}" text-anchor="middle" font-size="13" '
               f'transform="rotate(-90 18 {_T + ph / 2:.1f})">{escape(ylabel)}</text>')
    for i, (name, pts) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        coords = " ".join(f"{a:.2f},{b:.2f}" for a, b in (px(x, y) for x, y in pts
                                                         if math.isfinite(x) and math.isfinite(y)))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{coords}">'
                   f'<title>{escape(name)}</title></polyline>')
        ly = _T + 14 + 18 * i
        out.append(f'<line x1="{_L + pw + 12}" y1="{ly}" x2="{_L + pw + 32}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{_L + pw + 38}" y="{ly + 4}" font-size="12">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
