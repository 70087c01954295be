"""Minimal standalone SVG log-log plots (no plotting dependency chain)."""

from __future__ import annotations

import math

WIDTH, HEIGHT = 640, 480
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 20, 40, 50


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def loglog_svg(points, fit=None, band=None, title="", xlabel="", ylabel="") -> str:
    """Log-log scatter with an optional fitted line and exponent band.

    points: [(x, y), ...] with x, y > 0.
    fit: (slope, intercept) of log y = intercept + slope * log x.
    band: (slope_lo, slope_hi) drawn as dashed lines through the data's
    log-centroid (the theorem target exponents).
    Output text is deterministic for identical inputs.
    """
    xs = [math.log10(p[0]) for p in points]
    ys = [math.log10(p[1]) for p in points]
    if not xs:
        raise ValueError("no points to plot")
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    padx = 0.05 * (x1 - x0 or 1.0)
    pady = 0.15 * (y1 - y0 or 1.0)
    x0, x1 = x0 - padx, x1 + padx
    y0, y1 = y0 - pady, y1 + pady

    def sx(lx):
        return MARGIN_L + (lx - x0) / (x1 - x0) * (WIDTH - MARGIN_L - MARGIN_R)

    def sy(ly):
        return HEIGHT - MARGIN_B - (ly - y0) / (y1 - y0) * (HEIGHT - MARGIN_T - MARGIN_B)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" '
        f'height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH // 2}" y="24" text-anchor="middle" '
        f'font-family="sans-serif" font-size="15">{title}</text>',
    ]

    # axes box and decade ticks
    parts.append(
        f'<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{WIDTH - MARGIN_L - MARGIN_R}" '
        f'height="{HEIGHT - MARGIN_T - MARGIN_B}" fill="none" stroke="black"/>')
    for d in range(math.floor(x0), math.ceil(x1) + 1):
        if x0 <= d <= x1:
            parts.append(f'<line x1="{_fmt(sx(d))}" y1="{HEIGHT - MARGIN_B}" '
                         f'x2="{_fmt(sx(d))}" y2="{HEIGHT - MARGIN_B + 6}" stroke="black"/>')
            parts.append(f'<text x="{_fmt(sx(d))}" y="{HEIGHT - MARGIN_B + 20}" '
                         f'text-anchor="middle" font-family="sans-serif" '
                         f'font-size="11">1e{d}</text>')
    for d in range(math.floor(y0), math.ceil(y1) + 1):
        if y0 <= d <= y1:
            parts.append(f'<line x1="{MARGIN_L - 6}" y1="{_fmt(sy(d))}" '
                         f'x2="{MARGIN_L}" y2="{_fmt(sy(d))}" stroke="black"/>')
            parts.append(f'<text x="{MARGIN_L - 10}" y="{_fmt(sy(d) + 4)}" '
                         f'text-anchor="end" font-family="sans-serif" '
                         f'font-size="11">1e{d}</text>')
    parts.append(f'<text x="{WIDTH // 2}" y="{HEIGHT - 10}" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="13">{xlabel}</text>')
    parts.append(f'<text x="16" y="{HEIGHT // 2}" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="13" '
                 f'transform="rotate(-90 16 {HEIGHT // 2})">{ylabel}</text>')

    cx = sum(xs) / len(xs)
    cy = sum(ys) / len(ys)
    ln10 = math.log(10.0)

    if band is not None:
        for slope, dash in zip(band, ("6,4", "6,4")):
            ya = cy + slope * (x0 - cx)
            yb = cy + slope * (x1 - cx)
            parts.append(
                f'<line x1="{_fmt(sx(x0))}" y1="{_fmt(sy(ya))}" '
                f'x2="{_fmt(sx(x1))}" y2="{_fmt(sy(yb))}" stroke="#888888" '
                f'stroke-dasharray="{dash}"/>')
        parts.append(
            f'<text x="{WIDTH - MARGIN_R - 6}" y="{MARGIN_T + 16}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11" fill="#555555">target band '
            f'[{_fmt(band[0])}, {_fmt(band[1])}]</text>')

    if fit is not None:
        slope, intercept = fit
        # fit given in natural logs: log y = intercept + slope log x
        ya = (intercept + slope * (x0 * ln10)) / ln10
        yb = (intercept + slope * (x1 * ln10)) / ln10
        parts.append(
            f'<line x1="{_fmt(sx(x0))}" y1="{_fmt(sy(ya))}" '
            f'x2="{_fmt(sx(x1))}" y2="{_fmt(sy(yb))}" stroke="#cc3311" '
            f'stroke-width="1.5"/>')
        parts.append(
            f'<text x="{WIDTH - MARGIN_R - 6}" y="{MARGIN_T + 32}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11" fill="#cc3311">fitted slope '
            f'{_fmt(slope)}</text>')

    for lx, ly in zip(xs, ys):
        parts.append(f'<circle cx="{_fmt(sx(lx))}" cy="{_fmt(sy(ly))}" r="4" '
                     f'fill="#0077bb"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
