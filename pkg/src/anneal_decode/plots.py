"""Deterministic SVG chart of a chain trace (log-likelihood and temperature
against iteration). Hand-written SVG keeps the bytes stable across
platforms and library versions."""
from __future__ import annotations

import math
from typing import Sequence

from .sampler import MHRecord

WIDTH, PANEL_H, MARGIN = 640, 180, 48


def _scale(values, lo_px, hi_px):
    finite = [v for v in values if math.isfinite(v)]
    lo, hi = (min(finite), max(finite)) if finite else (0.0, 1.0)
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5

    def f(v):
        v = min(max(v, lo), hi) if math.isfinite(v) else lo
        return hi_px - (v - lo) / (hi - lo) * (hi_px - lo_px)

    return f, lo, hi


def _panel(xs, ys, top, label, color):
    y_of, lo, hi = _scale(ys, top + 10, top + PANEL_H - 10)
    x0, x1 = MARGIN, WIDTH - MARGIN / 2
    span = max(xs[-1] - xs[0], 1)
    pts = " ".join(
        f"{x0 + (x - xs[0]) / span * (x1 - x0):.2f},{y_of(y):.2f}" for x, y in zip(xs, ys)
    )
    return [
        f'<rect x="{x0}" y="{top}" width="{x1 - x0:.2f}" height="{PANEL_H}" fill="none" stroke="#999"/>',
        f'<text x="{x0 + 6}" y="{top + 16}" font-size="12">{label} [{lo:.4g}, {hi:.4g}]</text>',
        f'<polyline class="series" data-series="{label}" fill="none" stroke="{color}" '
        f'stroke-width="1.5" points="{pts}"/>',
    ]


def trace_svg(trace: Sequence[MHRecord]) -> str:
    if not trace:
        raise ValueError("cannot plot an empty trace")
    xs = [r.iteration for r in trace]
    height = 2 * PANEL_H + 3 * MARGIN // 2
    body = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" '
        f'viewBox="0 0 {WIDTH} {height}" font-family="sans-serif">',
        f'<text x="{MARGIN}" y="20" font-size="14">chain trace ({len(trace)} steps)</text>',
    ]
    body += _panel(xs, [r.logp_current for r in trace], 30, "logp_current", "#1f77b4")
    body += _panel(xs, [r.tau for r in trace], 30 + PANEL_H + MARGIN // 2, "tau", "#d62728")
    body.append(f'<text x="{WIDTH // 2}" y="{height - 8}" font-size="12">iteration</text>')
    body.append("</svg>")
    return "\n".join(body) + "\n"
