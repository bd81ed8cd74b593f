"""Minimal SVG line charts (time on x, log10 on y)."""

from __future__ import annotations

import math

import numpy as np

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf")
W, H = 720, 420
ML, MR, MT, MB = 70, 150, 30, 45


def line_plot_svg(t, series: dict, title: str = "", ylabel: str = "cells") -> str:
    """Render named series against ``t``; nonpositive values are left out.

    A series may also be a ``(times, values)`` pair with its own time grid.
    """
    t = np.asarray(t, dtype=float)
    logs, grids = {}, {}
    for name, values in series.items():
        ti = t
        if isinstance(values, tuple):
            ti, values = values
        v = np.asarray(values, dtype=float)
        grids[name] = np.asarray(ti, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            logs[name] = np.where(v > 0, np.log10(np.where(v > 0, v, 1.0)), np.nan)
    finite = np.concatenate([y[np.isfinite(y)] for y in logs.values()] or [np.array([0.0])])
    if finite.size == 0:
        finite = np.array([0.0])
    y_lo = math.floor(float(finite.min()))
    y_hi = math.ceil(float(finite.max()))
    if y_hi == y_lo:
        y_hi += 1
    t_all = np.concatenate(list(grids.values()) or [t])
    t_lo, t_hi = float(t_all.min()), float(t_all.max())
    if t_hi == t_lo:
        t_hi = t_lo + 1.0

    def px(x):
        return ML + (x - t_lo) / (t_hi - t_lo) * (W - ML - MR)

    def py(y):
        return H - MB - (y - y_lo) / (y_hi - y_lo) * (H - MT - MB)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">',
           f'<rect width="{W}" height="{H}" fill="white"/>']
    if title:
        out.append(f'<text x="{W / 2:.1f}" y="18" text-anchor="middle" font-size="13">{_escape(title)}</text>')
    step = max(1, (y_hi - y_lo) // 8)
    for k in range(y_lo, y_hi + 1, step):
        y = py(k)
        out.append(f'<line x1="{ML}" x2="{W - MR}" y1="{y:.1f}" y2="{y:.1f}" stroke="#e0e0e0"/>')
        out.append(f'<text x="{ML - 6}" y="{y + 4:.1f}" text-anchor="end">1e{k}</text>')
    for x in np.linspace(t_lo, t_hi, 6):
        out.append(f'<text x="{px(x):.1f}" y="{H - MB + 16}" text-anchor="middle">{x:g}</text>')
    out.append(f'<rect x="{ML}" y="{MT}" width="{W - ML - MR}" height="{H - MT - MB}" fill="none" stroke="black"/>')
    out.append(f'<text x="{(ML + W - MR) / 2:.1f}" y="{H - 8}" text-anchor="middle">t (days)</text>')
    out.append(f'<text x="14" y="{H / 2:.1f}" transform="rotate(-90 14 {H / 2:.1f})" '
               f'text-anchor="middle">{_escape(ylabel)} (log10)</text>')
    for i, (name, y) in enumerate(logs.items()):
        color = _COLORS[i % len(_COLORS)]
        ti = grids[name]
        for seg in _runs(np.isfinite(y)):
            pts = " ".join(f"{px(ti[j]):.2f},{py(y[j]):.2f}" for j in seg)
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        ly = MT + 14 + 16 * i
        out.append(f'<line x1="{W - MR + 10}" x2="{W - MR + 30}" y1="{ly - 4}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{W - MR + 36}" y="{ly}">{_escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _runs(mask):
    """Index lists of consecutive True entries."""
    runs, cur = [], []
    for j, ok in enumerate(mask):
        if ok:
            cur.append(j)
        elif cur:
            runs.append(cur)
            cur = []
    if cur:
        runs.append(cur)
    return runs


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
