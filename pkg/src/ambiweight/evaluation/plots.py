"""Plain SVG line charts of AUC against the modifier mean."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .sweep import BASELINE

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf")
W, H = 520, 340
LEFT, RIGHT, TOP, BOTTOM = 60, 150, 36, 44


def _means(rows, head: str) -> tuple[list[float], list[float], float | None]:
    by_mu: dict[float, list[float]] = {}
    base: list[float] = []
    for label, _, h, auc in rows:
        if h != head or math.isnan(auc):
            continue
        if label == BASELINE:
            base.append(auc)
            continue
        try:
            by_mu.setdefault(float(label), []).append(auc)
        except ValueError:
            continue  # other named arms (unweighted) are not plotted against mu
    xs = sorted(by_mu)
    return xs, [float(np.mean(by_mu[x])) for x in xs], float(np.mean(base)) if base else None


def render_family_svg(rows: Sequence[tuple[str, int, str, float]], heads: Sequence[str], title: str) -> str:
    series = [(h, *_means(rows, h)) for h in heads]
    values = [v for _, _, ys, b in series for v in ys + ([b] if b is not None else [])]
    lo = min(values, default=0.5)
    hi = max(values, default=1.0)
    lo, hi = math.floor(lo * 20) / 20, math.ceil(hi * 20) / 20
    if hi <= lo:
        hi = lo + 0.05
    pw, ph = W - LEFT - RIGHT, H - TOP - BOTTOM

    def sx(x):
        return LEFT + pw * x

    def sy(y):
        return TOP + ph * (1 - (y - lo) / (hi - lo))

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2:.1f}" y="20" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<line x1="{LEFT}" y1="{TOP + ph}" x2="{LEFT + pw}" y2="{TOP + ph}" stroke="black"/>',
        f'<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{TOP + ph}" stroke="black"/>',
    ]
    for i in range(11):
        x = i / 10
        out.append(f'<text x="{sx(x):.1f}" y="{TOP + ph + 16}" text-anchor="middle">{x:.1f}</text>')
    n_ticks = int(round((hi - lo) / 0.05))
    for i in range(n_ticks + 1):
        y = lo + 0.05 * i
        out.append(f'<line x1="{LEFT - 4}" y1="{sy(y):.1f}" x2="{LEFT}" y2="{sy(y):.1f}" stroke="black"/>')
        out.append(f'<text x="{LEFT - 7}" y="{sy(y) + 4:.1f}" text-anchor="end">{y:.2f}</text>')
    out.append(f'<text x="{LEFT + pw / 2:.1f}" y="{H - 8}" text-anchor="middle">modifier mean (mu)</text>')
    out.append(
        f'<text x="14" y="{TOP + ph / 2:.1f}" text-anchor="middle" transform="rotate(-90 14 {TOP + ph / 2:.1f})">AUC</text>'
    )
    for i, (head, xs, ys, base) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        if xs:
            pts = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in zip(xs, ys))
            out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')
            for x, y in zip(xs, ys):
                out.append(f'<circle cx="{sx(x):.1f}" cy="{sy(y):.1f}" r="3" fill="{color}"/>')
        if base is not None:
            out.append(
                f'<line x1="{LEFT}" y1="{sy(base):.1f}" x2="{LEFT + pw}" y2="{sy(base):.1f}" '
                f'stroke="{color}" stroke-dasharray="5,4"/>'
            )
        ly = TOP + 14 + 18 * i
        out.append(f'<line x1="{LEFT + pw + 12}" y1="{ly - 4}" x2="{LEFT + pw + 30}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{LEFT + pw + 35}" y="{ly}">{escape(head)}</text>')
    out.append(f'<text x="{LEFT + pw + 12}" y="{TOP + 14 + 18 * len(series)}" fill="#555">dashed: baseline</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_family_charts(rows, head_names: Sequence[str], out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for family, heads in (("positive", head_names[0::2]), ("negated", head_names[1::2])):
        path = out_dir / f"auc_{family}.svg"
        path.write_text(render_family_svg(rows, heads, f"AUC vs mu, {family} heads"), encoding="utf-8")
        paths.append(path)
    return paths


def head_names_from_rows(rows) -> list[str]:
    seen: list[str] = []
    for _, _, h, _ in rows:
        if h not in seen:
            seen.append(h)
    return seen
