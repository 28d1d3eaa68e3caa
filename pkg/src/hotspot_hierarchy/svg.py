"""Self-contained SVG line charts with quantile bands.

Charts carry their data mapping as attributes so they can be checked
programmatically: the root ``<svg>`` has ``data-x-range``, ``data-y-range``
and ``data-plot-box`` (left, top, width, height in pixels), every line has
``data-series`` and every band polygon has ``data-q10``/``data-q90``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from xml.sax.saxutils import escape, quoteattr

import numpy as np

from .exceptions import InputError

WIDTH, HEIGHT = 720, 440
LEFT, RIGHT, TOP, BOTTOM = 75, 190, 40, 60
PALETTE = ("#1f4e79", "#c0392b", "#27ae60", "#8e44ad", "#d35400", "#16a085")


@dataclass
class Series:
    name: str
    x: list
    y: list
    dashed: bool = False
    color: str | None = None


@dataclass
class Band:
    name: str
    x: list
    lo: list
    hi: list
    color: str | None = None


def _num(v: float) -> str:
    return f"{v:.3f}"


def _val(v: float) -> str:
    return f"{float(v):.10g}"


def nice_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    """Round tick values covering ``[lo, hi]`` with 1-2-5 steps."""
    span = hi - lo
    raw = span / max(n, 1)
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=10 * mag)
    first = math.ceil(lo / step - 1e-9) * step
    out = []
    t = first
    while t <= hi + 1e-9 * step:
        out.append(0.0 if abs(t) < 1e-12 * step else t)
        t = first + len(out) * step
    return out


def _range(values) -> tuple[float, float]:
    lo, hi = float(np.min(values)), float(np.max(values))
    if hi - lo <= 1e-12 * max(abs(lo), abs(hi), 1.0):
        pad = max(abs(lo) * 0.1, 0.5)
        return lo - pad, hi + pad
    pad = 0.04 * (hi - lo)
    return lo - pad, hi + pad


def _check(name: str, x, *ys) -> None:
    if len(x) == 0:
        raise InputError(f"curve {name!r} is empty")
    for y in ys:
        if len(y) != len(x):
            raise InputError(f"curve {name!r}: x and y lengths differ ({len(x)} vs {len(y)})")
    for arr in (x, *ys):
        if not np.all(np.isfinite(np.asarray(arr, dtype=float))):
            raise InputError(f"curve {name!r} contains non-finite values")


def render_svg(title: str, x_label: str, y_label: str, series=(), bands=(), y_range=None) -> str:
    """Render lines and shaded bands on shared axes; returns SVG text."""
    series, bands = list(series), list(bands)
    if not series and not bands:
        raise InputError(f"chart {title!r} has no curves")
    for s in series:
        _check(s.name, s.x, s.y)
    for b in bands:
        _check(b.name, b.x, b.lo, b.hi)
    xs = np.concatenate([np.asarray(c.x, dtype=float) for c in series + bands])
    ys = np.concatenate([np.asarray(s.y, dtype=float) for s in series]
                        + [np.asarray(v, dtype=float) for b in bands for v in (b.lo, b.hi)])
    x0, x1 = _range(xs)
    y0, y1 = y_range if y_range is not None else _range(ys)
    pw, ph = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM

    def px(x):
        return LEFT + (float(x) - x0) / (x1 - x0) * pw

    def py(y):
        return TOP + ph - (float(y) - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" data-x-range="{_val(x0)} {_val(x1)}" '
        f'data-y-range="{_val(y0)} {_val(y1)}" data-plot-box="{LEFT} {TOP} {pw} {ph}">',
        f"<title>{escape(title)}</title>",
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{LEFT + pw / 2}" y="24" font-family="sans-serif" font-size="15" '
        f'text-anchor="middle">{escape(title)}</text>',
    ]
    # axes and ticks
    out.append(f'<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>')
    for t in nice_ticks(x0, x1):
        X = _num(px(t))
        out.append(f'<line x1="{X}" y1="{TOP + ph}" x2="{X}" y2="{TOP + ph + 5}" stroke="#333"/>')
        out.append(f'<text x="{X}" y="{TOP + ph + 18}" font-family="sans-serif" font-size="11" '
                   f'text-anchor="middle">{t:g}</text>')
    for t in nice_ticks(y0, y1):
        Y = _num(py(t))
        out.append(f'<line x1="{LEFT - 5}" y1="{Y}" x2="{LEFT}" y2="{Y}" stroke="#333"/>')
        out.append(f'<text x="{LEFT - 8}" y="{Y}" font-family="sans-serif" font-size="11" '
                   f'text-anchor="end" dominant-baseline="middle">{t:g}</text>')
    out.append(f'<text x="{LEFT + pw / 2}" y="{HEIGHT - 15}" font-family="sans-serif" font-size="13" '
               f'text-anchor="middle">{escape(x_label)}</text>')
    out.append(f'<text x="18" y="{TOP + ph / 2}" font-family="sans-serif" font-size="13" '
               f'text-anchor="middle" transform="rotate(-90 18 {TOP + ph / 2})">{escape(y_label)}</text>')

    legend = []
    for i, b in enumerate(bands):
        color = b.color or PALETTE[i % len(PALETTE)]
        upper = [(px(x), py(h)) for x, h in zip(b.x, b.hi)]
        lower = [(px(x), py(lo)) for x, lo in zip(b.x, b.lo)][::-1]
        pts = " ".join(f"{_num(a)},{_num(c)}" for a, c in upper + lower)
        out.append(f'<polygon class="band" data-series={quoteattr(b.name)} '
                   f'data-x="{" ".join(_val(v) for v in b.x)}" '
                   f'data-q10="{" ".join(_val(v) for v in b.lo)}" '
                   f'data-q90="{" ".join(_val(v) for v in b.hi)}" '
                   f'points="{pts}" fill="{color}" fill-opacity="0.18" stroke="{color}" stroke-opacity="0.4"/>')
        legend.append(("band", b.name, color))
    for i, s in enumerate(series):
        color = s.color or PALETTE[i % len(PALETTE)]
        attrs = (f'data-series={quoteattr(s.name)} data-x="{" ".join(_val(v) for v in s.x)}" '
                 f'data-y="{" ".join(_val(v) for v in s.y)}"')
        if len(s.x) == 1:
            out.append(f'<circle class="point" {attrs} cx="{_num(px(s.x[0]))}" cy="{_num(py(s.y[0]))}" '
                       f'r="4" fill="{color}"/>')
        else:
            pts = " ".join(f"{_num(px(x))},{_num(py(y))}" for x, y in zip(s.x, s.y))
            dash = ' stroke-dasharray="6,4"' if s.dashed else ""
            out.append(f'<polyline class="line" {attrs} points="{pts}" fill="none" stroke="{color}" '
                       f'stroke-width="2"{dash}/>')
        legend.append(("dashed" if s.dashed else "line", s.name, color))

    lx, ly = WIDTH - RIGHT + 15, TOP + 10
    for j, (kind, name, color) in enumerate(legend):
        y = ly + 20 * j
        if kind == "band":
            out.append(f'<rect x="{lx}" y="{y - 6}" width="24" height="12" fill="{color}" fill-opacity="0.18"/>')
        else:
            dash = ' stroke-dasharray="6,4"' if kind == "dashed" else ""
            out.append(f'<line x1="{lx}" y1="{y}" x2="{lx + 24}" y2="{y}" stroke="{color}" stroke-width="2"{dash}/>')
        out.append(f'<text x="{lx + 30}" y="{y}" font-family="sans-serif" font-size="11" '
                   f'dominant-baseline="middle">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(path, *args, **kwargs) -> Path:
    path = Path(path)
    path.write_text(render_svg(*args, **kwargs))
    return path
