"""Dependency-free SVG line charts with shaded interval bands."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 960, 480
MARGIN = dict(left=70, right=20, top=40, bottom=50)
PALETTE = ["#d62728", "#1f77b4", "#9467bd", "#2ca02c", "#ff7f0e", "#8c564b"]
ACTUAL_COLOR = "#e6b800"


@dataclass
class Line:
    name: str
    segments: list  # list of (x array, y array)
    color: str = "#000000"
    dash: str | None = None


@dataclass
class Band:
    name: str
    segments: list  # list of (x array, lower array, upper array)
    color: str = "#000000"
    opacity: float = 0.2


def nice_ticks(lo: float, hi: float, count: int = 6) -> list[float]:
    if not (math.isfinite(lo) and math.isfinite(hi)) or hi <= lo:
        return [lo]
    raw = (hi - lo) / max(count - 1, 1)
    mag = 10 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw)
    start = math.ceil(lo / step - 1e-9) * step
    ticks = []
    t = start
    while t <= hi + 1e-9 * step:
        ticks.append(round(t, 12))
        t += step
    return ticks


def _fmt(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".")


def _label(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1e4 or abs(v) < 1e-3:
        return f"{v:.2e}"
    return f"{v:.6g}"


def _extent(values: list[np.ndarray], pad: float = 0.0) -> tuple[float, float]:
    finite = [v[np.isfinite(v)] for v in values if v.size]
    finite = [v for v in finite if v.size]
    if not finite:
        return 0.0, 1.0
    lo = float(min(v.min() for v in finite))
    hi = float(max(v.max() for v in finite))
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    span = hi - lo
    return lo - pad * span, hi + pad * span


def line_chart(
    lines: Sequence[Line],
    bands: Sequence[Band] = (),
    title: str = "",
    x_label: str = "",
    y_label: str = "",
    metadata: str | None = None,
) -> str:
    """Render an SVG document (fixed 960x480 viewBox).

    Each line becomes one ``<path>`` (one subpath per segment) and each band
    one filled ``<path class="band">``.
    """
    xs, ys = [], []
    for ln in lines:
        for x, y in ln.segments:
            xs.append(np.asarray(x, float))
            ys.append(np.asarray(y, float))
    for b in bands:
        for x, lo, hi in b.segments:
            xs.append(np.asarray(x, float))
            ys.extend([np.asarray(lo, float), np.asarray(hi, float)])
    x0, x1 = _extent(xs)
    y0, y1 = _extent(ys, pad=0.05)

    left, top = MARGIN["left"], MARGIN["top"]
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def px(x):
        return left + (np.asarray(x, float) - x0) / (x1 - x0) * pw

    def py(y):
        y = np.clip(np.asarray(y, float), y0, y1)
        return top + (1.0 - (y - y0) / (y1 - y0)) * ph

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" '
        f'width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">',
    ]
    if metadata is not None:
        out.append(f"<metadata>{escape(metadata)}</metadata>")
    out.append(f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>')
    if title:
        out.append(f'<text x="{WIDTH / 2}" y="24" text-anchor="middle" font-size="15">{escape(title)}</text>')

    # axes and grid
    out.append('<g class="axes" stroke="#444444" stroke-width="1">')
    out.append(f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}"/>')
    out.append(f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}"/>')
    out.append("</g>")
    out.append('<g class="ticks" fill="#444444">')
    for t in nice_ticks(x0, x1):
        if x0 <= t <= x1:
            x = float(px(t))
            out.append(f'<line x1="{_fmt(x)}" y1="{top + ph}" x2="{_fmt(x)}" y2="{top + ph + 5}" stroke="#444444"/>')
            out.append(f'<text x="{_fmt(x)}" y="{top + ph + 18}" text-anchor="middle">{_label(t)}</text>')
    for t in nice_ticks(y0, y1):
        if y0 <= t <= y1:
            y = float(py(t))
            out.append(f'<line x1="{left - 5}" y1="{_fmt(y)}" x2="{left + pw}" y2="{_fmt(y)}" stroke="#dddddd"/>')
            out.append(f'<text x="{left - 8}" y="{_fmt(y + 4)}" text-anchor="end">{_label(t)}</text>')
    out.append("</g>")
    if x_label:
        out.append(f'<text x="{left + pw / 2}" y="{HEIGHT - 10}" text-anchor="middle">{escape(x_label)}</text>')
    if y_label:
        out.append(
            f'<text x="16" y="{top + ph / 2}" text-anchor="middle" '
            f'transform="rotate(-90 16 {top + ph / 2})">{escape(y_label)}</text>'
        )

    for b in bands:
        parts = []
        for x, lo, hi in b.segments:
            x = np.asarray(x, float)
            if x.size == 0:
                continue
            upper = list(zip(px(x), py(hi)))
            lower = list(zip(px(x), py(lo)))[::-1]
            pts = upper + lower
            parts.append("M" + " L".join(f"{_fmt(a)},{_fmt(c)}" for a, c in pts) + " Z")
        out.append(
            f'<path class="band" data-name="{escape(b.name)}" d="{" ".join(parts)}" '
            f'fill="{b.color}" fill-opacity="{b.opacity}" stroke="none"/>'
        )
    for ln in lines:
        parts = []
        for x, y in ln.segments:
            x = np.asarray(x, float)
            if x.size == 0:
                continue
            pts = zip(px(x), py(y))
            parts.append("M" + " L".join(f"{_fmt(a)},{_fmt(c)}" for a, c in pts))
        dash = f' stroke-dasharray="{ln.dash}"' if ln.dash else ""
        out.append(
            f'<path class="series" data-name="{escape(ln.name)}" d="{" ".join(parts)}" '
            f'fill="none" stroke="{ln.color}" stroke-width="1.5"{dash}/>'
        )

    # legend
    entries = [(ln.name, ln.color) for ln in lines] + [(b.name, b.color) for b in bands]
    for i, (name, color) in enumerate(entries):
        y = top + 10 + 16 * i
        out.append(f'<rect x="{left + pw - 190}" y="{y - 9}" width="12" height="10" fill="{color}"/>')
        out.append(f'<text x="{left + pw - 172}" y="{y}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _blocks(x: np.ndarray) -> list[slice]:
    """Split at any gap larger than one sample step, so disjoint windows are not joined."""
    if x.size == 0:
        return []
    cuts = np.flatnonzero(np.diff(x) > 1.0 + 1e-9) + 1
    bounds = [0, *cuts.tolist(), x.size]
    return [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]


def records_chart(records: Sequence, title: str = "", mode: str = "observation", metadata: str | None = None) -> str:
    """Chart a set of forecast records: observed deltas, each method's mean and band."""
    by_method: dict[str, list] = {}
    for r in records:
        by_method.setdefault(r.method, []).append(r)
    lines, bands = [], []
    seen: dict[float, float] = {}
    for r in records:
        for t, a in zip(r.test_times, r.actuals):
            seen.setdefault(float(t), float(a))
    if seen:
        t = np.array(sorted(seen))
        a = np.array([seen[v] for v in t])
        lines.append(Line("observed", [(t[s], a[s]) for s in _blocks(t)], ACTUAL_COLOR, "3,3"))
    for i, (method, recs) in enumerate(by_method.items()):
        color = PALETTE[i % len(PALETTE)]
        mean_segs, band_segs = [], []
        for r in recs:
            lo, hi = r.interval(mode)
            for s in _blocks(r.test_times):
                mean_segs.append((r.test_times[s], r.predicted_mean[s]))
                band_segs.append((r.test_times[s], lo[s], hi[s]))
        lines.append(Line(f"{method} mean", mean_segs, color))
        level = recs[0].interval_level
        bands.append(Band(f"{method} {level:.0%} interval", band_segs, color))
    return line_chart(lines, bands, title=title, x_label="day index", y_label="log-difference", metadata=metadata)
