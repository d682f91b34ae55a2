"""Self-contained SVG line and bar charts for the experiment CSVs."""
from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

from ..errors import SchemaError
from .report import read_csv

PLOT_KINDS = ("iterations_vs_time", "residual_loglog", "cpu_bars")
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf")

W, H = 640, 420
LEFT, RIGHT, TOP, BOTTOM = 70, 160, 30, 50


def _series_label(report, path) -> str:
    return report.header.get("method") or Path(path).stem


class _Axes:
    def __init__(self, xs, ys, logx=False, logy=False):
        self.logx, self.logy = logx, logy
        fx = [self._tx(x) for x in xs] or [0.0, 1.0]
        fy = [self._ty(y) for y in ys] or [0.0, 1.0]
        self.x0, self.x1 = min(fx), max(fx)
        self.y0, self.y1 = min(fy), max(fy)
        if self.x1 == self.x0:
            self.x1 = self.x0 + 1.0
        if self.y1 == self.y0:
            self.y1 = self.y0 + 1.0

    def _tx(self, x):
        return math.log10(x) if self.logx else x

    def _ty(self, y):
        return math.log10(y) if self.logy else y

    def px(self, x):
        return LEFT + (self._tx(x) - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)

    def py(self, y):
        return H - BOTTOM - (self._ty(y) - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM)

    def ticks(self):
        out = []
        for i in range(5):
            fx = self.x0 + i * (self.x1 - self.x0) / 4
            fy = self.y0 + i * (self.y1 - self.y0) / 4
            out.append((fx, fy))
        return out


def _frame(title, xlabel, ylabel, axes: _Axes | None) -> list[str]:
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{W / 2}" y="18" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<line class="axis" x1="{LEFT}" y1="{H - BOTTOM}" x2="{W - RIGHT}" y2="{H - BOTTOM}" stroke="black"/>',
        f'<line class="axis" x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{H - BOTTOM}" stroke="black"/>',
        f'<text x="{(LEFT + W - RIGHT) / 2}" y="{H - 10}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
        f'<text x="15" y="{(TOP + H - BOTTOM) / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 15 {(TOP + H - BOTTOM) / 2})">{escape(ylabel)}</text>',
    ]
    if axes is not None:
        for fx, fy in axes.ticks():
            x = LEFT + (fx - axes.x0) / (axes.x1 - axes.x0) * (W - LEFT - RIGHT)
            y = H - BOTTOM - (fy - axes.y0) / (axes.y1 - axes.y0) * (H - TOP - BOTTOM)
            lx = f"1e{fx:.1f}" if axes.logx else f"{fx:.3g}"
            ly = f"1e{fy:.1f}" if axes.logy else f"{fy:.3g}"
            parts.append(f'<text x="{x:.1f}" y="{H - BOTTOM + 15}" text-anchor="middle" font-size="10">{lx}</text>')
            parts.append(f'<text x="{LEFT - 5}" y="{y:.1f}" text-anchor="end" font-size="10">{ly}</text>')
    return parts


def _no_data(parts):
    parts.append(
        f'<text class="no-data" x="{(LEFT + W - RIGHT) / 2}" y="{(TOP + H - BOTTOM) / 2}" '
        'text-anchor="middle" font-size="16" fill="gray">no data</text>'
    )


def _line_plot(series, title, xlabel, ylabel, logx, logy):
    xs = [x for _, pts in series for x, _ in pts]
    ys = [y for _, pts in series for _, y in pts]
    if not xs:
        parts = _frame(title, xlabel, ylabel, None)
        _no_data(parts)
        return parts
    axes = _Axes(xs, ys, logx, logy)
    parts = _frame(title, xlabel, ylabel, axes)
    for i, (label, pts) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        if pts:
            coords = " ".join(f"{axes.px(x):.2f},{axes.py(y):.2f}" for x, y in pts)
            parts.append(
                f'<polyline data-label="{escape(label)}" fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>'
            )
        ly = TOP + 15 + 16 * i
        parts.append(f'<line x1="{W - RIGHT + 10}" y1="{ly}" x2="{W - RIGHT + 30}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text class="legend" x="{W - RIGHT + 35}" y="{ly + 4}" font-size="11">{escape(label)}</text>')
    return parts


def render(csv_paths, kind: str) -> str:
    """SVG source for ``kind`` built from ``csv_paths``."""
    if kind not in PLOT_KINDS:
        raise ValueError(f"unknown plot kind {kind!r}; choose from {', '.join(PLOT_KINDS)}")
    if kind == "iterations_vs_time":
        series = []
        for p in csv_paths:
            rep = read_csv(p, required=("Time", "snesIts"))
            series.append((_series_label(rep, p), list(zip(rep.floats("Time"), rep.floats("snesIts")))))
        parts = _line_plot(series, "Nonlinear iterations per step", "Time (ms)", "Nonlinear iterations", False, False)
    elif kind == "residual_loglog":
        series = []
        for p in csv_paths:
            rep = read_csv(p, required=("iteration", "resNorm"))
            pts = [(i + 1, r) for i, r in zip(rep.floats("iteration"), rep.floats("resNorm")) if r > 0]
            series.append((_series_label(rep, p), pts))
        parts = _line_plot(series, "Residual history", "Iteration + 1", "Residual norm", True, True)
    else:
        bars = []
        for p in csv_paths:
            rep = read_csv(p, required=("method", "setting", "cpuTime"))
            for m, s, c in zip(rep.column("method"), rep.column("setting"), rep.floats("cpuTime")):
                bars.append((m if s in ("", "-") else f"{m} {s}", c))
        parts = _bar_plot(bars)
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _bar_plot(bars):
    parts = _frame("Total solve CPU time", "", "CPU time (s)", None)
    if not bars:
        _no_data(parts)
        return parts
    top = max(c for _, c in bars) or 1.0
    width = (W - LEFT - RIGHT) / len(bars)
    for i, (label, c) in enumerate(bars):
        h = c / top * (H - TOP - BOTTOM)
        x = LEFT + i * width
        parts.append(
            f'<rect data-label="{escape(label)}" x="{x + 2:.1f}" y="{H - BOTTOM - h:.1f}" '
            f'width="{max(width - 4, 1):.1f}" height="{h:.1f}" fill="{PALETTE[i % len(PALETTE)]}"/>'
        )
        parts.append(
            f'<text x="{x + width / 2:.1f}" y="{H - BOTTOM + 12}" font-size="8" text-anchor="end" '
            f'transform="rotate(-45 {x + width / 2:.1f} {H - BOTTOM + 12})">{escape(label)}</text>'
        )
    parts.append(f'<text x="{LEFT - 5}" y="{TOP + 4}" text-anchor="end" font-size="10">{top:.3g}</text>')
    return parts


def emit_svg(csv_paths, kind: str, out) -> Path:
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(render(csv_paths, kind))
    return out


__all__ = ["emit_svg", "render", "PLOT_KINDS", "SchemaError"]
