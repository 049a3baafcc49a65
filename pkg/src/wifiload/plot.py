"""Static SVG charts of traces and metrics, written without a plotting library.

Output is a pure function of the input: the same trace gives the same bytes.
"""
from __future__ import annotations

from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union
from xml.sax.saxutils import escape

import numpy as np

from .harness import SegmentMetrics, TraceRecord

__all__ = ["PLOT_KINDS", "emit_plot"]

PLOT_KINDS = ("tracking", "loss", "timing")

WIDTH, HEIGHT = 900, 420
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 64, 150, 30, 48
COLORS = {"true": "#000000", "kf": "#1f77b4", "nn": "#d62728", "raw": "#bbbbbb", "loss": "#9467bd", "g": "#2ca02c"}


def _num(x: float) -> str:
    return f"{x:.2f}".rstrip("0").rstrip(".")


def _nice_ticks(lo: float, hi: float, count: int = 5) -> List[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / count
    mag = 10 ** np.floor(np.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    first = np.ceil(lo / step) * step
    return [float(v) for v in np.arange(first, hi + step * 1e-9, step)]


class _Canvas:
    def __init__(self, title: str, xlabel: str, ylabel: str, xlim: Tuple[float, float], ylim: Tuple[float, float]):
        self.xlim, self.ylim = xlim, ylim
        self.items: List[str] = []
        self.legend: List[Tuple[str, str]] = []
        self.title, self.xlabel, self.ylabel = title, xlabel, ylabel

    def x(self, v: float) -> float:
        lo, hi = self.xlim
        return MARGIN_L + (v - lo) / (hi - lo or 1.0) * (WIDTH - MARGIN_L - MARGIN_R)

    def y(self, v: float) -> float:
        lo, hi = self.ylim
        return HEIGHT - MARGIN_B - (v - lo) / (hi - lo or 1.0) * (HEIGHT - MARGIN_T - MARGIN_B)

    def polyline(self, xs: Sequence[float], ys: Sequence[float], color: str, label: str, width: float = 1.2) -> None:
        pts = " ".join(f"{_num(self.x(a))},{_num(self.y(b))}" for a, b in zip(xs, ys))
        self.items.append(
            f'<polyline class="series" data-label="{escape(label)}" fill="none" '
            f'stroke="{color}" stroke-width="{width}" points="{pts}"/>'
        )
        self.legend.append((label, color))

    def bar(self, x0: float, x1: float, value: float, color: str, label: str) -> None:
        top, base = self.y(value), self.y(self.ylim[0])
        self.items.append(
            f'<rect class="bar" data-label="{escape(label)}" x="{_num(self.x(x0))}" y="{_num(top)}" '
            f'width="{_num(self.x(x1) - self.x(x0))}" height="{_num(base - top)}" fill="{color}"/>'
        )
        self.items.append(
            f'<text x="{_num((self.x(x0) + self.x(x1)) / 2)}" y="{_num(base + 16)}" '
            f'text-anchor="middle" font-size="12">{escape(label)}</text>'
        )
        self.items.append(
            f'<text x="{_num((self.x(x0) + self.x(x1)) / 2)}" y="{_num(top - 4)}" '
            f'text-anchor="middle" font-size="11">{_num(value)}</text>'
        )

    def hline(self, value: float, color: str, label: str) -> None:
        y = _num(self.y(value))
        self.items.append(
            f'<line class="threshold" x1="{MARGIN_L}" x2="{WIDTH - MARGIN_R}" y1="{y}" y2="{y}" '
            f'stroke="{color}" stroke-dasharray="4 3"/>'
        )
        self.legend.append((label, color))

    def render(self, xticks: bool = True) -> str:
        x0, x1 = MARGIN_L, WIDTH - MARGIN_R
        y0, y1 = HEIGHT - MARGIN_B, MARGIN_T
        out = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif">',
            f'<rect width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>',
            f'<text x="{WIDTH // 2}" y="18" text-anchor="middle" font-size="14">{escape(self.title)}</text>',
            f'<g class="axes" stroke="#333333"><line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}"/>'
            f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}"/></g>',
        ]
        for v in _nice_ticks(*self.ylim):
            y = _num(self.y(v))
            out.append(f'<line x1="{x0 - 4}" x2="{x0}" y1="{y}" y2="{y}" stroke="#333333"/>')
            out.append(f'<text x="{x0 - 6}" y="{y}" text-anchor="end" dominant-baseline="middle" font-size="11">{_num(v)}</text>')
        if xticks:
            for v in _nice_ticks(*self.xlim):
                x = _num(self.x(v))
                out.append(f'<line x1="{x}" x2="{x}" y1="{y0}" y2="{y0 + 4}" stroke="#333333"/>')
                out.append(f'<text x="{x}" y="{y0 + 16}" text-anchor="middle" font-size="11">{_num(v)}</text>')
        out.append(f'<text x="{(x0 + x1) // 2}" y="{HEIGHT - 8}" text-anchor="middle" font-size="12">{escape(self.xlabel)}</text>')
        out.append(
            f'<text x="16" y="{(y0 + y1) // 2}" text-anchor="middle" font-size="12" '
            f'transform="rotate(-90 16 {(y0 + y1) // 2})">{escape(self.ylabel)}</text>'
        )
        out.extend(self.items)
        out.append('<g class="legend" font-size="12">')
        for i, (label, color) in enumerate(self.legend):
            ly = MARGIN_T + 10 + 18 * i
            out.append(f'<line x1="{x1 + 12}" x2="{x1 + 36}" y1="{ly}" y2="{ly}" stroke="{color}" stroke-width="3"/>')
            out.append(f'<text x="{x1 + 42}" y="{ly}" dominant-baseline="middle">{escape(label)}</text>')
        out.append("</g></svg>")
        return "\n".join(out) + "\n"


def _column(trace: Sequence[TraceRecord], name: str) -> Optional[np.ndarray]:
    values = [getattr(r, name) for r in trace]
    if any(v is None for v in values):
        return None
    return np.array(values, dtype=float)


def _tracking(trace: Sequence[TraceRecord]) -> str:
    t = np.array([r.t for r in trace], dtype=float)
    n_true = np.array([r.n_true for r in trace], dtype=float)
    series = [(name, _column(trace, col)) for name, col in (("raw", "n_hat_raw"), ("kf", "n_kf"), ("nn", "n_nn"))]
    series = [(name, col) for name, col in series if col is not None]
    upper = max([n_true.max()] + [np.percentile(c, 99.5) for _, c in series]) * 1.1
    canvas = _Canvas("Estimated number of stations", "decision slot", "stations", (t[0], t[-1] + 1), (0.0, upper))
    for name, col in series:
        canvas.polyline(t, np.minimum(col, upper), COLORS[name], name, 0.8 if name == "raw" else 1.4)
    # staircase: hold each value until the next slot
    xs = np.repeat(np.append(t, t[-1] + 1), 2)[1:-1]
    ys = np.repeat(n_true, 2)
    canvas.polyline(xs, ys, COLORS["true"], "true n", 1.6)
    return canvas.render()


def _loss(trace: Sequence[TraceRecord], threshold: Optional[float]) -> str:
    t = np.array([r.t for r in trace], dtype=float)
    loss = _column(trace, "loss")
    g = _column(trace, "g_nn")
    if loss is None or g is None:
        raise ValueError("loss plot needs the nn estimator columns")
    upper = max(np.percentile(loss, 99.5), g.max(), threshold or 0.0) * 1.1 or 1.0
    canvas = _Canvas("NN loss and CUSUM statistic", "decision slot", "value", (t[0], t[-1] + 1), (0.0, upper))
    canvas.polyline(t, np.minimum(loss, upper), COLORS["loss"], "loss", 0.8)
    canvas.polyline(t, g, COLORS["g"], "CUSUM g", 1.2)
    if threshold is not None:
        canvas.hline(threshold, "#ff7f0e", "threshold")
    return canvas.render()


def _timing(data) -> str:
    means = {}
    if data and isinstance(data[0], SegmentMetrics):
        for name in ("kf", "nn"):
            vals = [seg.mean_step_us[name] for seg in data if name in seg.mean_step_us]
            if vals:
                means[name] = float(np.mean(vals))
    else:
        for name, col in (("kf", "kf_step_us"), ("nn", "nn_step_us")):
            values = _column(data, col)
            if values is not None:
                means[name] = float(values.mean())
    if not means:
        raise ValueError("no timing columns to plot")
    canvas = _Canvas("Mean update time per slot", "", "microseconds", (0.0, float(len(means))), (0.0, max(means.values()) * 1.2))
    for i, (name, value) in enumerate(means.items()):
        canvas.bar(i + 0.2, i + 0.8, value, COLORS[name], name)
    return canvas.render(xticks=False)


def emit_plot(
    data: Union[Sequence[TraceRecord], Sequence[SegmentMetrics]],
    path: Union[str, Path],
    kind: str = "tracking",
    threshold: Optional[float] = None,
) -> Path:
    """Write an SVG chart of a trace (``tracking``, ``loss``) or of timings.

    ``timing`` accepts either a trace or a list of segment metrics.
    ``threshold`` draws the CUSUM trigger level on the ``loss`` chart.
    """
    if kind not in PLOT_KINDS:
        raise ValueError(f"unknown plot kind {kind!r}; choose from {PLOT_KINDS}")
    if not data:
        raise ValueError("nothing to plot: input is empty")
    if kind == "tracking":
        svg = _tracking(data)
    elif kind == "loss":
        svg = _loss(data, threshold)
    else:
        svg = _timing(data)
    path = Path(path)
    path.write_text(svg)
    return path
