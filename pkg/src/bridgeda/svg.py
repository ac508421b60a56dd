"""Small hand-written SVG plots: decision-boundary scatter and line charts."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f")
LIGHT = ("#c6dbef", "#fcbba1", "#c7e9c0", "#fdd0a2", "#dadaeb", "#e7cbb5", "#bfeff4", "#d9d9d9")

W, H, PAD = 420, 360, 40


def _fmt(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".")


class _Frame:
    """Maps data coordinates into the plot box (y axis pointing up)."""

    def __init__(self, xlim, ylim):
        (self.x0, self.x1), (self.y0, self.y1) = xlim, ylim
        if self.x1 <= self.x0:
            self.x1 = self.x0 + 1.0
        if self.y1 <= self.y0:
            self.y1 = self.y0 + 1.0

    def px(self, x):
        return PAD + (np.asarray(x) - self.x0) / (self.x1 - self.x0) * (W - 2 * PAD)

    def py(self, y):
        return H - PAD - (np.asarray(y) - self.y0) / (self.y1 - self.y0) * (H - 2 * PAD)


def _open(title: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{escape(title)}</text>',
    ]


def _axes(fr: _Frame, xlabel: str, ylabel: str) -> list[str]:
    out = [f'<rect x="{PAD}" y="{PAD}" width="{W - 2 * PAD}" height="{H - 2 * PAD}" fill="none" stroke="black"/>']
    for v in np.linspace(fr.x0, fr.x1, 5):
        out.append(f'<text x="{fr.px(v):.1f}" y="{H - PAD + 14}" text-anchor="middle" font-family="sans-serif" '
                   f'font-size="10">{_fmt(v)}</text>')
    for v in np.linspace(fr.y0, fr.y1, 5):
        out.append(f'<text x="{PAD - 4}" y="{fr.py(v) + 3:.1f}" text-anchor="end" font-family="sans-serif" '
                   f'font-size="10">{_fmt(v)}</text>')
    out.append(f'<text x="{W / 2}" y="{H - 6}" text-anchor="middle" font-family="sans-serif" '
               f'font-size="11">{escape(xlabel)}</text>')
    out.append(f'<text x="12" y="{H / 2}" text-anchor="middle" font-family="sans-serif" font-size="11" '
               f'transform="rotate(-90 12 {H / 2})">{escape(ylabel)}</text>')
    return out


def decision_boundary_svg(predict, X: np.ndarray, y: np.ndarray, title: str, grid: int = 60) -> str:
    """Predicted-class background over a grid plus the labelled points.

    ``predict`` maps an (n, 2) array to integer class ids.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != 2:
        raise ValueError("decision-boundary plots need 2-D inputs")
    lo, hi = X.min(axis=0), X.max(axis=0)
    margin = 0.1 * np.maximum(hi - lo, 1e-9)
    fr = _Frame((lo[0] - margin[0], hi[0] + margin[0]), (lo[1] - margin[1], hi[1] + margin[1]))
    xs = np.linspace(fr.x0, fr.x1, grid + 1)
    ys = np.linspace(fr.y0, fr.y1, grid + 1)
    cx, cy = (xs[:-1] + xs[1:]) / 2, (ys[:-1] + ys[1:]) / 2
    gx, gy = np.meshgrid(cx, cy)
    pred = np.asarray(predict(np.column_stack([gx.ravel(), gy.ravel()]))).reshape(gx.shape)
    cw = (W - 2 * PAD) / grid
    ch = (H - 2 * PAD) / grid
    out = _open(title)
    for i in range(grid):
        for j in range(grid):
            out.append(f'<rect x="{fr.px(xs[j]):.2f}" y="{fr.py(ys[i + 1]):.2f}" width="{cw:.2f}" height="{ch:.2f}" '
                       f'fill="{LIGHT[int(pred[i, j]) % len(LIGHT)]}" stroke="none"/>')
    for (a, b), lab in zip(X, y):
        color = "#000000" if lab < 0 else PALETTE[int(lab) % len(PALETTE)]
        out.append(f'<circle cx="{fr.px(a):.2f}" cy="{fr.py(b):.2f}" r="2.5" fill="{color}"/>')
    out += _axes(fr, "x1", "x2")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def line_chart_svg(series: dict[str, list[tuple[float, float]]], title: str, xlabel: str, ylabel: str,
                   ylim: tuple[float, float] | None = None) -> str:
    """One polyline per named series, with a legend."""
    pts = [p for s in series.values() for p in s]
    if not pts:
        raise ValueError("nothing to plot")
    arr = np.asarray(pts, dtype=np.float64)
    fr = _Frame((arr[:, 0].min(), arr[:, 0].max()), ylim or (arr[:, 1].min(), arr[:, 1].max()))
    out = _open(title)
    out += _axes(fr, xlabel, ylabel)
    for k, (name, s) in enumerate(series.items()):
        color = PALETTE[k % len(PALETTE)]
        if s:
            a = np.asarray(s, dtype=np.float64)
            path = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(fr.px(a[:, 0]), fr.py(a[:, 1])))
            out.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = PAD + 14 + 14 * k
        out.append(f'<line x1="{W - PAD - 70}" y1="{ly - 4}" x2="{W - PAD - 55}" y2="{ly - 4}" stroke="{color}" '
                   f'stroke-width="2"/>')
        out.append(f'<text x="{W - PAD - 50}" y="{ly}" font-family="sans-serif" font-size="10">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
