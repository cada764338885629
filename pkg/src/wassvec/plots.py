"""Dependency-free SVG figures rendered from CSV text.

Every renderer takes the CSV exactly as written by the command line tool, so
a figure can be regenerated byte for byte from its CSV.
"""

from __future__ import annotations

import csv
import io
import math
from typing import List, Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np
from scipy.cluster.hierarchy import leaves_list, linkage
from scipy.spatial.distance import squareform

# monotone dark-to-light ramp (blue -> green -> yellow)
_RAMP = [(68, 1, 84), (59, 82, 139), (33, 145, 140), (94, 201, 98), (253, 231, 37)]
_WIDTH, _HEIGHT, _PAD = 480, 360, 48


def color(t: float) -> str:
    """Map ``t`` in ``[0, 1]`` to a hex colour on a fixed monotone ramp."""
    t = min(max(float(t), 0.0), 1.0) if math.isfinite(t) else 0.0
    x = t * (len(_RAMP) - 1)
    k = min(int(x), len(_RAMP) - 2)
    f = x - k
    rgb = [round(a + (b - a) * f) for a, b in zip(_RAMP[k], _RAMP[k + 1])]
    return "#{:02x}{:02x}{:02x}".format(*rgb)


def _rows(text: str) -> List[List[str]]:
    return [r for r in csv.reader(io.StringIO(text)) if r]


def _svg(width, height, body: Sequence[str], title: str) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">')
    parts = [head, f"<title>{escape(title)}</title>",
             f'<rect width="{width}" height="{height}" fill="#ffffff"/>']
    parts.extend(body)
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _f(x: float) -> str:
    return f"{x:.2f}"


def line_plot(x: Sequence[float], y: Sequence[float], title: str = "",
              xlabel: str = "", ylabel: str = "", log_y: bool = True) -> str:
    """Polyline of ``y`` against ``x``; non-finite (or non-positive on a log
    axis) points are skipped."""
    pts = [(float(a), float(b)) for a, b in zip(x, y)
           if math.isfinite(b) and (b > 0 or not log_y)]
    body = []
    W, H, P = _WIDTH, _HEIGHT, _PAD
    body.append(f'<line x1="{P}" y1="{H - P}" x2="{W - P / 2}" y2="{H - P}" stroke="#000"/>')
    body.append(f'<line x1="{P}" y1="{P / 2}" x2="{P}" y2="{H - P}" stroke="#000"/>')
    body.append(f'<text x="{W / 2}" y="{H - 10}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>')
    body.append(f'<text x="14" y="{H / 2}" text-anchor="middle" font-size="12" '
                f'transform="rotate(-90 14 {H / 2})">{escape(ylabel)}</text>')
    body.append(f'<text x="{W / 2}" y="16" text-anchor="middle" font-size="13">{escape(title)}</text>')
    if pts:
        xs = np.array([p[0] for p in pts])
        ys = np.array([p[1] for p in pts])
        ys = np.log10(ys) if log_y else ys
        x0, x1 = xs.min(), xs.max()
        y0, y1 = ys.min(), ys.max()
        if log_y:
            y0, y1 = math.floor(y0), math.ceil(y1)
        if x1 == x0:
            x1 = x0 + 1
        if y1 == y0:
            y1 = y0 + 1
        sx = lambda v: P + (v - x0) / (x1 - x0) * (W - 1.5 * P)
        sy = lambda v: H - P - (v - y0) / (y1 - y0) * (H - 1.5 * P)
        path = " ".join(f"{_f(sx(a))},{_f(sy(b))}" for a, b in zip(xs, ys))
        body.append(f'<polyline fill="none" stroke="{color(0.25)}" stroke-width="1.5" points="{path}"/>')
        for a, b in zip(xs, ys):
            body.append(f'<circle cx="{_f(sx(a))}" cy="{_f(sy(b))}" r="2" fill="{color(0.25)}"/>')
        for lab, v in ((y0, y0), (y1, y1)):
            txt = f"1e{int(lab)}" if log_y else f"{lab:.3g}"
            body.append(f'<text x="{P - 4}" y="{_f(sy(v) + 4)}" text-anchor="end" font-size="10">{txt}</text>')
        for v in (x0, x1):
            body.append(f'<text x="{_f(sx(v))}" y="{H - P + 14}" text-anchor="middle" font-size="10">{v:.4g}</text>')
    return _svg(W, H, body, title)


def heatmap(M, title: str = "") -> str:
    """Grid of cells coloured by value (linear between min and max)."""
    M = np.asarray(M, dtype=np.float64)
    n, m = M.shape
    cell = max(2.0, min(12.0, 400.0 / max(n, m, 1)))
    W, H = int(m * cell + 2 * 16), int(n * cell + 2 * 16 + 16)
    lo, hi = (float(M.min()), float(M.max())) if M.size else (0.0, 1.0)
    span = hi - lo if hi > lo else 1.0
    body = [f'<text x="{W / 2}" y="16" text-anchor="middle" font-size="13">{escape(title)}</text>']
    for i in range(n):
        for j in range(m):
            body.append(f'<rect x="{_f(16 + j * cell)}" y="{_f(32 + i * cell)}" width="{_f(cell)}" '
                        f'height="{_f(cell)}" fill="{color((M[i, j] - lo) / span)}"/>')
    return _svg(W, H, body, title)


def scatter(X, labels: Optional[Sequence[str]] = None, title: str = "") -> str:
    """2-D scatter (a 1-D input is drawn on a horizontal line)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[1] == 1:
        X = np.hstack([X, np.zeros_like(X)])
    W, H, P = _WIDTH, _HEIGHT, _PAD
    body = [f'<text x="{W / 2}" y="16" text-anchor="middle" font-size="13">{escape(title)}</text>']
    if X.shape[0]:
        lo, hi = X[:, :2].min(axis=0), X[:, :2].max(axis=0)
        span = np.where(hi > lo, hi - lo, 1.0)
        keys = sorted(set(labels)) if labels is not None else []
        for k, (a, b) in enumerate(X[:, :2]):
            px = P + (a - lo[0]) / span[0] * (W - 2 * P)
            py = H - P - (b - lo[1]) / span[1] * (H - 2 * P)
            t = keys.index(labels[k]) / max(len(keys) - 1, 1) if labels is not None else 0.25
            body.append(f'<circle cx="{_f(px)}" cy="{_f(py)}" r="3" fill="{color(t)}"/>')
    return _svg(W, H, body, title)


# ---- CSV front ends ------------------------------------------------------

def convergence_from_csv(text: str, title: str = "convergence") -> str:
    """Log-scale Hilbert-metric trace from ``iteration,hilbert_delta,...`` CSV."""
    rows = _rows(text)[1:]
    it = [float(r[0]) for r in rows]
    hd = [float(r[1]) for r in rows]
    return line_plot(it, hd, title=title, xlabel="iteration", ylabel="Hilbert metric step", log_y=True)


def hierarchical_order(M) -> np.ndarray:
    """Leaf order of an average-linkage tree on a symmetric distance matrix."""
    M = np.asarray(M, dtype=np.float64)
    if M.shape[0] < 3:
        return np.arange(M.shape[0])
    Z = linkage(squareform(0.5 * (M + M.T), checks=False), method="average", optimal_ordering=True)
    return leaves_list(Z)


def heatmap_from_csv(text: str, title: str = "", order: Optional[str] = None) -> str:
    """Heatmap of a headerless numeric CSV matrix.

    ``order="hierarchical"`` permutes rows and columns of a square matrix by
    :func:`hierarchical_order` so that clusters show up as blocks.
    """
    M = np.array([[float(c) for c in r] for r in _rows(text)])
    if order == "hierarchical" and M.ndim == 2 and M.shape[0] == M.shape[1]:
        p = hierarchical_order(M)
        M = M[np.ix_(p, p)]
    return heatmap(M, title=title)


def scatter_from_csv(text: str, title: str = "") -> str:
    """Scatter from ``id,x[,y[,z]]`` CSV with a header row; ids colour the points."""
    rows = _rows(text)[1:]
    labels = [r[0] for r in rows]
    X = np.array([[float(c) for c in r[1:]] for r in rows]) if rows else np.zeros((0, 2))
    return scatter(X, labels, title=title)
