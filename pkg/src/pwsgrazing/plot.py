"""Minimal SVG phase portraits (no plotting dependency)."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

from .flow import LOWER, SLIDING, UPPER

COLORS = {UPPER: "#1f77b4", LOWER: "#d62728", SLIDING: "#2ca02c", "free": "#7f7f7f"}
MAX_POINTS = 2000


class Canvas:
    """Maps data coordinates in ``box`` to an SVG viewport of ``width x height`` pixels."""

    def __init__(self, box, width=640, height=480, pad=30):
        self.box = tuple(float(v) for v in box)
        self.w, self.h, self.pad = width, height, pad
        self.items = []

    def _xy(self, x, y):
        x0, x1, y0, y1 = self.box
        sx = self.pad + (np.asarray(x) - x0) / (x1 - x0) * (self.w - 2 * self.pad)
        sy = self.h - self.pad - (np.asarray(y) - y0) / (y1 - y0) * (self.h - 2 * self.pad)
        return sx, sy

    def polyline(self, xs, ys, color, width=1.2, dash=None):
        xs, ys = np.asarray(xs), np.asarray(ys)
        if len(xs) > MAX_POINTS:
            idx = np.linspace(0, len(xs) - 1, MAX_POINTS).astype(int)
            xs, ys = xs[idx], ys[idx]
        sx, sy = self._xy(xs, ys)
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(sx, sy))
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        self.items.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{width}"{extra}/>'
        )

    def dot(self, x, y, color="black", r=2.5):
        sx, sy = self._xy(x, y)
        self.items.append(f'<circle cx="{float(sx):.2f}" cy="{float(sy):.2f}" r="{r}" fill="{color}"/>')

    def text(self, x, y, s, size=11):
        self.items.append(f'<text x="{x}" y="{y}" font-size="{size}" font-family="sans-serif">{escape(s)}</text>')

    def switching_line(self, sliding=()):
        x0, x1 = self.box[:2]
        self.polyline([x0, x1], [0.0, 0.0], "black", 0.8, dash="4,3")
        for a, b in sliding:
            self.polyline([a, b], [0.0, 0.0], COLORS[SLIDING], 3.0)

    def svg(self):
        head = (
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.w}" height="{self.h}" '
            f'viewBox="0 0 {self.w} {self.h}">'
        )
        frame = f'<rect x="0" y="0" width="{self.w}" height="{self.h}" fill="white" stroke="none"/>'
        return "\n".join([head, frame] + self.items + ["</svg>"]) + "\n"

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.svg())


def _arc_points(arc, n=400):
    p = arc.polyline(n)
    return p[:, 0], p[:, 1]


def orbit_box(orbits, pad=0.05):
    xs, ys = [], []
    for orb in orbits:
        for arc in orb.arcs:
            _, x, y = arc.sample(50)
            xs.append(x)
            ys.append(y)
    if not xs:
        return (-1.0, 1.0, -1.0, 1.0)
    x = np.concatenate(xs)
    y = np.concatenate(ys + [np.zeros(1)])
    dx = max(x.max() - x.min(), 1e-9)
    dy = max(y.max() - y.min(), 1e-9)
    return (x.min() - pad * dx, x.max() + pad * dx, y.min() - pad * dy, y.max() + pad * dy)


def _sliding_intervals(sys, box, n=400):
    xs = np.linspace(box[0], box[1], n)
    h = np.array([sys.h(x) for x in xs])
    out, start = [], None
    for x, v in zip(xs, h):
        if v < 0 and start is None:
            start = x
        elif v >= 0 and start is not None:
            out.append((start, x))
            start = None
    if start is not None:
        out.append((start, xs[-1]))
    return out


def phase_portrait(sys, orbits, path=None, box=None, title=""):
    """Draw orbits arc by arc, colored by regime, over the switching line."""
    box = box or orbit_box(orbits)
    cv = Canvas(box)
    cv.switching_line(_sliding_intervals(sys, box))
    for orb in orbits:
        for arc in orb.arcs:
            xs, ys = _arc_points(arc)
            cv.polyline(xs, ys, COLORS.get(arc.regime, "black"))
        for ev in orb.junctions:
            cv.dot(ev.x, ev.y, "black", 1.8)
    if title:
        cv.text(cv.pad, 18, title)
    if path:
        cv.save(path)
    return cv


def loop_portrait(sys, loops, path=None, title=""):
    """Draw closed loops (LoopRecord) from their arcs."""
    polys = [lp.polyline(MAX_POINTS // max(1, len(lp.arcs))) for lp in loops]
    allp = np.vstack(polys + [np.zeros((1, 2))]) if polys else np.zeros((1, 2))
    dx = max(np.ptp(allp[:, 0]), 1e-9)
    dy = max(np.ptp(allp[:, 1]), 1e-9)
    box = (allp[:, 0].min() - 0.05 * dx, allp[:, 0].max() + 0.05 * dx, allp[:, 1].min() - 0.05 * dy, allp[:, 1].max() + 0.05 * dy)
    cv = Canvas(box)
    cv.switching_line(_sliding_intervals(sys, box))
    for lp in loops:
        for arc in lp.arcs:
            xs, ys = _arc_points(arc)
            cv.polyline(xs, ys, COLORS.get(arc.regime, "black"))
    if title:
        cv.text(cv.pad, 18, title)
    if path:
        cv.save(path)
    return cv
