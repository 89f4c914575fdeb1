"""Minimal SVG writer: polylines, filled cells and text, in data coordinates."""
from __future__ import annotations

from xml.sax.saxutils import escape

LABEL_COLORS = {"Crossing": "#4477aa", "Sliding": "#228833", "Escaping": "#ee6677", "Tangency": "#000000"}


class Svg:
    def __init__(self, x0: float, y0: float, w: float, h: float, px: int = 480, margin: int = 24):
        self.x0, self.y0, self.w, self.h = x0, y0, w, h
        self.px = px
        self.py = max(1, round(px * h / w)) if w > 0 else px
        self.margin = margin
        self.items: list[str] = []

    def _xy(self, x: float, y: float) -> tuple[float, float]:
        u = self.margin + (x - self.x0) / self.w * self.px
        v = self.margin + (1 - (y - self.y0) / self.h) * self.py
        return round(u, 3), round(v, 3)

    def polyline(self, pts, color: str = "#000000", width: float = 1.0):
        if len(pts) < 2:
            return
        s = " ".join(f"{u},{v}" for u, v in (self._xy(*p) for p in pts))
        self.items.append(f'<polyline points="{s}" fill="none" stroke="{color}" stroke-width="{width}"/>')

    def rect(self, x: float, y: float, w: float, h: float, fill: str, opacity: float = 1.0):
        u0, v1 = self._xy(x, y + h)
        u1, v0 = self._xy(x + w, y)
        self.items.append(f'<rect x="{u0}" y="{v1}" width="{round(u1 - u0, 3)}" height="{round(v0 - v1, 3)}" '
                          f'fill="{fill}" fill-opacity="{opacity}"/>')

    def dot(self, x: float, y: float, color: str = "#000000", r: float = 2.5):
        u, v = self._xy(x, y)
        self.items.append(f'<circle cx="{u}" cy="{v}" r="{r}" fill="{color}"/>')

    def text(self, x: float, y: float, s: str, size: int = 11):
        u, v = self._xy(x, y)
        self.items.append(f'<text x="{u}" y="{v}" font-size="{size}" font-family="sans-serif">{escape(s)}</text>')

    def render(self) -> str:
        W, H = self.px + 2 * self.margin, self.py + 2 * self.margin
        frame = (f'<rect x="{self.margin}" y="{self.margin}" width="{self.px}" height="{self.py}" '
                 f'fill="none" stroke="#888888"/>')
        body = "\n".join([frame, *self.items])
        return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
                f'viewBox="0 0 {W} {H}">\n{body}\n</svg>\n')


def _canvas(sys) -> Svg:
    d = sys.domain
    return Svg(d.x0, d.y0, d.p, d.q)


def _split(sys, pts):
    """Break a canonicalized polyline where it jumps across a seam."""
    d = sys.domain
    out, cur = [], []
    for p in pts:
        if cur and (abs(p[0] - cur[-1][0]) > d.p / 2 or abs(p[1] - cur[-1][1]) > d.q / 2):
            out.append(cur)
            cur = []
        cur.append(p)
    if cur:
        out.append(cur)
    return out


def phase_portrait(sys, paths: list[list[tuple[float, float]]], title: str = "") -> str:
    svg = _canvas(sys)
    for pts in paths:
        for seg in _split(sys, [sys.domain.canonicalize(p) for p in pts]):
            svg.polyline(seg, "#4477aa")
    if title:
        svg.text(sys.domain.x0, sys.domain.y0 + sys.domain.q, title)
    return svg.render()


def classification_strip(sys, scan) -> str:
    """Surface trace colored by label, tangency points as dots."""
    svg = _canvas(sys)
    for a, b in zip(scan.samples[:-1], scan.samples[1:]):
        for seg in _split(sys, [a.point, b.point]):
            svg.polyline(seg, LABEL_COLORS[a.label.value], 3.0)
    for t in scan.tangencies:
        svg.dot(*t.point)
    return svg.render()


def heat_map(grid) -> str:
    """Saturation grid: in-Sat cells dark, undecided cells grey."""
    svg = Svg(grid.x0, grid.y0, grid.nx * grid.dx, grid.ny * grid.dy)
    for j, row in enumerate(grid.flags):
        for i, f in enumerate(row):
            if f.value == "InSat":
                svg.rect(grid.x0 + i * grid.dx, grid.y0 + j * grid.dy, grid.dx, grid.dy, "#332288")
            elif f.value == "Undecided":
                svg.rect(grid.x0 + i * grid.dx, grid.y0 + j * grid.dy, grid.dx, grid.dy, "#bbbbbb")
    return svg.render()
