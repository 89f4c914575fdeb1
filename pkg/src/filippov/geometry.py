"""Base rectangles and their quotients (plane window, torus, Klein bottle).

Points are plain ``(x, y)`` float tuples.  A lattice element ``(k, l)`` acts on
the lifted plane by

    torus:  (x, y) -> (x - k p, y - l q)
    klein:  (x, y) -> (x - k p, (-1)^k y - l q)

so the Klein identification is ``(x, y) ~ (x + p, -y)`` together with the
vertical period ``q``: crossing the vertical edge reflects ``y``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterator

from .errors import ScenarioError

Point = tuple[float, float]


class Mode(str, Enum):
    PLANE = "plane"
    TORUS = "torus"
    KLEIN = "klein"


@dataclass(frozen=True)
class Chart:
    """Lattice element mapping a lifted point to one of its representatives."""

    k: int = 0
    l: int = 0
    klein: bool = False

    @property
    def flip(self) -> int:
        return -1 if (self.klein and self.k % 2) else 1

    def apply(self, d: "QuotientDomain", pt: Point) -> Point:
        return (pt[0] - self.k * d.p, self.flip * pt[1] - self.l * d.q)

    def vec(self, v: Point) -> Point:
        # linear part is diag(1, flip); it is its own inverse
        return (v[0], self.flip * v[1])

    def then(self, other: "Chart") -> "Chart":
        """Composite chart: apply ``self`` first, then ``other``."""
        s2 = other.flip
        return Chart(self.k + other.k, s2 * self.l + other.l, self.klein)

    def inverse(self) -> "Chart":
        return Chart(-self.k, -self.flip * self.l, self.klein)


IDENTITY = Chart()


def _period_index(v: float, lo: float, per: float) -> int:
    k = math.floor((v - lo) / per)
    if v - k * per < lo:
        k -= 1
    elif v - k * per >= lo + per:
        k += 1
    return k


def _clamp_half_open(v: float, lo: float, per: float) -> float:
    # rounding may leave the value one ulp outside [lo, lo + per)
    if v < lo or v >= lo + per:
        return lo
    return v


@dataclass(frozen=True)
class QuotientDomain:
    x0: float
    y0: float
    p: float
    q: float
    mode: Mode = Mode.PLANE

    def __post_init__(self):
        if not (self.p > 0 and self.q > 0):
            raise ScenarioError(f"domain periods must be positive, got p={self.p}, q={self.q}")
        if not isinstance(self.mode, Mode):
            object.__setattr__(self, "mode", Mode(self.mode))

    @property
    def periodic(self) -> bool:
        return self.mode is not Mode.PLANE

    @property
    def area(self) -> float:
        return self.p * self.q

    @property
    def scale(self) -> float:
        return min(self.p, self.q)

    def contains(self, pt: Point, margin: float = 0.0) -> bool:
        """Closed-rectangle test in the chart the point is expressed in."""
        return (self.x0 - margin <= pt[0] <= self.x0 + self.p + margin
                and self.y0 - margin <= pt[1] <= self.y0 + self.q + margin)

    def canonical_chart(self, pt: Point) -> Chart:
        if self.mode is Mode.PLANE:
            return IDENTITY
        klein = self.mode is Mode.KLEIN
        k = _period_index(pt[0], self.x0, self.p)
        s = -1 if (klein and k % 2) else 1
        l = _period_index(s * pt[1], self.y0, self.q)
        return Chart(k, l, klein)

    def canonicalize(self, pt: Point) -> Point:
        if self.mode is Mode.PLANE:
            return (float(pt[0]), float(pt[1]))
        x, y = self.canonical_chart(pt).apply(self, pt)
        return (_clamp_half_open(x, self.x0, self.p), _clamp_half_open(y, self.y0, self.q))

    def seam_map(self, pt: Point) -> Point:
        """Image of ``pt`` when crossing the vertical edge once (x -> x + p)."""
        if self.mode is Mode.KLEIN:
            return (pt[0] + self.p, -pt[1])
        return (pt[0] + self.p, pt[1])

    def neighbor_charts(self, pt: Point) -> Iterator[Chart]:
        """The canonical chart of ``pt`` followed by each of the 3x3 neighbor shifts."""
        base = self.canonical_chart(pt)
        yield base
        if self.mode is Mode.PLANE:
            return
        klein = self.mode is Mode.KLEIN
        for dk in (-1, 0, 1):
            for dl in (-1, 0, 1):
                if dk or dl:
                    yield base.then(Chart(dk, dl, klein))

    def displacement(self, a: Point, b: Point) -> Point:
        """Shortest representative of ``b - a`` over all identifications."""
        if self.mode is Mode.PLANE:
            return (b[0] - a[0], b[1] - a[1])
        best = None
        for k in (-1, 0, 1):
            bx = b[0] + k * self.p
            by = -b[1] if (self.mode is Mode.KLEIN and k % 2) else b[1]
            l = round((a[1] - by) / self.q)
            for dl in (-1, 0, 1):
                v = (bx - a[0], by + (l + dl) * self.q - a[1])
                n = v[0] * v[0] + v[1] * v[1]
                if best is None or n < best[0]:
                    best = (n, v)
        return best[1]

    def distance(self, a: Point, b: Point) -> float:
        v = self.displacement(a, b)
        return math.hypot(v[0], v[1])

    def to_dict(self) -> dict:
        return {"mode": self.mode.value, "x0": self.x0, "y0": self.y0, "p": self.p, "q": self.q}
