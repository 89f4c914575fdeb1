"""Crossing / sliding / escaping / tangency classification of switching-surface points."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

from scipy.optimize import brentq

from .errors import DegenerateDenominatorError, OffSurfaceError, OrderOverflowError, WrongRegionError
from .geometry import Point
from .system import MAX_LIE_ORDER, PiecewiseSystem

TOL_TANGENCY = 1e-10
TOL_ON_SURFACE = 1e-10


class Label(str, Enum):
    CROSSING = "Crossing"
    SLIDING = "Sliding"
    ESCAPING = "Escaping"
    TANGENCY = "Tangency"


@dataclass(frozen=True)
class TangencyDetail:
    side: str  # "+", "-" or "both"
    order: int
    visible: bool

    @property
    def visibility(self) -> str:
        return "Visible" if self.visible else "Invisible"


@dataclass(frozen=True)
class SigmaClass:
    label: Label
    fplus_h: float
    fminus_h: float
    tangency: tuple[TangencyDetail, ...] = ()

    @property
    def tangency_detail(self) -> TangencyDetail | None:
        """Single summary detail; ``side="both"`` when both sides agree."""
        if not self.tangency:
            return None
        if len(self.tangency) == 2:
            p, m = self.tangency
            if p.order == m.order and p.visible == m.visible:
                return TangencyDetail("both", p.order, p.visible)
        return self.tangency[0]


@dataclass
class SideData:
    """One-sided quantities of a surface at a point, in the frame of that point."""

    surface: int
    point: Point
    h: float
    h_chart: object
    normal: Point  # unit normal, pointing to the + side
    sides: dict
    fplus: Point
    fminus: Point
    fplus_h: float
    fminus_h: float


def side_data(sys: PiecewiseSystem, j: int, pt: Point) -> SideData:
    hval, hch = sys.surface_value(j, pt)
    sides = sys.side_pieces(j, pt, hch)
    g = sys.surface_gradient(j, pt, hch)
    ng = math.hypot(*g)
    fp = sys.piece_vector(*sides[1], pt)
    fm = sys.piece_vector(*sides[-1], pt)
    a = sys.side_lie(j, pt, sides[1], hch, 1)
    b = sys.side_lie(j, pt, sides[-1], hch, 1)
    return SideData(j, pt, hval, hch, (g[0] / ng, g[1] / ng), sides, fp, fm, a, b)


def first_nonzero_lie(sys: PiecewiseSystem, sd: SideData, side: int, sign: int = 1,
                      tol: float = TOL_TANGENCY) -> tuple[int, float]:
    """Smallest ``k >= 1`` with ``|(sign*F)^k h| > tol`` and that value."""
    for k in range(1, MAX_LIE_ORDER + 1):
        v = sys.side_lie(sd.surface, sd.point, sd.sides[side], sd.h_chart, k) * sign ** k
        if abs(v) > tol:
            return k, v
    raise OrderOverflowError(
        f"all Lie derivatives up to order {MAX_LIE_ORDER} vanish at {sd.point} (side {side:+d})")


def label_of(a: float, b: float, tol: float = TOL_TANGENCY) -> Label:
    if abs(a) <= tol or abs(b) <= tol:
        return Label.TANGENCY
    if a * b > 0:
        return Label.CROSSING
    return Label.SLIDING if a < 0 else Label.ESCAPING


def classify_point(sys: PiecewiseSystem, surface: int, pt: Point) -> SigmaClass:
    sd = side_data(sys, surface, pt)
    if abs(sd.h) > TOL_ON_SURFACE:
        raise OffSurfaceError(f"|h| = {abs(sd.h):.3g} at {pt}: not on surface {surface}")
    return _classify(sys, sd)


def _classify(sys: PiecewiseSystem, sd: SideData) -> SigmaClass:
    a, b = sd.fplus_h, sd.fminus_h
    lab = label_of(a, b)
    details = []
    if lab is Label.TANGENCY:
        for side, val in ((1, a), (-1, b)):
            if abs(val) <= TOL_TANGENCY:
                k, v = first_nonzero_lie(sys, sd, side)
                # + side visible when its orbit stays in h > 0, - side when it stays in h < 0
                visible = v > 0 if side == 1 else v < 0
                details.append(TangencyDetail("+" if side == 1 else "-", k, visible))
    return SigmaClass(lab, a, b, tuple(details))


def sliding_field(sys: PiecewiseSystem, surface: int, pt: Point) -> Point:
    sd = side_data(sys, surface, pt)
    if abs(sd.h) > TOL_ON_SURFACE:
        raise OffSurfaceError(f"|h| = {abs(sd.h):.3g} at {pt}: not on surface {surface}")
    lab = label_of(sd.fplus_h, sd.fminus_h)
    if lab not in (Label.SLIDING, Label.ESCAPING):
        raise WrongRegionError(f"sliding field requested at a {lab.value} point {pt}")
    return sliding_vector(sd)


def sliding_vector(sd: SideData) -> Point:
    a, b = sd.fplus_h, sd.fminus_h
    den = b - a
    if abs(den) < 1e-12:
        raise DegenerateDenominatorError(f"F-h - F+h = {den:.3g} at {sd.point}")
    fp, fm = sd.fplus, sd.fminus
    return ((b * fp[0] - a * fm[0]) / den, (b * fp[1] - a * fm[1]) / den)


def sliding_weight(sd: SideData) -> float:
    """``lam`` with ``Z^s = lam F+ + (1 - lam) F-``."""
    return sd.fminus_h / (sd.fminus_h - sd.fplus_h)


def filippov_segment(sys: PiecewiseSystem, surface: int, pt: Point) -> tuple[Point, Point]:
    sd = side_data(sys, surface, pt)
    if abs(sd.h) > TOL_ON_SURFACE:
        raise OffSurfaceError(f"|h| = {abs(sd.h):.3g} at {pt}: not on surface {surface}")
    return sd.fplus, sd.fminus


def filippov_set_point(seg: tuple[Point, Point], s: float) -> Point:
    """Point ``(F+ + F-)/2 + s (F+ - F-)/2`` of the Filippov segment, ``s`` in [-1, 1]."""
    fp, fm = seg
    return ((fp[0] + fm[0]) / 2 + s * (fp[0] - fm[0]) / 2, (fp[1] + fm[1]) / 2 + s * (fp[1] - fm[1]) / 2)


# -- whole-surface scans ------------------------------------------------------

@dataclass
class ScanSample:
    param: float
    point: Point
    fplus_h: float
    fminus_h: float
    label: Label


@dataclass
class TangencyPoint:
    param: float
    point: Point
    sigma: SigmaClass


@dataclass
class ScanResult:
    surface: int
    trace: int
    axis: str
    lo: float
    hi: float
    closed: bool
    samples: list[ScanSample] = field(default_factory=list)
    intervals: list[tuple[float, float, Label]] = field(default_factory=list)
    tangencies: list[TangencyPoint] = field(default_factory=list)

    def label_at(self, s: float) -> Label:
        for t in self.tangencies:
            if abs(t.param - s) <= 1e-9:
                return Label.TANGENCY
        for lo, hi, lab in self.intervals:
            if lo <= s <= hi or (hi > self.hi and s + (self.hi - self.lo) <= hi):
                return lab
        raise ValueError(f"parameter {s} outside scanned range")


def scan_surface(sys: PiecewiseSystem, surface: int, n: int = 256, trace: int = 0) -> ScanResult:
    if n < 16:
        raise ValueError("scan_surface needs at least 16 samples")
    tr = sys.traces(surface)[trace]
    res = ScanResult(surface, trace, tr.axis, tr.lo, tr.hi, tr.closed)

    def values(s):
        sd = side_data(sys, surface, tr.point(s))
        return sd.fplus_h, sd.fminus_h

    params = [float(s) for s in tr.params(n)]
    vals = [values(s) for s in params]
    for s, (a, b) in zip(params, vals):
        res.samples.append(ScanSample(s, sys.domain.canonicalize(tr.point(s)), a, b, label_of(a, b)))

    span = tr.hi - tr.lo
    grid = list(zip(params, vals))
    if tr.closed:
        grid.append((params[0] + span, vals[0]))
    elif params[-1] < tr.hi:
        grid.append((tr.hi, values(tr.hi)))

    roots = []
    for (s0, v0), (s1, v1) in zip(grid[:-1], grid[1:]):
        for comp in (0, 1):
            f0, f1 = v0[comp], v1[comp]
            if f0 == 0.0:
                roots.append(s0)
            elif f0 * f1 < 0:
                def g(s, comp=comp):
                    return values(s)[comp]
                roots.append(brentq(g, s0, s1, xtol=1e-15 * max(1.0, span), rtol=1e-15, maxiter=200))
    if not tr.closed and grid[-1][1][0] * grid[-1][1][1] == 0.0:
        roots.append(grid[-1][0])
    roots = sorted(_wrap(r, tr) for r in roots)
    merged = []
    for r in roots:
        if not merged or r - merged[-1] > 1e-9 * max(1.0, span):
            merged.append(r)
    if tr.closed and len(merged) > 1 and merged[0] + span - merged[-1] <= 1e-9 * max(1.0, span):
        merged.pop()

    for r in merged:
        pt = tr.point(r)
        sd = side_data(sys, surface, pt)
        res.tangencies.append(TangencyPoint(r, sys.domain.canonicalize(pt), _classify(sys, sd)))

    # labelled pieces between consecutive tangency points
    if tr.closed:
        if not merged:
            cuts = [(tr.lo, tr.hi)]
        else:
            cuts = [(a, b) for a, b in zip(merged, merged[1:])] + [(merged[-1], merged[0] + span)]
    else:
        pts = [tr.lo] + [r for r in merged if tr.lo < r < tr.hi] + [tr.hi]
        cuts = [(a, b) for a, b in zip(pts[:-1], pts[1:]) if b > a]
    for a, b in cuts:
        mid = 0.5 * (a + b)
        fa, fb = values(_wrap(mid, tr) if tr.closed else mid)
        res.intervals.append((a, b, label_of(fa, fb)))
    return res


def _wrap(s: float, tr) -> float:
    if not tr.closed:
        return s
    span = tr.hi - tr.lo
    return tr.lo + (s - tr.lo) % span
