"""Event-driven integration of Filippov solutions.

Free flight uses an embedded Dormand-Prince 5(4) pair.  Surface hits are
found from sign changes of ``h_j`` over an accepted step and localized with
Brent's method on the step length.  On a surface the continuation options
(cross, slide, depart to either side) are read off the one-sided Lie
derivatives; several options make a branch point of the solution tree.

Backward time is forward time for the negated fields, so every decision is
taken on the "effective" quantities ``d * F+h`` and ``d * F-h`` with
``d = sign(T)``.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

from scipy.optimize import brentq

from .classify import Label, TOL_TANGENCY, first_nonzero_lie, label_of, side_data
from .errors import DeterministicBranchError, StepUnderflowError
from .geometry import IDENTITY, Mode, Point
from .system import PiecewiseSystem

TOL_EVENT = 1e-10
DEPART_OFFSET = 1e-9
DEFAULT_CAP = 64


class ArcKind(str, Enum):
    FREE = "Free"
    SLIDING = "Sliding"
    REST = "Rest"


class EndEvent(str, Enum):
    SURFACE_HIT = "SurfaceHit"
    SLIDING_EXIT = "SlidingExit"
    BRANCH_POINT = "BranchPoint"
    TIME_LIMIT = "TimeLimit"
    DOMAIN_EXIT = "DomainExit"


@dataclass
class FlowOptions:
    rtol: float = 1e-9
    atol: float = 1e-12
    max_step: float | None = None  # default: domain scale / 8
    min_step: float = 1e-14
    max_events: int = 20000

    def validate(self):
        for name in ("rtol", "atol", "min_step"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
            if getattr(self, name) < 1e-14 and name != "min_step":
                raise ValueError(f"{name} below 1e-14")
        return self


@dataclass
class Arc:
    kind: ArcKind
    index: int  # piece id for free arcs, surface id for sliding arcs, -1 at rest
    ts: list[float] = field(default_factory=list)
    pts: list[Point] = field(default_factory=list)
    end_event: EndEvent | None = None
    end_surface: int | None = None

    def add(self, t: float, p: Point):
        self.ts.append(t)
        self.pts.append(p)

    @property
    def end(self) -> tuple[float, Point]:
        return self.ts[-1], self.pts[-1]


@dataclass(frozen=True)
class Option:
    kind: str  # "slide" or "depart"
    side: int = 0  # +1 / -1 for departures
    # expected signs of the effective (F+h, F-h) along the sliding arc
    region: tuple[int, int] | None = None

    @property
    def name(self) -> str:
        if self.kind == "slide":
            return "slide"
        return "depart+" if self.side > 0 else "depart-"


@dataclass
class Decision:
    """Continuation at a surface point: ``Cross``, ``Slide``, ``Branch`` or ``Rest``."""

    kind: str
    options: list[Option]
    fplus_h: float
    fminus_h: float

    @property
    def target_side(self) -> int | None:
        return self.options[0].side if self.kind == "Cross" else None


# -- Dormand-Prince 5(4) --------------------------------------------------------

_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
)
_B = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84)
_E = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)


def _dp_step(f, p: Point, h: float, k1: Point):
    """One Dormand-Prince step; returns ``(y5, (ex, ey), k7)``."""
    ks = [k1]
    x0, y0 = p
    for a in _A[1:]:
        sx = x0 + h * sum(c * k[0] for c, k in zip(a, ks))
        sy = y0 + h * sum(c * k[1] for c, k in zip(a, ks))
        ks.append(f(sx, sy))
    yx = x0 + h * sum(b * k[0] for b, k in zip(_B, ks))
    yy = y0 + h * sum(b * k[1] for b, k in zip(_B, ks))
    k7 = f(yx, yy)
    ks.append(k7)
    ex = h * sum(e * k[0] for e, k in zip(_E, ks))
    ey = h * sum(e * k[1] for e, k in zip(_E, ks))
    return (yx, yy), (ex, ey), k7


def _dp_point(f, p: Point, h: float, k1: Point) -> Point:
    ks = [k1]
    x0, y0 = p
    for a in _A[1:]:
        sx = x0 + h * sum(c * k[0] for c, k in zip(a, ks))
        sy = y0 + h * sum(c * k[1] for c, k in zip(a, ks))
        ks.append(f(sx, sy))
    return (x0 + h * sum(b * k[0] for b, k in zip(_B, ks)),
            y0 + h * sum(b * k[1] for b, k in zip(_B, ks)))


def _sgn(v: float) -> int:
    return 1 if v > 0 else (-1 if v < 0 else 0)


class Integrator:
    """Piecewise integration in one time direction."""

    def __init__(self, sys: PiecewiseSystem, direction: int = 1, opts: FlowOptions | None = None):
        self.sys = sys
        self.d = 1 if direction >= 0 else -1
        self.opts = (opts or FlowOptions()).validate()
        dom = sys.domain
        self.max_step = self.opts.max_step or dom.scale / 8
        self.min_step = self.opts.min_step * max(1.0, dom.scale)
        self.events = 0

    # ---- helpers
    def _err_norm(self, p, q, e):
        o = self.opts
        return max(abs(e[0]) / (o.atol + o.rtol * max(abs(p[0]), abs(q[0]))),
                   abs(e[1]) / (o.atol + o.rtol * max(abs(p[1]), abs(q[1]))))

    def _next_h(self, h, err):
        if err == 0.0:
            return h * 5.0
        return h * min(5.0, max(0.2, 0.9 * err ** -0.2))

    def _margin(self, p: Point) -> float:
        dom = self.sys.domain
        return min(p[0] - dom.x0, dom.x0 + dom.p - p[0], p[1] - dom.y0, dom.y0 + dom.q - p[1])

    def _tick(self):
        self.events += 1
        if self.events > self.opts.max_events:
            raise StepUnderflowError(f"more than {self.opts.max_events} surface events (Zeno guard)")

    def piece_field(self, i: int):
        fx, fy = self.sys.pieces[i].fns
        d = self.d
        if d > 0:
            return lambda x, y: (fx(x, y), fy(x, y))
        return lambda x, y: (-fx(x, y), -fy(x, y))

    # ---- free flight
    def _first_event(self, f, p: Point, q: Point, h: float, k1: Point):
        """Earliest surface hit in ``(0, h]``: ``(tau, surface, point)`` or ``None``."""
        sys = self.sys
        dom = sys.domain
        charts = [IDENTITY]
        if dom.periodic:
            cq = dom.canonical_chart(q)
            if cq != IDENTITY:
                charts.append(cq)
        best = None
        margin = 1e-8 * max(1.0, dom.scale)
        for j, surf in enumerate(sys.surfaces):
            hf = surf.h_fn
            for ch in charts:
                a = ch.apply(dom, p)
                b = ch.apply(dom, q)
                hp = hf(a[0], a[1])
                hq = hf(b[0], b[1])
                if hp == 0.0 or not (hp * hq < 0 or hq == 0.0):
                    continue
                if hq == 0.0:
                    tau = h
                else:
                    def g(tau, ch=ch, hf=hf):
                        r = ch.apply(dom, _dp_point(f, p, tau, k1))
                        return hf(r[0], r[1])
                    tau = brentq(g, 0.0, h, xtol=1e-13, rtol=1e-15, maxiter=200)
                if best is not None and tau >= best[0]:
                    continue
                e = _dp_point(f, p, tau, k1) if tau != h else q
                # zeros of h outside the rectangle are not points of the surface
                if abs(sys.surface_value(j, dom.canonicalize(e))[0]) > margin:
                    continue
                best = (tau, j, e)
        return best

    def free(self, p: Point, t: float, t_end: float, piece: int | None = None, h0: float | None = None):
        """Integrate the active piece from canonical ``p`` until ``t_end`` or an event.

        Returns ``(arc, outcome)`` where outcome is ``("time",)``, ``("exit",)``
        or ``("hit", surface)``; the arc's last sample is the end point.
        """
        sys = self.sys
        dom = sys.domain
        plane = dom.mode is Mode.PLANE
        i = sys.piece_index(p) if piece is None else piece
        fixed = piece is not None
        f = self.piece_field(i)
        arc = Arc(ArcKind.FREE, i)
        arc.add(t, p)
        h = min(h0 or self.max_step / 4, self.max_step)
        k1 = f(p[0], p[1])
        d = self.d
        while True:
            remaining = (t_end - t) * d
            if remaining <= 0:
                arc.end_event = EndEvent.TIME_LIMIT
                return arc, ("time",)
            step = min(h, self.max_step, remaining)
            q, e, k7 = _dp_step(f, p, step, k1)
            err = self._err_norm(p, q, e)
            if err > 1.0 or not math.isfinite(err):
                h = step * (0.2 if not math.isfinite(err) else max(0.2, 0.9 * err ** -0.2))
                if h < self.min_step:
                    raise StepUnderflowError(f"step size underflow at {p}, t={t}")
                continue
            ev = self._first_event(f, p, q, step, k1)
            if plane and not dom.contains(q):
                g = lambda tau: self._margin(_dp_point(f, p, tau, k1))  # noqa: E731
                tau = step if g(0.0) < 0 else brentq(g, 0.0, step, xtol=1e-13, rtol=1e-15)
                if ev is None or tau < ev[0]:
                    e_pt = _dp_point(f, p, tau, k1)
                    t = t + d * tau
                    arc.add(t, e_pt)
                    arc.end_event = EndEvent.DOMAIN_EXIT
                    return arc, ("exit",)
            if ev is not None:
                tau, j, e_pt = ev
                t = t_end if tau == remaining else t + d * tau
                arc.add(t, dom.canonicalize(e_pt))
                arc.end_event = EndEvent.SURFACE_HIT
                arc.end_surface = j
                return arc, ("hit", j)
            t = t_end if step == remaining else t + d * step
            pc = dom.canonicalize(q)
            arc.add(t, pc)
            h = self._next_h(step, err)
            if pc != q:
                p = pc
                if not fixed:
                    ni = sys.piece_index(p)
                    if ni != i:
                        # region changed across a seam that carries no surface
                        arc.end_event = EndEvent.SURFACE_HIT
                        return arc, ("repiece",)
                k1 = f(p[0], p[1])
            else:
                p = q
                k1 = k7

    # ---- sliding
    def _slide_funcs(self, j: int, p: Point):
        sys = self.sys
        dom = sys.domain
        hval, hch = sys.surface_value(j, p)
        sides = sys.side_pieces(j, p, hch)
        (ip, chp), (im, chm) = sides[1], sides[-1]
        fpx, fpy = sys.pieces[ip].fns
        fmx, fmy = sys.pieces[im].fns
        gx, gy = sys.surfaces[j].grad_fn
        hf = sys.surfaces[j].h_fn
        d = self.d
        fp_flip, fm_flip, h_flip = chp.flip, chm.flip, hch.flip

        def ab(x, y):
            r = chp.apply(dom, (x, y))
            fp = (fpx(r[0], r[1]), fp_flip * fpy(r[0], r[1]))
            r = chm.apply(dom, (x, y))
            fm = (fmx(r[0], r[1]), fm_flip * fmy(r[0], r[1]))
            r = hch.apply(dom, (x, y))
            g = (gx(r[0], r[1]), h_flip * gy(r[0], r[1]))
            return fp, fm, g, d * (g[0] * fp[0] + g[1] * fp[1]), d * (g[0] * fm[0] + g[1] * fm[1])

        def zs(x, y):
            fp, fm, g, a, b = ab(x, y)
            den = b - a
            if abs(den) < 1e-14:
                # both fields tangent (a = b = 0): every convex combination is tangent, take the midpoint
                return ((fp[0] + fm[0]) / 2 * d, (fp[1] + fm[1]) / 2 * d)
            return ((b * fp[0] - a * fm[0]) / den * d, (b * fp[1] - a * fm[1]) / den * d)

        def hval_at(pt):
            r = hch.apply(dom, pt)
            return hf(r[0], r[1])

        def project(pt):
            x, y = pt
            for _ in range(2):
                r = hch.apply(dom, (x, y))
                hv = hf(r[0], r[1])
                g = (gx(r[0], r[1]), h_flip * gy(r[0], r[1]))
                n2 = g[0] * g[0] + g[1] * g[1]
                x -= hv * g[0] / n2
                y -= hv * g[1] / n2
            return (x, y)

        return ab, zs, project, hval_at

    def slide(self, j: int, p: Point, t: float, t_end: float, region: tuple[int, int] | None = None):
        """Sliding motion on surface ``j`` from canonical ``p``.

        Returns ``(arc, outcome)`` with outcome ``("time",)``, ``("exit",)``
        (sliding region left; the arc ends on the boundary point) or
        ``("domain",)``.
        """
        sys = self.sys
        dom = sys.domain
        plane = dom.mode is Mode.PLANE
        arc = Arc(ArcKind.SLIDING, j)
        arc.add(t, p)
        d = self.d
        ab, zs, project, _ = self._slide_funcs(j, p)
        if region is None:
            _, _, _, a0, b0 = ab(*p)
            region = (_sgn(a0), _sgn(b0))
        h = self.max_step / 4
        while True:
            remaining = (t_end - t) * d
            if remaining <= 0:
                arc.end_event = EndEvent.TIME_LIMIT
                return arc, ("time",)
            step = min(h, self.max_step, remaining)
            k1 = zs(*p)
            q, e, _ = _dp_step(zs, p, step, k1)
            err = self._err_norm(p, q, e)
            if err > 1.0 or not math.isfinite(err):
                h = step * (0.2 if not math.isfinite(err) else max(0.2, 0.9 * err ** -0.2))
                if h < self.min_step:
                    raise StepUnderflowError(f"sliding step underflow at {p}, t={t}")
                continue
            q = project(q)
            _, _, _, a1, b1 = ab(*q)
            left = None
            for comp, (val, want) in enumerate(((a1, region[0]), (b1, region[1]))):
                if _sgn(val) != want or abs(val) <= TOL_TANGENCY:
                    left = comp
                    break
            if left is not None:
                def at(tau):
                    return project(_dp_point(zs, p, tau, k1))

                def g(tau, comp=left):
                    return ab(*at(tau))[3 + comp]
                g0 = g(0.0)
                g1 = g(step)
                if g0 * g1 < 0:
                    tau = brentq(g, 0.0, step, xtol=1e-13, rtol=1e-15)
                elif abs(g1) <= TOL_TANGENCY or _sgn(g1) != region[left]:
                    tau = step if abs(g1) <= abs(g0) else 0.0
                else:
                    tau = step
                e_pt = at(tau) if tau > 0 else p
                if plane and not dom.contains(e_pt):
                    left = None  # domain exit first; handled below
                else:
                    t = t_end if tau == remaining else t + d * tau
                    arc.add(t, dom.canonicalize(e_pt))
                    arc.end_event = EndEvent.SLIDING_EXIT
                    arc.end_surface = j
                    return arc, ("exit",)
            if plane and not dom.contains(q):
                g = lambda tau: self._margin(project(_dp_point(zs, p, tau, k1)))  # noqa: E731
                tau = step if g(0.0) < 0 else brentq(g, 0.0, step, xtol=1e-13, rtol=1e-15)
                t = t + d * tau
                arc.add(t, project(_dp_point(zs, p, tau, k1)))
                arc.end_event = EndEvent.DOMAIN_EXIT
                return arc, ("domain",)
            t = t_end if step == remaining else t + d * step
            pc = dom.canonicalize(q)
            arc.add(t, pc)
            h = self._next_h(step, err)
            if pc != q or step >= self.max_step * 0.999:
                ab, zs, project, _ = self._slide_funcs(j, pc)
            p = pc

    # ---- decisions on a surface
    def options(self, j: int, p: Point, arrival: int | None = None) -> tuple[list[Option], float, float]:
        """Continuation options at the surface point ``p`` (effective direction)."""
        sys = self.sys
        d = self.d
        sd = side_data(sys, j, p)
        a, b = d * sd.fplus_h, d * sd.fminus_h
        lab = label_of(a, b)
        opts: list[Option] = []
        if lab is Label.CROSSING:
            opts.append(Option("depart", 1 if a > 0 else -1))
        elif lab is Label.SLIDING:
            opts.append(Option("slide", 0, (-1, 1)))
        elif lab is Label.ESCAPING:
            opts += [Option("slide", 0, (1, -1)), Option("depart", 1), Option("depart", -1)]
        else:
            kp, vp = first_nonzero_lie(sys, sd, 1, d)
            km, vm = first_nonzero_lie(sys, sd, -1, d)
            slide = self._tangency_slide(j, sd)
            if slide is not None:
                opts.append(slide)
            if vp > 0:
                opts.append(Option("depart", 1))
            if vm < 0:
                opts.append(Option("depart", -1))
            if arrival is not None and not any(o.kind == "depart" and o.side == arrival for o in opts):
                # grazing: the arrival side field already points away
                if (arrival > 0 and a > TOL_TANGENCY) or (arrival < 0 and b < -TOL_TANGENCY):
                    opts.append(Option("depart", arrival))
        return opts, sd.fplus_h, sd.fminus_h

    def _tangency_slide(self, j: int, sd) -> Option | None:
        """Sliding continuation out of a tangency point, if the sliding set lies ahead."""
        sys = self.sys
        dom = sys.domain
        d = self.d
        a, b = d * sd.fplus_h, d * sd.fminus_h
        fp, fm = sd.fplus, sd.fminus
        if abs(b - a) > 1e-12:
            z = ((b * fp[0] - a * fm[0]) / (b - a), (b * fp[1] - a * fm[1]) / (b - a))
        else:
            z = ((fp[0] + fm[0]) / 2, (fp[1] + fm[1]) / 2)
        z = (d * z[0], d * z[1])
        n = sd.normal
        zn = z[0] * n[0] + z[1] * n[1]
        tv = (z[0] - zn * n[0], z[1] - zn * n[1])
        tn = math.hypot(*tv)
        if tn < 1e-12:
            return None
        tv = (tv[0] / tn, tv[1] / tn)
        delta = 1e-6 * dom.scale
        _, _, project, _ = self._slide_funcs(j, sd.point)
        q = project((sd.point[0] + delta * tv[0], sd.point[1] + delta * tv[1]))
        sq = side_data(sys, j, dom.canonicalize(q))
        a2, b2 = d * sq.fplus_h, d * sq.fminus_h
        lab = label_of(a2, b2)
        if lab not in (Label.SLIDING, Label.ESCAPING):
            return None
        den = b2 - a2
        fp, fm = sq.fplus, sq.fminus
        z2 = (d * (b2 * fp[0] - a2 * fm[0]) / den, d * (b2 * fp[1] - a2 * fm[1]) / den)
        if z2[0] * tv[0] + z2[1] * tv[1] <= 0:
            return None
        return Option("slide", 0, (_sgn(a2), _sgn(b2)))

    def depart(self, j: int, p: Point, side: int) -> Point:
        sys = self.sys
        hval, hch = sys.surface_value(j, p)
        g = sys.surface_gradient(j, p, hch)
        ng = math.hypot(*g)
        q = (p[0] + side * DEPART_OFFSET * g[0] / ng, p[1] + side * DEPART_OFFSET * g[1] / ng)
        return sys.domain.canonicalize(q)

    def arrival_side(self, j: int, p: Point, piece: int) -> int | None:
        sides = self.sys.side_pieces(j, p)
        hits = [s for s in (1, -1) if sides[s][0] == piece]
        return hits[0] if len(hits) == 1 else None


# -- segments and trees ---------------------------------------------------------

@dataclass
class _State:
    point: Point
    t: float
    mode: str  # "free", "on", "slide"
    surface: int | None = None
    arrival: int | None = None
    region: tuple[int, int] | None = None


@dataclass
class _Outcome:
    kind: str  # "done", "branch", "contact"
    point: Point
    t: float
    event: EndEvent | None = None
    surface: int | None = None
    options: list[Option] = field(default_factory=list)
    fplus_h: float = 0.0
    fminus_h: float = 0.0


def _run(integ: Integrator, st: _State, t_end: float, arcs: list[Arc], stop=None) -> _Outcome:
    """Follow the unique continuation from ``st`` until a branch point, ``t_end`` or ``stop``."""
    sys = integ.sys
    p, t = st.point, st.t
    mode, j, arrival, region = st.mode, st.surface, st.arrival, st.region
    while True:
        if mode == "free":
            arc, res = integ.free(p, t, t_end)
            arcs.append(arc)
            t, p = arc.end
            if res[0] == "time":
                return _Outcome("done", p, t, EndEvent.TIME_LIMIT)
            if res[0] == "exit":
                return _Outcome("done", p, t, EndEvent.DOMAIN_EXIT)
            if res[0] == "repiece":
                integ._tick()
                continue
            j = res[1]
            arrival = integ.arrival_side(j, p, arc.index)
            mode = "on"
        elif mode == "slide":
            arc, res = integ.slide(j, p, t, t_end, region)
            arcs.append(arc)
            t, p = arc.end
            if res[0] == "time":
                return _Outcome("done", p, t, EndEvent.TIME_LIMIT)
            if res[0] == "domain":
                return _Outcome("done", p, t, EndEvent.DOMAIN_EXIT)
            arrival = None
            mode = "on"
        else:
            integ._tick()
            opts, fa, fb = integ.options(j, p, arrival)
            if stop is not None and stop(opts):
                return _Outcome("contact", p, t, None, j, opts, fa, fb)
            if len(opts) > 1:
                return _Outcome("branch", p, t, EndEvent.BRANCH_POINT, j, opts, fa, fb)
            if not opts:
                # no admissible motion: the point is a pseudo-equilibrium
                if (t_end - t) * integ.d > 0:
                    arc = Arc(ArcKind.REST, -1)
                    arc.add(t, p)
                    arc.add(t_end, p)
                    arcs.append(arc)
                return _Outcome("done", p, t_end, EndEvent.TIME_LIMIT)
            mode, region = _apply(integ, j, p, opts[0])
            if mode == "free":
                p = integ.depart(j, p, opts[0].side)


def _apply(integ: Integrator, j: int, p: Point, opt: Option):
    if opt.kind == "slide":
        return "slide", opt.region
    return "free", None


def _start_state(sys: PiecewiseSystem, p0: Point, t0: float) -> _State:
    p = sys.domain.canonicalize(p0)
    for j in range(len(sys.surfaces)):
        if abs(sys.surface_value(j, p)[0]) <= TOL_EVENT:
            return _State(p, t0, "on", j)
    return _State(p, t0, "free")


def _child_state(integ: Integrator, j: int, p: Point, t: float, opt: Option) -> _State:
    if opt.kind == "slide":
        return _State(p, t, "slide", j, region=opt.region)
    return _State(integ.depart(j, p, opt.side), t, "free")


@dataclass
class BranchNode:
    id: int
    parent: int | None
    depth: int
    label: str
    t0: float
    p0: Point
    arcs: list[Arc] = field(default_factory=list)
    children: list[int] = field(default_factory=list)
    end_time: float = 0.0
    end_point: Point = (0.0, 0.0)
    end_event: EndEvent | None = None
    end_surface: int | None = None


@dataclass
class BranchTree:
    root: Point
    t0: float
    T: float
    policy: str
    cap: int
    nodes: list[BranchNode] = field(default_factory=list)
    truncated: bool = False

    @property
    def direction(self) -> int:
        return 1 if self.T >= self.t0 else -1

    def leaves(self) -> list[BranchNode]:
        return [n for n in self.nodes if not n.children]

    def endpoints(self) -> list[Point]:
        """Positions at time ``T`` of every represented solution defined up to ``T``."""
        return [n.end_point for n in self.leaves() if n.end_event is EndEvent.TIME_LIMIT]

    def path(self, leaf: BranchNode) -> list[BranchNode]:
        out = [leaf]
        while out[-1].parent is not None:
            out.append(self.nodes[out[-1].parent])
        return out[::-1]

    def path_samples(self, leaf: BranchNode) -> list[tuple[float, Point, str]]:
        rows = []
        for node in self.path(leaf):
            for arc in node.arcs:
                mode = arc.kind.value if arc.kind is not ArcKind.FREE else f"Free({arc.index})"
                if arc.kind is ArcKind.SLIDING:
                    mode = f"Sliding({arc.index})"
                for t, p in zip(arc.ts, arc.pts):
                    rows.append((t, p, mode))
        return rows

    def arcs(self):
        for n in self.nodes:
            yield from n.arcs


def flow_point(sys: PiecewiseSystem, p0: Point, T: float, policy: str = "deterministic",
               cap: int = DEFAULT_CAP, opts: FlowOptions | None = None, t0: float = 0.0) -> BranchTree:
    """Filippov solutions from ``p0`` over ``[t0, t0 + T]`` (``T < 0``: backward)."""
    if policy not in ("deterministic", "all"):
        raise ValueError(f"unknown policy {policy!r}")
    if not math.isfinite(T):
        raise ValueError("T must be finite")
    integ = Integrator(sys, 1 if T >= 0 else -1, opts)
    t_end = t0 + T
    tree = BranchTree(sys.domain.canonicalize(p0), t0, t_end, policy, cap)
    root = BranchNode(0, None, 0, "root", t0, tree.root)
    tree.nodes.append(root)
    queue = deque([(root, _start_state(sys, p0, t0))])
    while queue:
        node, st = queue.popleft()
        out = _run(integ, st, t_end, node.arcs)
        node.end_time, node.end_point, node.end_event, node.end_surface = out.t, out.point, out.event, out.surface
        if out.kind == "done":
            continue
        if policy == "deterministic":
            names = ", ".join(o.name for o in out.options)
            raise DeterministicBranchError(
                f"branch point at {out.point} (t={out.t}) on surface {out.surface}: {names}")
        leaves = sum(1 for n in tree.nodes if not n.children)
        if leaves + len(out.options) - 1 > cap:
            tree.truncated = True
            continue
        for opt in out.options:
            child = BranchNode(len(tree.nodes), node.id, node.depth + 1, opt.name, out.t, out.point)
            tree.nodes.append(child)
            node.children.append(child.id)
            queue.append((child, _child_state(integ, out.surface, out.point, out.t, opt)))
    return tree


def integrate_free(sys: PiecewiseSystem, piece: int, p0: Point, tmax: float, tol: float = 1e-10,
                   max_step: float | None = None) -> Arc:
    """Integrate one smooth piece from ``p0``, stopping at the first surface hit."""
    opts = FlowOptions(rtol=tol, atol=tol, max_step=max_step)
    integ = Integrator(sys, 1 if tmax >= 0 else -1, opts)
    arc, _ = integ.free(sys.domain.canonicalize(p0), 0.0, tmax, piece=piece)
    return arc


def transition(sys: PiecewiseSystem, surface: int, pt: Point, direction: int = 1,
               arrival: int | None = None) -> Decision:
    integ = Integrator(sys, direction)
    opts, fa, fb = integ.options(surface, sys.domain.canonicalize(pt), arrival)
    if not opts:
        kind = "Rest"
    elif len(opts) > 1:
        kind = "Branch"
    elif opts[0].kind == "slide":
        kind = "Slide"
    else:
        kind = "Cross"
    return Decision(kind, opts, fa, fb)


@dataclass
class Contact:
    """First meeting of a solution with a non-uniqueness point."""

    hit: bool
    t: float
    point: Point
    surface: int | None
    options: list[Option]
    arcs: list[Arc]
    direction: int


def first_contact(sys: PiecewiseSystem, p0: Point, T: float, opts: FlowOptions | None = None) -> Contact:
    """Follow the solution from ``p0`` until it reaches a point with several
    continuations or a sliding continuation, within ``|t| <= |T|``.

    Until that point the solution is unique, so this equals the first contact
    of any branch of the all-branches tree with the non-uniqueness set.
    """
    integ = Integrator(sys, 1 if T >= 0 else -1, opts)
    arcs: list[Arc] = []

    def stop(options):
        return len(options) > 1 or any(o.kind == "slide" for o in options)

    out = _run(integ, _start_state(sys, p0, 0.0), T, arcs, stop)
    return Contact(out.kind == "contact", out.t, out.point, out.surface, out.options, arcs, integ.d)


def closes(sys: PiecewiseSystem, p0: Point, T: float, tol: float = 1e-6, opts: FlowOptions | None = None):
    """Flow ``p0`` deterministically for ``T`` and report the closure defect."""
    tree = flow_point(sys, p0, T, "deterministic", opts=opts)
    end = tree.nodes[-1].end_point
    return sys.domain.distance(sys.domain.canonicalize(p0), end), tree



# -- box covers of Z_t(A) --------------------------------------------------------

@dataclass(frozen=True)
class Box:
    x0: float
    x1: float
    y0: float
    y1: float

    def __post_init__(self):
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise ValueError(f"empty box {self}")

    def contains(self, p: Point) -> bool:
        return self.x0 <= p[0] <= self.x1 and self.y0 <= p[1] <= self.y1

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    def to_list(self) -> list[float]:
        return [self.x0, self.x1, self.y0, self.y1]


@dataclass
class Raster:
    """Square-ish cells tiling the fundamental rectangle."""

    x0: float
    y0: float
    dx: float
    dy: float
    nx: int
    ny: int
    periodic: bool

    @classmethod
    def for_boxes(cls, sys: PiecewiseSystem, boxes: list[Box], resolution: int) -> "Raster":
        d = sys.domain
        eps = min(min(b.x1 - b.x0, b.y1 - b.y0) for b in boxes) / resolution
        nx = max(1, round(d.p / eps))
        ny = max(1, round(d.q / eps))
        return cls(d.x0, d.y0, d.p / nx, d.q / ny, nx, ny, d.periodic)

    def cell_of(self, p: Point) -> tuple[int, int] | None:
        # the small shift puts points lying on a raster line (sliding on y = 0) in one row
        i = math.floor((p[0] - self.x0) / self.dx + 1e-9)
        j = math.floor((p[1] - self.y0) / self.dy + 1e-9)
        if self.periodic:
            return i % self.nx, j % self.ny
        if 0 <= i < self.nx and 0 <= j < self.ny:
            return i, j
        return None

    def center(self, c: tuple[int, int]) -> Point:
        return (self.x0 + (c[0] + 0.5) * self.dx, self.y0 + (c[1] + 0.5) * self.dy)

    def cells_in(self, box: Box) -> list[tuple[int, int]]:
        i0 = max(0, math.floor((box.x0 - self.x0) / self.dx) - 1)
        i1 = min(self.nx - 1, math.ceil((box.x1 - self.x0) / self.dx) + 1)
        j0 = max(0, math.floor((box.y0 - self.y0) / self.dy) - 1)
        j1 = min(self.ny - 1, math.ceil((box.y1 - self.y0) / self.dy) + 1)
        return [(i, j) for j in range(j0, j1 + 1) for i in range(i0, i1 + 1) if box.contains(self.center((i, j)))]

    def dilate(self, cells, r: int) -> set[tuple[int, int]]:
        out = set()
        for i, j in cells:
            for di in range(-r, r + 1):
                for dj in range(-r, r + 1):
                    a, b = i + di, j + dj
                    if self.periodic:
                        out.add((a % self.nx, b % self.ny))
                    elif 0 <= a < self.nx and 0 <= b < self.ny:
                        out.add((a, b))
        return out

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy


@dataclass
class BoxCover:
    t: float
    resolution: int
    raster: Raster
    cells: list[tuple[int, int]]
    samples: int
    truncated: int
    forward_cells: int
    pullback_cells: int

    @property
    def area(self) -> float:
        return len(self.cells) * self.raster.cell_area

    def to_dict(self) -> dict:
        r = self.raster
        return {
            "t": self.t, "resolution": self.resolution, "area": self.area,
            "cell_dx": r.dx, "cell_dy": r.dy, "x0": r.x0, "y0": r.y0, "nx": r.nx, "ny": r.ny,
            "cells": [list(c) for c in self.cells], "samples": self.samples,
            "truncated_trees": self.truncated, "forward_cells": self.forward_cells,
            "pullback_cells": self.pullback_cells,
        }


def _invertible(tree: BranchTree) -> bool:
    """True when the tree is a single solution that never slides or rests."""
    return len(tree.nodes) == 1 and all(a.kind is ArcKind.FREE for a in tree.arcs())


def flow_set(sys: PiecewiseSystem, boxes: list[Box], t: float, resolution: int = 8,
             cap: int = DEFAULT_CAP, opts: FlowOptions | None = None) -> BoxCover:
    """Raster cover of ``Z_t(A)``, ``A`` the union of ``boxes``.

    A cell is in the cover when its center flows backward (all branches)
    into ``A``, or when a forward sample of ``A`` ends in it along a solution
    that slid or branched (such endpoints have backward continuations that a
    finite tree does not represent).  Candidate cells for the backward test
    are the cells near forward endpoints.
    """
    if resolution < 1:
        raise ValueError("resolution must be positive")
    dom = sys.domain
    for b in boxes:
        if not (dom.contains((b.x0, b.y0)) and dom.contains((b.x1, b.y1))):
            raise ValueError(f"box {b.to_list()} is not inside the domain")
    ras = Raster.for_boxes(sys, boxes, resolution)
    src = sorted({c for b in boxes for c in ras.cells_in(b)})
    truncated = 0
    ends: dict[tuple[int, int], list[Point]] = {}
    marked_fwd: set[tuple[int, int]] = set()
    end_cells: set[tuple[int, int]] = set()
    for c in src:
        tree = flow_point(sys, ras.center(c), t, "all", cap, opts)
        truncated += tree.truncated
        pts = tree.endpoints()
        ends[c] = pts
        inv = _invertible(tree)
        for p in pts:
            cell = ras.cell_of(p)
            if cell is None:
                continue
            end_cells.add(cell)
            if not inv:
                marked_fwd.add(cell)
    # largest image spacing of neighbouring samples, in cells
    stretch = 1.0
    pitch = min(ras.dx, ras.dy)
    for (i, j), pts in ends.items():
        for nb in ((i + 1, j), (i, j + 1)):
            if nb in ends and pts and ends[nb]:
                dist = min(dom.distance(p, q) for p in pts for q in ends[nb])
                stretch = max(stretch, dist / pitch)
    radius = 2 + math.ceil(stretch)
    marked_back: set[tuple[int, int]] = set()
    if t == 0:
        marked_back = set(src)
    else:
        for c in sorted(ras.dilate(end_cells, radius)):
            tree = flow_point(sys, ras.center(c), -t, "all", cap, opts)
            truncated += tree.truncated
            if any(b.contains(p) for p in tree.endpoints() for b in boxes):
                marked_back.add(c)
    cells = sorted(marked_back | marked_fwd)
    return BoxCover(t, resolution, ras, cells, len(src), truncated, len(marked_fwd), len(marked_back))
