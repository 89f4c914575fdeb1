"""Invariant-measure checks and constructions.

* flux condition ``alpha+ F+h = alpha- F-h`` along every switching surface;
* divergence of ``alpha F`` inside every piece;
* densities for piecewise constant striped fields on the torus / Klein bottle;
* push-forward test ``nu(Z_t(A))`` against ``nu(A)`` on raster covers;
* the time-uniform measure on a closed orbit;
* the first-return map around an invisible fold-fold point.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import expr as ex
from .classify import Label, classify_point, side_data
from .errors import (
    FilippovError,
    InfeasibleDensityError,
    NotClosedError,
    OrbitMeetsSeedError,
    ReturnMapError,
    ScenarioError,
)
from .flow import (
    Arc,
    ArcKind,
    Box,
    FlowOptions,
    Integrator,
    Raster,
    first_contact,
    flow_point,
    flow_set,
)
from .geometry import Point
from .system import PiecewiseSystem, load_scenario

FLUX_THRESHOLD = 1e-9
DIV_THRESHOLD = 1e-9
PUSHFORWARD_THRESHOLD = 0.02


# -- densities -------------------------------------------------------------------

def density_exprs(sys: PiecewiseSystem, densities=None) -> list[ex.Expr]:
    """Per-piece density expressions.

    ``None`` uses the densities stored on the pieces (1 where absent); a
    string, number or Expr applies one formula to every piece; a list gives one
    entry per piece.
    """
    if densities is None:
        return [p.density if p.density is not None else ex.ONE for p in sys.pieces]
    if isinstance(densities, (list, tuple)):
        if len(densities) != len(sys.pieces):
            raise ScenarioError(f"expected {len(sys.pieces)} densities, got {len(densities)}")
        return [_as_expr(d) for d in densities]
    e = _as_expr(densities)
    return [e] * len(sys.pieces)


def _as_expr(d) -> ex.Expr:
    if isinstance(d, ex.Expr):
        return d
    if isinstance(d, (int, float)):
        return ex.Const(float(d))
    return ex.parse(str(d))


def density_at(sys: PiecewiseSystem, dens: list[ex.Expr], p: Point) -> float:
    i = sys.piece_index(p)
    c = sys.domain.canonicalize(p)
    return dens[i].fn()(c[0], c[1])


# -- flux --------------------------------------------------------------------------

@dataclass
class FluxProfile:
    surface: int
    params: list[float]
    points: list[Point]
    residuals: list[float]
    alpha_scale: float

    @property
    def max_abs(self) -> float:
        return max((abs(r) for r in self.residuals), default=0.0)

    @property
    def witness(self) -> tuple[float, Point, float]:
        k = int(np.argmax(np.abs(self.residuals)))
        return self.params[k], self.points[k], self.residuals[k]

    @property
    def violated(self) -> bool:
        # threshold on the residual relative to the density scale: scale invariant
        return self.max_abs / self.alpha_scale > FLUX_THRESHOLD

    def to_dict(self) -> dict:
        s, p, r = self.witness
        return {"surface": self.surface, "max_abs_residual": self.max_abs, "alpha_scale": self.alpha_scale,
                "violated": self.violated, "witness": {"param": s, "x": p[0], "y": p[1], "residual": r},
                "samples": len(self.residuals)}


def flux_residual(sys: PiecewiseSystem, dens: list[ex.Expr], j: int, p: Point) -> tuple[float, float, float]:
    """``(alpha+ F+h - alpha- F-h, alpha+, alpha-)`` at the surface point ``p``."""
    hval, hch = sys.surface_value(j, p)
    sides = sys.side_pieces(j, p, hch)
    vals = []
    for s in (1, -1):
        i, ch = sides[s]
        r = ch.apply(sys.domain, p)
        alpha = dens[i].fn()(r[0], r[1])
        vals.append((alpha * sys.side_lie(j, p, sides[s], hch, 1), alpha))
    return vals[0][0] - vals[1][0], vals[0][1], vals[1][1]


def check_flux(sys: PiecewiseSystem, densities=None, samples: int = 256,
               surfaces: list[int] | None = None) -> list[FluxProfile]:
    dens = density_exprs(sys, densities)
    out = []
    for j in (surfaces if surfaces is not None else range(len(sys.surfaces))):
        for tr in sys.traces(j):
            params, pts, res = [], [], []
            scale = 0.0
            for s in tr.params(samples):
                p = sys.domain.canonicalize(tr.point(float(s)))
                r, ap, am = flux_residual(sys, dens, j, p)
                params.append(float(s))
                pts.append(p)
                res.append(r)
                scale = max(scale, abs(ap), abs(am))
            out.append(FluxProfile(j, params, pts, res, scale or 1.0))
    return out


# -- divergence ------------------------------------------------------------------

def divergence_expr(sys: PiecewiseSystem, piece: int, density=None) -> ex.Expr:
    pc = sys.pieces[piece]
    alpha = density_exprs(sys, density)[piece] if not isinstance(density, (str, int, float, ex.Expr)) \
        else _as_expr(density)
    return ex.add(ex.differentiate(ex.mul(alpha, pc.fx), "x"), ex.differentiate(ex.mul(alpha, pc.fy), "y"))


@dataclass
class DivergenceReport:
    piece: int
    expression: str
    max_abs: float
    witness: Point | None
    samples: int

    @property
    def violated(self) -> bool:
        return self.max_abs > DIV_THRESHOLD

    def to_dict(self) -> dict:
        return {"piece": self.piece, "expression": self.expression, "max_abs": self.max_abs,
                "violated": self.violated, "samples": self.samples,
                "witness": None if self.witness is None else list(self.witness)}


def check_divergence(sys: PiecewiseSystem, piece: int, density=None, samples: int = 33) -> DivergenceReport:
    """Largest ``|div(alpha F)|`` over grid points inside the piece's region."""
    e = divergence_expr(sys, piece, density)
    fn = e.fn()
    d = sys.domain
    best, wit, n = 0.0, None, 0
    margin = 1e-6 * d.scale
    for j in range(samples):
        for i in range(samples):
            p = (d.x0 + (i + 0.5) * d.p / samples, d.y0 + (j + 0.5) * d.q / samples)
            if any(abs(sys.surface_value(k, p)[0]) < margin for k in range(len(sys.surfaces))):
                continue
            if sys.piece_index(p) != piece:
                continue
            n += 1
            v = abs(fn(p[0], p[1]))
            if v > best or wit is None:
                best, wit = max(best, v), p if v >= best else wit
    return DivergenceReport(piece, str(e), best, wit, n)


# -- striped fields ------------------------------------------------------------------

@dataclass
class StripedSpec:
    """Constant fields ``(a_i, b_i)`` on horizontal stripes of ``[x0, x0+p] x [y0, h_n]``.

    Stripe ``i < n`` is ``h_i <= y <= h_{i+1}``; stripe ``n`` is ``y0 <= y <= h_1``.
    """

    a: list[float]
    b: list[float]
    heights: list[float]
    mode: str = "torus"
    x0: float = 0.0
    y0: float = 0.0
    p: float = 1.0

    def __post_init__(self):
        self.a = [float(v) for v in self.a]
        self.b = [float(v) for v in self.b]
        self.heights = [float(v) for v in self.heights]
        n = len(self.b)
        if n < 1 or len(self.a) != n or len(self.heights) != n:
            raise ScenarioError("a, b and heights must have the same positive length")
        if any(not v > 0 for v in self.b):
            raise ScenarioError("every b_i must be positive")
        hs = [self.y0] + self.heights
        if any(not hs[k + 1] > hs[k] for k in range(n)):
            raise ScenarioError("heights must increase strictly from y0")
        if self.mode not in ("torus", "klein"):
            raise ScenarioError(f"mode must be torus or klein, got {self.mode!r}")
        if not self.p > 0:
            raise ScenarioError("p must be positive")

    @property
    def n(self) -> int:
        return len(self.b)

    @property
    def q(self) -> float:
        return self.heights[-1] - self.y0

    def stripe_bounds(self, i: int) -> tuple[float, float]:
        """``(lo, hi)`` of stripe ``i`` (0-based)."""
        if i == self.n - 1:
            return self.y0, self.heights[0]
        return self.heights[i], self.heights[i + 1]

    def stripe_of(self, y: float) -> int:
        for i in range(self.n):
            lo, hi = self.stripe_bounds(i)
            if lo <= y < hi:
                return i
        return self.n - 2 if self.n > 1 else 0

    def mirror(self, y: float) -> float:
        """Height identified with ``y`` across the vertical seam of the Klein bottle."""
        v = -y
        k = math.floor((v - self.y0) / self.q)
        return v - k * self.q

    def mirror_pairs(self) -> list[tuple[int, int]]:
        """Stripe pairs glued along the vertical seam (Klein mode)."""
        cuts = sorted({self.y0, self.heights[-1], *self.heights, *(self.mirror(h) for h in self.heights)})
        cuts = [c for c in cuts if self.y0 <= c <= self.heights[-1]]
        pairs = set()
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            if hi - lo <= 1e-12 * self.q:
                continue
            y = 0.5 * (lo + hi)
            pairs.add(tuple(sorted((self.stripe_of(y), self.stripe_of(self.mirror(y))))))
        return sorted(pairs)

    def to_dict(self) -> dict:
        return {"mode": self.mode, "a": self.a, "b": self.b, "heights": self.heights,
                "x0": self.x0, "y0": self.y0, "p": self.p}

    @classmethod
    def from_dict(cls, d: dict) -> "StripedSpec":
        known = {"mode", "a", "b", "heights", "x0", "y0", "p", "n"}
        extra = set(d) - known
        if extra:
            raise ScenarioError(f"unknown stripe keys: {sorted(extra)}")
        b = d.get("b")
        if b is None:
            raise ScenarioError("stripe spec needs b")
        n = int(d.get("n", len(b)))
        if n != len(b):
            raise ScenarioError(f"n = {n} but {len(b)} values of b")
        y0 = float(d.get("y0", 0.0))
        heights = d.get("heights")
        if heights is None:
            heights = [y0 + (k + 1) / n for k in range(n)]
        a = d.get("a", [0.0] * n)
        return cls(a, b, heights, d.get("mode", "torus"), float(d.get("x0", 0.0)), y0, float(d.get("p", 1.0)))


@dataclass
class DensitySolution:
    alpha: list[float]
    residual: float
    feasible: bool
    positive: bool
    klein_pairs: list[tuple[int, int]]
    klein_defect: float
    reason: str = ""

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "residual": self.residual, "feasible": self.feasible,
                "positive": self.positive, "klein_pairs": [list(p) for p in self.klein_pairs],
                "klein_defect": self.klein_defect, "reason": self.reason}


def flux_matrix(spec: StripedSpec) -> np.ndarray:
    """Rows ``b_i alpha_i - b_{i+1} alpha_{i+1}`` (indices cyclic)."""
    n = spec.n
    m = np.zeros((n, n))
    for i in range(n):
        m[i, i] += spec.b[i]
        m[i, (i + 1) % n] -= spec.b[(i + 1) % n]
    return m


def solve_striped_density(spec: StripedSpec, strict: bool = False) -> DensitySolution:
    """Piecewise constant density preserved by the striped field, normalized to
    total mass 1 over the fundamental rectangle."""
    m = flux_matrix(spec)
    _, sv, vt = np.linalg.svd(m)
    tol = 1e-12 * max(1.0, float(sv[0]))
    null_dim = int(np.sum(sv <= tol))
    if null_dim != 1:
        raise InfeasibleDensityError(f"flux system has a {null_dim}-dimensional solution space")
    v = vt[-1]
    v = v / v[np.argmax(np.abs(v))]
    widths = np.array([hi - lo for lo, hi in (spec.stripe_bounds(i) for i in range(spec.n))])
    mass = float(np.sum(v * widths) * spec.p)
    alpha = v / mass
    residual = float(np.max(np.abs(m @ alpha)))
    positive = all(alpha[i] * alpha[(i + 1) % spec.n] > 0 for i in range(spec.n))
    pairs, defect, reason = [], 0.0, ""
    feasible = positive
    if not positive:
        reason = "densities of adjacent stripes have opposite signs"
    if spec.mode == "klein":
        pairs = spec.mirror_pairs()
        for i, j in pairs:
            defect = max(defect, abs(spec.a[i] / spec.b[i] - spec.a[j] / spec.b[j]))
        if defect > 1e-12:
            feasible = False
            reason = (f"stripes glued across the vertical seam need equal a/b; "
                      f"largest mismatch {defect:.6g}")
    sol = DensitySolution([float(a) for a in alpha], residual, feasible, positive, pairs, defect, reason)
    if strict and not feasible:
        raise InfeasibleDensityError(reason)
    return sol


def _num(v: float) -> str:
    return repr(float(v))


def striped_scenario_text(spec: StripedSpec, densities: list[float] | None = None, name: str = "") -> str:
    n = spec.n
    lines = [f'name = "{name or "striped_" + spec.mode}"',
             f'description = "{n} constant stripes on the {spec.mode}"',
             f'domain {{ mode = "{spec.mode}", x0 = {_num(spec.x0)}, y0 = {_num(spec.y0)}, '
             f'p = {_num(spec.p)}, q = {_num(spec.q)} }}']
    inner = spec.heights[:-1]
    for h in inner:
        lines.append(f'surface {{ h = "y-{_num(h)}" }}')
    lines.append(f'surface {{ h = "y-({_num(spec.y0)})", label = "horizontal seam" }}')
    if spec.mode == "klein":
        lines.append(f'surface {{ h = "x-({_num(spec.x0)})", label = "vertical seam" }}')
    extra = "*" * (2 if spec.mode == "klein" else 1)
    for i in range(n):
        # stripe i < n-1 lies above inner height i; the last stripe lies below all of them
        if i == n - 1:
            sig = "-" * len(inner)
        else:
            sig = "".join("+" if k <= i else "-" for k in range(len(inner)))
        dens = f', density = "{_num(densities[i])}"' if densities is not None else ""
        lines.append(f'piece {{ signature = "{sig}{extra}", fx = "{_num(spec.a[i])}", '
                     f'fy = "{_num(spec.b[i])}"{dens}, label = "X{i + 1}" }}')
    return "\n".join(lines) + "\n"


def striped_system(spec: StripedSpec, densities: list[float] | None = None, name: str = "") -> PiecewiseSystem:
    return load_scenario(striped_scenario_text(spec, densities, name))


# -- push-forward ------------------------------------------------------------------

@dataclass
class PushforwardRow:
    set_id: int
    t: float
    nu_a: float
    nu_image: float
    rel_error: float
    resolution: int
    cover_cells: int
    truncated: int

    def to_dict(self) -> dict:
        return {"set": self.set_id, "t": self.t, "nu_A": self.nu_a, "nu_image": self.nu_image,
                "rel_error": self.rel_error, "resolution": self.resolution,
                "cover_cells": self.cover_cells, "truncated_trees": self.truncated}


def quadrature(sys: PiecewiseSystem, dens: list[ex.Expr], ras: Raster, cells) -> float:
    """Midpoint rule: density at each cell center times the cell area."""
    return sum(density_at(sys, dens, ras.center(c)) for c in cells) * ras.cell_area


def pushforward_test(sys: PiecewiseSystem, sets: list[list[Box]], times: list[float], resolution: int = 8,
                     densities=None, opts: FlowOptions | None = None) -> list[PushforwardRow]:
    dens = density_exprs(sys, densities)
    rows = []
    for k, boxes in enumerate(sets):
        ras = Raster.for_boxes(sys, boxes, resolution)
        src = sorted({c for b in boxes for c in ras.cells_in(b)})
        nu_a = quadrature(sys, dens, ras, src)
        for t in times:
            cover = flow_set(sys, boxes, t, resolution, opts=opts)
            nu_img = quadrature(sys, dens, cover.raster, cover.cells)
            rel = abs(nu_img - nu_a) / abs(nu_a) if nu_a else float("inf")
            rows.append(PushforwardRow(k, t, nu_a, nu_img, rel, resolution, len(cover.cells), cover.truncated))
    return rows


# -- report -------------------------------------------------------------------------

@dataclass
class MeasureReport:
    flux: list[FluxProfile]
    divergence: list[DivergenceReport]
    pushforward: list[PushforwardRow] = field(default_factory=list)

    @property
    def flux_residual(self) -> float:
        return max((f.max_abs for f in self.flux), default=0.0)

    @property
    def verdict(self) -> dict:
        for f in self.flux:
            if f.violated:
                s, p, r = f.witness
                return {"verdict": "ViolationDetected", "kind": "flux", "surface": f.surface,
                        "x": p[0], "y": p[1], "value": r}
        for d in self.divergence:
            if d.violated:
                return {"verdict": "ViolationDetected", "kind": "divergence", "piece": d.piece,
                        "x": d.witness[0], "y": d.witness[1], "value": d.max_abs}
        for row in self.pushforward:
            if row.rel_error > PUSHFORWARD_THRESHOLD:
                return {"verdict": "ViolationDetected", "kind": "pushforward", "set": row.set_id,
                        "t": row.t, "value": row.rel_error}
        return {"verdict": "ConsistentWithInvariance"}

    def to_dict(self) -> dict:
        return {"flux_residual": self.flux_residual, "flux": [f.to_dict() for f in self.flux],
                "divergence": [d.to_dict() for d in self.divergence],
                "pushforward": [r.to_dict() for r in self.pushforward], "verdict": self.verdict}


def measure_report(sys: PiecewiseSystem, densities=None, sets=None, times=(), resolution: int = 8,
                   samples: int = 256) -> MeasureReport:
    flux = check_flux(sys, densities, samples)
    dens = density_exprs(sys, densities)
    div = [check_divergence(sys, i, dens[i]) for i in range(len(sys.pieces))]
    push = pushforward_test(sys, sets, list(times), resolution, densities) if sets else []
    return MeasureReport(flux, div, push)


# -- measure on a closed orbit --------------------------------------------------------

@dataclass
class CycleMeasure:
    """Time-uniform probability measure ``dt / period`` on a closed orbit."""

    sys: PiecewiseSystem
    start: Point
    period: float
    closure: float
    ts: list[float]
    pts: list[Point]
    opts: FlowOptions

    def point_at(self, u: float) -> Point:
        u = u % self.period
        k = max(0, int(np.searchsorted(self.ts, u, side="right")) - 1)
        dt = u - self.ts[k]
        if dt <= 0:
            return self.pts[k]
        tree = flow_point(self.sys, self.pts[k], dt, "deterministic", opts=self.opts)
        return tree.nodes[-1].end_point

    def time_set(self, member, n: int = 512, tol: float = 1e-10) -> float:
        """Lebesgue measure of ``{u in [0, period): member(point_at(u))}``."""
        us = np.linspace(0.0, self.period, n + 1)
        flags = [member(self.point_at(float(u))) for u in us]
        total = 0.0
        edges = []
        for k in range(n):
            if flags[k] != flags[k + 1]:
                lo, hi = float(us[k]), float(us[k + 1])
                inside_lo = flags[k]
                while hi - lo > tol:
                    mid = 0.5 * (lo + hi)
                    if member(self.point_at(mid)) == inside_lo:
                        lo = mid
                    else:
                        hi = mid
                edges.append((0.5 * (lo + hi), inside_lo))
        # integrate the indicator between transitions
        state = flags[0]
        prev = 0.0
        for u, was_inside in edges:
            if state:
                total += u - prev
            state = not was_inside
            prev = u
        if state:
            total += self.period - prev
        return total

    def measure(self, box: Box) -> float:
        return self.time_set(box.contains) / self.period

    def pushforward_measure(self, box: Box, t: float) -> float:
        """Measure of ``Z_t(box)`` computed by flowing orbit points back by ``t``."""
        def member(p):
            tree = flow_point(self.sys, p, -t, "deterministic", opts=self.opts)
            return box.contains(tree.nodes[-1].end_point)
        return self.time_set(member) / self.period

    def to_dict(self) -> dict:
        return {"start": list(self.start), "period": self.period, "closure": self.closure,
                "samples": len(self.ts)}


CYCLE_OPTIONS = FlowOptions(rtol=1e-12, atol=1e-14)


def cycle_measure(sys: PiecewiseSystem, witness: Point, period: float, tol: float = 1e-6,
                  opts: FlowOptions | None = None) -> CycleMeasure:
    opts = opts or CYCLE_OPTIONS
    p0 = sys.domain.canonicalize(witness)
    c = first_contact(sys, p0, period, opts)
    if c.hit:
        raise OrbitMeetsSeedError(f"orbit of {p0} reaches a non-uniqueness point at t={c.t}: {c.point}")
    tree = flow_point(sys, p0, period, "deterministic", opts=opts)
    arcs: list[Arc] = list(tree.arcs())
    if any(a.kind is not ArcKind.FREE for a in arcs):
        raise OrbitMeetsSeedError(f"orbit of {p0} slides or rests")
    end = tree.nodes[-1].end_point
    closure = sys.domain.distance(p0, end)
    if closure > tol:
        raise NotClosedError(f"orbit of {p0} misses its start by {closure:.3g} after time {period}")
    ts, pts = [], []
    for a in arcs:
        for t, p in zip(a.ts, a.pts):
            if not ts or t > ts[-1]:
                ts.append(t)
                pts.append(p)
    return CycleMeasure(sys, p0, period, closure, ts, pts, opts)


# -- first-return map ---------------------------------------------------------------

@dataclass
class ReturnMapResult:
    tangency: Point
    offsets: list[float]
    returns: list[float]
    center: bool
    max_defect: float

    def to_dict(self) -> dict:
        return {"tangency": list(self.tangency), "offsets": self.offsets, "returns": self.returns,
                "center": self.center, "max_defect": self.max_defect}


RETURN_OPTIONS = FlowOptions(rtol=1e-12, atol=1e-14)


def return_map(sys: PiecewiseSystem, pt: Point, offsets: list[float], surface: int = 0,
               tmax: float = 100.0, tol: float = 1e-6, opts: FlowOptions | None = None) -> ReturnMapResult:
    """First return to the surface after one arc on each side, for starts at
    signed offsets ``s`` along the surface trace from the fold-fold point ``pt``."""
    opts = opts or RETURN_OPTIONS
    sc = classify_point(sys, surface, pt)
    if sc.label is not Label.TANGENCY or len(sc.tangency) != 2 or any(t.visible for t in sc.tangency):
        raise ReturnMapError(f"{pt} is not an invisible tangency of both fields")
    sd = side_data(sys, surface, pt)
    tang = (-sd.normal[1], sd.normal[0])
    dp = sd.fplus[0] * tang[0] + sd.fplus[1] * tang[1]
    dm = sd.fminus[0] * tang[0] + sd.fminus[1] * tang[1]
    if not dp * dm < 0:
        raise ReturnMapError(f"the fields at {pt} do not turn in opposite tangential directions")
    tr = _trace_through(sys, surface, pt)
    s_p = pt[0] if tr.axis == "x" else pt[1]
    returns = []
    for s in offsets:
        if s == 0:
            raise ReturnMapError("offset 0 is the tangency point itself")
        start = sys.domain.canonicalize(tr.point(s_p + s))
        end = _two_hits(sys, surface, start, tmax, opts)
        returns.append((end[0] if tr.axis == "x" else end[1]) - s_p)
    defect = max(abs(a - b) for a, b in zip(returns, offsets))
    return ReturnMapResult(pt, list(offsets), returns, defect <= tol, defect)


def _trace_through(sys: PiecewiseSystem, surface: int, pt: Point):
    for tr in sys.traces(surface):
        s = pt[0] if tr.axis == "x" else pt[1]
        q = tr.point(s)
        if sys.domain.distance(q, pt) < 1e-8:
            return tr
    raise ReturnMapError(f"{pt} is not on a trace of surface {surface}")


def _two_hits(sys: PiecewiseSystem, surface: int, start: Point, tmax: float, opts: FlowOptions) -> Point:
    integ = Integrator(sys, 1, opts)
    p, t = start, 0.0
    for _ in range(2):
        options, _, _ = integ.options(surface, p)
        if len(options) != 1 or options[0].kind != "depart":
            raise ReturnMapError(f"no unique crossing at {p}: {[o.name for o in options]}")
        q = integ.depart(surface, p, options[0].side)
        try:
            arc, res = integ.free(q, t, tmax)
        except FilippovError as exc:
            raise ReturnMapError(str(exc)) from exc
        if res[0] != "hit" or res[1] != surface:
            raise ReturnMapError(f"orbit from {start} did not return to surface {surface} ({res[0]})")
        t, p = arc.end
    return p
