"""Piecewise-smooth vector fields on a quotient domain.

A system is a list of switching surfaces ``h_j`` and smooth pieces, each
piece active on the points whose sign signature ``(sign h_1, ..., sign h_m)``
matches its pattern.  Signatures are read from ``h_j`` at the canonical
representative of a point.  Membership of a point in a surface ``Sigma_j``
is decided on all nearby representatives, so a zero set lying on a seam of
the fundamental rectangle (``h = y`` on ``[0, 1)``) is a genuine surface.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.optimize import brentq

from . import expr as ex
from .errors import (
    ExprEvalError,
    OnSurfaceError,
    RegularValueError,
    ScenarioError,
    SignatureCoverageError,
    SignatureOverlapError,
)
from .geometry import IDENTITY, Chart, Mode, Point, QuotientDomain

TOL_SURFACE = 1e-12
MAX_LIE_ORDER = 4
# margin for deciding that a representative still lies on the closed rectangle
_EDGE_MARGIN = 1e-9


@dataclass(frozen=True)
class SwitchingSurface:
    h: ex.Expr
    label: str = ""

    @cached_property
    def grad(self) -> tuple[ex.Expr, ex.Expr]:
        return ex.gradient(self.h)

    @cached_property
    def h_fn(self):
        return self.h.fn()

    @cached_property
    def grad_fn(self):
        return self.grad[0].fn(), self.grad[1].fn()


@dataclass(frozen=True)
class SmoothPiece:
    signature: str
    fx: ex.Expr
    fy: ex.Expr
    density: ex.Expr | None = None
    label: str = ""

    @cached_property
    def fns(self):
        return self.fx.fn(), self.fy.fn()

    def field(self, pt: Point) -> Point:
        return (self.fx.eval(pt), self.fy.eval(pt))

    def density_at(self, pt: Point) -> float:
        return 1.0 if self.density is None else self.density.eval(pt)

    def matches(self, signs: tuple[int, ...]) -> bool:
        return all(c == "*" or (c == "+") == (s > 0) for c, s in zip(self.signature, signs))


@dataclass
class SurfaceTrace:
    """Parametrization of one connected branch of a surface as a graph.

    ``axis == "x"``: points ``(s, g(s))``; ``axis == "y"``: points ``(g(s), s)``.
    """

    surface: int
    axis: str
    lo: float
    hi: float
    component: int
    closed: bool  # parameter interval wraps (periodic direction)
    _root_fn: object = field(repr=False, default=None)

    def point(self, s: float) -> Point:
        g = self._root_fn(s)
        return (s, g) if self.axis == "x" else (g, s)

    def params(self, n: int) -> np.ndarray:
        if self.closed:
            return self.lo + (self.hi - self.lo) * np.arange(n) / n
        return np.linspace(self.lo, self.hi, n)


class PiecewiseSystem:
    def __init__(self, domain: QuotientDomain, surfaces, pieces, name: str = "", source: str | None = None,
                 description: str = ""):
        self.domain = domain
        self.surfaces: list[SwitchingSurface] = list(surfaces)
        self.pieces: list[SmoothPiece] = list(pieces)
        self.name = name
        self.source = source
        self.description = description
        self._lie_cache: dict = {}
        self._traces: dict[int, list[SurfaceTrace]] = {}

    def __repr__(self):
        return (f"PiecewiseSystem({self.name!r}, mode={self.domain.mode.value}, "
                f"surfaces={len(self.surfaces)}, pieces={len(self.pieces)})")

    def __getstate__(self):
        return {"source": self.source, "name": self.name}

    def __setstate__(self, state):
        other = load_scenario(state["source"])
        self.__dict__.update(other.__dict__)

    # -- surface values ------------------------------------------------------
    def h_canonical(self, j: int, pt: Point) -> float:
        return self.surfaces[j].h_fn(pt[0], pt[1])

    def surface_value(self, j: int, pt: Point) -> tuple[float, Chart]:
        """Value of ``h_j`` on the representative of ``pt`` closest to ``Sigma_j``."""
        d = self.domain
        h = self.surfaces[j].h_fn
        best = None
        margin = _EDGE_MARGIN * d.scale
        for ch in d.neighbor_charts(pt):
            r = ch.apply(d, pt)
            if best is not None and not d.contains(r, margin):
                continue
            v = h(r[0], r[1])
            if best is None or abs(v) < abs(best[0]):
                best = (v, ch)
        return best

    def surface_gradient(self, j: int, pt: Point, chart: Chart) -> Point:
        """Gradient of ``h_j`` (evaluated in ``chart``) expressed in the frame of ``pt``."""
        gx, gy = self.surfaces[j].grad_fn
        r = chart.apply(self.domain, pt)
        return chart.vec((gx(r[0], r[1]), gy(r[0], r[1])))

    def on_surfaces(self, pt: Point, tol: float = TOL_SURFACE) -> list[int]:
        return [j for j in range(len(self.surfaces)) if abs(self.surface_value(j, pt)[0]) <= tol]

    def signs(self, pt: Point) -> tuple[int, ...]:
        c = self.domain.canonicalize(pt)
        return tuple(1 if s.h_fn(c[0], c[1]) > 0 else -1 for s in self.surfaces)

    # -- pieces ---------------------------------------------------------------
    def piece_index(self, pt: Point) -> int:
        """Index of the piece active at ``pt`` (no on-surface check)."""
        sg = self.signs(pt)
        for i, piece in enumerate(self.pieces):
            if piece.matches(sg):
                return i
        raise SignatureCoverageError(f"no piece covers signature {_sig_str(sg)} at {pt}")

    def active_piece(self, pt: Point, tol: float = TOL_SURFACE) -> SmoothPiece:
        hit = self.on_surfaces(pt, tol)
        if hit:
            raise OnSurfaceError(f"point {pt} lies on surface {hit[0]}")
        return self.pieces[self.piece_index(pt)]

    def piece_vector(self, i: int, chart: Chart, pt: Point) -> Point:
        """Field of piece ``i`` evaluated through ``chart`` and mapped back to the frame of ``pt``."""
        fx, fy = self.pieces[i].fns
        r = chart.apply(self.domain, pt)
        return chart.vec((fx(r[0], r[1]), fy(r[0], r[1])))

    def field_at(self, pt: Point) -> Point:
        c = self.domain.canonical_chart(pt)
        return self.piece_vector(self.piece_index(pt), c, pt)

    def side_pieces(self, j: int, pt: Point, h_chart: Chart | None = None, delta: float | None = None):
        """Pieces on the ``+`` and ``-`` side of ``Sigma_j`` at ``pt``.

        Returns ``{+1: (piece, chart), -1: (piece, chart)}`` where ``chart`` maps
        ``pt`` to the representative on which that piece's formula is the
        one-sided limit.
        """
        d = self.domain
        if h_chart is None:
            h_chart = self.surface_value(j, pt)[1]
        g = self.surface_gradient(j, pt, h_chart)
        ng = math.hypot(g[0], g[1])
        if delta is None:
            delta = 1e-7 * d.scale
        out = {}
        for side in (1, -1):
            probe = (pt[0] + side * delta * g[0] / ng, pt[1] + side * delta * g[1] / ng)
            ch = d.canonical_chart(probe)
            out[side] = (self.piece_index(probe), ch)
        return out

    # -- Lie derivatives -------------------------------------------------------
    def lie_fn(self, i: int, j: int, rel: Chart, k: int):
        """Compiled ``F_i^k h_j`` in piece-chart coordinates; ``rel`` maps piece chart to h chart."""
        key = (i, j, rel, k)
        fn = self._lie_cache.get(key)
        if fn is None:
            fn = self.lie_expr(i, j, rel, k).fn()
            self._lie_cache[key] = fn
        return fn

    def lie_expr(self, i: int, j: int, rel: Chart = IDENTITY, k: int = 1) -> ex.Expr:
        if k < 1 or k > MAX_LIE_ORDER:
            raise ValueError(f"Lie derivative order must be in 1..{MAX_LIE_ORDER}, got {k}")
        key = ("expr", i, j, rel, k)
        cached = self._lie_cache.get(key)
        if cached is not None:
            return cached
        piece = self.pieces[i]
        if k == 1:
            d = self.domain
            h = ex.affine_subs(self.surfaces[j].h, -rel.k * d.p, rel.flip, -rel.l * d.q)
            base = h
        else:
            base = self.lie_expr(i, j, rel, k - 1)
        gx, gy = ex.gradient(base)
        out = ex.add(ex.mul(gx, piece.fx), ex.mul(gy, piece.fy))
        self._lie_cache[key] = out
        return out

    def side_lie(self, j: int, pt: Point, side_info, h_chart: Chart, k: int = 1) -> float:
        i, ch = side_info
        rel = ch.inverse().then(h_chart)
        r = ch.apply(self.domain, pt)
        return self.lie_fn(i, j, rel, k)(r[0], r[1])

    def lie_derivative(self, piece: int, surface: int, pt: Point, k: int = 1) -> float:
        """``F^k h`` for piece ``piece`` and surface ``surface`` at a canonical point."""
        try:
            return float(self.lie_fn(piece, surface, IDENTITY, k)(pt[0], pt[1]))
        except ZeroDivisionError as exc:
            raise ExprEvalError(str(exc)) from exc

    # -- surface geometry -------------------------------------------------------
    def traces(self, j: int) -> list[SurfaceTrace]:
        if j not in self._traces:
            self._traces[j] = _trace_surface(self, j)
        return self._traces[j]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "domain": self.domain.to_dict(),
            "surfaces": [str(s.h) for s in self.surfaces],
            "pieces": [
                {"signature": p.signature, "fx": str(p.fx), "fy": str(p.fy),
                 "density": None if p.density is None else str(p.density)}
                for p in self.pieces
            ],
        }


def _sig_str(sg) -> str:
    return "".join("+" if s > 0 else "-" for s in sg)


# -- surface tracing ----------------------------------------------------------

def _line_roots(f, lo: float, hi: float, n: int = 96) -> list[float]:
    """Roots of ``f`` on the closed interval ``[lo, hi]`` by sampling and Brent refinement."""
    ts = np.linspace(lo, hi, n + 1)
    vals = [f(t) for t in ts]
    roots = []
    span = hi - lo
    for a, b, fa, fb in zip(ts[:-1], ts[1:], vals[:-1], vals[1:]):
        if fa == 0.0:
            roots.append(float(a))
        elif fa * fb < 0:
            roots.append(brentq(f, a, b, xtol=1e-15 * max(1.0, span), rtol=1e-15, maxiter=200))
    if vals[-1] == 0.0:
        roots.append(float(ts[-1]))
    # near-tangent zeros of the sampled values
    for a, b, fa, fb in zip(ts[:-1], ts[1:], vals[:-1], vals[1:]):
        if fa * fb > 0 and min(abs(fa), abs(fb)) < 1e-9 * (1 + max(abs(fa), abs(fb))):
            t = a if abs(fa) < abs(fb) else b
            roots.append(float(t))
    roots.sort()
    dedup = []
    for r in roots:
        if not dedup or r - dedup[-1] > 1e-9 * max(1.0, span):
            dedup.append(r)
    return dedup


def _trace_surface(sys: PiecewiseSystem, j: int) -> list[SurfaceTrace]:
    d = sys.domain
    s = sys.surfaces[j]
    h = s.h_fn
    gx, gy = s.grad
    for axis in ("x", "y"):
        if axis == "x":
            lo, hi, olo, ohi, closed = d.x0, d.x0 + d.p, d.y0, d.y0 + d.q, d.periodic
            independent = gx.is_zero()
            line = lambda sv: (lambda t: h(sv, t))  # noqa: E731
        else:
            lo, hi, olo, ohi, closed = d.y0, d.y0 + d.q, d.x0, d.x0 + d.p, d.periodic
            independent = gy.is_zero()
            line = lambda sv: (lambda t: h(t, sv))  # noqa: E731
        samples = np.linspace(lo, hi, 9)
        counts = [len(_line_roots(line(sv), olo, ohi)) for sv in samples]
        roots0 = _line_roots(line(lo + 0.5 * (hi - lo)), olo, ohi)
        if d.periodic:
            # a root on the far edge duplicates the near-edge one
            roots0 = [r for r in roots0 if not (abs(r - ohi) < 1e-9 * (ohi - olo) and any(
                abs(q - olo) < 1e-9 * (ohi - olo) for q in roots0))]
        if not roots0 or len(set(counts)) != 1:
            continue
        traces = []
        for c in range(len(roots0)):
            if independent:
                val = roots0[c]
                fn = (lambda v: (lambda sv: v))(val)
            else:
                fn = _tracked_root(line, olo, ohi, c, len(roots0))
            traces.append(SurfaceTrace(j, axis, lo, hi, c, closed, fn))
        return traces
    raise ScenarioError(f"surface {j} ({s.h}) has no zero in the domain or is not a graph over x or y")


def _tracked_root(line, olo, ohi, c, count):
    def fn(sv):
        roots = _line_roots(line(sv), olo, ohi)
        if len(roots) < count:
            raise ScenarioError("surface branch vanished while tracing")
        return roots[c]
    return fn


# -- scenario text format -----------------------------------------------------

_TOKEN = re.compile(r'''
    (?P<ws>[ \t\r]+) | (?P<comment>\#[^\n]*) | (?P<nl>\n) |
    (?P<str>"(?:[^"\\\n]|\\.)*") | (?P<num>[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?) |
    (?P<ident>[A-Za-z_][A-Za-z0-9_-]*) | (?P<punct>[{}=,])
''', re.VERBOSE)


def _lex(text: str):
    pos, line = 0, 1
    out = []
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise ScenarioError(f"line {line}: unexpected character {text[pos]!r}")
        kind = m.lastgroup
        val = m.group()
        if kind == "nl":
            out.append(("nl", val, line))
            line += 1
        elif kind not in ("ws", "comment"):
            if kind == "str":
                val = bytes(val[1:-1], "utf-8").decode("unicode_escape")
            out.append((kind, val, line))
        pos = m.end()
    out.append(("end", "", line))
    return out


def parse_scenario_text(text: str) -> list[tuple[str, object]]:
    """Parse into an ordered list of ``(key, value)`` top-level entries.

    Section values are dicts of their key/value items.
    """
    toks = _lex(text)
    i = 0
    entries = []

    def skip_nl():
        nonlocal i
        while toks[i][0] == "nl":
            i += 1

    def value():
        nonlocal i
        kind, val, line = toks[i]
        if kind in ("str", "num"):
            i += 1
            return val if kind == "str" else float(val)
        if kind == "ident" and val in ("true", "false"):
            i += 1
            return val == "true"
        raise ScenarioError(f"line {line}: expected a value, got {val!r}")

    while True:
        skip_nl()
        kind, val, line = toks[i]
        if kind == "end":
            break
        if kind != "ident":
            raise ScenarioError(f"line {line}: expected a key or section name, got {val!r}")
        i += 1
        kind2, val2, _ = toks[i]
        if kind2 == "punct" and val2 == "=":
            i += 1
            entries.append((val, value()))
        elif kind2 == "punct" and val2 == "{":
            i += 1
            items = {}
            while True:
                skip_nl()
                k, v, ln = toks[i]
                if k == "punct" and v == "}":
                    i += 1
                    break
                if k == "punct" and v == ",":
                    i += 1
                    continue
                if k != "ident":
                    raise ScenarioError(f"line {ln}: expected a key inside {val!r} section, got {v!r}")
                i += 1
                if toks[i][1] != "=":
                    raise ScenarioError(f"line {ln}: expected '=' after {v!r}")
                i += 1
                if v in items:
                    raise ScenarioError(f"line {ln}: duplicate key {v!r} in {val!r} section")
                items[v] = value()
            entries.append((val, items))
        else:
            raise ScenarioError(f"line {line}: expected '=' or '{{' after {val!r}")
    return entries


def _const(v, what: str) -> float:
    if isinstance(v, float):
        return v
    e = ex.parse(str(v))
    val = e.eval((0.0, 0.0))
    for probe in ((1.0, 2.0), (-3.0, 0.5)):
        if e.eval(probe) != val:
            raise ScenarioError(f"{what} must be a constant expression, got {v!r}")
    return val


def _expr(v, what: str) -> ex.Expr:
    if isinstance(v, float):
        return ex.Const(v)
    if not isinstance(v, str):
        raise ScenarioError(f"{what} must be an expression string")
    return ex.parse(v)


def load_scenario(text: str, validate: bool = True) -> PiecewiseSystem:
    entries = parse_scenario_text(text)
    name, description = "", ""
    domain = None
    surfaces, pieces = [], []
    for key, val in entries:
        if key == "name":
            name = str(val)
        elif key == "description":
            description = str(val)
        elif key == "domain":
            if domain is not None:
                raise ScenarioError("duplicate domain section")
            unknown = set(val) - {"mode", "x0", "y0", "p", "q"}
            if unknown:
                raise ScenarioError(f"unknown domain keys: {sorted(unknown)}")
            try:
                mode = Mode(str(val.get("mode", "plane")).lower())
            except ValueError as exc:
                raise ScenarioError(f"unknown domain mode {val.get('mode')!r}") from exc
            missing = {"x0", "y0", "p", "q"} - set(val)
            if missing:
                raise ScenarioError(f"domain section missing {sorted(missing)}")
            domain = QuotientDomain(_const(val["x0"], "x0"), _const(val["y0"], "y0"),
                                    _const(val["p"], "p"), _const(val["q"], "q"), mode)
        elif key == "surface":
            if "h" not in val:
                raise ScenarioError("surface section needs h")
            surfaces.append(SwitchingSurface(_expr(val["h"], "h"), str(val.get("label", ""))))
        elif key == "piece":
            for req in ("signature", "fx", "fy"):
                if req not in val:
                    raise ScenarioError(f"piece section needs {req}")
            sig = str(val["signature"]).replace("0", "*")
            dens = val.get("density")
            pieces.append(SmoothPiece(sig, _expr(val["fx"], "fx"), _expr(val["fy"], "fy"),
                                      None if dens is None else _expr(dens, "density"),
                                      str(val.get("label", ""))))
        else:
            raise ScenarioError(f"unknown top-level key {key!r}")
    if domain is None:
        raise ScenarioError("scenario has no domain section")
    if not pieces:
        raise ScenarioError("scenario has no pieces")
    sys = PiecewiseSystem(domain, surfaces, pieces, name=name, source=text, description=description)
    if validate:
        validate_system(sys)
    return sys


def validate_system(sys: PiecewiseSystem, grid: int = 33) -> None:
    m = len(sys.surfaces)
    for idx, p in enumerate(sys.pieces):
        if len(p.signature) != m or set(p.signature) - set("+-*"):
            raise ScenarioError(
                f"piece {idx} signature {p.signature!r} must have one of +,-,* per surface ({m})")
    for a in range(len(sys.pieces)):
        for b in range(a + 1, len(sys.pieces)):
            sa, sb = sys.pieces[a].signature, sys.pieces[b].signature
            if all(u == v or "*" in (u, v) for u, v in zip(sa, sb)):
                raise SignatureOverlapError(f"pieces {a} ({sa}) and {b} ({sb}) overlap")
    d = sys.domain
    # cell centers of a grid, nudged off rational positions
    us = (np.arange(grid) + 0.5 + 1e-3 * np.sqrt(2)) / grid
    for u in us:
        for v in us:
            pt = (d.x0 + u * d.p, d.y0 + v * d.q)
            if sys.on_surfaces(pt, 1e-9):
                continue
            sg = sys.signs(pt)
            n = sum(p.matches(sg) for p in sys.pieces)
            if n == 0:
                raise SignatureCoverageError(f"no piece covers signature {_sig_str(sg)} (e.g. at {pt})")
    for j in range(m):
        gx, gy = sys.surfaces[j].grad_fn
        for tr in sys.traces(j):
            for s in tr.params(17):
                pt = tr.point(float(s))
                if math.hypot(gx(*pt), gy(*pt)) <= 1e-9:
                    raise RegularValueError(f"0 is not a regular value of surface {j} near {pt}")
