"""Non-uniqueness seed set and a grid estimate of its saturation.

A cell center belongs to the estimated saturation when its forward or
backward solution reaches, within ``|t| <= T``, a surface point with more
than one continuation or a sliding continuation.  Before that first contact
the solution is unique, so following it is the same as expanding the full
branch tree and stopping every branch at its first contact.
"""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .classify import Label, scan_surface
from .errors import FilippovError
from .flow import DEFAULT_CAP, FlowOptions, Integrator, first_contact
from .geometry import Point
from .system import PiecewiseSystem


@dataclass
class SeedInterval:
    surface: int
    trace: int
    lo: float
    hi: float
    label: Label

    def points(self, sys: PiecewiseSystem, n: int = 5) -> list[Point]:
        tr = sys.traces(self.surface)[self.trace]
        ss = np.linspace(self.lo, self.hi, n + 2)[1:-1]
        return [sys.domain.canonicalize(tr.point(float(s))) for s in ss]


@dataclass
class SeedPoint:
    surface: int
    param: float
    point: Point
    forward_options: int
    backward_options: int


@dataclass
class SeedSet:
    intervals: list[SeedInterval] = field(default_factory=list)
    points: list[SeedPoint] = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return not self.intervals and not self.points

    def to_dict(self) -> dict:
        return {
            "intervals": [{"surface": i.surface, "trace": i.trace, "lo": i.lo, "hi": i.hi,
                           "label": i.label.value} for i in self.intervals],
            "points": [{"surface": p.surface, "param": p.param, "x": p.point[0], "y": p.point[1],
                        "forward_options": p.forward_options, "backward_options": p.backward_options}
                       for p in self.points],
        }


def seed_set(sys: PiecewiseSystem, samples: int = 256) -> SeedSet:
    """Sliding and escaping arcs of every surface plus the tangency points
    from which more than one solution leaves (in either time direction)."""
    out = SeedSet()
    fwd, bwd = Integrator(sys, 1), Integrator(sys, -1)
    for j in range(len(sys.surfaces)):
        for k in range(len(sys.traces(j))):
            scan = scan_surface(sys, j, samples, k)
            for lo, hi, lab in scan.intervals:
                if lab in (Label.SLIDING, Label.ESCAPING):
                    out.intervals.append(SeedInterval(j, k, lo, hi, lab))
            for tp in scan.tangencies:
                nf = len(fwd.options(j, tp.point)[0])
                nb = len(bwd.options(j, tp.point)[0])
                if nf > 1 or nb > 1:
                    out.points.append(SeedPoint(j, tp.param, tp.point, nf, nb))
    return out


class CellFlag(str, Enum):
    IN_SAT = "InSat"
    NOT_IN_SAT = "NotInSat"
    UNDECIDED = "Undecided"


@dataclass
class Witness:
    direction: int
    t: float
    point: Point
    surface: int
    options: list[str]

    def to_dict(self) -> dict:
        return {"direction": self.direction, "t": self.t, "x": self.point[0], "y": self.point[1],
                "surface": self.surface, "options": self.options}


@dataclass
class SaturationGrid:
    """Grid estimate at horizon ``T``: ``NotInSat`` only means no contact for ``|t| <= T``."""

    nx: int
    ny: int
    T: float
    cap: int
    x0: float
    y0: float
    dx: float
    dy: float
    flags: list[list[CellFlag]]
    witnesses: dict[tuple[int, int], Witness]
    errors: dict[tuple[int, int], str] = field(default_factory=dict)

    def center(self, i: int, j: int) -> Point:
        return (self.x0 + (i + 0.5) * self.dx, self.y0 + (j + 0.5) * self.dy)

    @property
    def fraction(self) -> float:
        n = sum(row.count(CellFlag.IN_SAT) for row in self.flags)
        return n / (self.nx * self.ny)

    def in_sat(self) -> np.ndarray:
        return np.array([[f is CellFlag.IN_SAT for f in row] for row in self.flags], dtype=bool)

    def to_dict(self) -> dict:
        code = {CellFlag.IN_SAT: 1, CellFlag.NOT_IN_SAT: 0, CellFlag.UNDECIDED: -1}
        return {
            "estimate": f"grid estimate at horizon T={self.T!r}",
            "nx": self.nx, "ny": self.ny, "T": self.T, "cap": self.cap,
            "x0": self.x0, "y0": self.y0, "dx": self.dx, "dy": self.dy,
            "fraction": self.fraction,
            "flags": [[code[f] for f in row] for row in self.flags],
            "witnesses": [{"i": i, "j": j, **w.to_dict()} for (i, j), w in sorted(self.witnesses.items())],
            "errors": [{"i": i, "j": j, "message": m} for (i, j), m in sorted(self.errors.items())],
        }


# looser than the default: only the first contact matters, not the endpoint
SAT_OPTIONS = FlowOptions(rtol=1e-8, atol=1e-10)


def cell_status(sys: PiecewiseSystem, p: Point, T: float, opts: FlowOptions | None = None):
    """``(flag, witness, error)`` for one start point."""
    opts = opts or SAT_OPTIONS
    try:
        for sign in (1, -1):
            c = first_contact(sys, p, sign * T, opts)
            if c.hit:
                return CellFlag.IN_SAT, Witness(sign, c.t, c.point, c.surface, [o.name for o in c.options]), None
    except FilippovError as exc:
        return CellFlag.UNDECIDED, None, f"{type(exc).__name__}: {exc}"
    return CellFlag.NOT_IN_SAT, None, None


def _rows(args):
    sys, rows, nx, x0, y0, dx, dy, T, opts = args
    out = []
    for j in rows:
        out.append([cell_status(sys, (x0 + (i + 0.5) * dx, y0 + (j + 0.5) * dy), T, opts) for i in range(nx)])
    return rows, out


def worker_count() -> int:
    env = os.environ.get("FILIPPOV_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ValueError(f"FILIPPOV_THREADS must be a positive integer, got {env!r}") from None
        if n < 1:
            raise ValueError(f"FILIPPOV_THREADS must be a positive integer, got {env!r}")
        return n
    return os.cpu_count() or 1


def estimate_saturation(sys: PiecewiseSystem, nx: int, ny: int, T: float, cap: int = DEFAULT_CAP,
                        opts: FlowOptions | None = None, workers: int | None = None) -> SaturationGrid:
    if not T > 0:
        raise ValueError("horizon T must be positive")
    if nx < 1 or ny < 1:
        raise ValueError("grid must have at least one cell")
    d = sys.domain
    dx, dy = d.p / nx, d.q / ny
    opts = opts or SAT_OPTIONS
    workers = workers or worker_count()
    results: dict[int, list] = {}
    if workers > 1 and ny > 1:
        chunks = [list(range(k, ny, workers)) for k in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for rows, out in pool.map(_rows, [(sys, c, nx, d.x0, d.y0, dx, dy, T, opts) for c in chunks if c]):
                results.update(zip(rows, out))
    else:
        rows, out = _rows((sys, range(ny), nx, d.x0, d.y0, dx, dy, T, opts))
        results.update(zip(rows, out))
    flags, witnesses, errors = [], {}, {}
    for j in range(ny):
        row = []
        for i, (flag, wit, err) in enumerate(results[j]):
            row.append(flag)
            if wit is not None:
                witnesses[(i, j)] = wit
            if err is not None:
                errors[(i, j)] = err
        flags.append(row)
    return SaturationGrid(nx, ny, T, cap, d.x0, d.y0, dx, dy, flags, witnesses, errors)


def replay_witness(sys: PiecewiseSystem, grid: SaturationGrid, i: int, j: int,
                   opts: FlowOptions | None = None) -> float:
    """Distance between a stored witness contact and a fresh recomputation."""
    w = grid.witnesses[(i, j)]
    c = first_contact(sys, grid.center(i, j), w.direction * grid.T, opts or SAT_OPTIONS)
    if not c.hit:
        return float("inf")
    return sys.domain.distance(c.point, w.point)
