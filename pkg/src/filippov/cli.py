"""Command-line entry point.

Every JSON output carries ``schema_version`` and the fully resolved ``config``;
``--config FILE`` re-runs a command from the config stored in a prior output.
Exit codes: 0 success, 2 usage error, 1 computational error (error JSON on stdout).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

from . import __version__, scenarios
from .classify import scan_surface
from .errors import FilippovError
from .flow import DEFAULT_CAP, Box, FlowOptions, flow_point, flow_set
from .jsonio import document, dumps
from .measure import StripedSpec, measure_report, return_map, solve_striped_density, striped_system
from .nonuniqueness import estimate_saturation, seed_set
from .system import load_scenario

MIN_TOL = 1e-14


class UsageError(Exception):
    pass


# -- flag value types -------------------------------------------------------------

def _tol(s: str) -> float:
    try:
        v = float(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {s!r}") from None
    if not v >= MIN_TOL:
        raise argparse.ArgumentTypeError(f"must be at least {MIN_TOL:g}, got {s}")
    return v


def _finite(s: str) -> float:
    try:
        v = float(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {s!r}") from None
    if not math.isfinite(v):
        raise argparse.ArgumentTypeError(f"must be finite, got {s}")
    return v


def _positive_int(s: str) -> int:
    try:
        v = int(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {s!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {s}")
    return v


def _floats(s: str) -> list[float]:
    try:
        out = [float(v) for v in s.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got {s!r}") from None
    if not out or not all(math.isfinite(v) for v in out):
        raise argparse.ArgumentTypeError(f"expected finite comma separated numbers, got {s!r}")
    return out


def _point(s: str) -> list[float]:
    v = _floats(s)
    if len(v) != 2:
        raise argparse.ArgumentTypeError(f"expected x,y, got {s!r}")
    return v


def _json_arg(s: str):
    """Inline JSON or a path to a JSON file."""
    p = Path(s)
    text = p.read_text(encoding="utf-8") if not s.lstrip().startswith(("{", "[")) and p.is_file() else s
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise argparse.ArgumentTypeError(f"invalid JSON ({exc.msg}) in {s[:40]!r}") from None


# -- parser ---------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser, scenario: bool = True, flow: bool = False):
    if scenario:
        p.add_argument("--scenario", help="catalog name or path to a .scn file")
    p.add_argument("--out", help="output file (default: stdout)")
    p.add_argument("--config", help="re-run with the resolved config of a prior JSON output")
    if flow:
        p.add_argument("--rtol", type=_tol, default=1e-9)
        p.add_argument("--atol", type=_tol, default=1e-12)
        p.add_argument("--max-step", type=_tol, default=None)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="filippov", description="Piecewise-smooth vector fields on plane, torus and Klein bottle.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("classify", help="label samples of a switching surface")
    _common(p)
    p.add_argument("--surface", type=int, default=0)
    p.add_argument("--trace", type=int, default=0)
    p.add_argument("--samples", type=_positive_int, default=256)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--svg", help="write a classification strip")

    p = sub.add_parser("integrate", help="Filippov solutions from one point")
    _common(p, flow=True)
    p.add_argument("--point", type=_point, required=False)
    p.add_argument("--T", type=_finite, default=1.0)
    p.add_argument("--policy", choices=("deterministic", "all"), default="all")
    p.add_argument("--cap", type=_positive_int, default=DEFAULT_CAP)
    p.add_argument("--svg", help="write a phase portrait")

    p = sub.add_parser("flowset", help="raster cover of the image of boxes at time t")
    _common(p, flow=True)
    p.add_argument("--boxes", type=_json_arg, help='JSON list of [x0, x1, y0, y1]')
    p.add_argument("--t", type=_finite, default=1.0)
    p.add_argument("--resolution", type=_positive_int, default=8)
    p.add_argument("--cap", type=_positive_int, default=DEFAULT_CAP)

    p = sub.add_parser("satnz", help="seed set and grid estimate of its saturation")
    _common(p, flow=True)
    p.set_defaults(rtol=1e-8, atol=1e-10)
    p.add_argument("--nx", type=_positive_int, default=64)
    p.add_argument("--ny", type=_positive_int, default=64)
    p.add_argument("--T", type=_finite, default=2.0)
    p.add_argument("--cap", type=_positive_int, default=DEFAULT_CAP)
    p.add_argument("--svg", help="write a heat map")

    p = sub.add_parser("check-measure", help="flux, divergence and push-forward checks of a density")
    _common(p)
    p.add_argument("--densities", help="one expression for all pieces, or ';' separated per piece")
    p.add_argument("--striped-density", action="store_true",
                   help="use the striped density solved from --stripes (or the striped catalog defaults)")
    p.add_argument("--stripes", type=_json_arg)
    p.add_argument("--sets", type=_json_arg, help="JSON list of sets, each a list of [x0, x1, y0, y1]")
    p.add_argument("--times", type=_floats, default=[0.5, 1.0, 2.0])
    p.add_argument("--resolution", type=_positive_int, default=8)
    p.add_argument("--samples", type=_positive_int, default=256)

    p = sub.add_parser("density-solve", help="invariant density of a striped constant field")
    _common(p, scenario=False)
    p.add_argument("--stripes", type=_json_arg)

    p = sub.add_parser("return-map", help="first-return map around a fold-fold point")
    _common(p)
    p.add_argument("--point", type=_point, default=[0.0, 0.0])
    p.add_argument("--surface", type=int, default=0)
    p.add_argument("--offsets", type=_floats, default=[0.1, 0.2, 0.4])
    p.add_argument("--tol", type=_tol, default=1e-6)

    p = sub.add_parser("catalog", help="list built-in scenarios")
    _common(p, scenario=False)
    p.add_argument("--show", help="print the source of one entry")
    return ap


# -- config resolution ------------------------------------------------------------------

_NOT_CONFIG = {"out", "config", "svg", "command"}


def _resolve(ns: argparse.Namespace) -> dict:
    cfg = {k: v for k, v in vars(ns).items() if k not in _NOT_CONFIG}
    cfg["command"] = ns.command
    if "scenario" not in cfg:
        return cfg
    ref = cfg["scenario"]
    if ref is None:
        # check-measure can build its system from --stripes instead
        if ns.command == "check-measure" and ns.striped_density:
            return cfg
        raise UsageError("--scenario is required")
    # the scenario text travels with the config so a replay does not depend on files
    cfg["scenario_source"] = _scenario_source(ref)
    return cfg


def _scenario_source(ref: str) -> str:
    p = Path(ref)
    if p.suffix == ".scn" or p.is_file():
        if not p.is_file():
            raise UsageError(f"--scenario: file {ref!r} not found")
        return p.read_text(encoding="utf-8")
    if ref not in scenarios.names():
        raise UsageError(f"--scenario: unknown scenario {ref!r}; known: {', '.join(scenarios.names())}")
    return scenarios.source(ref)


def _load_config(path: str, command: str) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"--config: cannot read {path!r}: {exc}") from None
    cfg = doc.get("config") if isinstance(doc, dict) else None
    if not isinstance(cfg, dict) or cfg.get("command") != command:
        raise UsageError(f"--config: {path!r} holds no {command} config")
    return cfg


def _system(cfg: dict):
    return load_scenario(cfg["scenario_source"])


def _flow_opts(cfg: dict) -> FlowOptions:
    return FlowOptions(rtol=cfg["rtol"], atol=cfg["atol"], max_step=cfg.get("max_step")).validate()


def _boxes(raw, flag: str) -> list[Box]:
    try:
        out = [Box(*map(float, b)) for b in raw]
    except (TypeError, ValueError):
        raise UsageError(f"{flag}: expected a list of [x0, x1, y0, y1]") from None
    if not out or any(not (b.x1 > b.x0 and b.y1 > b.y0) for b in out):
        raise UsageError(f"{flag}: every box needs x0 < x1 and y0 < y1")
    return out


def _stripes(raw) -> StripedSpec:
    if not isinstance(raw, dict):
        raise UsageError("--stripes: expected a JSON object")
    try:
        return StripedSpec.from_dict(raw)
    except (TypeError, KeyError) as exc:
        raise UsageError(f"--stripes: {exc}") from None


# -- commands ----------------------------------------------------------------------------

def _classify(cfg):
    s = _system(cfg)
    if not 0 <= cfg["surface"] < len(s.surfaces):
        raise UsageError(f"--surface: index {cfg['surface']} out of range (0..{len(s.surfaces) - 1})")
    if not 0 <= cfg["trace"] < len(s.traces(cfg["surface"])):
        raise UsageError(f"--trace: index {cfg['trace']} out of range")
    scan = scan_surface(s, cfg["surface"], max(16, cfg["samples"]), cfg["trace"])
    samples = scan.samples[: cfg["samples"]]
    result = {
        "surface": scan.surface, "trace": scan.trace, "axis": scan.axis, "closed": scan.closed,
        "samples": [{"param": r.param, "x": r.point[0], "y": r.point[1], "fplus_h": r.fplus_h,
                     "fminus_h": r.fminus_h, "label": r.label.value} for r in samples],
        "intervals": [{"lo": a, "hi": b, "label": lab.value} for a, b, lab in scan.intervals],
        "tangencies": [{"param": t.param, "x": t.point[0], "y": t.point[1], "label": t.sigma.label.value,
                        "details": [{"side": d.side, "order": d.order, "visibility": d.visibility}
                                    for d in t.sigma.tangency]} for t in scan.tangencies],
    }
    extras = {}
    if cfg.get("_svg"):
        from .svg import classification_strip
        extras["svg"] = classification_strip(s, scan)
    if cfg["format"] == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["param", "x", "y", "fplus_h", "fminus_h", "label"])
        for r in result["samples"]:
            w.writerow([f"{r['param']:.17g}", f"{r['x']:.17g}", f"{r['y']:.17g}",
                        f"{r['fplus_h']:.17g}", f"{r['fminus_h']:.17g}", r["label"]])
        extras["text"] = buf.getvalue()
    return result, extras


def _integrate(cfg):
    s = _system(cfg)
    if cfg.get("point") is None:
        raise UsageError("--point is required")
    tree = flow_point(s, tuple(cfg["point"]), cfg["T"], cfg["policy"], cfg["cap"], _flow_opts(cfg))
    leaves = []
    paths = []
    for leaf in tree.leaves():
        rows = tree.path_samples(leaf)
        paths.append([p for _, p, _ in rows])
        leaves.append({
            "branch": [n.label for n in tree.path(leaf)][1:],
            "end_time": leaf.end_time, "end_point": list(leaf.end_point),
            "end_event": leaf.end_event.value if leaf.end_event else None, "end_surface": leaf.end_surface,
            "samples": [[t, p[0], p[1], mode] for t, p, mode in rows],
        })
    result = {"root": list(tree.root), "T": tree.T, "policy": tree.policy, "truncated": tree.truncated,
              "nodes": len(tree.nodes), "leaves": leaves}
    extras = {}
    if cfg.get("_svg"):
        from .svg import phase_portrait
        extras["svg"] = phase_portrait(s, paths)
    return result, extras


def _flowset(cfg):
    s = _system(cfg)
    if cfg.get("boxes") is None:
        raise UsageError("--boxes is required")
    cover = flow_set(s, _boxes(cfg["boxes"], "--boxes"), cfg["t"], cfg["resolution"], cfg["cap"], _flow_opts(cfg))
    return cover.to_dict(), {}


def _satnz(cfg):
    s = _system(cfg)
    if not cfg["T"] > 0:
        raise UsageError("--T: horizon must be positive")
    seeds = seed_set(s)
    grid = estimate_saturation(s, cfg["nx"], cfg["ny"], cfg["T"], cfg["cap"], _flow_opts(cfg))
    extras = {}
    if cfg.get("_svg"):
        from .svg import heat_map
        extras["svg"] = heat_map(grid)
    return {"seed_set": seeds.to_dict(), "saturation": grid.to_dict()}, extras


def _check_measure(cfg):
    densities = None
    if cfg["striped_density"]:
        raw = cfg.get("stripes")
        ref = cfg.get("scenario")
        if raw is None:
            if ref not in scenarios.STRIPED_DEFAULTS:
                raise UsageError("--striped-density needs --stripes or a striped catalog scenario")
            raw = scenarios.STRIPED_DEFAULTS[ref]
        spec = _stripes(raw)
        sol = solve_striped_density(spec, strict=True)
        s = striped_system(spec, sol.alpha, name=ref or "")
        solved = sol.to_dict()
    else:
        if cfg.get("scenario_source") is None:
            raise UsageError("--scenario is required")
        s = _system(cfg)
        solved = None
        if cfg.get("densities"):
            parts = [d.strip() for d in cfg["densities"].split(";")]
            densities = parts[0] if len(parts) == 1 else parts
    sets = None
    if cfg.get("sets") is not None:
        if not isinstance(cfg["sets"], list):
            raise UsageError("--sets: expected a JSON list of sets")
        sets = [_boxes(b, "--sets") for b in cfg["sets"]]
    rep = measure_report(s, densities, sets, cfg["times"], cfg["resolution"], cfg["samples"])
    out = rep.to_dict()
    if solved is not None:
        out["density"] = solved
    return out, {}


def _density_solve(cfg):
    if cfg.get("stripes") is None:
        raise UsageError("--stripes is required")
    spec = _stripes(cfg["stripes"])
    return {"stripes": spec.to_dict(), **solve_striped_density(spec).to_dict()}, {}


def _return_map(cfg):
    s = _system(cfg)
    res = return_map(s, tuple(cfg["point"]), cfg["offsets"], cfg["surface"], tol=cfg["tol"])
    return res.to_dict(), {}


def _catalog(cfg):
    if cfg.get("show"):
        if cfg["show"] not in scenarios.names():
            raise UsageError(f"--show: unknown scenario {cfg['show']!r}")
        src = scenarios.source(cfg["show"])
        return {"name": cfg["show"], "source": src}, {}
    entries = []
    for name in scenarios.names():
        s = scenarios.get(name)
        entries.append({"name": name, "description": s.description, "mode": s.domain.mode.value,
                        "pieces": len(s.pieces), "surfaces": len(s.surfaces)})
    return {"entries": entries}, {}


COMMANDS = {"classify": _classify, "integrate": _integrate, "flowset": _flowset, "satnz": _satnz,
            "check-measure": _check_measure, "density-solve": _density_solve, "return-map": _return_map,
            "catalog": _catalog}


def _emit(text: str, path: str | None):
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def run(argv: list[str] | None = None) -> int:
    ap = build_parser()
    try:
        ns = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if not ns.command:
        ap.print_usage(sys.stderr)
        print("filippov: error: a command is required", file=sys.stderr)
        return 2
    try:
        cfg = _load_config(ns.config, ns.command) if ns.config else _resolve(ns)
        cfg = dict(cfg)
        cfg["_svg"] = bool(getattr(ns, "svg", None))
        result, extras = COMMANDS[ns.command](cfg)
    except UsageError as exc:
        ap.print_usage(sys.stderr)
        print(f"filippov {ns.command}: error: {exc}", file=sys.stderr)
        return 2
    except (FilippovError, ValueError, ArithmeticError) as exc:
        err = {"error": {"type": type(exc).__name__, "message": str(exc)}, "command": ns.command}
        sys.stdout.write(dumps(err))
        return 1
    cfg.pop("_svg")
    # write only once everything is computed
    text = extras.get("text") or dumps(document(ns.command, cfg, result))
    _emit(text, ns.out)
    if extras.get("svg"):
        Path(ns.svg).write_text(extras["svg"], encoding="utf-8")
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
