"""Built-in scenario catalog.

Fixed systems live as ``*.scn`` files next to this module; the striped
systems are generated from a :class:`~filippov.measure.StripedSpec`.
"""
from __future__ import annotations

from importlib import resources
from pathlib import Path

from ..errors import UnknownScenarioError
from ..system import PiecewiseSystem, load_scenario

STRIPED_DEFAULTS = {
    "striped_torus": {"mode": "torus", "a": [0.3, -0.2, 0.5], "b": [1.0, 2.0, 4.0],
                      "heights": [1 / 3, 2 / 3, 1.0]},
    "striped_klein": {"mode": "klein", "a": [0.5, 1.0], "b": [1.0, 2.0], "heights": [0.5, 1.0]},
}


def _files() -> dict[str, str]:
    root = resources.files(__name__)
    return {f.name[:-4]: f.read_text(encoding="utf-8") for f in root.iterdir() if f.name.endswith(".scn")}


def names() -> list[str]:
    return sorted(set(_files()) | set(STRIPED_DEFAULTS))


def source(name: str, **params) -> str:
    """Scenario text of a catalog entry."""
    if name in STRIPED_DEFAULTS:
        from ..measure import StripedSpec, striped_scenario_text
        spec = StripedSpec(**{**STRIPED_DEFAULTS[name], **params})
        return striped_scenario_text(spec, name=name)
    if params:
        raise TypeError(f"scenario {name!r} takes no parameters")
    files = _files()
    if name not in files:
        raise UnknownScenarioError(f"unknown scenario {name!r}; known: {', '.join(names())}")
    return files[name]


def get(name: str, **params) -> PiecewiseSystem:
    return load_scenario(source(name, **params))


def load(ref: str) -> PiecewiseSystem:
    """Load by catalog name or by path to a ``.scn`` file."""
    p = Path(ref)
    if p.suffix == ".scn" or p.exists():
        if not p.is_file():
            raise UnknownScenarioError(f"scenario file {ref!r} not found")
        return load_scenario(p.read_text(encoding="utf-8"))
    return get(ref)
