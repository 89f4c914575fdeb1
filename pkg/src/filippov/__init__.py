"""Filippov systems on the plane, torus and Klein bottle: classification of
switching surfaces, branching flows, non-uniqueness sets and invariant measures."""
from .classify import Label, SigmaClass, classify_point, scan_surface, sliding_field
from .errors import FilippovError
from .flow import Box, BranchTree, FlowOptions, first_contact, flow_point, flow_set
from .geometry import Chart, Mode, QuotientDomain
from .measure import (
    MeasureReport,
    StripedSpec,
    check_divergence,
    check_flux,
    cycle_measure,
    measure_report,
    pushforward_test,
    return_map,
    solve_striped_density,
    striped_system,
)
from .nonuniqueness import estimate_saturation, seed_set
from .system import PiecewiseSystem, load_scenario

__version__ = "0.1.0"

__all__ = [
    "Box", "BranchTree", "Chart", "FilippovError", "FlowOptions", "Label", "MeasureReport", "Mode",
    "PiecewiseSystem", "QuotientDomain", "SigmaClass", "StripedSpec", "check_divergence", "check_flux",
    "classify_point", "cycle_measure", "estimate_saturation", "first_contact", "flow_point", "flow_set",
    "load_scenario", "measure_report", "pushforward_test", "return_map", "scan_surface", "seed_set",
    "sliding_field", "solve_striped_density", "striped_system",
]
