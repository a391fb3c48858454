"""Heat kernels, Nash profiles and Harnack diagnostics for random walks on
graphs whose conductances change with time."""

from . import errors
from .graphs import Ball, Graph, ball, build_graph
from .schedules import (
    ConductanceSchedule,
    default_delta,
    random_monotone_schedule,
    random_schedule,
    schedule_counterexample_Z,
    schedule_drift_halfline,
    schedule_from_json,
    schedule_monotone,
    schedule_perturbative,
    schedule_to_json,
    static_schedule,
    tabulated_schedule,
)

__version__ = "0.1.0"

__all__ = [
    "Ball",
    "ConductanceSchedule",
    "Graph",
    "ball",
    "build_graph",
    "default_delta",
    "errors",
    "random_monotone_schedule",
    "random_schedule",
    "schedule_counterexample_Z",
    "schedule_drift_halfline",
    "schedule_from_json",
    "schedule_monotone",
    "schedule_perturbative",
    "schedule_to_json",
    "static_schedule",
    "tabulated_schedule",
]
