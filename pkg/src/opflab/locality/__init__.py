"""Load-perturbation sensitivity by topological distance."""
from .core import (
    GUARD,
    KINDS,
    SensitivityRecord,
    SensitivityRun,
    aggregate,
    distance_histogram,
    island_case,
    islands,
    sensitivity_run,
    solve_islands,
    write_aggregate_csv,
    write_plot_data,
)

__all__ = [
    "GUARD",
    "KINDS",
    "SensitivityRecord",
    "SensitivityRun",
    "aggregate",
    "distance_histogram",
    "island_case",
    "islands",
    "sensitivity_run",
    "solve_islands",
    "write_aggregate_csv",
    "write_plot_data",
]
