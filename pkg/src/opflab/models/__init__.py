"""Neural architectures for predicting OPF set-points and binding constraints."""
from .arch import (
    FAMILIES,
    GRAPH_FAMILIES,
    TASKS,
    VARIANTS,
    ArchSpec,
    BudgetError,
    CaseDims,
    Network,
    build,
    interpolate_widths,
    match_budget,
    round_half_up,
)
from .counts import DEFAULT_GLOBAL, param_counts, write_param_csv
from .estimator import GridNet, TrainingError
from .inputs import GraphCache, InputAdapter, node_features, pseudo_image

__all__ = [
    "DEFAULT_GLOBAL",
    "FAMILIES",
    "GRAPH_FAMILIES",
    "TASKS",
    "VARIANTS",
    "ArchSpec",
    "BudgetError",
    "CaseDims",
    "GraphCache",
    "GridNet",
    "InputAdapter",
    "Network",
    "TrainingError",
    "build",
    "interpolate_widths",
    "match_budget",
    "node_features",
    "param_counts",
    "pseudo_image",
    "round_half_up",
    "write_param_csv",
]
