"""Grid data: MATPOWER I/O, bus connectivity and the gen/load node graph."""
from .case import (
    BUILTIN_CASES,
    CaseFormatError,
    GridCase,
    builtin_case_path,
    from_json,
    load_case,
    parse_matpower,
    to_json,
    to_matpower,
)
from .graph import (
    Contingency,
    Node,
    TransformedGraph,
    bfs_distances,
    bus_neighbors,
    edge_weight,
    gcn_normalize,
    is_connected,
    islanding_branches,
    normalized_laplacian,
    remove_line,
    scaled_laplacian,
    transform_graph,
)

__all__ = [
    "BUILTIN_CASES",
    "CaseFormatError",
    "Contingency",
    "GridCase",
    "Node",
    "TransformedGraph",
    "bfs_distances",
    "builtin_case_path",
    "bus_neighbors",
    "edge_weight",
    "from_json",
    "gcn_normalize",
    "is_connected",
    "islanding_branches",
    "load_case",
    "normalized_laplacian",
    "parse_matpower",
    "remove_line",
    "scaled_laplacian",
    "to_json",
    "to_matpower",
    "transform_graph",
]
