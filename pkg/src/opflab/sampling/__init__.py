"""Labelled dataset generation, splitting and persistence."""
from .core import (
    FACTOR_HIGH,
    FACTOR_LOW,
    Dataset,
    GenerationError,
    Sample,
    derive_seed,
    draw_factors,
    generate,
    label,
    sample_case,
    sample_problem,
    split,
    start_from_target,
    target_vector,
    trivial_sets,
)
from .store import FORMAT, VERSION, DatasetFormatError, load, save, summary_rows, write_summary_csv

__all__ = [
    "FACTOR_HIGH",
    "FACTOR_LOW",
    "FORMAT",
    "VERSION",
    "Dataset",
    "DatasetFormatError",
    "GenerationError",
    "Sample",
    "derive_seed",
    "draw_factors",
    "generate",
    "label",
    "load",
    "sample_case",
    "sample_problem",
    "save",
    "split",
    "start_from_target",
    "summary_rows",
    "target_vector",
    "trivial_sets",
    "write_summary_csv",
]
