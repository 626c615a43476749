"""Parameter-count tables (rows = cases, columns = architectures)."""
from __future__ import annotations

import csv
import io
from pathlib import Path

from .arch import ArchSpec, CaseDims, build

__all__ = ["DEFAULT_GLOBAL", "param_counts", "write_param_csv"]

DEFAULT_GLOBAL = ("FCNN:global-1", "CNN:global-4", "GCN:global-3", "CHC:global-3", "GC:global-3", "GAT:global-3")


def param_counts(cases, archs=DEFAULT_GLOBAL, task: str = "regression") -> list:
    """[(case_id, {arch: n_params})] for regression-sized outputs."""
    rows = []
    for case in cases:
        dims = CaseDims.from_case(case)
        counts = {a: build(ArchSpec.parse(a, task), dims, dims.n_targets).n_params for a in archs}
        rows.append((case.name, counts))
    return rows


def write_param_csv(cases, archs=DEFAULT_GLOBAL, path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(["case"] + [a.replace(":", "-") for a in archs])
    for name, counts in param_counts(cases, archs):
        w.writerow([name] + [counts[a] for a in archs])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8", newline="")
    return text
