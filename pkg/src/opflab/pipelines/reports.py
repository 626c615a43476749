"""Timing benchmark and result tables (CSV and Markdown)."""
from __future__ import annotations

import csv
import io
import time
from pathlib import Path

import numpy as np

from ..opf import solve

__all__ = [
    "inference_benchmark",
    "mean_solve_time",
    "write_csv",
    "write_markdown",
    "stats_table",
]

BENCH_HEADER = ["model", "n", "seconds", "seconds_per_1000", "solve_seconds_per_sample", "speedup"]


def mean_solve_time(problems) -> float:
    """Mean wall time of a flat-start full solve."""
    times = [solve(p).wall_time for p in problems]
    if not times:
        raise ValueError("no problems to time")
    return float(np.mean(times))


def inference_benchmark(models: dict, x, n: int, solve_seconds: float, removed=None, repeats: int = 3) -> list:
    """Batched prediction time per model.

    Rows of ``x`` are cycled to reach ``n`` samples. The best of ``repeats``
    timings is kept. Each row is (model, n, seconds, seconds per 1000,
    solve seconds per sample, speedup per sample).
    """
    if not models:
        return []
    if n < 1:
        raise ValueError("n must be positive")
    x = np.asarray(x, dtype=float)
    idx = np.arange(n) % len(x)
    xb = x[idx]
    rb = None if removed is None else [removed[i] for i in idx]
    rows = []
    for name, model in models.items():
        best = np.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            model.predict(xb, rb)
            best = min(best, time.perf_counter() - t0)
        per_sample = best / n
        rows.append([name, n, best, 1000.0 * per_sample, solve_seconds, solve_seconds / per_sample])
    return rows


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(header, rows, path=None) -> str:
    """RFC-4180 CSV (CRLF line ends, minimal quoting)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_cell(v) for v in r])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8", newline="")
    return text


def write_markdown(header, rows, path=None) -> str:
    lines = ["| " + " | ".join(str(h) for h in header) + " |", "|" + "---|" * len(header)]
    for r in rows:
        lines.append("| " + " | ".join(_cell(v).replace("|", "\\|") for v in r) + " |")
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def stats_table(results: dict, digits: int = 4):
    """``{case: {model: RunStats}}`` to (header, rows) with ``mean ± half-width`` cells."""
    models = sorted({m for per in results.values() for m in per})
    rows = []
    for case in sorted(results):
        per = results[case]
        rows.append([case] + [per[m].cell(digits) if m in per else "" for m in models])
    return ["case"] + models, rows
