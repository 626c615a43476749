"""Dataset persistence and summary export.

A dataset directory holds two files:

``samples.jsonl``
    One JSON object per line, keys in this order: ``x``, ``y_star``,
    ``active`` (sorted indices of binding inequalities), ``n_ineq``,
    ``removed_branch`` (null for fixed topology), ``lmp``, ``seed``,
    ``objective``, ``iterations``, ``y0``. UTF-8, ``\\n`` line endings.
``manifest.json``
    Format name and semantic version, case id, mode, root seed, counts,
    rejection counts, split indices, trivial sets and the SHA-256 of
    ``samples.jsonl``.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
from pathlib import Path

import numpy as np

from .core import Dataset, Sample

__all__ = ["FORMAT", "VERSION", "DatasetFormatError", "save", "load", "summary_rows", "write_summary_csv"]

FORMAT = "opflab-dataset"
VERSION = "1.0.0"
SAMPLES_FILE = "samples.jsonl"
MANIFEST_FILE = "manifest.json"


class DatasetFormatError(ValueError):
    pass


def _sample_line(s: Sample) -> str:
    rec = {
        "x": s.x.tolist(),
        "y_star": s.y_star.tolist(),
        "active": [int(j) for j in np.flatnonzero(s.active)],
        "n_ineq": int(len(s.active)),
        "removed_branch": s.removed_branch,
        "lmp": None if s.lmp is None else s.lmp.tolist(),
        "seed": s.seed,
        "objective": s.objective,
        "iterations": s.iterations,
        # every sample is solved from the flat start
        "y0": "flat",
    }
    return json.dumps(rec, allow_nan=True)


def _parse_sample(line: str, lineno: int) -> Sample:
    try:
        rec = json.loads(line)
        active = np.zeros(rec["n_ineq"], dtype=bool)
        active[rec["active"]] = True
        return Sample(
            x=np.array(rec["x"], dtype=float),
            y_star=np.array(rec["y_star"], dtype=float),
            active=active,
            removed_branch=rec["removed_branch"],
            lmp=None if rec["lmp"] is None else np.array(rec["lmp"], dtype=float),
            seed=int(rec["seed"]),
            objective=float(rec["objective"]),
            iterations=int(rec["iterations"]),
        )
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise DatasetFormatError(f"{SAMPLES_FILE} line {lineno}: {exc}") from None


def save(dataset: Dataset, path) -> Path:
    """Write ``dataset`` into directory ``path`` (created if needed)."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    body = "".join(_sample_line(s) + "\n" for s in dataset.samples).encode("utf-8")
    (out / SAMPLES_FILE).write_bytes(body)
    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "case_id": dataset.case_id,
        "mode": dataset.mode,
        "seed": dataset.seed,
        "n_samples": len(dataset),
        "rejected": dataset.rejected,
        "split": dataset.split,
        "trivial_always_on": sorted(dataset.trivial_always_on),
        "trivial_always_off": sorted(dataset.trivial_always_off),
        "sha256": hashlib.sha256(body).hexdigest(),
    }
    (out / MANIFEST_FILE).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return out


def load(path, case=None) -> Dataset:
    """Read a dataset directory; ``case`` (a GridCase or id) must match the manifest when given."""
    src = Path(path)
    try:
        manifest = json.loads((src / MANIFEST_FILE).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DatasetFormatError(f"no {MANIFEST_FILE} in {src}") from None
    if manifest.get("format") != FORMAT:
        raise DatasetFormatError("not an opflab dataset")
    major = str(manifest.get("version", "")).split(".")[0]
    if major != VERSION.split(".")[0]:
        raise DatasetFormatError(f"dataset version {manifest.get('version')} is incompatible with {VERSION}")
    if case is not None:
        want = case if isinstance(case, str) else case.name
        if manifest["case_id"] != want:
            raise DatasetFormatError(f"dataset was generated for {manifest['case_id']!r}, not {want!r}")
    body = (src / SAMPLES_FILE).read_bytes()
    if hashlib.sha256(body).hexdigest() != manifest["sha256"]:
        raise DatasetFormatError(f"checksum mismatch in {src / SAMPLES_FILE}")
    lines = body.decode("utf-8").splitlines()
    if len(lines) != manifest["n_samples"]:
        raise DatasetFormatError(f"expected {manifest['n_samples']} samples, found {len(lines)}")
    samples = [_parse_sample(line, i + 1) for i, line in enumerate(lines)]
    return Dataset(
        case_id=manifest["case_id"],
        mode=manifest["mode"],
        seed=manifest["seed"],
        samples=samples,
        split=manifest["split"],
        trivial_always_on=frozenset(manifest["trivial_always_on"]),
        trivial_always_off=frozenset(manifest["trivial_always_off"]),
        rejected=manifest["rejected"],
    )


def summary_rows(dataset: Dataset) -> list:
    """Per-quantity statistics: (quantity, count, mean, std, min, max)."""
    rows = []
    groups = {
        "x": [s.x for s in dataset.samples],
        "y_star": [s.y_star for s in dataset.samples],
        "objective": [[s.objective] for s in dataset.samples],
        "iterations": [[s.iterations] for s in dataset.samples],
        "active_count": [[int(s.active.sum())] for s in dataset.samples],
    }
    for name, vals in groups.items():
        arr = np.asarray(vals, dtype=float)
        if arr.size == 0:
            continue
        for j in range(arr.shape[1]):
            col = arr[:, j]
            label = name if arr.shape[1] == 1 else f"{name}[{j}]"
            rows.append((label, len(col), col.mean(), col.std(), col.min(), col.max()))
    return rows


def write_summary_csv(dataset: Dataset, path=None) -> str:
    """RFC-4180 CSV of :func:`summary_rows`; also written to ``path`` when given."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(["quantity", "count", "mean", "std", "min", "max"])
    for label, count, *stats in summary_rows(dataset):
        w.writerow([label, count] + [repr(float(v)) for v in stats])
    for k, v in sorted(dataset.rejected.items()):
        w.writerow([f"rejected_{k}", v, "", "", "", ""])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8", newline="")
    return text
