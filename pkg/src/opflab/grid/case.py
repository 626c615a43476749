"""Power network container and MATPOWER case I/O.

All quantities on a :class:`GridCase` are per-unit on ``base_mva``; the
MATPOWER reader and writer are the only places where MW/MVAr/$ per MW
units appear.
"""
from __future__ import annotations

import dataclasses
import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "GridCase",
    "CaseFormatError",
    "parse_matpower",
    "load_case",
    "to_matpower",
    "to_json",
    "from_json",
    "builtin_case_path",
    "BUILTIN_CASES",
]

PQ, PV, SLACK = 1, 2, 3

BUILTIN_CASES = {
    "case5": "pglib_opf_case5_pjm.m",
    "case14": "pglib_opf_case14_ieee.m",
    "case24": "pglib_opf_case24_ieee_rts.m",
    "case30": "pglib_opf_case30_ieee.m",
    "case39": "pglib_opf_case39_epri.m",
    "case57": "pglib_opf_case57_ieee.m",
    "case118": "pglib_opf_case118_ieee.m",
}

_ARRAY_FIELDS = (
    "bus_ids", "bus_type", "vm_min", "vm_max", "gs", "bs",
    "load_bus", "load_pd", "load_qd",
    "gen_bus", "gen_status", "pg_min", "pg_max", "qg_min", "qg_max", "gen_cost",
    "br_from", "br_to", "br_r", "br_x", "br_b", "rate_a", "tap", "shift", "br_status",
)


class CaseFormatError(ValueError):
    """Raised for malformed or inconsistent case data."""


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class GridCase:
    """A parsed power network.

    Buses are addressed by position (0..n_bus-1); ``bus_ids`` keeps the
    original external numbering. Loads are the buses with nonzero demand.
    ``gen_cost`` rows are ``(c2, c1, c0)`` in $/h over per-unit power.
    """

    name: str
    base_mva: float
    bus_ids: np.ndarray
    bus_type: np.ndarray
    vm_min: np.ndarray
    vm_max: np.ndarray
    gs: np.ndarray
    bs: np.ndarray
    load_bus: np.ndarray
    load_pd: np.ndarray
    load_qd: np.ndarray
    gen_bus: np.ndarray
    gen_status: np.ndarray
    pg_min: np.ndarray
    pg_max: np.ndarray
    qg_min: np.ndarray
    qg_max: np.ndarray
    gen_cost: np.ndarray
    br_from: np.ndarray
    br_to: np.ndarray
    br_r: np.ndarray
    br_x: np.ndarray
    br_b: np.ndarray
    rate_a: np.ndarray
    tap: np.ndarray
    shift: np.ndarray
    br_status: np.ndarray

    def __post_init__(self):
        ints = {"bus_ids", "bus_type", "load_bus", "gen_bus", "br_from", "br_to"}
        bools = {"gen_status", "br_status"}
        for f in _ARRAY_FIELDS:
            dtype = np.int64 if f in ints else bool if f in bools else np.float64
            object.__setattr__(self, f, _frozen(getattr(self, f), dtype))
        if self.gen_cost.size == 0:
            object.__setattr__(self, "gen_cost", _frozen(np.zeros((0, 3)), np.float64))
        self.validate()

    # -- sizes -------------------------------------------------------------
    @property
    def n_bus(self) -> int:
        return len(self.bus_ids)

    @property
    def n_load(self) -> int:
        return len(self.load_bus)

    @property
    def n_branch(self) -> int:
        return len(self.br_from)

    @property
    def active_gens(self) -> np.ndarray:
        """Indices of in-service generators."""
        return np.flatnonzero(self.gen_status)

    @property
    def n_gen(self) -> int:
        return int(self.gen_status.sum())

    @property
    def slack(self) -> int:
        return int(np.flatnonzero(self.bus_type == SLACK)[0])

    @property
    def gen_buses(self) -> np.ndarray:
        """Sorted unique buses hosting an in-service generator."""
        return np.unique(self.gen_bus[self.active_gens])

    def validate(self):
        n = self.n_bus
        if n == 0:
            raise CaseFormatError("case has no buses")
        if len(np.unique(self.bus_ids)) != n:
            raise CaseFormatError("duplicate bus id")
        n_slack = int((self.bus_type == SLACK).sum())
        if n_slack == 0:
            raise CaseFormatError("no slack bus")
        if n_slack > 1:
            raise CaseFormatError(f"{n_slack} slack buses, expected exactly one")
        for name in ("load_bus", "gen_bus", "br_from", "br_to"):
            idx = getattr(self, name)
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise CaseFormatError(f"{name} references an unknown bus")
        if np.any(self.pg_min > self.pg_max) or np.any(self.qg_min > self.qg_max):
            raise CaseFormatError("generator with min limit above max limit")
        on = self.br_status
        if np.any(np.hypot(self.br_r[on], self.br_x[on]) == 0):
            raise CaseFormatError("in-service branch with zero impedance")
        if np.any(self.rate_a < 0):
            raise CaseFormatError("negative branch rating")
        if self.gen_cost.shape != (len(self.gen_bus), 3):
            raise CaseFormatError("gen_cost must have one (c2, c1, c0) row per generator")

    def replace(self, **changes) -> "GridCase":
        return dataclasses.replace(self, **changes)

    def with_loads(self, pd, qd) -> "GridCase":
        """Copy with new per-unit load vectors (same load ordering)."""
        return self.replace(load_pd=np.asarray(pd, float), load_qd=np.asarray(qd, float))

    def bus_demand(self):
        """Per-bus (Pd, Qd) aggregated from the load list."""
        pd = np.bincount(self.load_bus, self.load_pd, minlength=self.n_bus)
        qd = np.bincount(self.load_bus, self.load_qd, minlength=self.n_bus)
        return pd, qd

    def __eq__(self, other):
        if not isinstance(other, GridCase):
            return NotImplemented
        if self.name != other.name or self.base_mva != other.base_mva:
            return False
        return all(
            getattr(self, f).shape == getattr(other, f).shape
            and np.array_equal(getattr(self, f), getattr(other, f))
            for f in _ARRAY_FIELDS
        )

    __hash__ = None


# -- MATPOWER parsing ---------------------------------------------------------

_ASSIGN = re.compile(r"mpc\.(\w+)\s*=\s*")
_NUMBER = re.compile(r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?|[+-]?(?:Inf|inf|NaN|nan)")


def _line_col(text, pos):
    line = text.count("\n", 0, pos) + 1
    col = pos - (text.rfind("\n", 0, pos) + 1) + 1
    return line, col


def _strip_comments(text):
    # keep offsets stable so error positions refer to the original text
    def blank(m):
        return " " * len(m.group(0))

    return re.sub(r"%[^\n]*", blank, text)


def _parse_matrix(text, start, name):
    """Parse ``[ ... ];`` beginning at ``start``; returns (rows, end)."""
    if text[start] != "[":
        raise CaseFormatError("mpc.%s: expected '[' at line %d, column %d" % ((name,) + _line_col(text, start)))
    end = text.find("]", start)
    if end < 0:
        raise CaseFormatError("mpc.%s: unterminated matrix starting at line %d, column %d" % ((name,) + _line_col(text, start)))
    rows, row = [], []
    pos = start + 1
    body_end = end
    token = re.compile(r"\s+|;|,|[^\s;,]+")
    while pos < body_end:
        m = token.match(text, pos, body_end)
        tok = m.group(0)
        if tok == ";":
            if row:
                rows.append(row)
            row = []
        elif tok.strip() == "" or tok == ",":
            if "\n" in tok and row:
                rows.append(row)
                row = []
        else:
            if not _NUMBER.fullmatch(tok):
                line, col = _line_col(text, pos)
                raise CaseFormatError(f"mpc.{name}: non-numeric entry {tok!r} at line {line}, column {col}")
            row.append(float(tok))
        pos = m.end()
    if row:
        rows.append(row)
    return rows, end + 1


def _parse_blocks(text):
    clean = _strip_comments(text)
    blocks = {}
    for m in _ASSIGN.finditer(clean):
        name, pos = m.group(1), m.end()
        ch = clean[pos] if pos < len(clean) else ""
        if ch == "[":
            blocks[name], _ = _parse_matrix(clean, pos, name)
        elif ch in "'\"{":
            continue  # version strings, cell arrays of names
        else:
            tok = re.match(r"[^;\n]*", clean[pos:]).group(0).strip()
            if not _NUMBER.fullmatch(tok):
                line, col = _line_col(clean, pos)
                raise CaseFormatError(f"mpc.{name}: syntax error at line {line}, column {col}")
            blocks[name] = float(tok)
    return blocks


def _table(blocks, name, min_cols):
    if name not in blocks:
        raise CaseFormatError(f"missing {name}")
    rows = blocks[name]
    if not isinstance(rows, list):
        raise CaseFormatError(f"mpc.{name} must be a matrix")
    for i, r in enumerate(rows):
        if len(r) < min_cols:
            raise CaseFormatError(f"mpc.{name} row {i + 1} has {len(r)} columns, need {min_cols}")
    return rows


def parse_matpower(text: str, name: str = "case") -> GridCase:
    """Parse MATPOWER case text into a per-unit :class:`GridCase`."""
    blocks = _parse_blocks(text)
    if "baseMVA" not in blocks:
        raise CaseFormatError("missing baseMVA")
    base = float(blocks["baseMVA"])
    if not base > 0:
        raise CaseFormatError("baseMVA must be positive")
    bus = _table(blocks, "bus", 13)
    gen = _table(blocks, "gen", 10)
    branch = _table(blocks, "branch", 11)
    gencost = _table(blocks, "gencost", 4)

    bus_ids = [int(r[0]) for r in bus]
    if len(set(bus_ids)) != len(bus_ids):
        dup = next(b for b in bus_ids if bus_ids.count(b) > 1)
        raise CaseFormatError(f"duplicate bus id {dup}")
    index = {b: i for i, b in enumerate(bus_ids)}

    def bus_index(b, where):
        try:
            return index[int(b)]
        except KeyError:
            raise CaseFormatError(f"{where} references unknown bus {int(b)}") from None

    btype = [int(r[1]) for r in bus]
    if any(t not in (PQ, PV, SLACK) for t in btype):
        raise CaseFormatError("isolated (type 4) or unknown bus types are not supported")
    pd = np.array([r[2] for r in bus]) / base
    qd = np.array([r[3] for r in bus]) / base
    load_bus = np.flatnonzero((pd != 0) | (qd != 0))

    if len(gencost) < len(gen):
        raise CaseFormatError("gencost has fewer rows than gen")
    cost = np.zeros((len(gen), 3))
    for i, r in enumerate(gencost[: len(gen)]):
        model, ncoef = int(r[0]), int(r[3])
        if model != 2:
            raise CaseFormatError(f"gencost row {i + 1}: only polynomial (model 2) costs are supported")
        coefs = r[4 : 4 + ncoef]
        if len(coefs) != ncoef or ncoef > 3:
            raise CaseFormatError(f"gencost row {i + 1}: expected at most 3 coefficients")
        c = [0.0] * (3 - ncoef) + list(coefs)
        cost[i] = (c[0] * base**2, c[1] * base, c[2])

    ratio = np.array([r[8] for r in branch])
    return GridCase(
        name=name,
        base_mva=base,
        bus_ids=bus_ids,
        bus_type=btype,
        vm_min=[r[12] for r in bus],
        vm_max=[r[11] for r in bus],
        gs=np.array([r[4] for r in bus]) / base,
        bs=np.array([r[5] for r in bus]) / base,
        load_bus=load_bus,
        load_pd=pd[load_bus],
        load_qd=qd[load_bus],
        gen_bus=[bus_index(r[0], "gen") for r in gen],
        gen_status=[r[7] > 0 for r in gen],
        pg_min=np.array([r[9] for r in gen]) / base,
        pg_max=np.array([r[8] for r in gen]) / base,
        qg_min=np.array([r[4] for r in gen]) / base,
        qg_max=np.array([r[3] for r in gen]) / base,
        gen_cost=cost,
        br_from=[bus_index(r[0], "branch") for r in branch],
        br_to=[bus_index(r[1], "branch") for r in branch],
        br_r=[r[2] for r in branch],
        br_x=[r[3] for r in branch],
        br_b=[r[4] for r in branch],
        rate_a=np.array([r[5] for r in branch]) / base,
        tap=np.where(ratio == 0, 1.0, ratio),
        shift=np.deg2rad([r[9] for r in branch]),
        br_status=[r[10] > 0 for r in branch],
    )


def builtin_case_path(name: str) -> Path:
    try:
        return Path(__file__).resolve().parent.parent / "cases" / BUILTIN_CASES[name]
    except KeyError:
        raise KeyError(f"unknown builtin case {name!r}; choose from {sorted(BUILTIN_CASES)}") from None


def load_case(path_or_name) -> GridCase:
    """Load a case from a ``.m``/``.json`` path or a builtin short name (e.g. ``"case30"``)."""
    if str(path_or_name) in BUILTIN_CASES:
        return load_case(builtin_case_path(str(path_or_name)))
    path = Path(path_or_name)
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        return from_json(text)
    name = path.stem.replace("pglib_opf_", "")
    return parse_matpower(text, name=name)


# -- serialization ------------------------------------------------------------

def _fmt(v):
    return repr(float(v))


def to_matpower(case: GridCase) -> str:
    """Write a case as MATPOWER text that :func:`parse_matpower` reads back identically."""
    base = case.base_mva
    pd, qd = case.bus_demand()
    out = [f"function mpc = {case.name}", "mpc.version = '2';", f"mpc.baseMVA = {_fmt(base)};", "", "mpc.bus = ["]
    for i in range(case.n_bus):
        row = [case.bus_ids[i], case.bus_type[i], pd[i] * base, qd[i] * base, case.gs[i] * base,
               case.bs[i] * base, 1, 1.0, 0.0, 0.0, 1, case.vm_max[i], case.vm_min[i]]
        out.append("\t" + "\t".join(_fmt(v) if isinstance(v, float) else str(int(v)) for v in row) + ";")
    out += ["];", "", "mpc.gen = ["]
    for g in range(len(case.gen_bus)):
        row = [case.bus_ids[case.gen_bus[g]], 0.0, 0.0, case.qg_max[g] * base, case.qg_min[g] * base, 1.0,
               base, int(case.gen_status[g]), case.pg_max[g] * base, case.pg_min[g] * base]
        out.append("\t" + "\t".join(_fmt(v) if isinstance(v, float) else str(int(v)) for v in row) + ";")
    out += ["];", "", "mpc.branch = ["]
    for k in range(case.n_branch):
        row = [case.bus_ids[case.br_from[k]], case.bus_ids[case.br_to[k]], case.br_r[k], case.br_x[k],
               case.br_b[k], case.rate_a[k] * base, case.rate_a[k] * base, case.rate_a[k] * base,
               0.0 if case.tap[k] == 1.0 else case.tap[k], np.rad2deg(case.shift[k]),
               int(case.br_status[k]), -360.0, 360.0]
        out.append("\t" + "\t".join(_fmt(v) if isinstance(v, float) else str(int(v)) for v in row) + ";")
    out += ["];", "", "mpc.gencost = ["]
    for g in range(len(case.gen_bus)):
        c2, c1, c0 = case.gen_cost[g]
        row = [2, 0.0, 0.0, 3, c2 / base**2, c1 / base, c0]
        out.append("\t" + "\t".join(_fmt(v) if isinstance(v, float) else str(int(v)) for v in row) + ";")
    out += ["];", ""]
    return "\n".join(out)


def to_json(case: GridCase) -> str:
    """Canonical structured-text serialization (one JSON object per case)."""
    obj = {"format": "opflab-case", "version": 1, "name": case.name, "base_mva": case.base_mva}
    for f in _ARRAY_FIELDS:
        obj[f] = getattr(case, f).tolist()
    return json.dumps(obj, sort_keys=True)


def from_json(text: str) -> GridCase:
    obj = json.loads(text)
    if obj.get("format") != "opflab-case":
        raise CaseFormatError("not an opflab case document")
    if obj.get("version") != 1:
        raise CaseFormatError(f"unsupported case document version {obj.get('version')}")
    kwargs = {f: obj[f] for f in _ARRAY_FIELDS}
    if len(kwargs["gen_cost"]) == 0:
        kwargs["gen_cost"] = np.zeros((0, 3))
    return GridCase(name=obj["name"], base_mva=obj["base_mva"], **kwargs)
