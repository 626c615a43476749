import functools

import numpy as np
import pytest

from opflab.grid import load_case, parse_matpower

TWO_BUS = """\
function mpc = two_bus
mpc.version = '2';
mpc.baseMVA = 100.0;
%% bus_i type Pd Qd Gs Bs area Vm Va baseKV zone Vmax Vmin
mpc.bus = [
    1  3   0.0   0.0  0.0 0.0 1 1.0 0.0 230.0 1 1.10 0.90;
    2  1  80.0  20.0  0.0 0.0 1 1.0 0.0 230.0 1 1.10 0.90;
];
%% bus Pg Qg Qmax Qmin Vg mBase status Pmax Pmin
mpc.gen = [
    1  0.0 0.0 200.0 -200.0 1.0 100.0 1 300.0 0.0;
];
%% fbus tbus r x b rateA rateB rateC ratio angle status angmin angmax
mpc.branch = [
    1  2  0.0  0.05  0.0  400.0 400.0 400.0 0 0 1 -360 360;
];
mpc.gencost = [
    2  0 0 3  0.01  20.0  0.0;
];
"""


def matpower_text(buses, gens, branches, costs, base=100.0):
    """Assemble a MATPOWER case from row lists."""
    def block(rows):
        return "\n".join("    " + " ".join(str(v) for v in r) + ";" for r in rows)
    return (
        f"mpc.baseMVA = {base};\nmpc.bus = [\n{block(buses)}\n];\n"
        f"mpc.gen = [\n{block(gens)}\n];\nmpc.branch = [\n{block(branches)}\n];\n"
        f"mpc.gencost = [\n{block(costs)}\n];\n"
    )


@pytest.fixture
def two_bus():
    return parse_matpower(TWO_BUS, "two_bus")


@functools.lru_cache(maxsize=None)
def cached_case(name):
    return load_case(name)


@functools.lru_cache(maxsize=None)
def cached_solution(name):
    from opflab.opf import assemble, solve
    problem = assemble(cached_case(name))
    return problem, solve(problem)


@functools.lru_cache(maxsize=None)
def small_dataset(name, mode, n, seed):
    from opflab.sampling import generate
    return generate(cached_case(name), n, mode, seed=seed)


@functools.lru_cache(maxsize=None)
def split_dataset(name, mode, n, seed):
    from opflab.sampling import split
    return split(small_dataset(name, mode, n, seed), seed=seed)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criteria log: (number, verdict, detail), printed after the run
ACCEPTANCE = []


def record_criterion(number, ok, detail, soft=False):
    verdict = "PASS" if ok else ("FAIL (soft)" if soft else "FAIL")
    ACCEPTANCE.append((number, verdict, detail))
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number, verdict, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {number:2d}: {verdict} - {detail}")
