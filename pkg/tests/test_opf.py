import json
from pathlib import Path

import numpy as np
import pytest

from opflab.grid import parse_matpower, remove_line
from opflab.opf import (
    EPS_VIOLATION,
    INEQ_KINDS,
    SolverOptions,
    assemble,
    kkt_residuals,
    lmp,
    solution_record,
    solve,
    trace_lines,
    violated,
)

from conftest import cached_case, cached_solution, matpower_text

REFERENCE = json.loads((Path(__file__).parent / "data" / "reference_objectives.json").read_text())
SOLVED = ["case5", "case14", "case24", "case30", "case39", "case57", "case118"]


def _random_interior(problem, rng):
    c = problem.case
    g = problem.gen_index
    y = np.zeros(problem.n_var)
    y[problem.va] = rng.uniform(-0.3, 0.3, problem.n_bus)
    y[problem.vm] = rng.uniform(c.vm_min, c.vm_max)
    y[problem.pg] = rng.uniform(c.pg_min[g], c.pg_max[g])
    y[problem.qg] = rng.uniform(c.qg_min[g], c.qg_max[g])
    return y


def _fd_jacobian(fun, y, h=1e-6):
    cols = []
    for i in range(len(y)):
        e = np.zeros_like(y)
        e[i] = h
        cols.append((fun(y + e) - fun(y - e)) / (2 * h))
    return np.stack(cols, axis=-1)


def _rel_err(a, b):
    return np.max(np.abs(a - b)) / max(1.0, np.max(np.abs(b)))


# -- assembly ----------------------------------------------------------------------

def test_two_bus_equality_count(two_bus):
    assert assemble(two_bus).n_eq == 5


def test_case30_inequality_count():
    case = cached_case("case30")
    p = assemble(case)
    assert p.n_ineq == 2 * case.n_bus + 2 * case.n_gen * 2 + 2 * case.n_branch
    kinds = [INEQ_KINDS[k] for k in p.ineq_kind]
    assert kinds == sorted(kinds, key=INEQ_KINDS.index)


def test_unlimited_branches_drop_out():
    case = cached_case("case30")
    free = case.replace(rate_a=np.zeros(case.n_branch))
    assert assemble(free).n_ineq == assemble(case).n_ineq - 2 * case.n_branch


def test_assemble_rejects_disconnected_and_genless(two_bus):
    with pytest.raises(ValueError, match="connected"):
        assemble(remove_line(two_bus, 0).case)
    with pytest.raises(ValueError, match="generators"):
        assemble(two_bus.replace(gen_status=np.array([False])))


# -- derivatives --------------------------------------------------------------------

@pytest.mark.parametrize("name", SOLVED)
def test_first_derivatives_match_finite_differences(name, rng):
    p = assemble(cached_case(name))
    for _ in range(10):
        y = _random_interior(p, rng)
        _, df = p.objective(y)
        assert _rel_err(df, _fd_jacobian(lambda v: np.array([p.objective(v)[0]]), y)[0]) <= 1e-5
        _, jg = p.equalities(y)
        assert _rel_err(jg.toarray(), _fd_jacobian(lambda v: p.equalities(v, jac=False), y)) <= 1e-5
        _, jc = p.inequalities(y)
        assert _rel_err(jc.toarray(), _fd_jacobian(lambda v: p.inequalities(v, jac=False), y)) <= 1e-5


@pytest.mark.parametrize("name", ["case5", "case30"])
def test_lagrangian_hessian_matches_finite_differences(name, rng):
    p = assemble(cached_case(name))
    for _ in range(3):
        y = _random_interior(p, rng)
        lam = rng.normal(size=p.n_eq)
        mu = rng.uniform(size=p.n_ineq)

        def grad(v):
            _, df = p.objective(v)
            _, jg = p.equalities(v)
            _, jc = p.inequalities(v)
            return df + jg.T @ lam - jc.T @ mu

        assert _rel_err(p.lagrangian_hessian(y, lam, mu), _fd_jacobian(grad, y)) <= 1e-5


# -- solve ------------------------------------------------------------------------------

def test_two_bus_analytic(two_bus):
    p = assemble(two_bus)
    sol = solve(p)
    assert sol.optimal
    # the line is lossless, so the generator covers the load exactly
    assert sol.y[p.pg][0] == pytest.approx(two_bus.load_pd[0], abs=1e-8)
    vm = sol.y[p.vm]
    assert np.all(vm > two_bus.vm_min) and np.all(vm < two_bus.vm_max)
    c2, c1, _ = two_bus.gen_cost[0]
    assert sol.objective == pytest.approx(c2 * 0.8**2 + c1 * 0.8, rel=1e-10)


@pytest.mark.parametrize("name", SOLVED)
def test_reference_objective_and_kkt(name):
    p, sol = cached_solution(name)
    assert sol.optimal
    ref = REFERENCE["objectives"][name]
    assert abs(sol.objective - ref) / ref <= 1e-4
    res = kkt_residuals(p, sol)
    assert max(res.values()) <= 1e-6
    assert np.all(sol.mu >= 0)
    assert sol.active <= set(range(p.n_ineq))


def test_complementarity_per_constraint():
    p, sol = cached_solution("case30")
    c = p.inequalities(sol.y, jac=False)
    scale = 1.0 + max(np.max(np.abs(sol.lam)), np.max(sol.mu))
    assert np.max(np.abs(sol.mu * c)) / scale <= 1e-8


def test_full_mask_is_identity():
    p, sol = cached_solution("case30")
    masked = solve(p, mask=np.ones(p.n_ineq, dtype=bool))
    np.testing.assert_allclose(masked.y, sol.y, atol=1e-8, rtol=0)
    masked = solve(p, mask=range(p.n_ineq))
    np.testing.assert_array_equal(masked.y, sol.y)


@pytest.mark.parametrize("name", ["case24", "case30", "case57", "case118"])
def test_reduced_equivalence(name):
    p, sol = cached_solution(name)
    red = solve(p, mask=sorted(sol.active))
    assert red.optimal
    assert abs(red.objective - sol.objective) / sol.objective <= 1e-6
    assert red.active == sol.active


@pytest.mark.parametrize("name", SOLVED)
def test_warm_start_idempotence(name):
    p, sol = cached_solution(name)
    warm = solve(p, y0=sol.y)
    assert warm.optimal and warm.iterations <= 5
    assert abs(warm.objective - sol.objective) / sol.objective <= 1e-9


@pytest.mark.parametrize("name", ["case5", "case14", "case30", "case39", "case57", "case118"])
def test_warm_start_returns_same_point(name):
    # case24 is left out: its twin units with equal costs leave the optimal dispatch non-unique
    p, sol = cached_solution(name)
    warm = solve(p, y0=sol.y)
    assert np.max(np.abs(warm.y - sol.y)) <= 1e-6


def test_determinism():
    p = assemble(cached_case("case14"))
    opts = SolverOptions(trace=True)
    a, b = solve(p, options=opts), solve(p, options=opts)
    assert a.trace == b.trace
    assert np.array_equal(a.y, b.y) and np.array_equal(a.mu, b.mu)


def test_bad_start_dimension():
    p, _ = cached_solution("case5")
    with pytest.raises(ValueError):
        solve(p, y0=np.zeros(3))


def test_infeasible_load_is_reported(two_bus):
    heavy = two_bus.with_loads(two_bus.load_pd * 10, two_bus.load_qd)
    sol = solve(assemble(heavy))
    assert sol.status in ("infeasible", "max_iter", "numerical")
    assert not sol.optimal and sol.active == frozenset()


# -- violations ----------------------------------------------------------------------------

def test_violated_at_optimum_is_empty():
    p, sol = cached_solution("case30")
    assert violated(p, sol.y) == frozenset()


def test_violated_single_pg_upper_bound():
    p, sol = cached_solution("case30")
    y = sol.y.copy()
    g = 2
    y[p.pg.start + g] = p.case.pg_max[p.gen_index[g]] + 0.1
    assert violated(p, y) == {int(p.ineq_indices("pg_hi")[g])}


def test_violated_matches_brute_force(rng):
    p = assemble(cached_case("case30"))
    case = p.case
    for _ in range(5):
        y = _random_interior(p, rng)
        vm, pg, qg = y[p.vm], y[p.pg], y[p.qg]
        g = p.gen_index
        vals = list(vm - case.vm_min) + list(case.vm_max - vm) + list(pg - case.pg_min[g])
        vals += list(case.pg_max[g] - pg) + list(qg - case.qg_min[g]) + list(case.qg_max[g] - qg)
        sf, st = p.branch_flows(y)
        for k in p.limited:
            vals.append(case.rate_a[k] ** 2 - abs(sf[k]) ** 2)
        for k in p.limited:
            vals.append(case.rate_a[k] ** 2 - abs(st[k]) ** 2)
        expected = {j for j, v in enumerate(vals) if v < -EPS_VIOLATION}
        assert violated(p, y) == expected


# -- prices ---------------------------------------------------------------------------------

def test_single_bus_linear_cost_price():
    text = matpower_text(
        buses=[[1, 3, 50, 10, 0, 0, 1, 1, 0, 230, 1, 1.1, 0.9]],
        gens=[[1, 0, 0, 100, -100, 1, 100, 1, 100, 0]],
        branches=[],
        costs=[[2, 0, 0, 2, 0.2, 0]],
    )
    case = parse_matpower(text)
    assert case.gen_cost[0, 1] == pytest.approx(20.0)
    p = assemble(case)
    sol = solve(p)
    np.testing.assert_allclose(lmp(p, sol), [20.0], rtol=1e-8)


def test_uniform_lossless_network_has_one_price():
    bus = lambda i, t, pd: [i, t, pd, 0, 0, 0, 1, 1, 0, 230, 1, 1.5, 0.5]
    text = matpower_text(
        buses=[bus(1, 3, 20), bus(2, 1, 30), bus(3, 1, 40), bus(4, 2, 10)],
        gens=[[1, 0, 0, 500, -500, 1, 100, 1, 300, 0], [4, 0, 0, 500, -500, 1, 100, 1, 300, 0]],
        branches=[[a, b, 0.0, 0.1, 0.0, 0, 0, 0, 0, 0, 1, -360, 360] for a, b in ((1, 2), (2, 3), (3, 4), (4, 1))],
        costs=[[2, 0, 0, 3, 0.01, 10, 0], [2, 0, 0, 3, 0.02, 10, 0]],
    )
    p = assemble(parse_matpower(text))
    sol = solve(p)
    prices = lmp(p, sol)
    assert np.ptp(prices) <= 1e-6 * np.max(np.abs(prices))


def test_congested_prices_match_finite_difference_resolve():
    case = cached_case("case5")
    p, sol = cached_solution("case5")
    prices = lmp(p, sol)
    assert np.ptp(prices) > 0.1 * np.mean(prices)
    h = 1e-4
    pd = case.load_pd
    for i, bus in enumerate(case.load_bus):
        obj = []
        for sign in (1, -1):
            bumped = pd.copy()
            bumped[i] += sign * h
            obj.append(solve(assemble(case.with_loads(bumped, case.load_qd)), y0=sol.y).objective)
        fd = (obj[0] - obj[1]) / (2 * h)
        assert abs(fd - prices[bus]) <= 1e-3 * abs(prices[bus])


def test_lmp_requires_optimal(two_bus):
    heavy = two_bus.with_loads(two_bus.load_pd * 10, two_bus.load_qd)
    p = assemble(heavy)
    with pytest.raises(ValueError):
        lmp(p, solve(p))


# -- residuals and export ---------------------------------------------------------------------

def test_stationarity_grows_with_perturbation(rng):
    p, sol = cached_solution("case30")
    direction = rng.normal(size=p.n_var)
    direction /= np.linalg.norm(direction)
    values = []
    for eps in (1e-5, 1e-4, 1e-3, 1e-2):
        moved = type(sol)(**{**sol.__dict__, "y": sol.y + eps * direction})
        values.append(kkt_residuals(p, moved)["stationarity"])
    assert all(a < b for a, b in zip(values, values[1:]))


def test_zero_vector_feasibility_residual(two_bus):
    p = assemble(two_bus)
    sol = solve(p)
    zero = type(sol)(**{**sol.__dict__, "y": np.zeros(p.n_var)})
    g = p.equalities(np.zeros(p.n_var), jac=False)
    c = p.inequalities(np.zeros(p.n_var), jac=False)
    expected = max(np.max(np.abs(g)), np.max(-c))
    assert kkt_residuals(p, zero)["feasibility"] == pytest.approx(expected)
    assert expected > 0.5


def test_solution_record_and_trace():
    p = assemble(cached_case("case5"))
    sol = solve(p, options=SolverOptions(trace=True))
    rec = json.loads(solution_record(p, sol))
    assert rec["status"] == "optimal"
    assert rec["active"] == sorted(sol.active)
    assert len(rec["y"]) == p.n_var and len(rec["mu"]) == p.n_ineq
    lines = list(trace_lines(sol))
    assert len(lines) == sol.iterations and "mu=" in lines[0]
