"""Primal-dual interior-point solver for :class:`OPFProblem`.

Inequalities ``c(y) >= 0`` get slacks ``s > 0`` with ``c(y) - s = 0`` and
multipliers ``mu >= 0``; the Lagrangian is ``f + lam.g - mu.c``. Each
iteration solves the condensed Newton system

    [ H + Jc' diag(mu/s) Jc   Jg' ] [dy  ]   [ -r ]
    [ Jg                      0   ] [dlam] = [ -g ]

with a dense symmetric-indefinite factorization. A diagonal shift on the
Hessian block restores the inertia a descent direction needs. Steps obey
fraction-to-boundary on ``(s, mu)`` and a backtracking search on an l2
penalty merit function. The barrier parameter follows ``sigma * s.mu / m``.
Warm starts estimate the multipliers from the start point itself.
"""
from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as la
from scipy.optimize import lsq_linear

from .problem import OPFProblem

__all__ = ["OPFSolution", "SolverOptions", "solve", "binding_set"]

log = logging.getLogger(__name__)

OPTIMAL, INFEASIBLE, MAX_ITER, NUMERICAL = "optimal", "infeasible", "max_iter", "numerical"


@dataclass(frozen=True)
class SolverOptions:
    # tight enough that leftover barrier multipliers stay below the binding threshold
    tol: float = 1e-10
    max_iter: int = 200
    sigma: float = 0.1
    step_fraction: float = 0.99995
    # initial slack / multiplier level for cold starts; cap on the warm-start slack floor
    z0: float = 1.0
    warm_z0: float = 1e-2
    # inequalities with c below this join the warm-start multiplier fit
    warm_near: float = 1e-2
    binding_slack: float = 1e-5
    binding_dual: float = 1e-5
    max_backtrack: int = 30
    # the solver works on obj_scale * f; costs in $/h are large next to per-unit constraints
    obj_scale: float = 1e-2
    trace: bool = False


@dataclass(frozen=True, eq=False)
class OPFSolution:
    status: str
    y: np.ndarray
    lam: np.ndarray  # equality multipliers: P balance, Q balance, slack-angle pin
    mu: np.ndarray  # inequality multipliers over the full enumeration (0 where masked out)
    objective: float
    active: frozenset
    iterations: int
    wall_time: float
    mask: np.ndarray
    trace: tuple = field(default=(), repr=False)

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL

    @property
    def z(self):
        return self.lam, self.mu

    def active_vector(self, n_ineq: int | None = None) -> np.ndarray:
        n = len(self.mu) if n_ineq is None else n_ineq
        v = np.zeros(n, dtype=bool)
        v[list(self.active)] = True
        return v


def binding_set(problem: OPFProblem, c, mu, mask, opts: SolverOptions = SolverOptions()):
    """Indices whose slack is within tolerance of the bound or whose multiplier is significant."""
    scale = 1.0 + np.abs(problem.ineq_bound)
    hit = ((c <= opts.binding_slack * scale) | (mu >= opts.binding_dual)) & mask
    return frozenset(int(j) for j in np.flatnonzero(hit))


def _resolve_mask(problem, mask):
    keep = problem.present.copy()
    if mask is None:
        return keep
    mask = np.asarray(mask)
    if mask.dtype == bool:
        if mask.shape != (problem.n_ineq,):
            raise ValueError(f"mask has shape {mask.shape}, expected ({problem.n_ineq},)")
        return keep & mask
    sel = np.zeros(problem.n_ineq, dtype=bool)
    sel[np.asarray(sorted(int(j) for j in mask), dtype=int)] = True
    return keep & sel


def solve(problem: OPFProblem, y0=None, mask=None, options: SolverOptions | None = None) -> OPFSolution:
    """Solve the (optionally reduced) OPF. Failures are reported in ``status``.

    A cold start that stalls is retried once from larger initial slacks and
    multipliers; some reduced programs crawl along a poorly centred path from
    the default level. The reported iterations and time cover both attempts.
    """
    opts = options or SolverOptions()
    sol = _solve(problem, y0, mask, opts)
    if y0 is None and sol.status in (MAX_ITER, NUMERICAL):
        again = _solve(problem, None, mask, replace(opts, z0=10.0 * opts.z0))
        sol = replace(again, iterations=sol.iterations + again.iterations,
                      wall_time=sol.wall_time + again.wall_time)
    return sol


def _solve(problem, y0, mask, opts):
    t_start = time.perf_counter()
    keep = _resolve_mask(problem, mask)
    rows = np.flatnonzero(keep)
    warm = y0 is not None
    y = problem.flat_start() if y0 is None else np.array(y0, dtype=float)
    if y.shape != (problem.n_var,):
        raise ValueError(f"y0 has shape {y.shape}, expected ({problem.n_var},)")

    m = len(rows)
    nvar = problem.n_var

    f, df = _scaled_objective(problem, y, opts.obj_scale)
    g, jg = problem.equalities(y)
    c_all, jc_all = problem.inequalities(y)
    c, jc = c_all[rows], jc_all[rows]
    if warm:
        s, mu, lam, gamma = _warm_point(problem, df, g, jg, c, jc, opts)
    else:
        s = np.maximum(c, opts.z0)
        mu = np.full(m, opts.z0)
        gamma = opts.z0
        # least-squares multiplier estimate so the first Hessian carries network curvature
        lam = np.linalg.lstsq(jg.T.toarray(), -(df - jc.T @ mu), rcond=None)[0]

    trace = []
    delta_w = 0.0
    nu = 0.0
    status = MAX_ITER
    best_y = y.copy()
    it = 0
    f_prev = f
    for it in range(1, opts.max_iter + 1):
        lx = df + jg.T @ lam - jc.T @ mu
        h = problem.lagrangian_hessian(y, lam, _scatter(mu, rows, problem.n_ineq), opts.obj_scale)
        d = mu / s
        jcd = jc.toarray()
        mmat = h + jcd.T @ (d[:, None] * jcd)
        # residual of the barrier-perturbed stationarity, with c - s = 0 folded in
        rhs_y = lx + jcd.T @ ((mu * c - gamma) / s)
        jgd = jg.toarray()
        rhs = -np.concatenate([rhs_y, g])
        try:
            sol, delta_w = _solve_kkt(mmat, jgd, rhs, delta_w)
        except la.LinAlgError:
            status = NUMERICAL
            break
        if not np.all(np.isfinite(sol)):
            status = NUMERICAL
            break
        dy, dlam = sol[:nvar], sol[nvar:]
        ds = c - s + jcd @ dy
        dmu = (gamma - mu * ds) / s - mu

        ap = 1.0
        neg = ds < 0
        if np.any(neg):
            ap = min(1.0, opts.step_fraction * np.min(-s[neg] / ds[neg]))
        ad = 1.0
        neg = dmu < 0
        if np.any(neg):
            ad = min(1.0, opts.step_fraction * np.min(-mu[neg] / dmu[neg]))

        # backtracking on an l2 penalty merit function of the barrier problem
        theta = np.linalg.norm(g) + np.linalg.norm(c - s)
        slope = df @ dy - gamma * np.sum(ds / s)
        if theta > 0:
            curv = max(0.0, 0.5 * dy @ mmat @ dy)
            nu = max(nu, (slope + curv) / (0.9 * theta) + 1e-8)
        dphi = slope - nu * theta
        phi0 = f - gamma * np.sum(np.log(s)) + nu * theta
        alpha = ap
        for _ in range(opts.max_backtrack):
            y_t = y + alpha * dy
            s_t = s + alpha * ds
            f_t, _ = _scaled_objective(problem, y_t, opts.obj_scale)
            g_t = problem.equalities(y_t, jac=False)
            c_t = problem.inequalities(y_t, jac=False)[rows]
            phi = f_t - gamma * np.sum(np.log(s_t)) + nu * (np.linalg.norm(g_t) + np.linalg.norm(c_t - s_t))
            if np.isfinite(phi) and phi <= phi0 + 1e-4 * alpha * min(dphi, 0.0) + 1e-12 * abs(phi0):
                break
            alpha *= 0.5

        y = y + alpha * dy
        s = s + alpha * ds
        lam = lam + alpha * dlam
        mu = mu + ad * dmu
        if m:
            gamma = opts.sigma * float(s @ mu) / m
        else:
            gamma = 0.0

        f, df = _scaled_objective(problem, y, opts.obj_scale)
        g, jg = problem.equalities(y)
        c_all, jc_all = problem.inequalities(y)
        c, jc = c_all[rows], jc_all[rows]
        if not (np.all(np.isfinite(y)) and np.isfinite(f)):
            status = NUMERICAL
            break
        best_y = y

        lx = df + jg.T @ lam - jc.T @ mu
        ynorm = np.max(np.abs(y))
        feas = max(np.max(np.abs(g)), np.max(-c, initial=0.0)) / (1.0 + max(ynorm, np.max(s, initial=0.0)))
        grad = np.max(np.abs(lx)) / (1.0 + max(np.max(np.abs(lam)), np.max(mu, initial=0.0)))
        comp = float(s @ mu) / (1.0 + ynorm)
        cost = abs(f - f_prev) / (1.0 + abs(f_prev))
        f_prev = f
        if opts.trace:
            trace.append((it, gamma, feas, grad, comp, cost))
            log.debug("alpha=%.3e ap=%.3e ad=%.3e nu=%.3e", alpha, ap, ad, nu)
            log.debug("it=%d gamma=%.3e feas=%.3e grad=%.3e comp=%.3e", it, gamma, feas, grad, comp)
        if feas < opts.tol and grad < opts.tol and comp < opts.tol:
            status = OPTIMAL
            break
        # diverging primal or multipliers while feasibility stalls: no feasible point nearby
        if ynorm > 1e8 or max(np.max(np.abs(lam)), np.max(mu, initial=0.0)) > 1e12:
            status = INFEASIBLE
            break

    y = best_y
    # multipliers of the scaled program, mapped back to $/h units
    lam = lam / opts.obj_scale
    mu_full = _scatter(mu, rows, problem.n_ineq) / opts.obj_scale
    c_full = problem.inequalities(y, jac=False)
    active = binding_set(problem, c_full, mu_full, keep, opts) if status == OPTIMAL else frozenset()
    return OPFSolution(
        status=status,
        y=y,
        lam=lam,
        mu=mu_full,
        objective=problem.objective(y)[0],
        active=active,
        iterations=it,
        wall_time=time.perf_counter() - t_start,
        mask=keep,
        trace=tuple(trace),
    )


def _warm_point(problem, df, g, jg, c, jc, opts):
    """Slacks, multipliers and barrier level for a start near a solution.

    Multipliers come from a bound-constrained least-squares fit of the
    stationarity condition over nearly binding inequalities; the slack floor
    tracks the start's own infeasibility so an exact optimum stays exact.
    """
    m = len(c)
    infeas = max(np.max(np.abs(g), initial=0.0), np.max(-c, initial=0.0))
    floor = min(max(infeas, 1e-12), opts.warm_z0)
    s = np.maximum(c, floor)
    near = np.flatnonzero(c < opts.warm_near)
    a = np.hstack([jg.T.toarray(), -jc[near].T.toarray()])
    lo = np.concatenate([np.full(jg.shape[0], -np.inf), np.zeros(len(near))])
    # degenerate fits are steered toward complementary multipliers: mu_j * c_j ~ 0
    nl = jg.shape[0]
    pen = np.zeros((len(near), a.shape[1]))
    pen[np.arange(len(near)), nl + np.arange(len(near))] = np.maximum(c[near], 1e-8)
    a = np.vstack([a, pen])
    rhs = np.concatenate([-df, np.zeros(len(near))])
    fit = lsq_linear(a, rhs, bounds=(lo, np.inf), method="bvls")
    lam = fit.x[: jg.shape[0]]
    mu = np.zeros(m)
    mu[near] = fit.x[jg.shape[0]:]
    gamma = max(float(s @ mu) / max(m, 1), floor * floor) * opts.sigma
    mu = np.maximum(mu, gamma / s)
    return s, mu, lam, gamma


def _inertia(d):
    """(positive, negative, zero) eigenvalue counts of an LDL block-diagonal factor."""
    n = d.shape[0]
    off = np.append(np.diag(d, 1), 0.0)
    diag = np.diag(d)
    pos = neg = zero = 0
    i = 0
    while i < n:
        if off[i] != 0.0:
            a, b, c = diag[i], off[i], diag[i + 1]
            det = a * c - b * b
            if det < 0:
                pos += 1
                neg += 1
            elif det > 0:
                if a + c > 0:
                    pos += 2
                else:
                    neg += 2
            else:
                zero += 1
                pos += a + c > 0
                neg += a + c < 0
            i += 2
        else:
            pos += diag[i] > 0
            neg += diag[i] < 0
            zero += diag[i] == 0
            i += 1
    return pos, neg, zero


def _ldl_solve(lu, d, perm, b):
    lp = lu[perm]
    z = la.solve_triangular(lp, b[perm], lower=True, unit_diagonal=True, check_finite=False)
    n = len(b)
    ab = np.zeros((3, n))
    ab[0, 1:] = np.diag(d, 1)
    ab[1] = np.diag(d)
    ab[2, :-1] = np.diag(d, -1)
    w = la.solve_banded((1, 1), ab, z, check_finite=False)
    x = np.empty(n)
    x[perm] = la.solve_triangular(lp.T, w, lower=False, unit_diagonal=True, check_finite=False)
    return x


def _solve_kkt(hmat, jg, rhs, delta_last):
    """Solve the condensed KKT system, adding ``delta*I`` to the Hessian block
    until the matrix has ``n_var`` positive and ``n_eq`` negative eigenvalues."""
    nvar, neq = hmat.shape[0], jg.shape[0]
    kkt = np.zeros((nvar + neq, nvar + neq))
    kkt[:nvar, :nvar] = hmat
    kkt[nvar:, :nvar] = jg
    kkt[:nvar, nvar:] = jg.T
    diag_idx = np.arange(nvar)
    eps_c = 0.0
    delta = 0.0
    for attempt in range(60):
        k = kkt.copy()
        if delta:
            k[diag_idx, diag_idx] += delta
        if eps_c:
            k[nvar + np.arange(neq), nvar + np.arange(neq)] -= eps_c
        lu, d, perm = la.ldl(k, lower=True, check_finite=False)
        pos, neg, zero = _inertia(d)
        if pos == nvar and neg == neq and zero == 0:
            return _ldl_solve(lu, d, perm, rhs), delta
        if zero and not eps_c:
            eps_c = 1e-8
        if delta == 0.0:
            delta = 1e-4 if delta_last == 0.0 else max(1e-20, delta_last / 3)
        else:
            delta *= 100.0 if delta_last == 0.0 and attempt < 2 else 8.0
        if delta > 1e40:
            break
    raise la.LinAlgError("could not correct KKT inertia")


def _scaled_objective(problem, y, scale):
    f, df = problem.objective(y)
    return scale * f, scale * df


def _scatter(vals, rows, n):
    out = np.zeros(n)
    out[rows] = vals
    return out
