"""Polar AC-OPF program: objective, constraint evaluators and derivatives.

Variable vector ``y = [Va (all buses), Vm, Pg, Qg]`` in per-unit and
radians. The slack angle is pinned by an explicit equality so that the
equality block is ``[P balance (n_bus), Q balance (n_bus), Va_slack = 0]``.

Inequalities are written ``c(y) >= 0`` and enumerated in a fixed order::

    Vm - vm_min | vm_max - Vm | Pg - pg_min | pg_max - Pg |
    Qg - qg_min | qg_max - Qg | rate^2 - |S_from|^2 | rate^2 - |S_to|^2

Branch blocks cover every branch with a positive rating, in or out of
service, so indices stay stable under line removal; ``present`` marks the
constraints that exist in the current topology.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from ..grid import GridCase, is_connected

__all__ = ["OPFProblem", "assemble", "INEQ_KINDS"]

INEQ_KINDS = ("vm_lo", "vm_hi", "pg_lo", "pg_hi", "qg_lo", "qg_hi", "sf", "st")


def _branch_admittances(case: GridCase):
    t = case.tap * np.exp(1j * case.shift)
    status = case.br_status.astype(float)
    ys = np.zeros(case.n_branch, dtype=complex)
    on = case.br_status
    ys[on] = 1.0 / (case.br_r[on] + 1j * case.br_x[on])
    ys *= status
    bc = case.br_b * status
    ytt = ys + 0.5j * bc
    yff = ytt / (t * np.conj(t))
    yft = -ys / np.conj(t)
    ytf = -ys / t
    return yff, yft, ytf, ytt


class OPFProblem:
    """Assembled AC-OPF for one case. Treat instances as immutable."""

    def __init__(self, case: GridCase):
        if case.n_gen == 0:
            raise ValueError("case has no in-service generators")
        if not is_connected(case):
            raise ValueError("case is not connected over in-service branches")
        self.case = case
        n = self.n_bus = case.n_bus
        gens = case.active_gens
        ng = self.n_gen = len(gens)
        self.gen_index = gens
        self.gen_bus = case.gen_bus[gens]
        self.cost = case.gen_cost[gens]
        self.va = slice(0, n)
        self.vm = slice(n, 2 * n)
        self.pg = slice(2 * n, 2 * n + ng)
        self.qg = slice(2 * n + ng, 2 * n + 2 * ng)
        self.n_var = 2 * n + 2 * ng
        self.n_eq = 2 * n + 1
        self.slack = case.slack
        self.pd, self.qd = case.bus_demand()

        # branch ends: from-ends then to-ends
        yff, yft, ytf, ytt = _branch_admittances(case)
        f, t = case.br_from, case.br_to
        self.end_own = np.concatenate([f, t])
        self.end_other = np.concatenate([t, f])
        yaa = np.concatenate([yff, ytt])
        yab = np.concatenate([yft, ytf])
        self.end_gaa, self.end_baa = yaa.real, yaa.imag
        self.end_g, self.end_b = yab.real, yab.imag
        self.end_idx = np.stack(
            [self.end_own, self.end_other, n + self.end_own, n + self.end_other], axis=1
        )

        # inequality enumeration
        self.limited = np.flatnonzero(case.rate_a > 0)
        nl = len(self.limited)
        sizes = (n, n, ng, ng, ng, ng, nl, nl)
        self.ineq_kind = np.repeat(np.arange(len(INEQ_KINDS)), sizes)
        self.ineq_offsets = dict(zip(INEQ_KINDS, np.cumsum((0,) + sizes[:-1])))
        self.n_ineq = int(sum(sizes))
        rate2 = case.rate_a[self.limited] ** 2
        self.ineq_bound = np.concatenate(
            [case.vm_min, case.vm_max, case.pg_min[gens], case.pg_max[gens],
             case.qg_min[gens], case.qg_max[gens], rate2, rate2]
        )
        on = case.br_status[self.limited]
        self.present = np.concatenate([np.ones(2 * n + 4 * ng, dtype=bool), on, on])
        for a in (self.ineq_bound, self.present):
            a.setflags(write=False)

        lin_rows = np.arange(2 * n + 4 * ng)
        var_of = np.concatenate([np.arange(n, 2 * n)] * 2 + [np.arange(2 * n, 2 * n + ng)] * 2
                                + [np.arange(2 * n + ng, 2 * n + 2 * ng)] * 2)
        sign = np.concatenate([np.ones(n), -np.ones(n), np.ones(ng), -np.ones(ng), np.ones(ng), -np.ones(ng)])
        self._lin_jac = sp.csr_matrix((sign, (lin_rows, var_of)), shape=(len(lin_rows), self.n_var))
        self._lin_sign = sign
        self._lin_var = var_of
        self._lin_bound = self.ineq_bound[: len(lin_rows)]

    # -- convenience ----------------------------------------------------------
    def split(self, y):
        y = np.asarray(y)
        return y[self.va], y[self.vm], y[self.pg], y[self.qg]

    def flat_start(self, margin: float = 1e-3) -> np.ndarray:
        c = self.case
        g = self.gen_index
        y = np.zeros(self.n_var)
        y[self.vm] = np.clip(1.0, c.vm_min + margin, c.vm_max - margin)
        y[self.pg] = 0.5 * (c.pg_min[g] + c.pg_max[g])
        y[self.qg] = np.clip(0.0, c.qg_min[g] + margin, c.qg_max[g] - margin)
        # degenerate ranges (min == max) collapse onto the bound
        for sl, lo, hi in ((self.vm, c.vm_min, c.vm_max), (self.qg, c.qg_min[g], c.qg_max[g])):
            narrow = hi - lo <= 2 * margin
            y[sl][narrow] = 0.5 * (lo + hi)[narrow]
        return y

    def clip_to_bounds(self, y, margin: float = 1e-3):
        """Move Vm/Pg/Qg values outside their boxes to ``margin`` inside; returns (y, n_clipped).

        Values already inside (or on) a bound are left alone, so an optimal
        point passes through unchanged.
        """
        c, g = self.case, self.gen_index
        y = np.array(y, dtype=float)
        count = 0
        for sl, lo, hi in ((self.vm, c.vm_min, c.vm_max), (self.pg, c.pg_min[g], c.pg_max[g]),
                           (self.qg, c.qg_min[g], c.qg_max[g])):
            mid = 0.5 * (lo + hi)
            old = y[sl]
            new = np.where(old < lo, np.minimum(lo + margin, mid), old)
            new = np.where(old > hi, np.maximum(hi - margin, mid), new)
            count += int(np.sum(new != old))
            y[sl] = new
        return y, count

    def ineq_label(self, j: int) -> str:
        kind = INEQ_KINDS[self.ineq_kind[j]]
        pos = j - self.ineq_offsets[kind]
        if kind in ("sf", "st"):
            pos = int(self.limited[pos])
        return f"{kind}[{pos}]"

    def ineq_indices(self, kind: str) -> np.ndarray:
        return np.flatnonzero(self.ineq_kind == INEQ_KINDS.index(kind))

    # -- objective ------------------------------------------------------------
    def objective(self, y):
        pg = y[self.pg]
        c2, c1, c0 = self.cost.T
        f = float(np.sum(c2 * pg**2 + c1 * pg + c0))
        grad = np.zeros(self.n_var)
        grad[self.pg] = 2 * c2 * pg + c1
        return f, grad

    def objective_hessian_diag(self):
        d = np.zeros(self.n_var)
        d[self.pg] = 2 * self.cost[:, 0]
        return d

    # -- branch-end flows -----------------------------------------------------
    def _ends(self, y, order=1):
        """Per-end (P, Q), gradients over (Va_own, Va_other, Vm_own, Vm_other), Hessians."""
        va, vm = y[self.va], y[self.vm]
        o, r = self.end_own, self.end_other
        delta = va[o] - va[r]
        u, w = vm[o], vm[r]
        g, b, gaa, baa = self.end_g, self.end_b, self.end_gaa, self.end_baa
        cd, sd = np.cos(delta), np.sin(delta)
        cc = g * cd + b * sd
        ss = g * sd - b * cd
        p = u * u * gaa + u * w * cc
        q = -u * u * baa + u * w * ss
        if order == 0:
            return p, q
        # local gradients in (delta, u, w)
        gp = np.stack([-u * w * ss, 2 * u * gaa + w * cc, u * cc], axis=1)
        gq = np.stack([u * w * cc, -2 * u * baa + w * ss, u * ss], axis=1)
        tmat = np.array([[1.0, -1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]])
        dp, dq = gp @ tmat, gq @ tmat
        if order == 1:
            return p, q, dp, dq
        e = len(p)
        hp = np.empty((e, 3, 3))
        hq = np.empty((e, 3, 3))
        hp[:, 0, 0] = -u * w * cc
        hp[:, 0, 1] = hp[:, 1, 0] = -w * ss
        hp[:, 0, 2] = hp[:, 2, 0] = -u * ss
        hp[:, 1, 1] = 2 * gaa
        hp[:, 1, 2] = hp[:, 2, 1] = cc
        hp[:, 2, 2] = 0.0
        hq[:, 0, 0] = -u * w * ss
        hq[:, 0, 1] = hq[:, 1, 0] = w * cc
        hq[:, 0, 2] = hq[:, 2, 0] = u * cc
        hq[:, 1, 1] = -2 * baa
        hq[:, 1, 2] = hq[:, 2, 1] = ss
        hq[:, 2, 2] = 0.0
        hp4 = np.einsum("ai,eab,bj->eij", tmat, hp, tmat)
        hq4 = np.einsum("ai,eab,bj->eij", tmat, hq, tmat)
        return p, q, dp, dq, hp4, hq4

    def branch_flows(self, y):
        """Complex power at from- and to-ends of every branch (per-unit)."""
        p, q = self._ends(y, order=0)
        nb = self.case.n_branch
        return p[:nb] + 1j * q[:nb], p[nb:] + 1j * q[nb:]

    # -- equalities -----------------------------------------------------------
    def equalities(self, y, jac: bool = True):
        n = self.n_bus
        vm = y[self.vm]
        gs, bs = self.case.gs, self.case.bs
        res = self._ends(y, order=1 if jac else 0)
        p, q = res[0], res[1]
        pinj = np.bincount(self.end_own, p, minlength=n) + gs * vm**2 + self.pd
        qinj = np.bincount(self.end_own, q, minlength=n) - bs * vm**2 + self.qd
        pinj -= np.bincount(self.gen_bus, y[self.pg], minlength=n)
        qinj -= np.bincount(self.gen_bus, y[self.qg], minlength=n)
        g = np.concatenate([pinj, qinj, [y[self.slack]]])
        if not jac:
            return g
        dp, dq = res[2], res[3]
        rows = np.concatenate([np.repeat(self.end_own, 4), np.repeat(self.end_own + n, 4)])
        cols = np.concatenate([self.end_idx.ravel()] * 2)
        vals = np.concatenate([dp.ravel(), dq.ravel()])
        ng = self.n_gen
        sh_rows = np.concatenate([np.arange(n), np.arange(n, 2 * n)])
        sh_cols = np.concatenate([np.arange(n, 2 * n)] * 2)
        sh_vals = np.concatenate([2 * gs * vm, -2 * bs * vm])
        g_rows = np.concatenate([self.gen_bus, self.gen_bus + n])
        g_cols = np.concatenate([np.arange(2 * n, 2 * n + ng), np.arange(2 * n + ng, 2 * n + 2 * ng)])
        rows = np.concatenate([rows, sh_rows, g_rows, [2 * n]])
        cols = np.concatenate([cols, sh_cols, g_cols, [self.slack]])
        vals = np.concatenate([vals, sh_vals, -np.ones(2 * ng), [1.0]])
        jg = sp.csr_matrix((vals, (rows, cols)), shape=(self.n_eq, self.n_var))
        return g, jg

    # -- inequalities ---------------------------------------------------------
    def inequalities(self, y, jac: bool = True):
        lin = self._lin_sign * (y[self._lin_var] - self._lin_bound)
        nb = self.case.n_branch
        lim = self.limited
        rate2 = self.ineq_bound[len(lin):][: len(lim)]
        if not jac:
            p, q = self._ends(y, order=0)
            sf = p[lim] ** 2 + q[lim] ** 2
            st = p[nb + lim] ** 2 + q[nb + lim] ** 2
            return np.concatenate([lin, rate2 - sf, rate2 - st])
        p, q, dp, dq = self._ends(y, order=1)
        ends = np.concatenate([lim, nb + lim])
        s2 = p[ends] ** 2 + q[ends] ** 2
        c = np.concatenate([lin, np.concatenate([rate2, rate2]) - s2])
        grad = -2 * (p[ends, None] * dp[ends] + q[ends, None] * dq[ends])
        rows = np.repeat(np.arange(len(ends)) + len(lin), 4)
        jbr = sp.csr_matrix((grad.ravel(), (rows, self.end_idx[ends].ravel())), shape=(self.n_ineq, self.n_var))
        jlin = sp.vstack([self._lin_jac, sp.csr_matrix((2 * len(lim), self.n_var))])
        return c, (jlin + jbr).tocsr()

    # -- second order ---------------------------------------------------------
    def lagrangian_hessian(self, y, lam, mu, obj_scale: float = 1.0):
        """Dense Hessian of ``obj_scale*f + lam.g - mu.c`` (``mu`` over all inequalities)."""
        n = self.n_bus
        h = np.zeros((self.n_var, self.n_var))
        h[np.diag_indices(self.n_var)] += obj_scale * self.objective_hessian_diag()
        p, q, dp, dq, hp, hq = self._ends(y, order=2)
        lp, lq = lam[:n], lam[n : 2 * n]
        weights_p = lp[self.end_own]
        weights_q = lq[self.end_own]
        local = weights_p[:, None, None] * hp + weights_q[:, None, None] * hq

        nb = self.case.n_branch
        lim = self.limited
        ends = np.concatenate([lim, nb + lim])
        mu_br = np.asarray(mu)[self.n_ineq - len(ends) :]
        # -mu * c with c = rate^2 - P^2 - Q^2
        pe, qe = p[ends], q[ends]
        br = 2 * mu_br[:, None, None] * (
            np.einsum("ei,ej->eij", dp[ends], dp[ends]) + np.einsum("ei,ej->eij", dq[ends], dq[ends])
            + pe[:, None, None] * hp[ends] + qe[:, None, None] * hq[ends]
        )
        local[ends] += br
        idx = self.end_idx
        np.add.at(h, (idx[:, :, None], idx[:, None, :]), local)
        vm_diag = np.arange(n, 2 * n)
        h[vm_diag, vm_diag] += 2 * lp * self.case.gs - 2 * lq * self.case.bs
        return h


def assemble(case: GridCase) -> OPFProblem:
    return OPFProblem(case)
