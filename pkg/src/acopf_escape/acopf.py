"""ACOPF and its partial Lagrangian as differentiable NLPs.

Both problems share one variable layout::

    x = [theta (non-reference buses), V (all buses), P_gen, Q_gen]

The primal problem minimizes generation cost subject to per-bus active and
reactive balance (equalities), squared apparent-power limits on both ends of
every rated branch (inequalities) and box bounds on V, P_gen, Q_gen.  The
partial Lagrangian moves the balance equalities into the objective with fixed
prices and keeps everything else.

Balance residuals are written demand + outflow - generation, and the
Lagrangian is f + y.c + lam.h, so a positive active-power price means that
more load at that bus raises cost.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .caseio import CaseData, paper_model as _paper_model
from .network import NetworkModel


@dataclass(frozen=True)
class Layout:
    n_bus: int
    n_gen: int
    ref: int

    @classmethod
    def for_case(cls, case: CaseData) -> "Layout":
        return cls(case.n_bus, case.n_gen, case.reference_index)

    @property
    def n(self) -> int:
        return 2 * self.n_bus - 1 + 2 * self.n_gen

    @property
    def theta(self) -> slice:
        return slice(0, self.n_bus - 1)

    @property
    def v(self) -> slice:
        return slice(self.n_bus - 1, 2 * self.n_bus - 1)

    @property
    def pg(self) -> slice:
        s = 2 * self.n_bus - 1
        return slice(s, s + self.n_gen)

    @property
    def qg(self) -> slice:
        s = 2 * self.n_bus - 1 + self.n_gen
        return slice(s, s + self.n_gen)

    @property
    def net_keep(self) -> np.ndarray:
        """Indices of [theta_full, V] that are decision variables, in x order."""
        return np.delete(np.arange(2 * self.n_bus), self.ref)

    def split(self, x):
        theta = np.insert(np.asarray(x[self.theta], float), self.ref, 0.0)
        return theta, x[self.v], x[self.pg], x[self.qg]

    def compose(self, theta, v, p_gen, q_gen) -> np.ndarray:
        theta = np.asarray(theta, float)
        theta = np.delete(theta - theta[self.ref], self.ref)
        return np.concatenate([theta, v, p_gen, q_gen]).astype(float)


@dataclass(frozen=True)
class DualPrices:
    mu_p: np.ndarray
    mu_q: np.ndarray

    def __post_init__(self):
        if self.mu_p.shape != self.mu_q.shape:
            raise ValueError("mu_p and mu_q must have equal length")
        if not (np.all(np.isfinite(self.mu_p)) and np.all(np.isfinite(self.mu_q))):
            raise ValueError("dual prices must be finite")

    @classmethod
    def from_equality_duals(cls, y_eq, n_bus: int) -> "DualPrices":
        y_eq = np.asarray(y_eq, dtype=float)
        if y_eq.size != 2 * n_bus:
            raise ValueError(f"expected {2 * n_bus} balance duals, got {y_eq.size}")
        return cls(y_eq[:n_bus].copy(), y_eq[n_bus:].copy())

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.mu_p, self.mu_q])


@dataclass(frozen=True)
class NlpProblem:
    """min f(x)  s.t.  c(x) = 0,  h(x) <= 0,  lower <= x <= upper.

    ``funcs(x) -> (f, c, h)``, ``grads(x) -> (grad f, Jc, Jh)`` and
    ``hess(x, y, lam)`` is the Hessian of ``f + y.c + lam.h``.
    """

    lower: np.ndarray
    upper: np.ndarray
    funcs: Callable
    grads: Callable
    hess: Callable
    n_eq: int
    n_ineq: int
    eq_names: tuple = ()
    ineq_names: tuple = ()
    layout: Layout | None = None
    kind: str = "nlp"

    @property
    def n(self) -> int:
        return self.lower.size


@dataclass(frozen=True)
class Evaluation:
    objective: float
    gradient: np.ndarray
    c: np.ndarray
    h: np.ndarray
    jac_eq: np.ndarray
    jac_ineq: np.ndarray
    hessian: np.ndarray | None


def evaluate(problem: NlpProblem, point, y_eq=None, y_ineq=None, hessian: bool = True) -> Evaluation:
    x = np.asarray(point, dtype=float)
    if x.shape != (problem.n,):
        raise ValueError(f"point has shape {x.shape}, problem expects ({problem.n},)")
    y_eq = np.zeros(problem.n_eq) if y_eq is None else np.asarray(y_eq, float)
    y_ineq = np.zeros(problem.n_ineq) if y_ineq is None else np.asarray(y_ineq, float)
    if y_eq.shape != (problem.n_eq,) or y_ineq.shape != (problem.n_ineq,):
        raise ValueError("multiplier dimensions do not match the problem")
    f, c, h = problem.funcs(x)
    g, jc, jh = problem.grads(x)
    w = problem.hess(x, y_eq, y_ineq) if hessian else None
    return Evaluation(float(f), g, c, h, jc, jh, w)


class _AcopfFunctions:
    """Shared evaluation code for the primal and partial-Lagrangian problems."""

    def __init__(self, case: CaseData, prices: DualPrices | None):
        self.case = case
        self.net = NetworkModel(case)
        self.layout = Layout.for_case(case)
        self.keep = self.layout.net_keep
        self.c0 = np.array([c.constant for c in case.costs])
        self.c1 = np.array([c.linear for c in case.costs])
        self.c2 = np.array([c.quadratic for c in case.costs])
        self.prices = None if prices is None else prices.stacked()
        lay, nb, ng = self.layout, case.n_bus, case.n_gen
        self.n = lay.n
        self.gen_block = np.zeros((2 * nb, self.n))
        self.gen_block[self.net.gen_bus, lay.pg.start + np.arange(ng)] = -1.0
        self.gen_block[nb + self.net.gen_bus, lay.qg.start + np.arange(ng)] = -1.0

    # pieces -------------------------------------------------------------
    def _unpack(self, x):
        return self.layout.split(x)

    def cost(self, pg):
        return float(np.sum(self.c0 + pg * (self.c1 + self.c2 * pg)))

    def balance(self, theta, v, pg, qg):
        r_p, r_q = self.net.residuals(theta, v, pg, qg)
        return np.concatenate([r_p, r_q])

    def limit_values(self, p, q):
        r = self.net.rated
        return p[r] ** 2 + q[r] ** 2 - self.net.s_max**2

    def _net_to_x(self, net_jac):
        out = np.zeros((net_jac.shape[0], self.n))
        out[:, : 2 * self.layout.n_bus - 1] = net_jac[:, self.keep]
        return out

    def balance_jacobian(self, v, dp, dq):
        net, nb = self.net, self.layout.n_bus
        jp = net.scatter_jacobian(net.k, dp, nb, 2 * nb)
        jq = net.scatter_jacobian(net.k, dq, nb, 2 * nb)
        d = np.arange(nb)
        jp[d, nb + d] += 2 * net.shunt_g * v
        jq[d, nb + d] -= 2 * net.shunt_b * v
        return self._net_to_x(np.vstack([jp, jq])) + self.gen_block

    def limit_jacobian(self, p, q, dp, dq):
        r = self.net.rated
        local = 2 * p[r, None] * dp[r] + 2 * q[r, None] * dq[r]
        out = np.zeros((r.size, 2 * self.layout.n_bus))
        np.add.at(out, (np.arange(r.size)[:, None], self.net.cols[r]), local)
        return self._net_to_x(out)

    def network_hessian(self, v, partials, w_eq, w_ineq):
        """Hessian in x-space of w_eq.c(x) + w_ineq.h(x) (network part only)."""
        net, nb = self.net, self.layout.n_bus
        p, q, dp, dq, hp, hq = partials
        wp = w_eq[:nb][net.k]
        wq = w_eq[nb:][net.k]
        local = wp[:, None, None] * hp + wq[:, None, None] * hq
        if net.rated.size and np.any(w_ineq):
            r = net.rated
            lam = 2 * w_ineq
            local[r] += lam[:, None, None] * (
                dp[r, :, None] * dp[r, None, :]
                + p[r, None, None] * hp[r]
                + dq[r, :, None] * dq[r, None, :]
                + q[r, None, None] * hq[r]
            )
        full = net.scatter_hessian(local, 2 * nb)
        d = nb + np.arange(nb)
        full[d, d] += 2 * net.shunt_g * w_eq[:nb] - 2 * net.shunt_b * w_eq[nb:]
        out = np.zeros((self.n, self.n))
        k = 2 * nb - 1
        out[:k, :k] = full[np.ix_(self.keep, self.keep)]
        return out

    def cost_gradient(self, pg):
        g = np.zeros(self.n)
        g[self.layout.pg] = self.c1 + 2 * self.c2 * pg
        return g

    def add_cost_hessian(self, w):
        s = self.layout.pg
        idx = np.arange(s.start, s.stop)
        w[idx, idx] += 2 * self.c2
        return w

    # primal -------------------------------------------------------------
    def primal_funcs(self, x):
        theta, v, pg, qg = self._unpack(x)
        p, q = self.net.flows(theta, v)
        return self.cost(pg), self.balance(theta, v, pg, qg), self.limit_values(p, q)

    def primal_grads(self, x):
        theta, v, pg, qg = self._unpack(x)
        p, q, dp, dq, _, _ = self.net.flow_partials(theta, v, second=False)
        return self.cost_gradient(pg), self.balance_jacobian(v, dp, dq), self.limit_jacobian(p, q, dp, dq)

    def primal_hess(self, x, y, lam):
        theta, v, _, _ = self._unpack(x)
        partials = self.net.flow_partials(theta, v)
        return self.add_cost_hessian(self.network_hessian(v, partials, np.asarray(y, float), np.asarray(lam, float)))

    # partial Lagrangian -------------------------------------------------
    def lagrangian_funcs(self, x):
        theta, v, pg, qg = self._unpack(x)
        p, q = self.net.flows(theta, v)
        f = self.cost(pg) + float(self.prices @ self.balance(theta, v, pg, qg))
        return f, np.zeros(0), self.limit_values(p, q)

    def lagrangian_grads(self, x):
        theta, v, pg, qg = self._unpack(x)
        p, q, dp, dq, _, _ = self.net.flow_partials(theta, v, second=False)
        g = self.cost_gradient(pg) + self.prices @ self.balance_jacobian(v, dp, dq)
        return g, np.zeros((0, self.n)), self.limit_jacobian(p, q, dp, dq)

    def lagrangian_hess(self, x, y, lam):
        theta, v, _, _ = self._unpack(x)
        partials = self.net.flow_partials(theta, v)
        return self.add_cost_hessian(self.network_hessian(v, partials, self.prices, np.asarray(lam, float)))


def _bounds(case: CaseData, layout: Layout):
    lo = np.full(layout.n, -np.inf)
    up = np.full(layout.n, np.inf)
    lo[layout.v] = [b.v_min for b in case.buses]
    up[layout.v] = [b.v_max for b in case.buses]
    lo[layout.pg] = [g.p_min for g in case.generators]
    up[layout.pg] = [g.p_max for g in case.generators]
    lo[layout.qg] = [g.q_min for g in case.generators]
    up[layout.qg] = [g.q_max for g in case.generators]
    return lo, up


def _names(case: CaseData, fn: _AcopfFunctions):
    eq = tuple((b.id, "P") for b in case.buses) + tuple((b.id, "Q") for b in case.buses)
    nl = len(case.branches)
    ineq = []
    for j in fn.net.rated:
        br = case.branches[j % nl]
        ineq.append((br.from_bus, br.to_bus, "from" if j < nl else "to"))
    return eq, tuple(ineq)


def assemble_primal(case: CaseData, paper_model: bool = False) -> NlpProblem:
    if paper_model:
        case = _paper_model(case)
    fn = _AcopfFunctions(case, None)
    lo, up = _bounds(case, fn.layout)
    eq, ineq = _names(case, fn)
    return NlpProblem(lo, up, fn.primal_funcs, fn.primal_grads, fn.primal_hess,
                      n_eq=2 * case.n_bus, n_ineq=fn.net.rated.size, eq_names=eq, ineq_names=ineq,
                      layout=fn.layout, kind="primal")


def assemble_partial_lagrangian(case: CaseData, duals: DualPrices, paper_model: bool = False) -> NlpProblem:
    """Balance constraints priced into the objective; all other constraints kept."""
    if duals.mu_p.size != case.n_bus:
        raise ValueError(f"dual prices have {duals.mu_p.size} entries, case has {case.n_bus} buses")
    if not (np.all(np.isfinite(duals.mu_p)) and np.all(np.isfinite(duals.mu_q))):
        raise ValueError("dual prices must be finite")
    if paper_model:
        case = _paper_model(case)
    fn = _AcopfFunctions(case, duals)
    lo, up = _bounds(case, fn.layout)
    _, ineq = _names(case, fn)
    return NlpProblem(lo, up, fn.lagrangian_funcs, fn.lagrangian_grads, fn.lagrangian_hess,
                      n_eq=0, n_ineq=fn.net.rated.size, ineq_names=ineq, layout=fn.layout,
                      kind="partial-lagrangian")


def wrap_angle(theta):
    """Map angles into (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(theta, float), 2 * np.pi)


def warm_point(case: CaseData, theta, v, model: NetworkModel | None = None) -> np.ndarray:
    """Point in the shared layout built from (theta, V) alone.

    Each bus's generation is set to what balances it at (theta, V), split
    evenly across the generators at that bus and clamped into their limits.
    """
    model = model or NetworkModel(case)
    layout = Layout.for_case(case)
    theta = wrap_angle(np.asarray(theta, float) - theta[layout.ref])
    v = np.asarray(v, float)
    zero = np.zeros(case.n_gen)
    need_p, need_q = model.residuals(theta, v, zero, zero)
    count = np.bincount(model.gen_bus, minlength=case.n_bus)
    pg = need_p[model.gen_bus] / count[model.gen_bus]
    qg = need_q[model.gen_bus] / count[model.gen_bus]
    pg = np.clip(pg, [g.p_min for g in case.generators], [g.p_max for g in case.generators])
    qg = np.clip(qg, [g.q_min for g in case.generators], [g.q_max for g in case.generators])
    return layout.compose(theta, v, pg, qg)


def start_to_point(case: CaseData, start, model: NetworkModel | None = None) -> np.ndarray:
    if start.p_gen is not None and start.q_gen is not None:
        return Layout.for_case(case).compose(start.theta, start.v, start.p_gen, start.q_gen)
    return warm_point(case, start.theta, start.v, model)
