"""AC branch flows, nodal balance residuals and their derivatives.

Each branch contributes two *directed* flows, from->to and to->from.  In
polar form every directed flow from bus k to bus m reads

    P = a Vk^2 + Vk Vm (G cos t + B sin t)
    Q = -c Vk^2 + Vk Vm (G sin t - B cos t),      t = theta_k - theta_m

where ``a + jc`` is the self term and ``G + jB`` the mutual term of the
branch admittance matrix.  For a plain line (tap 1, no shift) with series
admittance ``g - jb`` and charging ``bc`` the from side has a = g,
c = -(b - bc/2), G = -g, B = b, which gives

    P = V_i^2 g - V_i V_j (g cos t - b sin t)
    Q = V_i^2 (b - bc/2) - V_i V_j (b cos t + g sin t).

Derivatives are taken w.r.t. the local variables (theta_k, theta_m, Vk, Vm)
and scattered to the full (theta, V) space of the network on demand.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .caseio import Branch, CaseData


@dataclass(frozen=True)
class NetworkState:
    theta: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        if self.theta.shape != self.v.shape:
            raise ValueError("theta and v must have the same shape")
        if not (np.all(np.isfinite(self.theta)) and np.all(np.isfinite(self.v))):
            raise ValueError("state must be finite")


@dataclass(frozen=True)
class BranchFlow:
    p_from: float
    q_from: float
    p_to: float
    q_to: float


def _admittances(branch: Branch):
    ys = complex(branch.series_g, -branch.series_b)
    tap = branch.tap_ratio * np.exp(1j * branch.phase_shift)
    ytt = ys + 0.5j * branch.charging_b
    yff = ytt / (branch.tap_ratio**2)
    yft = -ys / np.conj(tap)
    ytf = -ys / tap
    return yff, yft, ytf, ytt


def _directed(a, c, G, B, vk, vm, t):
    cs, sn = np.cos(t), np.sin(t)
    pc = G * cs + B * sn
    ps = G * sn - B * cs
    return a * vk * vk + vk * vm * pc, -c * vk * vk + vk * vm * ps


def branch_flow(v_i: float, v_j: float, theta_ij: float, branch: Branch) -> BranchFlow:
    """Flows on one branch in both directions for the given end voltages."""
    yff, yft, ytf, ytt = _admittances(branch)
    p_f, q_f = _directed(yff.real, yff.imag, yft.real, yft.imag, v_i, v_j, theta_ij)
    p_t, q_t = _directed(ytt.real, ytt.imag, ytf.real, ytf.imag, v_j, v_i, -theta_ij)
    return BranchFlow(float(p_f), float(q_f), float(p_t), float(q_t))


class NetworkModel:
    """Vectorized branch data of a case, indexed for fast evaluation.

    Directed flows are ordered: all from-sides (branch order), then all
    to-sides.  Full-space columns are ``[theta (n_bus), V (n_bus)]``.
    """

    def __init__(self, case: CaseData):
        self.case = case
        nb, nl = case.n_bus, len(case.branches)
        idx = case.bus_index()
        self.n_bus, self.n_branch = nb, nl
        f = np.array([idx[br.from_bus] for br in case.branches], dtype=int)
        t = np.array([idx[br.to_bus] for br in case.branches], dtype=int)
        adm = np.array([_admittances(br) for br in case.branches], dtype=complex).reshape(nl, 4)
        self.k = np.concatenate([f, t])
        self.m = np.concatenate([t, f])
        self_term = np.concatenate([adm[:, 0], adm[:, 3]])
        mutual = np.concatenate([adm[:, 1], adm[:, 2]])
        self.a, self.c = self_term.real, self_term.imag
        self.G, self.B = mutual.real, mutual.imag
        self.cols = np.stack([self.k, self.m, nb + self.k, nb + self.m], axis=1)
        self.p_load = np.array([b.p_load for b in case.buses])
        self.q_load = np.array([b.q_load for b in case.buses])
        self.shunt_g = np.array([b.shunt_g for b in case.buses])
        self.shunt_b = np.array([b.shunt_b for b in case.buses])
        self.gen_bus = np.array([idx[g.bus] for g in case.generators], dtype=int)
        s_max = np.array([br.s_max for br in case.branches])
        rated = np.flatnonzero(s_max > 0)
        self.rated = np.concatenate([rated, nl + rated])
        self.s_max = np.concatenate([s_max[rated], s_max[rated]])

    def flows(self, theta, v):
        """Directed flows (P, Q), each of length 2 * n_branch."""
        return _directed(self.a, self.c, self.G, self.B, v[self.k], v[self.m], theta[self.k] - theta[self.m])

    def flow_partials(self, theta, v, second=True):
        """Values, local gradients (.., 4) and local Hessians (.., 4, 4)."""
        vk, vm = v[self.k], v[self.m]
        t = theta[self.k] - theta[self.m]
        cs, sn = np.cos(t), np.sin(t)
        pc = self.G * cs + self.B * sn
        ps = self.G * sn - self.B * cs
        vv = vk * vm
        p = self.a * vk * vk + vv * pc
        q = -self.c * vk * vk + vv * ps
        dp = np.stack([-vv * ps, vv * ps, 2 * self.a * vk + vm * pc, vk * pc], axis=1)
        dq = np.stack([vv * pc, -vv * pc, -2 * self.c * vk + vm * ps, vk * ps], axis=1)
        if not second:
            return p, q, dp, dq, None, None
        n = t.size
        hp = np.empty((n, 4, 4))
        hq = np.empty((n, 4, 4))
        for h, x, y, d in ((hp, pc, ps, 2 * self.a), (hq, ps, -pc, -2 * self.c)):
            # x is the flow's trig part, y its theta-derivative up to sign
            h[:, 0, 0] = -vv * x
            h[:, 1, 1] = -vv * x
            h[:, 0, 1] = h[:, 1, 0] = vv * x
            h[:, 0, 2] = h[:, 2, 0] = -vm * y
            h[:, 0, 3] = h[:, 3, 0] = -vk * y
            h[:, 1, 2] = h[:, 2, 1] = vm * y
            h[:, 1, 3] = h[:, 3, 1] = vk * y
            h[:, 2, 2] = d
            h[:, 2, 3] = h[:, 3, 2] = x
            h[:, 3, 3] = 0.0
        return p, q, dp, dq, hp, hq

    def bus_sums(self, per_flow):
        return np.bincount(self.k, weights=per_flow, minlength=self.n_bus)

    def residuals(self, theta, v, p_gen, q_gen):
        """Nodal balance residuals: demand + outflow (+ shunt) - generation."""
        p, q = self.flows(theta, v)
        v2 = v * v
        r_p = self.p_load + self.bus_sums(p) + self.shunt_g * v2 - np.bincount(
            self.gen_bus, weights=p_gen, minlength=self.n_bus
        )
        r_q = self.q_load + self.bus_sums(q) - self.shunt_b * v2 - np.bincount(
            self.gen_bus, weights=q_gen, minlength=self.n_bus
        )
        return r_p, r_q

    def scatter_jacobian(self, rows, local, n_rows, n_cols):
        """Dense (n_rows, n_cols) Jacobian from per-flow local gradients."""
        out = np.zeros((n_rows, n_cols))
        np.add.at(out, (np.broadcast_to(rows[:, None], self.cols.shape), self.cols), local)
        return out

    def scatter_hessian(self, local, n):
        """Sum per-flow local Hessians (.., 4, 4) into a dense (n, n) matrix."""
        r = self.cols[:, :, None]
        c = self.cols[:, None, :]
        flat = (r * n + c).ravel()
        return np.bincount(flat, weights=local.ravel(), minlength=n * n).reshape(n, n)


@dataclass(frozen=True)
class FlowDerivatives:
    """Derivatives of directed flows and nodal residuals w.r.t. (theta, V).

    ``cols[k]`` lists the full-space columns (theta_k, theta_m, V_k, V_m) the
    local arrays ``dp``, ``dq``, ``hp``, ``hq`` of directed flow k refer to;
    nothing outside these columns is touched.  ``jac_rp`` / ``jac_rq`` are the
    dense residual Jacobians over the full [theta, V] space.
    """

    cols: np.ndarray
    p: np.ndarray
    q: np.ndarray
    dp: np.ndarray
    dq: np.ndarray
    hp: np.ndarray
    hq: np.ndarray
    jac_rp: np.ndarray
    jac_rq: np.ndarray

    def flow_jacobian(self, which: str, n_bus: int) -> np.ndarray:
        local = self.dp if which == "p" else self.dq
        out = np.zeros((local.shape[0], 2 * n_bus))
        np.add.at(out, (np.arange(local.shape[0])[:, None], self.cols), local)
        return out

    def flow_hessian(self, which: str, index: int, n_bus: int) -> np.ndarray:
        local = self.hp if which == "p" else self.hq
        out = np.zeros((2 * n_bus, 2 * n_bus))
        c = self.cols[index]
        out[np.ix_(c, c)] += local[index]
        return out


def injection_residuals(state: NetworkState, p_gen, q_gen, case: CaseData, model: NetworkModel | None = None):
    """Per-bus balance residuals ``(r_p, r_q)`` with generation per generator."""
    model = model or NetworkModel(case)
    return model.residuals(np.asarray(state.theta, float), np.asarray(state.v, float),
                           np.asarray(p_gen, float), np.asarray(q_gen, float))


def flow_derivatives(state: NetworkState, case: CaseData, model: NetworkModel | None = None) -> FlowDerivatives:
    model = model or NetworkModel(case)
    theta = np.asarray(state.theta, float)
    v = np.asarray(state.v, float)
    nb = model.n_bus
    p, q, dp, dq, hp, hq = model.flow_partials(theta, v)
    jac_rp = model.scatter_jacobian(model.k, dp, nb, 2 * nb)
    jac_rq = model.scatter_jacobian(model.k, dq, nb, 2 * nb)
    diag = np.arange(nb)
    jac_rp[diag, nb + diag] += 2 * model.shunt_g * v
    jac_rq[diag, nb + diag] -= 2 * model.shunt_b * v
    return FlowDerivatives(model.cols, p, q, dp, dq, hp, hq, jac_rp, jac_rq)
