"""Primal-dual interior-point solver for smooth nonconvex NLPs.

Solves ``min f(x) s.t. c(x) = 0, h(x) <= 0, l <= x <= u`` and reports the
equality multipliers with the convention

    grad f + Jc' y + Jh' lam - z_l + z_u = 0,   lam, z_l, z_u >= 0.

Inequalities get slacks ``h(x) + s = 0, s > 0``; slack and bound
complementarity is handled with a logarithmic barrier whose weight follows a
monotone schedule.  Each Newton step solves the condensed primal-dual system

    [ W + Sigma_x + d I   Jc'      Jh'              ] [dx ]
    [ Jc                  -dc I    0                ] [dy ] = rhs
    [ Jh                  0        -(1/(Sigma_s+d)) ] [dlam]

with a symmetric indefinite (Bunch-Kaufman) factorization; ``d`` is raised
until the matrix has n positive and m + p negative eigenvalues.  Steps obey
the fraction-to-boundary rule and are backtracked on an l1 exact-penalty
merit function of the barrier problem.

Variables with equal bounds are held fixed and removed from the iteration.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lapack
from scipy.optimize import least_squares

from .acopf import NlpProblem

log = logging.getLogger(__name__)

CONVERGED = "converged"
MAX_ITERATIONS = "max-iterations"
INFEASIBLE = "infeasible-detected"


@dataclass(frozen=True)
class SolverOptions:
    tolerance: float = 1e-4
    max_iterations: int = 500
    barrier_init: float = 0.1
    fraction_to_boundary: float = 0.99
    regularization_floor: float = 1e-8
    regularization_max: float = 1e20
    bound_push: float = 1e-2
    bound_frac: float = 1e-2
    barrier_tol_factor: float = 10.0
    objective_scaling: bool = True
    restoration_evaluations: int = 300

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")


@dataclass
class Multipliers:
    eq: np.ndarray
    ineq: np.ndarray
    lower: np.ndarray
    upper: np.ndarray


@dataclass
class NlpSolution:
    x: np.ndarray
    y_eq: np.ndarray
    y_ineq: np.ndarray
    z_lower: np.ndarray
    z_upper: np.ndarray
    status: str
    kkt_residual: float
    iterations: int
    objective: float
    history: list = field(default_factory=list, repr=False)

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED

    @property
    def multipliers(self) -> Multipliers:
        return Multipliers(self.y_eq, self.y_ineq, self.z_lower, self.z_upper)


def _inf_norm(a) -> float:
    return float(np.max(np.abs(a))) if np.size(a) else 0.0


def kkt_blocks(g, c, h, jc, jh, x, lower, upper, mult: Multipliers):
    """Scaled (stationarity, feasibility, complementarity) errors.

    Stationarity is divided by ``1 + |grad f|``, complementarity (which also
    absorbs wrong-signed multipliers) by ``1 +`` the largest inequality or
    bound multiplier; feasibility is left in problem units.
    """
    has_l = np.isfinite(lower)
    has_u = np.isfinite(upper)
    zl = np.where(has_l, mult.lower, 0.0)
    zu = np.where(has_u, mult.upper, 0.0)
    grad_l = g + jc.T @ mult.eq + jh.T @ mult.ineq - zl + zu
    stat = _inf_norm(grad_l) / (1.0 + _inf_norm(g))

    gap_l = np.where(has_l, x - lower, 0.0)
    gap_u = np.where(has_u, upper - x, 0.0)
    feas = max(
        _inf_norm(c),
        _inf_norm(np.maximum(h, 0.0)),
        _inf_norm(np.maximum(-gap_l, 0.0)),
        _inf_norm(np.maximum(-gap_u, 0.0)),
    )

    scale = 1.0 + max(_inf_norm(mult.ineq), _inf_norm(zl), _inf_norm(zu))
    comp = max(
        _inf_norm(mult.ineq * h),
        _inf_norm(zl * gap_l),
        _inf_norm(zu * gap_u),
        _inf_norm(np.minimum(mult.ineq, 0.0)),
        _inf_norm(np.minimum(zl, 0.0)),
        _inf_norm(np.minimum(zu, 0.0)),
    ) / scale
    return stat, feas, comp


def kkt_residual(problem: NlpProblem, point, multipliers: Multipliers) -> float:
    """Scaled KKT infinity-norm of ``point`` with the given multipliers."""
    x = np.asarray(point, dtype=float)
    _, c, h = problem.funcs(x)
    g, jc, jh = problem.grads(x)
    return max(kkt_blocks(g, c, h, jc, jh, x, problem.lower, problem.upper, multipliers))


def _inertia(lu, ipiv):
    """(positive, negative, zero) eigenvalue counts of an LDL' factorization."""
    d = np.diagonal(lu)
    one = ipiv > 0
    pos = int(np.sum(d[one] > 0))
    neg = int(np.sum(d[one] < 0))
    zero = int(np.sum(d[one] == 0))
    starts = np.flatnonzero(~one)[::2]
    if starts.size:
        a, b, cc = d[starts], lu[starts + 1, starts], d[starts + 1]
        det = a * cc - b * b
        pos += int(np.sum(det < 0) + 2 * np.sum((det > 0) & (a > 0)))
        neg += int(np.sum(det < 0) + 2 * np.sum((det > 0) & (a < 0)))
        zero += int(2 * np.sum(det == 0))
    return pos, neg, zero


def _max_step(v, dv, tau):
    """Largest alpha in (0, 1] keeping v + alpha dv >= (1 - tau) v (v > 0)."""
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-tau * v[neg] / dv[neg])))


def _push_inside(x, lo, up, push, frac):
    x = x.copy()
    has_l, has_u = np.isfinite(lo), np.isfinite(up)
    width = np.where(has_l & has_u, up - lo, np.inf)
    pl = np.minimum(push * np.maximum(1.0, np.abs(np.where(has_l, lo, 0.0))), frac * width)
    pu = np.minimum(push * np.maximum(1.0, np.abs(np.where(has_u, up, 0.0))), frac * width)
    x = np.where(has_l, np.maximum(x, lo + pl), x)
    x = np.where(has_u, np.minimum(x, up - pu), x)
    return x


def _restore(problem: NlpProblem, x, free, max_evaluations: int):
    """Least-squares step toward feasibility within the bounds.

    Minimizes |c(x)|^2 + |max(h(x), 0)|^2 over the free variables with a
    bounded trust-region method; returns the improved point.
    """
    lo, up = problem.lower[free], problem.upper[free]
    base = x.copy()

    def point(z):
        xx = base.copy()
        xx[free] = z
        return xx

    def residual(z):
        _, c, h = problem.funcs(point(z))
        return np.concatenate([c, np.maximum(h, 0.0)])

    def jacobian(z):
        xx = point(z)
        _, _, h = problem.funcs(xx)
        _, jc, jh = problem.grads(xx)
        return np.vstack([jc[:, free], jh[:, free] * (h > 0)[:, None]])

    z0 = np.clip(x[free], lo, up)
    fit = least_squares(residual, z0, jac=jacobian, bounds=(lo, up), method="trf", x_scale="jac",
                        max_nfev=max_evaluations)
    return point(fit.x)


def _violation(c, h) -> float:
    return float(np.sqrt(c @ c + np.sum(np.maximum(h, 0.0) ** 2)))


def solve(problem: NlpProblem, start, options: SolverOptions | None = None) -> NlpSolution:
    """Run the interior-point method from ``start``.

    When the primal steps collapse far from feasibility the method switches to
    a restoration phase (bounded least squares on the constraint violation)
    and resumes from its result.
    """
    return _solve(problem, start, options or SolverOptions(), restoration=True)


def _solve(problem: NlpProblem, start, opt: SolverOptions, restoration: bool) -> NlpSolution:
    lo_all = np.asarray(problem.lower, float)
    up_all = np.asarray(problem.upper, float)
    x = np.array(start, dtype=float)
    if x.shape != lo_all.shape:
        raise ValueError(f"start has shape {x.shape}, problem expects {lo_all.shape}")
    n_all, m, p = x.size, problem.n_eq, problem.n_ineq

    fixed = np.isfinite(lo_all) & np.isfinite(up_all) & (up_all - lo_all <= 1e-12 * np.maximum(1.0, np.abs(lo_all)))
    free = np.flatnonzero(~fixed)
    x[fixed] = lo_all[fixed]
    lo, up = lo_all[free], up_all[free]
    has_l, has_u = np.isfinite(lo), np.isfinite(up)
    n = free.size
    x[free] = _push_inside(x[free], lo, up, opt.bound_push, opt.bound_frac)

    f, c, h = problem.funcs(x)
    g, jc, jh = problem.grads(x)
    sigma = 1.0
    if opt.objective_scaling:
        gmax = _inf_norm(g)
        if gmax > 100.0:
            sigma = 100.0 / gmax

    def initial_duals(g, jc, jh, zl, zu, lam):
        if not m:
            return np.zeros(0)
        # least-squares multiplier estimate for the scaled problem
        r = sigma * g[free] + jh[:, free].T @ lam - zl + zu
        y = np.linalg.lstsq(jc[:, free].T, -r, rcond=None)[0]
        return y if np.all(np.isfinite(y)) and _inf_norm(y) <= 1e3 else np.zeros(m)

    s = np.maximum(-h, opt.bound_push * np.maximum(1.0, np.abs(h)))
    zl = np.where(has_l, 1.0, 0.0)
    zu = np.where(has_u, 1.0, 0.0)
    lam = np.ones(p)
    y = initial_duals(g, jc, jh, zl, zu, lam)

    mu = opt.barrier_init
    mu_min = opt.tolerance / 10.0
    tau_min = opt.fraction_to_boundary
    kappa_sigma = 1e10
    delta_last = 0.0
    nu = 1.0
    eta = 1e-4
    short_steps = 0
    restorations = 0
    best = None
    history = []
    status = MAX_ITERATIONS

    def unscaled_mult():
        zl_full = np.zeros(n_all)
        zu_full = np.zeros(n_all)
        zl_full[free] = zl / sigma
        zu_full[free] = zu / sigma
        yy, ll = y / sigma, lam / sigma
        if fixed.any():
            r_fix = (g + jc.T @ yy + jh.T @ ll)[fixed]
            zl_full[fixed] = np.maximum(r_fix, 0.0)
            zu_full[fixed] = np.maximum(-r_fix, 0.0)
        return Multipliers(yy, ll, zl_full, zu_full)

    def merit(xf, sf, phi_mu):
        xx = x.copy()
        xx[free] = xf
        ff, cc, hh = problem.funcs(xx)
        val = sigma * ff - phi_mu * (
            np.sum(np.log(xf[has_l] - lo[has_l])) + np.sum(np.log(up[has_u] - xf[has_u])) + np.sum(np.log(sf))
        )
        viol = np.sum(np.abs(cc)) + np.sum(np.abs(hh + sf))
        return val, viol, (ff, cc, hh)

    it = 0
    for it in range(opt.max_iterations + 1):
        mult = unscaled_mult()
        stat, feas, comp = kkt_blocks(g, c, h, jc, jh, x, lo_all, up_all, mult)
        err = max(stat, feas, comp)
        history.append((it, float(f), err, mu))
        if best is None or err < best[0]:
            best = (err, x.copy(), mult, float(f), it)
        if err <= opt.tolerance:
            status = CONVERGED
            break
        if it == opt.max_iterations:
            break

        xf = x[free]
        gap_l = np.where(has_l, xf - lo, 1.0)
        gap_u = np.where(has_u, up - xf, 1.0)

        # barrier update on the barrier-problem error
        while mu > mu_min:
            comp_mu = max(
                _inf_norm(np.where(has_l, gap_l * zl - mu, 0.0)),
                _inf_norm(np.where(has_u, gap_u * zu - mu, 0.0)),
                _inf_norm(s * lam - mu),
            ) / (1.0 + max(_inf_norm(zl), _inf_norm(zu), _inf_norm(lam)))
            feas_mu = max(_inf_norm(c), _inf_norm(h + s))
            if max(stat, feas_mu, comp_mu) > opt.barrier_tol_factor * mu:
                break
            mu = max(mu_min, min(0.2 * mu, mu**1.5))
        tau = max(tau_min, 1.0 - mu)

        gs = sigma * g[free]
        jcf, jhf = jc[:, free], jh[:, free]
        w = sigma * problem.hess(x, y / sigma, lam / sigma)[np.ix_(free, free)] if n else np.zeros((0, 0))
        sig_x = np.where(has_l, zl / gap_l, 0.0) + np.where(has_u, zu / gap_u, 0.0)
        sig_s = lam / s
        grad_phi = gs - np.where(has_l, mu / gap_l, 0.0) + np.where(has_u, mu / gap_u, 0.0)
        r_x = grad_phi + jcf.T @ y + jhf.T @ lam
        r_s = lam - mu / s

        dim = n + m + p
        base = np.zeros((dim, dim))
        base[:n, :n] = w
        base[n : n + m, :n] = jcf
        base[n + m :, :n] = jhf
        base[:n, n : n + m] = jcf.T
        base[:n, n + m :] = jhf.T
        diag_x = np.arange(n)
        diag_c = n + np.arange(m)
        diag_h = n + m + np.arange(p)

        delta, delta_c = 0.0, 0.0
        solved = None
        while True:
            k = base.copy()
            k[diag_x, diag_x] += sig_x + delta
            k[diag_c, diag_c] -= delta_c
            k[diag_h, diag_h] = -(1.0 / (sig_s + delta) + delta_c)
            lu, ipiv, info = lapack.dsytrf(k, lower=1)
            pos, neg, zero = _inertia(lu, ipiv) if info >= 0 else (0, 0, dim)
            if zero > 0 and delta_c == 0.0 and m:
                delta_c = 1e-8 * mu**0.25
                continue
            if pos == n and neg == m + p and zero == 0:
                rhs = -np.concatenate([r_x, c, h + s - r_s / (sig_s + delta)])
                sol, info2 = lapack.dsytrs(lu, ipiv, rhs, lower=1)
                if info2 == 0 and np.all(np.isfinite(sol)):
                    solved = sol
                    break
            if delta == 0.0:
                delta = opt.regularization_floor if delta_last == 0.0 else max(opt.regularization_floor, delta_last / 3)
            else:
                delta *= 2.0
            if delta > opt.regularization_max:
                break
        if solved is None:
            status = INFEASIBLE
            log.debug("KKT system singular at iteration %d", it)
            break
        if delta > 0:
            delta_last = delta

        dx = solved[:n]
        dy = solved[n : n + m]
        ds = -(r_s + solved[n + m :]) / (sig_s + delta)
        # from the linearized complementarity, like the bound multipliers; equal
        # to the solved block when delta = 0 and kept centered when it is not
        dlam = mu / s - lam - sig_s * ds
        dzl = np.where(has_l, mu / gap_l - zl - zl / gap_l * dx, 0.0)
        dzu = np.where(has_u, mu / gap_u - zu + zu / gap_u * dx, 0.0)

        alpha_p = min(
            _max_step(gap_l[has_l], dx[has_l], tau),
            _max_step(gap_u[has_u], -dx[has_u], tau),
            _max_step(s, ds, tau),
        )
        alpha_d = min(
            _max_step(zl[has_l], dzl[has_l], tau),
            _max_step(zu[has_u], dzu[has_u], tau),
            _max_step(lam, dlam, tau),
        )

        # l1 merit on the barrier problem
        phi0, viol0, _ = merit(xf, s, mu)
        dphi = grad_phi @ dx - mu * np.sum(ds / s)
        if viol0 > 0:
            curv = dx @ ((w + np.diag(sig_x)) @ dx) + ds @ (sig_s * ds)
            nu_trial = (dphi + 0.5 * max(curv, 0.0)) / (0.9 * viol0)
            if nu < nu_trial:
                nu = nu_trial + 1.0
        slope = dphi - nu * viol0
        m0 = phi0 + nu * viol0
        alpha = alpha_p
        accepted = None
        accepted_s = None
        for _ in range(40):
            s_trial = s + alpha * ds
            phi_a, viol_a, vals = merit(xf + alpha * dx, s_trial, mu)
            if p and np.isfinite(phi_a):
                # per row, -mu log s + nu |h + s| is smallest at s = max(-h, mu / nu)
                best_s = np.maximum(np.maximum(-vals[2], mu / nu), (1.0 - tau) * s)
                phi_b, viol_b, _ = merit(xf + alpha * dx, best_s, mu)
                if phi_b + nu * viol_b < phi_a + nu * viol_a:
                    s_trial, phi_a, viol_a = best_s, phi_b, viol_b
            if np.isfinite(phi_a) and phi_a + nu * viol_a <= m0 + eta * alpha * min(slope, 0.0):
                accepted, accepted_s = vals, s_trial
                break
            alpha *= 0.5
        log.debug(
            "%s it %d err %.3g mu %.2g delta %.2g alpha_p %.3g alpha %.3g alpha_d %.3g nu %.3g",
            problem.kind, it, err, mu, delta, alpha_p, alpha, alpha_d, nu,
        )
        short_steps = short_steps + 1 if alpha < 1e-3 else 0
        stuck = accepted is None or short_steps >= 3
        if stuck and restoration and restorations < 5 and _violation(c, h) > opt.tolerance:
            restorations += 1
            short_steps = 0
            before = _violation(c, h)
            x_new = _restore(problem, x, free, opt.restoration_evaluations)
            f_new, c_new, h_new = problem.funcs(x_new)
            if not _violation(c_new, h_new) < 0.9 * before:
                status = INFEASIBLE
                log.debug("restoration stalled at violation %.3g", _violation(c_new, h_new))
                break
            x[free] = _push_inside(x_new[free], lo, up, opt.bound_push, opt.bound_frac)
            f, c, h = problem.funcs(x)
            g, jc, jh = problem.grads(x)
            gap_l = np.where(has_l, x[free] - lo, 1.0)
            gap_u = np.where(has_u, up - x[free], 1.0)
            s = np.maximum(-h, opt.bound_push * np.maximum(1.0, np.abs(h)))
            zl = np.where(has_l, np.minimum(mu / gap_l, 1e3), 0.0)
            zu = np.where(has_u, np.minimum(mu / gap_u, 1e3), 0.0)
            lam = mu / s
            y = initial_duals(g, jc, jh, zl, zu, lam)
            nu = 1.0
            continue
        if accepted is None:
            # no sufficient decrease; take the shortest trial step and go on
            phi_a, viol_a, accepted = merit(xf + alpha * dx, s + alpha * ds, mu)
            if not np.isfinite(phi_a):
                alpha = 0.0
                accepted = (f, c, h)
        x[free] = xf + alpha * dx
        s = accepted_s if accepted_s is not None else s + alpha * ds
        y = y + alpha * dy
        zl = zl + alpha_d * dzl
        zu = zu + alpha_d * dzu
        lam = lam + alpha_d * dlam
        gap_l = np.where(has_l, x[free] - lo, 1.0)
        gap_u = np.where(has_u, up - x[free], 1.0)
        zl = np.where(has_l, np.clip(zl, mu / (kappa_sigma * gap_l), kappa_sigma * mu / gap_l), 0.0)
        zu = np.where(has_u, np.clip(zu, mu / (kappa_sigma * gap_u), kappa_sigma * mu / gap_u), 0.0)
        lam = np.clip(lam, mu / (kappa_sigma * s), kappa_sigma * mu / s)

        f, c, h = accepted
        # slacks never lag far behind a satisfied inequality
        s = np.maximum(s, -h) if p else s
        g, jc, jh = problem.grads(x)

    if status == CONVERGED:
        err, xb, mult, fb, itb = err, x.copy(), unscaled_mult(), float(f), it
    else:
        err, xb, mult, fb, itb = best
    return NlpSolution(
        x=xb,
        y_eq=mult.eq,
        y_ineq=mult.ineq,
        z_lower=mult.lower,
        z_upper=mult.upper,
        status=status,
        kkt_residual=float(err),
        iterations=it,
        objective=fb,
        history=history,
    )
