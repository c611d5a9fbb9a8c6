"""Independent oracles shared by the test modules."""

import numpy as np

from acopf_escape.acopf import Layout


def random_point(problem, rng, angle=0.5):
    """Random x: angles in +-angle, everything else uniform within its bounds."""
    lay: Layout = problem.layout
    x = np.empty(problem.n)
    x[lay.theta] = rng.uniform(-angle, angle, lay.n_bus - 1)
    lo, up = problem.lower.copy(), problem.upper.copy()
    sl = slice(lay.v.start, problem.n)
    lo[sl] = np.where(np.isfinite(lo[sl]), lo[sl], -1.0)
    up[sl] = np.where(np.isfinite(up[sl]), up[sl], 1.0)
    x[sl] = rng.uniform(lo[sl], up[sl])
    return x


def _rel(analytic, numeric):
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic)), initial=0.0))


def fd_errors(problem, x, y, lam, h=1e-6):
    """Worst entry-wise relative error of (first, second) derivatives.

    First order covers grad f, Jc and Jh; second order the Hessian of
    f + y.c + lam.h, differenced from the analytic gradient of the same sum.
    """
    n = problem.n
    g, jc, jh = problem.grads(x)
    jac = np.vstack([g[None, :], jc, jh])
    num = np.empty_like(jac)
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        fp, cp, hp = problem.funcs(x + e)
        fm, cm, hm = problem.funcs(x - e)
        num[:, j] = np.concatenate([[fp - fm], cp - cm, hp - hm]) / (2 * h)

    def lag_grad(z):
        gz, jcz, jhz = problem.grads(z)
        return gz + jcz.T @ y + jhz.T @ lam

    w = problem.hess(x, y, lam)
    num_w = np.empty_like(w)
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        num_w[:, j] = (lag_grad(x + e) - lag_grad(x - e)) / (2 * h)
    return _rel(jac, num), _rel(w, num_w)


def polish(problem, x, iterations=8):
    """Project ``x`` onto c(x) = 0 with minimum-norm Gauss-Newton steps.

    Converged solves are balanced only to the solver tolerance; this yields
    points feasible to round-off for identities that hold exactly at
    feasibility.
    """
    x = np.array(x, dtype=float)
    for _ in range(iterations):
        _, c, _ = problem.funcs(x)
        if np.max(np.abs(c)) <= 1e-14:
            break
        _, jc, _ = problem.grads(x)
        x -= np.linalg.lstsq(jc, c, rcond=None)[0]
    return x


def independent_kkt(problem, x, y, lam, z_lower, z_upper):
    """Scaled KKT infinity-norm, written from the definitions.

    Stationarity of f + y.c + lam.h - z_l.(x - l) + z_u.(u - x) over
    1 + |grad f|, raw primal infeasibility, and complementarity (including
    sign violations) over 1 + the largest inequality or bound multiplier.
    """
    f, c, h = problem.funcs(x)
    g, jc, jh = problem.grads(x)
    lo, up = problem.lower, problem.upper
    zl = np.where(np.isfinite(lo), z_lower, 0.0)
    zu = np.where(np.isfinite(up), z_upper, 0.0)
    stat = np.abs(g + jc.T @ y + jh.T @ lam - zl + zu).max(initial=0.0) / (1 + np.abs(g).max(initial=0.0))
    gap_l = np.where(np.isfinite(lo), x - lo, 0.0)
    gap_u = np.where(np.isfinite(up), up - x, 0.0)
    feas = max(np.abs(c).max(initial=0.0), h.max(initial=0.0), (-gap_l).max(initial=0.0), (-gap_u).max(initial=0.0))
    scale = 1 + max(np.abs(lam).max(initial=0.0), np.abs(zl).max(initial=0.0), np.abs(zu).max(initial=0.0))
    comp = max(
        np.abs(lam * h).max(initial=0.0),
        np.abs(zl * gap_l).max(initial=0.0),
        np.abs(zu * gap_u).max(initial=0.0),
        (-lam).max(initial=0.0),
        (-zl).max(initial=0.0),
        (-zu).max(initial=0.0),
    ) / scale
    return max(stat, feas, comp)


# acceptance verdicts, printed in the terminal summary
VERDICTS: dict[int, str] = {}
