"""Multi-start ensembles, solution clustering and the 1-D grid oracle.

"Global" in an ensemble means best-known: within a relative tolerance of the
lowest objective any converged ACOPF solve in the ensemble reached.  It is
not a certificate.  Only the two-bus case admits an exhaustive check, done by
:func:`grid_certify_twobus`.

Random starts use numpy's PCG64.  The stream layout is: one
``SeedSequence(seed)`` spawns ``n_starts`` children in order; child ``i``
draws, for start ``i``, first V (uniform in each bus's voltage limits, bus
order) and then theta (uniform in ``angle_range`` for each non-reference bus,
bus order).  Start ``i`` therefore does not depend on how many starts are
drawn or in which order they are processed.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .acopf import Layout, wrap_angle
from .caseio import CaseData, StartPoint
from .ipm import NlpSolution, SolverOptions
from .iterate import IterateOptions, IterationReport, run
from .twobus import TwoBusParams, balance_residual, objective


@dataclass
class Cluster:
    representative: np.ndarray  # stacked (theta, V)
    objective: float
    members: int


@dataclass
class EnsembleReport:
    n_starts: int
    runs: list[IterationReport]
    clusters: list[Cluster]
    best_objective: float
    fraction_global_after_k: list[float]
    n_converged: int
    n_failed: int
    global_tolerance: float = 1e-4
    seed: int | None = None

    def is_global(self, value: float) -> bool:
        return _near_best(value, self.best_objective, self.global_tolerance)

    def to_record(self) -> dict:
        return {
            "n_starts": self.n_starts,
            "seed": self.seed,
            "best_known_objective": self.best_objective,
            "global_tolerance": self.global_tolerance,
            "n_converged": self.n_converged,
            "n_failed": self.n_failed,
            "fraction_global_after_k": self.fraction_global_after_k,
            "clusters": [
                {"objective": c.objective, "members": c.members, "point": [float(t) for t in c.representative]}
                for c in self.clusters
            ],
            "runs": [
                {
                    "stop_reason": r.stop_reason,
                    "objectives": [rec.objective_before for rec in r.records[:1]]
                    + [rec.objective_after for rec in r.records],
                    "accepted": [rec.accepted for rec in r.records],
                }
                for r in self.runs
            ],
        }


def _near_best(value: float, best: float, rtol: float) -> bool:
    return value - best <= rtol * max(abs(best), 1e-12)


def _angle_distance(a, b, n_bus: int) -> float:
    d = np.abs(a - b)
    d[:n_bus] = np.abs(wrap_angle(d[:n_bus]))
    return float(np.max(d)) if d.size else 0.0


def cluster_solutions(solutions, layout: Layout | None = None, tol: float = 1e-3) -> list[Cluster]:
    """Greedy clustering by (theta, V) infinity-norm distance.

    ``solutions`` holds either :class:`NlpSolution` objects (``layout``
    required) or ``(point, objective)`` pairs whose point is already stacked
    ``(theta_full, V)``.  Angles are compared modulo 2 pi.  Candidates are
    visited cheapest first, so each representative is its cluster's lowest
    objective member.
    """
    items = []
    for s in solutions:
        if isinstance(s, NlpSolution):
            theta, v, _, _ = layout.split(s.x)
            items.append((np.concatenate([wrap_angle(theta), v]), float(s.objective)))
        else:
            point, obj = s
            items.append((np.asarray(point, float), float(obj)))
    n_bus = items[0][0].size // 2 if items else 0
    order = sorted(range(len(items)), key=lambda i: (items[i][1], i))
    clusters: list[Cluster] = []
    for i in order:
        point, obj = items[i]
        for c in clusters:
            if _angle_distance(point, c.representative, n_bus) <= tol:
                c.members += 1
                break
        else:
            clusters.append(Cluster(point, obj, 1))
    return clusters


def random_starts(case: CaseData, n_starts: int, seed: int, angle_range=(-math.pi, math.pi)) -> list[StartPoint]:
    children = np.random.SeedSequence(seed).spawn(n_starts)
    v_lo = np.array([b.v_min for b in case.buses])
    v_hi = np.array([b.v_max for b in case.buses])
    ref = case.reference_index
    starts = []
    for child in children:
        rng = np.random.Generator(np.random.PCG64(child))
        v = rng.uniform(v_lo, v_hi)
        theta = np.insert(rng.uniform(angle_range[0], angle_range[1], case.n_bus - 1), ref, 0.0)
        starts.append(StartPoint(theta=theta, v=v))
    return starts


def _run_one(args):
    case, start, solver, options = args
    return run(case, start, options.max_outer, solver, options)


def multistart(
    case: CaseData,
    n_starts: int,
    rng_seed: int,
    max_outer: int = 10,
    solver: SolverOptions | None = None,
    options: IterateOptions | None = None,
    angle_range=(-math.pi, math.pi),
    global_tolerance: float = 1e-4,
    cluster_tolerance: float = 1e-3,
    jobs: int = 1,
) -> EnsembleReport:
    """Run the escape loop from ``n_starts`` seeded random starts."""
    if n_starts < 1:
        raise ValueError("n_starts must be at least 1")
    solver = solver or SolverOptions()
    if options is None:
        options = IterateOptions(max_outer=max_outer)
    starts = random_starts(case, n_starts, rng_seed, angle_range)
    tasks = [(case, s, solver, options) for s in starts]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            runs = list(pool.map(_run_one, tasks))  # map keeps start order
    else:
        runs = [_run_one(t) for t in tasks]
    return summarize(runs, options.max_outer, global_tolerance, cluster_tolerance, seed=rng_seed)


def summarize(runs, max_outer: int, global_tolerance: float = 1e-4, cluster_tolerance: float = 1e-3, seed=None):
    found = []
    layout = None
    for r in runs:
        layout = layout or r.layout
        for rec in r.records:
            for sol in (rec.primal, rec.resolve):
                if sol is not None and sol.converged:
                    found.append(sol)
    clusters = cluster_solutions(found, layout, cluster_tolerance) if found else []
    best = min((c.objective for c in clusters), default=float("nan"))
    ok = [r for r in runs if r.initially_converged]
    fractions = []
    for k in range(max_outer + 1):
        if not ok:
            fractions.append(float("nan"))
            continue
        hits = sum(_near_best(r.running_best(k), best, global_tolerance) for r in ok)
        fractions.append(hits / len(ok))
    return EnsembleReport(
        n_starts=len(runs),
        runs=list(runs),
        clusters=clusters,
        best_objective=best,
        fraction_global_after_k=fractions,
        n_converged=len(ok),
        n_failed=len(runs) - len(ok),
        global_tolerance=global_tolerance,
        seed=seed,
    )


def ensemble_csv(report: EnsembleReport) -> str:
    """One row per start per outer iteration (iteration 0 is the first solve)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["start", "iteration", "objective", "accepted", "distance_to_best", "status"])
    best = report.best_objective
    for i, r in enumerate(report.runs):
        if not r.records:
            continue
        first = r.records[0].primal
        w.writerow([i, 0, repr(first.objective), True, repr(first.objective - best), first.status])
        for rec in r.records:
            if rec.resolve is None:
                continue
            w.writerow([i, rec.index + 1, repr(rec.objective_after), rec.accepted,
                        repr(rec.objective_after - best), rec.resolve.status])
    return buf.getvalue()


def cluster_csv(report: EnsembleReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["cluster", "objective", "members", "is_best_known"])
    for i, c in enumerate(report.clusters):
        w.writerow([i, repr(c.objective), c.members, report.is_global(c.objective)])
    return buf.getvalue()


def write_ensemble(report: EnsembleReport) -> str:
    return json.dumps(report.to_record(), indent=1)


# --------------------------------------------------------------------------
# exhaustive 1-D oracle

@dataclass(frozen=True)
class GridCertificate:
    feasible: bool
    roots: tuple[float, ...] = ()
    theta_star: float = float("nan")
    objective: float = float("nan")
    objectives: tuple[float, ...] = field(default=())


def _bisect(fn, a, b, fa, tol=1e-12):
    while b - a > tol:
        mid = 0.5 * (a + b)
        fm = fn(mid)
        if fm == 0.0:
            return mid
        if (fm > 0) == (fa > 0):
            a, fa = mid, fm
        else:
            b = mid
    return 0.5 * (a + b)


def grid_certify_twobus(g: float, b: float, l: float, resolution: float = 1e-6) -> GridCertificate:
    """All roots of the two-bus balance on (-pi, pi] and the cheapest one.

    Sign changes of the residual on the grid are refined by bisection.  A
    tangent root (load at the feasibility limit) produces no sign change and
    is picked up as a grid minimum of |residual| that refines to zero.
    """
    params = TwoBusParams(g=g, b=b, l=l)
    if l > params.max_load + 1e-12:
        return GridCertificate(False)
    fn = lambda t: float(balance_residual(t, params))
    n = int(math.ceil(2 * math.pi / resolution))
    theta = -math.pi + 2 * math.pi * np.arange(n + 1) / n
    r = balance_residual(theta, params)
    roots = []
    change = np.flatnonzero(np.sign(r[:-1]) * np.sign(r[1:]) < 0)
    for i in change:
        roots.append(_bisect(fn, theta[i], theta[i + 1], r[i]))
    roots += [float(t) for t in theta[np.flatnonzero(r == 0.0)]]
    if not roots:
        # tangency: the residual touches zero at its minimum
        i = int(np.argmin(np.abs(r)))
        peak = math.atan2(b, g)  # maximizer of g cos t + b sin t
        if abs(fn(peak)) <= 1e-10:
            roots.append(peak)
        elif abs(r[i]) <= 1e-10:
            roots.append(float(theta[i]))
    roots = sorted({float(wrap_angle(t)) for t in roots})
    if not roots:
        return GridCertificate(False)
    objs = [float(objective(t, params)) for t in roots]
    k = int(np.argmin(objs))
    return GridCertificate(True, tuple(roots), roots[k], objs[k], tuple(objs))
