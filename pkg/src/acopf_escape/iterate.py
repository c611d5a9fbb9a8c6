"""Escape loop: primal solve, partial-Lagrangian solve, warm re-solve.

One outer iteration from start point ``x0``:

1. solve the ACOPF from ``x0`` and read the balance prices;
2. minimize the partial Lagrangian built from those prices, again from ``x0``;
3. re-solve the ACOPF from the (theta, V) of step 2;
4. keep the re-solve as the next start only if it is strictly cheaper.

The loop ends at the first rejection (the next iteration would repeat it
exactly), when the accepted point stops moving, or after ``max_outer``
iterations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .acopf import DualPrices, Layout, assemble_partial_lagrangian, assemble_primal, start_to_point, warm_point
from .caseio import CaseData, StartPoint, solution_record
from .ipm import NlpSolution, SolverOptions, solve
from .network import NetworkModel

STATIONARY = "converged-stationary"
MAX_OUTER = "max-iterations"
NO_IMPROVEMENT = "no-improvement"
PRIMAL_FAILED = "primal-failed"


@dataclass(frozen=True)
class IterateOptions:
    max_outer: int = 10
    margin: float = 1e-8
    stall_tolerance: float = 1e-6
    paper_model: bool = False


@dataclass
class IterationRecord:
    index: int
    primal: NlpSolution
    duals: DualPrices | None
    lagrangian: NlpSolution | None
    resolve: NlpSolution | None
    accepted: bool
    objective_before: float
    objective_after: float


@dataclass
class IterationReport:
    records: list[IterationRecord]
    final: NlpSolution
    stop_reason: str
    layout: Layout = field(repr=False, default=None)

    @property
    def initial_objective(self) -> float:
        return self.records[0].primal.objective if self.records else float("nan")

    @property
    def initially_converged(self) -> bool:
        return bool(self.records) and self.records[0].primal.converged

    def running_best(self, k: int) -> float:
        """Best objective held after ``k`` outer iterations (k = 0: first solve)."""
        best = self.initial_objective
        for rec in self.records[:k]:
            if rec.accepted:
                best = min(best, rec.objective_after)
        return best

    def accepted_objectives(self) -> list[float]:
        out = [self.initial_objective]
        out += [r.objective_after for r in self.records if r.accepted]
        return out


def compare_accept(previous: NlpSolution, candidate: NlpSolution, margin: float = 1e-8) -> bool:
    return bool(candidate.converged and candidate.objective < previous.objective - margin)


def _vtheta(layout: Layout, x) -> np.ndarray:
    theta, v, _, _ = layout.split(x)
    return np.concatenate([theta, v])


def run(
    case: CaseData,
    start: StartPoint,
    max_outer: int = 10,
    solver: SolverOptions | None = None,
    options: IterateOptions | None = None,
) -> IterationReport:
    opts = options or IterateOptions(max_outer=max_outer)
    if max_outer != opts.max_outer and options is not None:
        opts = IterateOptions(max_outer, opts.margin, opts.stall_tolerance, opts.paper_model)
    if opts.max_outer < 1:
        raise ValueError("max_outer must be at least 1")
    solver = solver or SolverOptions()
    if start.theta.size != case.n_bus or start.v.size != case.n_bus:
        raise ValueError("start point does not match the case dimensions")

    primal = assemble_primal(case, paper_model=opts.paper_model)
    layout = primal.layout
    model = NetworkModel(case)
    x_start = start_to_point(case, start, model)
    records: list[IterationRecord] = []
    final = None
    reason = MAX_OUTER

    sol_a = None
    for i in range(opts.max_outer):
        if sol_a is None:
            sol_a = solve(primal, x_start, solver)
        if not sol_a.converged:
            records.append(IterationRecord(i, sol_a, None, None, None, False, sol_a.objective, float("nan")))
            final = final or sol_a
            reason = PRIMAL_FAILED
            break
        final = sol_a
        duals = DualPrices.from_equality_duals(sol_a.y_eq, case.n_bus)
        lagr = assemble_partial_lagrangian(case, duals, paper_model=opts.paper_model)
        sol_c = solve(lagr, x_start, solver)
        theta_bar, v_bar, _, _ = layout.split(sol_c.x)
        sol_d = solve(primal, warm_point(case, theta_bar, v_bar, model), solver)
        accepted = compare_accept(sol_a, sol_d, opts.margin)
        records.append(IterationRecord(i, sol_a, duals, sol_c, sol_d, accepted, sol_a.objective, sol_d.objective))
        if not accepted:
            reason = NO_IMPROVEMENT
            break
        final = sol_d
        moved = np.max(np.abs(_vtheta(layout, sol_d.x) - _vtheta(layout, sol_a.x)))
        if moved <= opts.stall_tolerance:
            reason = STATIONARY
            break
        theta_hat, v_hat, _, _ = layout.split(sol_d.x)
        x_start = warm_point(case, theta_hat, v_hat, model)
        # already a converged solve from x_start; solving again would only
        # wander inside the tolerance and break the objective chain
        sol_a = sol_d
    return IterationReport(records, final, reason, layout)


def report_record(report: IterationReport, case: CaseData) -> dict:
    iters = []
    for r in report.records:
        item = {
            "iteration": r.index,
            "accepted": r.accepted,
            "objective_before": r.objective_before,
            "objective_after": r.objective_after,
            "primal_status": r.primal.status,
        }
        if r.duals is not None:
            item["mu_p"] = [float(t) for t in r.duals.mu_p]
            item["mu_q"] = [float(t) for t in r.duals.mu_q]
        if r.lagrangian is not None:
            theta, v, _, _ = report.layout.split(r.lagrangian.x)
            item["lagrangian_status"] = r.lagrangian.status
            item["lagrangian_objective"] = r.lagrangian.objective
            item["lagrangian_theta"] = [float(t) for t in theta]
            item["lagrangian_v"] = [float(t) for t in v]
        if r.resolve is not None:
            item["resolve_status"] = r.resolve.status
        iters.append(item)
    return {
        "case": case.name,
        "stop_reason": report.stop_reason,
        "iterations": iters,
        "final": solution_record(report.final, case),
    }


def write_report(report: IterationReport, case: CaseData) -> str:
    return json.dumps(report_record(report, case), indent=1)
