"""Greedy heuristic: fix one region label per step, growing the horizon."""
from __future__ import annotations

import time

import numpy as np

from .condensed import SEQ_FEASIBLE, condense
from .model import (ProblemInstance, Solution, SolverStats, Status, check_trigger_consistency,
                    classify, event_set, evaluate_cost, simulate)

TAILS = ("truncated", "free")


def solve_greedy(inst: ProblemInstance, tail: str = "truncated") -> Solution:
    """Choose ``sigma(1), ..., sigma(N-1)`` one at a time.

    At step ``k`` every label ``p`` for ``sigma(k-1)`` is tried on a
    subproblem and the cheapest feasible one is kept (lowest ``p`` on ties).
    With ``tail="truncated"`` the subproblem has horizon ``k`` and terminal
    weight P at ``x(k)``; with ``tail="free"`` it keeps the full horizon and
    leaves the later steps unconstrained.  Uses ``(2n+1)(N-1)`` subproblem
    QPs plus one final full-horizon solve.
    """
    if tail not in TAILS:
        raise ValueError(f"tail must be one of {TAILS}, got {tail!r}")
    t0 = time.perf_counter()
    tol = inst.tol
    N, L = inst.N, 2 * inst.n + 1
    sigma = [classify(inst.x0, inst.regions, tol.tol_mem)]
    qps = iters = 0
    full = condense(inst)
    for k in range(2, N + 1):
        if tail == "truncated":
            cd = full if k == N else condense(inst.replace(N=k))
            pad = ()
        else:
            cd = full
            pad = (-1,) * (N - k)
        best_p, best_cost = -1, np.inf
        for p in range(L):
            code, cost, _, it, _ = cd.solve(tuple(sigma) + (p,) + pad, tol)
            qps += 1
            iters += it
            if code == SEQ_FEASIBLE and (best_p < 0 or cost < best_cost - tol.tol_cost * max(1.0, abs(best_cost))):
                best_p, best_cost = p, cost
        if best_p < 0:
            stats = SolverStats(qp_count=qps, iterations=iters, wall_time=time.perf_counter() - t0)
            return Solution.failed(Status.INFEASIBLE, sigma, stats)
        sigma.append(best_p)

    code, cost, _, it, u = full.solve(tuple(sigma), tol)
    qps += 1
    iters += it
    stats = SolverStats(qp_count=qps, iterations=iters, wall_time=time.perf_counter() - t0)
    if code != SEQ_FEASIBLE:
        return Solution.failed(Status.INFEASIBLE, sigma, stats)
    traj = simulate(inst, u)
    ok, _ = check_trigger_consistency(inst, traj, tol)
    if not ok:
        return Solution.failed(Status.INFEASIBLE, sigma, stats)
    sigma = tuple(sigma)
    return Solution(traj, evaluate_cost(inst, traj), sigma, event_set(sigma), Status.FEASIBLE, stats)
