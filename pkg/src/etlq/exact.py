"""Global solver: enumerate every switching sequence and keep the cheapest."""
from __future__ import annotations

import csv
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import multiprocessing as mp
import numpy as np

from .condensed import (SEQ_FEASIBLE, SEQ_INFEASIBLE, SEQ_MAXITER, SEQ_PRUNED, SEQ_REJECTED,
                        CondensedData, condense)
from .model import (ProblemInstance, Solution, SolverStats, Status, Trajectory, classify,
                    event_set, evaluate_cost, simulate)
from .qp import QpStatus, build_sequence_qp, solve_qp
from .tolerances import Tolerances

CODE_NAMES = {
    SEQ_FEASIBLE: "Feasible",
    SEQ_INFEASIBLE: "Infeasible",
    SEQ_REJECTED: "Rejected",
    SEQ_MAXITER: "MaxIter",
    SEQ_PRUNED: "Pruned",
}


@dataclass(frozen=True, eq=False)
class SequenceTable:
    """Outcome of every sequence, indexed in lexicographic order of ``sigma(1..N-1)``."""

    sigma0: int
    N: int
    labels: int
    codes: np.ndarray
    costs: np.ndarray
    max_violation: np.ndarray

    def sigma(self, idx: int) -> tuple[int, ...]:
        return (self.sigma0,) + index_to_tail(idx, self.N, self.labels)

    def to_csv(self, path, header: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if header:
                for line in header.splitlines():
                    fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(["sigma", "status", "cost", "max_violation"])
            for idx in range(self.codes.size):
                sig = " ".join(str(s) for s in self.sigma(idx))
                w.writerow([sig, CODE_NAMES[int(self.codes[idx])], repr(float(self.costs[idx])),
                            repr(float(self.max_violation[idx]))])


@dataclass(frozen=True, eq=False)
class EnumerationReport:
    best: Solution
    total_sequences: int
    feasible_count: int
    infeasible_count: int
    rejected_count: int
    pruned_count: int
    maxiter_count: int
    qp_count: int
    tol_feas: float
    per_sequence: SequenceTable | None = None

    def summary(self) -> dict:
        return {
            "total_sequences": self.total_sequences,
            "feasible": self.feasible_count,
            "infeasible": self.infeasible_count,
            "rejected": self.rejected_count,
            "pruned": self.pruned_count,
            "maxiter": self.maxiter_count,
            "qp_count": self.qp_count,
            "tol_feas": self.tol_feas,
        }


def index_to_tail(idx: int, N: int, labels: int) -> tuple[int, ...]:
    """Labels ``sigma(1..N-1)`` of sequence ``idx`` (``sigma(1)`` most significant)."""
    out = []
    for _ in range(N - 1):
        idx, r = divmod(idx, labels)
        out.append(r)
    return tuple(reversed(out))


def _trigger_ok(cd: CondensedData, u: np.ndarray, eps: float, tol: Tolerances) -> bool:
    X = cd.xf + cd.Gam @ u.ravel()
    quiet = np.max(np.abs(X[:-1]), axis=1) < eps - tol.tol_strict
    return not np.any(quiet & (np.max(np.abs(u), axis=1) > tol.tol_zero))


def _enumerate_chunk(cd: CondensedData, sigma0: int, eps: float, lo: int, hi: int,
                     prune: bool, tol: Tolerances):
    N, L = cd.N, 2 * cd.n + 1
    size = hi - lo
    codes = np.empty(size, np.int8)
    costs = np.full(size, np.inf)
    viol = np.zeros(size)
    qps = 0
    # block[d] = number of completions sharing the prefix sigma(0..d)
    block = [L ** (N - 1 - d) for d in range(N)]
    idx = lo
    while idx < hi:
        tail = index_to_tail(idx, N, L)
        sigma = (sigma0,) + tail
        if prune:
            cut = None
            for depth in range(1, N - 1):
                if idx % block[depth] == 0 or idx == lo:
                    probe = sigma[: depth + 1] + (-1,) * (N - 1 - depth)
                    code, _, v, _, _ = cd.solve(probe, tol)
                    qps += 1
                    if code == SEQ_INFEASIBLE:
                        cut = (min((idx // block[depth] + 1) * block[depth], hi), v)
                        break
            if cut is not None:
                end, v = cut
                codes[idx - lo: end - lo] = SEQ_PRUNED
                viol[idx - lo: end - lo] = v
                idx = end
                continue
        code, cost, v, _, u = cd.solve(sigma, tol)
        qps += 1
        if code == SEQ_FEASIBLE and not _trigger_ok(cd, u, eps, tol):
            code = SEQ_REJECTED
        codes[idx - lo] = code
        if code == SEQ_FEASIBLE:
            costs[idx - lo] = cost
        viol[idx - lo] = v
        idx += 1
    return codes, costs, viol, qps


_WORKER = {}


def _worker_init(cd, sigma0, eps, prune, tol):
    _WORKER.update(cd=cd, sigma0=sigma0, eps=eps, prune=prune, tol=tol)


def _worker_run(bounds):
    w = _WORKER
    return _enumerate_chunk(w["cd"], w["sigma0"], w["eps"], bounds[0], bounds[1], w["prune"], w["tol"])


def _chunks(total: int, N: int, labels: int, workers: int) -> list[tuple[int, int]]:
    # chunk edges sit on whole sigma(1) blocks so pruning probes do not depend on the split
    unit = labels ** max(N - 2, 0)
    if workers <= 1 or total <= unit:
        return [(0, total)]
    units = total // unit
    per = max(1, -(-units // (4 * workers)))
    return [(a * unit, min((a + per) * unit, total)) for a in range(0, units, per)]


def default_workers() -> int:
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:
        return max(1, os.cpu_count() or 1)


def solve_exact(inst: ProblemInstance, workers: int | None = 1, prune: bool = False,
                keep_table: bool = False) -> EnumerationReport:
    """Solve every sequence and return the cheapest feasible one.

    ``prune`` skips all completions of a prefix whose relaxation (later steps
    left free) is infeasible; the answer is unchanged, only counts move from
    Infeasible to Pruned.  Results do not depend on ``workers``.
    """
    t_start = time.perf_counter()
    tol = inst.tol
    cd = condense(inst)
    L = 2 * inst.n + 1
    sigma0 = classify(inst.x0, inst.regions, tol.tol_mem)
    total = L ** (inst.N - 1)
    workers = default_workers() if workers is None else max(1, int(workers))
    chunks = _chunks(total, inst.N, L, workers)
    if len(chunks) == 1 or workers == 1:
        parts = [_enumerate_chunk(cd, sigma0, inst.eps, lo, hi, prune, tol) for lo, hi in chunks]
    else:
        ctx = mp.get_context("fork") if "fork" in mp.get_all_start_methods() else None
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx, initializer=_worker_init,
                                 initargs=(cd, sigma0, inst.eps, prune, tol)) as ex:
            parts = list(ex.map(_worker_run, chunks))
    codes = np.concatenate([p[0] for p in parts])
    costs = np.concatenate([p[1] for p in parts])
    viol = np.concatenate([p[2] for p in parts])
    qps = sum(p[3] for p in parts)
    counts = np.bincount(codes, minlength=5)

    best = _pick_best(inst, cd, sigma0, costs, tol, qps, time.perf_counter() - t_start)
    table = SequenceTable(sigma0, inst.N, L, codes, costs, viol) if keep_table else None
    return EnumerationReport(
        best=best,
        total_sequences=total,
        feasible_count=int(counts[SEQ_FEASIBLE]),
        infeasible_count=int(total - counts[SEQ_FEASIBLE]),
        rejected_count=int(counts[SEQ_REJECTED]),
        pruned_count=int(counts[SEQ_PRUNED]),
        maxiter_count=int(counts[SEQ_MAXITER]),
        qp_count=int(qps),
        tol_feas=tol.tol_feas,
        per_sequence=table,
    )


def _pick_best(inst, cd, sigma0, costs, tol, qps, elapsed) -> Solution:
    L = 2 * inst.n + 1
    finite = np.isfinite(costs)
    if not finite.any():
        stats = SolverStats(qp_count=qps, wall_time=elapsed)
        return Solution.failed(Status.INFEASIBLE, (sigma0,), stats)
    # argmin takes the first index, so equal costs go to the lexicographically smallest sequence
    idx = int(np.argmin(costs))
    sigma = (sigma0,) + index_to_tail(idx, inst.N, L)
    _, _, _, it, u = cd.solve(sigma, tol)
    traj = simulate(inst, u)
    stats = SolverStats(qp_count=qps + 1, iterations=int(it), wall_time=elapsed)
    return Solution(traj, evaluate_cost(inst, traj), sigma, event_set(sigma), Status.OPTIMAL, stats)


def solve_for_sequence(inst: ProblemInstance, sigma) -> Solution:
    """Solve the QP of one switching sequence in the state-input form."""
    t0 = time.perf_counter()
    p = build_sequence_qp(inst, sigma)
    res = solve_qp(p, tol=inst.tol)
    sigma = tuple(int(s) for s in sigma)
    stats = SolverStats(qp_count=1, iterations=res.iterations, wall_time=time.perf_counter() - t0)
    if res.status is QpStatus.INFEASIBLE:
        return Solution.failed(Status.INFEASIBLE, sigma, stats)
    if res.status is not QpStatus.OPTIMAL:
        return Solution.failed(Status.NO_CONVERGENCE, sigma, stats)
    X, U = p.layout.split(res.z)
    traj = simulate(inst, U)
    return Solution(traj, evaluate_cost(inst, traj), sigma, event_set(sigma), Status.FEASIBLE, stats)


def trajectory_from_inputs(inst: ProblemInstance, inputs) -> Trajectory:
    return simulate(inst, inputs)
