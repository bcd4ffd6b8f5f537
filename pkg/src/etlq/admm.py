"""ADMM heuristic on the non-convex trigger constraint, followed by QP polishing."""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .condensed import SEQ_FEASIBLE, condense
from .model import (ProblemInstance, Solution, SolverStats, Status, check_trigger_consistency,
                    classify, event_set, evaluate_cost, simulate)
from .qp import KktCache, kkt_factorize, kkt_solve

# step sizes used for the benchmark thresholds and for receding-horizon runs
RHO_PROFILES = {0.2: 9.8, 0.4: 5.8, 0.6: 6.9}
RHO_RHC = 4.8


@dataclass(frozen=True)
class AdmmConfig:
    rho: float = 9.8
    max_iter: int = 300
    eps_tol: float = 1e-4
    adapt: bool = True
    max_doublings: int = 4
    seed: int = 0
    sigma0: float = 1.0
    restarts: int = 1

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if not self.eps_tol > 0:
            raise ValueError(f"eps_tol must be positive, got {self.eps_tol}")
        if self.max_iter < 1 or self.restarts < 1 or self.max_doublings < 0:
            raise ValueError("max_iter and restarts must be >= 1, max_doublings >= 0")
        if not self.sigma0 >= 0:
            raise ValueError(f"sigma0 must be non-negative, got {self.sigma0}")


def rho_for_eps(eps: float) -> float:
    """Step size of the nearest benchmark threshold."""
    key = min(RHO_PROFILES, key=lambda e: abs(e - eps))
    return RHO_PROFILES[key]


@dataclass
class AdmmState:
    """Iterate ``z = (x(0..N), u(0..N-1))``, scaled dual for the ``[G; I]`` rows, best point."""

    z: np.ndarray
    u_dual: np.ndarray
    z_best: np.ndarray | None = None
    f_best: float = np.inf
    iter: int = 0
    primal_residuals: list = field(default_factory=list)
    best_residual: float = np.inf
    z_min_residual: np.ndarray | None = None
    diverged: bool = False


@dataclass(frozen=True, eq=False)
class AdmmData:
    F: np.ndarray
    G: np.ndarray
    h: np.ndarray
    n: int
    m: int
    N: int
    eps: float
    rho: float
    kkt: KktCache
    GI: np.ndarray  # [G; I]


def build_admm_data(inst: ProblemInstance):
    """Return ``(F, G, h)`` for ``min 0.5 z'Fz  s.t.  G z = h``.

    ``G`` holds the N dynamics rows ``A x(t) - x(t+1) + B u(t) = 0`` followed
    by n rows pinning ``x(0) = x0``.
    """
    n, m, N = inst.n, inst.m, inst.N
    nx = n * (N + 1)
    d = nx + m * N
    F = np.zeros((d, d))
    for t in range(N + 1):
        F[t * n:(t + 1) * n, t * n:(t + 1) * n] = inst.P if t == N else inst.Q
    for t in range(N):
        F[nx + t * m: nx + (t + 1) * m, nx + t * m: nx + (t + 1) * m] = inst.R
    G = np.zeros((n * N + n, d))
    for t in range(N):
        r = t * n
        G[r:r + n, t * n:(t + 1) * n] = inst.A
        G[r:r + n, (t + 1) * n:(t + 2) * n] = -np.eye(n)
        G[r:r + n, nx + t * m: nx + (t + 1) * m] = inst.B
    G[n * N:, :n] = np.eye(n)
    h = np.zeros(n * N + n)
    h[n * N:] = inst.x0
    return F, G, h


def prepare(inst: ProblemInstance, rho: float) -> AdmmData:
    F, G, h = build_admm_data(inst)
    d = F.shape[0]
    M = F + rho * (G.T @ G + np.eye(d))
    return AdmmData(F=F, G=G, h=h, n=inst.n, m=inst.m, N=inst.N, eps=inst.eps, rho=rho,
                    kkt=kkt_factorize(M), GI=np.vstack([G, np.eye(d)]))


def project(v: np.ndarray, n: int, m: int, N: int, eps: float) -> np.ndarray:
    """Zero the input of every step whose state block is strictly inside the box."""
    out = v.copy()
    nx = n * (N + 1)
    X = v[: nx - n].reshape(N, n)
    quiet = np.max(np.abs(X), axis=1) < eps
    U = out[nx:].reshape(N, m)
    U[quiet] = 0.0
    return out


def initial_state(data: AdmmData, cfg: AdmmConfig, restart: int = 0) -> AdmmState:
    rng = np.random.default_rng([cfg.seed, restart])
    d = data.F.shape[0]
    z0 = cfg.sigma0 * rng.standard_normal(d)
    return AdmmState(z=z0, u_dual=np.zeros(data.GI.shape[0]))


def half_step(data: AdmmData, z: np.ndarray, u_dual: np.ndarray) -> np.ndarray:
    """Minimizer of the augmented Lagrangian in z."""
    target = np.concatenate([data.h, z]) - u_dual
    return kkt_solve(data.kkt, data.rho * (data.GI.T @ target))


def admm_iterate(state: AdmmState, data: AdmmData, cfg: AdmmConfig) -> AdmmState:
    """One iteration: z half-step, projection, dual ascent, best-point bookkeeping."""
    ng = data.G.shape[0]
    zh = half_step(data, state.z, state.u_dual)
    z_new = project(zh + state.u_dual[ng:], data.n, data.m, data.N, data.eps)
    r = data.GI @ zh - np.concatenate([data.h, z_new])
    state.u_dual = state.u_dual + r
    state.z = z_new
    state.iter += 1
    res = float(np.linalg.norm(r))
    state.primal_residuals.append(res)
    dyn = float(np.linalg.norm(data.G @ z_new - data.h))
    if dyn < state.best_residual:
        state.best_residual = dyn
        state.z_min_residual = z_new.copy()
    f = 0.5 * float(z_new @ data.F @ z_new)
    if dyn <= cfg.eps_tol and f < state.f_best:
        state.z_best = z_new.copy()
        state.f_best = f
    hist = state.primal_residuals
    if not np.isfinite(res) or (len(hist) > 50 and res > 1e3 * max(hist[-51], 1e-300)):
        state.diverged = True
    return state


def _polish(inst: ProblemInstance, cd, z: np.ndarray):
    n, N = inst.n, inst.N
    X = z[: n * (N + 1)].reshape(N + 1, n)
    rs = inst.regions
    sigma = [classify(inst.x0, rs, inst.tol.tol_mem)]
    for t in range(1, N):
        sigma.append(classify(X[t], rs, inst.tol.tol_mem))
    sigma = tuple(sigma)
    code, cost, viol, it, u = cd.solve(sigma, inst.tol)
    return sigma, code, cost, viol, it, u


def solve_admm(inst: ProblemInstance, cfg: AdmmConfig = AdmmConfig(), trace_path=None) -> Solution:
    """ADMM on the event-triggered problem, then polish the best iterate.

    Polishing fixes the region labels (and hence the quiet steps) of the best
    ADMM point and solves that sequence's QP.  In adaptive mode an infeasible
    polish doubles the iteration budget, up to ``max_doublings`` times, while
    the ADMM point keeps improving in residual or cost; if no iterate met
    ``eps_tol`` the least-violating one is polished.  Status is NoConvergence
    when nothing could be polished (divergence, or no point within
    ``eps_tol`` without adaptation) and Infeasible when every polish failed.
    """
    t0 = time.perf_counter()
    data = prepare(inst, cfg.rho)
    cd = condense(inst)
    qps = iters = 0
    best = None
    trace = []
    for restart in range(cfg.restarts):
        state = initial_state(data, cfg, restart)
        budget = cfg.max_iter
        rounds = 1 + (cfg.max_doublings if cfg.adapt else 0)
        prev = None
        for _ in range(rounds):
            while state.iter < budget and not state.diverged:
                f_before = state.f_best
                admm_iterate(state, data, cfg)
                if trace_path is not None:
                    trace.append((restart, state.iter, state.primal_residuals[-1],
                                  0.5 * float(state.z @ data.F @ state.z), state.f_best < f_before))
            if state.diverged:
                break
            cand = state.z_best
            if cand is None and cfg.adapt:
                # nothing met eps_tol yet: polish the least-violating iterate instead
                cand = state.z_min_residual
            if cand is None:
                break
            sigma, code, cost, viol, it, u = _polish(inst, cd, cand)
            qps += 1
            iters += it
            if code == SEQ_FEASIBLE:
                if best is None or cost < best[1]:
                    best = (sigma, cost, u)
                break
            key = (state.best_residual, state.f_best)
            if prev is not None and not (key[0] < prev[0] or key[1] < prev[1]):
                break
            prev = key
            budget *= 2
        iters += state.iter
    if trace_path is not None:
        _write_trace(trace_path, trace, cfg)
    stats = SolverStats(qp_count=qps, iterations=iters, wall_time=time.perf_counter() - t0)
    if best is None:
        status = Status.INFEASIBLE if qps else Status.NO_CONVERGENCE
        return Solution.failed(status, (classify(inst.x0, inst.regions, inst.tol.tol_mem),), stats)
    sigma, _, u = best
    traj = simulate(inst, u)
    ok, _ = check_trigger_consistency(inst, traj, inst.tol)
    if not ok:
        return Solution.failed(Status.INFEASIBLE, sigma, stats)
    return Solution(traj, evaluate_cost(inst, traj), sigma, event_set(sigma), Status.FEASIBLE, stats)


def _write_trace(path, rows, cfg: AdmmConfig):
    with open(path, "w", newline="") as fh:
        fh.write(f"# admm config: {cfg}\n")
        w = csv.writer(fh)
        w.writerow(["restart", "iter", "primal_residual", "cost", "best_flag"])
        for r in rows:
            w.writerow([r[0], r[1], repr(r[2]), repr(r[3]), int(r[4])])
