"""Receding-horizon simulation, stability constants and Monte Carlo trade-off sweeps."""
from __future__ import annotations

import itertools
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import multiprocessing as mp
import numpy as np
import scipy.linalg

from .admm import RHO_RHC, AdmmConfig, solve_admm
from .exact import solve_exact
from .greedy import solve_greedy
from .model import ProblemInstance, Solution, Status

INNER_SOLVERS = ("exact", "greedy", "admm")


@dataclass(frozen=True)
class RhcConfig:
    inner: str = "exact"
    sim_len: int = 50
    noise_cov: np.ndarray | None = None  # covariance of w(t); None means noiseless
    B_w: np.ndarray | None = None  # defaults to the identity when noise is on
    seed: int = 0
    x0_cov: np.ndarray | None = None  # draw x0 ~ N(0, x0_cov) instead of using inst.x0
    admm: AdmmConfig = AdmmConfig(rho=RHO_RHC)
    greedy_tail: str = "truncated"
    prune: bool = True
    workers: int = 1

    def __post_init__(self):
        if self.inner not in INNER_SOLVERS:
            raise ValueError(f"inner must be one of {INNER_SOLVERS}, got {self.inner!r}")
        if self.sim_len < 1:
            raise ValueError("sim_len must be >= 1")
        for name in ("noise_cov", "x0_cov"):
            C = getattr(self, name)
            if C is not None:
                C = np.atleast_2d(np.asarray(C, dtype=float))
                if not np.allclose(C, C.T) or np.linalg.eigvalsh(C).min() < -1e-12:
                    raise ValueError(f"{name} must be symmetric positive semi-definite")
                object.__setattr__(self, name, C)
        if self.B_w is not None:
            object.__setattr__(self, "B_w", np.atleast_2d(np.asarray(self.B_w, dtype=float)))


@dataclass(frozen=True, eq=False)
class RhcRun:
    states: np.ndarray  # (L+1, n)
    inputs: np.ndarray  # (L, m)
    transmissions: np.ndarray  # (L,) bool
    J_inf: float
    pi_inf: float
    total_cost: float
    failed_at: int | None = None
    step_stats: list = field(default_factory=list, repr=False)

    @property
    def ok(self) -> bool:
        return self.failed_at is None

    @property
    def transmission_count(self) -> int:
        return int(self.transmissions.sum())


def inner_solve(inst: ProblemInstance, cfg: RhcConfig) -> Solution:
    if cfg.inner == "exact":
        return solve_exact(inst, workers=cfg.workers, prune=cfg.prune).best
    if cfg.inner == "greedy":
        return solve_greedy(inst, tail=cfg.greedy_tail)
    return solve_admm(inst, cfg.admm)


def _gaussian(rng: np.random.Generator, cov: np.ndarray) -> np.ndarray:
    # eigen-factor so singular covariances work too
    w, V = np.linalg.eigh(cov)
    return V @ (np.sqrt(np.clip(w, 0.0, None)) * rng.standard_normal(cov.shape[0]))


def run_rhc(inst: ProblemInstance, cfg: RhcConfig = RhcConfig(), run_index: int = 0) -> RhcRun:
    """Closed loop: solve the N-step problem whenever ``||x(t)||_inf >= eps`` and apply its first input.

    Noise and random initial states come from a generator seeded with
    ``(cfg.seed, run_index)``, so every run has its own reproducible stream.
    """
    n, m, L = inst.n, inst.m, cfg.sim_len
    rng = np.random.default_rng([cfg.seed, run_index])
    x = inst.x0.copy() if cfg.x0_cov is None else _gaussian(rng, cfg.x0_cov)
    B_w = None
    if cfg.noise_cov is not None:
        B_w = np.eye(n) if cfg.B_w is None else cfg.B_w
    X = np.zeros((L + 1, n))
    U = np.zeros((L, m))
    sent = np.zeros(L, dtype=bool)
    stats = []
    X[0] = x
    failed = None
    for t in range(L):
        w = _gaussian(rng, cfg.noise_cov) if B_w is not None else None
        if np.max(np.abs(x)) >= inst.eps:
            sent[t] = True
            sol = inner_solve(inst.replace(x0=x), cfg)
            stats.append(sol.stats)
            if not sol.status.ok:
                failed = t
                break
            U[t] = sol.inputs[0]
        else:
            stats.append(None)
        x = inst.A @ x + inst.B @ U[t]
        if w is not None:
            x = x + B_w @ w
        X[t + 1] = x
    steps = L if failed is None else failed
    stage = np.einsum("ti,ij,tj->t", X[:steps], inst.Q, X[:steps]) + np.einsum("ti,ij,tj->t", U[:steps], inst.R, U[:steps])
    J = float(stage.sum() / max(steps, 1))
    pi = float(sent[:steps].sum() / max(steps, 1))
    return RhcRun(states=X[: steps + 1], inputs=U[:steps], transmissions=sent[:steps], J_inf=J, pi_inf=pi,
                  total_cost=float(stage.sum()), failed_at=failed, step_stats=stats)


# --- stability constants -----------------------------------------------------

def dlqr_gain(A, B, Q, R) -> np.ndarray:
    """Infinite-horizon gain ``K`` for ``u = K x``."""
    S = scipy.linalg.solve_discrete_are(A, B, Q, R)
    return -np.linalg.solve(R + B.T @ S @ B, B.T @ S @ A)


def finite_horizon_lqr(inst: ProblemInstance):
    """Unconstrained optimum by backward Riccati recursion: ``(cost, inputs, states)``."""
    A, B, Q, R = inst.A, inst.B, inst.Q, inst.R
    S = inst.P.copy()
    gains = []
    for _ in range(inst.N):
        K = -np.linalg.solve(R + B.T @ S @ B, B.T @ S @ A)
        S = Q + A.T @ S @ (A + B @ K)
        S = 0.5 * (S + S.T)
        gains.append(K)
    gains.reverse()
    X = np.zeros((inst.N + 1, inst.n))
    U = np.zeros((inst.N, inst.m))
    X[0] = inst.x0
    for t, K in enumerate(gains):
        U[t] = K @ X[t]
        X[t + 1] = A @ X[t] + B @ U[t]
    return float(inst.x0 @ S @ inst.x0), U, X


@dataclass(frozen=True, eq=False)
class StabilityConstants:
    K_gain: np.ndarray
    a2: float
    a3: float
    gamma: float
    eta: float
    mu: float
    kappa: float
    S_table: dict = field(repr=False)

    def as_dict(self) -> dict:
        return {"a2": self.a2, "a3": self.a3, "gamma": self.gamma, "eta": self.eta,
                "kappa": self.kappa, "mu": self.mu, "K_gain": self.K_gain.tolist()}


def schedule_matrix(inst: ProblemInstance, K: np.ndarray, delta, terminal: str = "Q") -> np.ndarray:
    """Cost matrix of the schedule ``delta``: ``x' S x`` is the N-step cost of applying ``K x`` when ``delta(i) = 1``."""
    A, Q = inst.A, inst.Q
    A_K = A + inst.B @ K
    Q_K = Q + K.T @ inst.R @ K
    W = inst.P if terminal == "P" else Q
    Phi = np.eye(inst.n)
    S = np.zeros((inst.n, inst.n))
    for d in delta:
        S += Phi.T @ (Q_K if d else Q) @ Phi
        Phi = (A_K if d else A) @ Phi
    S += Phi.T @ W @ Phi
    return 0.5 * (S + S.T)


def compute_stability_constants(inst: ProblemInstance, kappa: float | None = None,
                                terminal: str = "Q") -> StabilityConstants:
    """Ultimate-bound radius ``mu = sqrt(kappa * eta / a2^2)`` with ``kappa = a3`` by default.

    ``a3`` maximizes over every schedule in ``{0, 1}^N``, which contains the
    feasible ones, so the radius can only be conservative.
    """
    if terminal not in ("Q", "P"):
        raise ValueError("terminal must be 'Q' or 'P'")
    if not inst.is_stabilizable():
        raise ValueError("(A, B) is not stabilizable")
    a2 = float(np.linalg.eigvalsh(inst.Q).min())
    if a2 <= inst.tol.tol_pd:
        raise ValueError("Q must be positive definite for the stability constants")
    K = dlqr_gain(inst.A, inst.B, inst.Q, inst.R)
    table = {}
    a3 = 0.0
    for delta in itertools.product((0, 1), repeat=inst.N):
        S = schedule_matrix(inst, K, delta, terminal)
        table[delta] = S
        a3 = max(a3, float(np.linalg.eigvalsh(S).max()))
    eta = float(np.linalg.eigvalsh(inst.A.T @ inst.P @ inst.A + inst.Q).max()) * inst.n * inst.eps ** 2
    kappa = a3 if kappa is None else float(kappa)
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    mu = float(np.sqrt(kappa * eta / a2 ** 2))
    return StabilityConstants(K_gain=K, a2=a2, a3=a3, gamma=1.0 - a2 / a3, eta=eta, mu=mu,
                              kappa=kappa, S_table=table)


def ultimate_entry(states: np.ndarray, mu: float) -> int | None:
    """First index from which every state stays in ``||x||_inf <= mu``; None if never."""
    inside = np.max(np.abs(states), axis=1) <= mu
    if not inside[-1]:
        return None
    out = np.flatnonzero(~inside)
    return 0 if out.size == 0 else int(out[-1] + 1)


@dataclass(frozen=True, eq=False)
class LyapunovReport:
    states: np.ndarray
    V: np.ndarray
    V_next: np.ndarray
    margins: np.ndarray  # -a2 |x|^2 + eta - (V_next - V); >= 0 where the inequality holds
    eta: float
    a2: float

    @property
    def holds(self) -> np.ndarray:
        return self.margins >= -1e-9 * np.maximum(1.0, np.abs(self.V))

    @property
    def fraction(self) -> float:
        return float(self.holds.mean()) if self.margins.size else 1.0


def lyapunov_decrease_check(inst: ProblemInstance, samples, constants: StabilityConstants | None = None,
                            workers: int = 1) -> LyapunovReport:
    """Evaluate ``V(x+) - V(x) <= -a2 |x|^2 + eta`` with the exact value function."""
    c = constants or compute_stability_constants(inst)
    X = np.atleast_2d(np.asarray(samples, dtype=float))
    V = np.empty(len(X))
    Vn = np.empty(len(X))
    for k, x in enumerate(X):
        sol = solve_exact(inst.replace(x0=x), workers=workers, prune=True).best
        V[k] = sol.cost
        x_next = sol.states[1] if sol.status.ok else inst.A @ x
        Vn[k] = solve_exact(inst.replace(x0=x_next), workers=workers, prune=True).best.cost
    margins = -c.a2 * np.sum(X ** 2, axis=1) + c.eta - (Vn - V)
    return LyapunovReport(states=X, V=V, V_next=Vn, margins=margins, eta=c.eta, a2=c.a2)


# --- Monte Carlo trade-off ---------------------------------------------------

@dataclass(frozen=True)
class SweepRow:
    eps: float
    J_mean: float
    pi_mean: float
    runs: int
    failures: int


def _sweep_cell(args):
    inst, cfg, eps, run = args
    r = run_rhc(inst.replace(eps=eps), cfg, run_index=run)
    return (r.J_inf, r.pi_inf) if r.ok else None


def tradeoff_sweep(inst: ProblemInstance, eps_list, mc_runs: int, cfg: RhcConfig,
                   workers: int = 1, progress=None) -> list[SweepRow]:
    """Average ``J_inf`` and ``pi_inf`` over ``mc_runs`` noisy runs for each threshold.

    Run ``k`` uses the random stream ``(cfg.seed, k)`` for every threshold, so
    the thresholds are compared on common random numbers.
    """
    if mc_runs < 1:
        raise ValueError("mc_runs must be >= 1")
    eps_list = [float(e) for e in eps_list]
    if any(not e > 0 for e in eps_list):
        raise ValueError("thresholds must be positive")
    jobs = [(inst, cfg, e, k) for e in eps_list for k in range(mc_runs)]
    if workers > 1:
        ctx = mp.get_context("fork") if "fork" in mp.get_all_start_methods() else None
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as ex:
            results = list(ex.map(_sweep_cell, jobs, chunksize=max(1, len(jobs) // (8 * workers))))
    else:
        results = []
        for j in jobs:
            results.append(_sweep_cell(j))
            if progress is not None:
                progress(len(results), len(jobs))
    rows = []
    for i, e in enumerate(eps_list):
        cell = results[i * mc_runs:(i + 1) * mc_runs]
        good = [r for r in cell if r is not None]
        J = float(np.mean([r[0] for r in good])) if good else float("nan")
        pi = float(np.mean([r[1] for r in good])) if good else float("nan")
        rows.append(SweepRow(eps=e, J_mean=J, pi_mean=pi, runs=len(good), failures=len(cell) - len(good)))
    return rows


def sample_box_states(n: int, count: int, radius: float, seed: int = 0) -> np.ndarray:
    """Uniform samples from ``||x||_inf <= radius``."""
    rng = np.random.default_rng(seed)
    return rng.uniform(-radius, radius, size=(count, n))


__all__ = [
    "INNER_SOLVERS", "RhcConfig", "RhcRun", "run_rhc", "inner_solve", "dlqr_gain",
    "finite_horizon_lqr", "StabilityConstants", "schedule_matrix", "compute_stability_constants",
    "ultimate_entry", "LyapunovReport", "lyapunov_decrease_check", "SweepRow", "tradeoff_sweep",
    "sample_box_states", "Status",
]
