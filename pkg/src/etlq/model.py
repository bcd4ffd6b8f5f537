"""Problem data, trigger geometry, rollout and cost evaluation."""
from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .tolerances import DEFAULT, Tolerances


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    FEASIBLE = "Feasible"
    INFEASIBLE = "Infeasible"
    NO_CONVERGENCE = "NoConvergence"

    @property
    def ok(self) -> bool:
        return self in (Status.OPTIMAL, Status.FEASIBLE)


class InstanceError(ValueError):
    """Raised for malformed or inconsistent problem data."""


def _frozen(a, name: str, ndim: int) -> np.ndarray:
    try:
        arr = np.array(a, dtype=float, ndmin=ndim)
    except (TypeError, ValueError) as exc:
        raise InstanceError(f"{name}: not a numeric array ({exc})") from None
    if arr.ndim != ndim:
        raise InstanceError(f"{name}: expected {ndim}-d array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InstanceError(f"{name}: contains non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """Finite-horizon event-triggered LQ problem.

    Dynamics ``x(t+1) = A x(t) + B u(t)`` from ``x0``; cost
    ``x(N)' P x(N) + sum_t x(t)' Q x(t) + u(t)' R u(t)``; the input is forced
    to zero whenever ``||x(t)||_inf < eps``.
    """

    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    P: np.ndarray
    x0: np.ndarray
    eps: float
    N: int
    tol: Tolerances = field(default=DEFAULT, repr=False)

    def __post_init__(self):
        set_ = object.__setattr__
        A = _frozen(self.A, "A", 2)
        n = A.shape[0]
        B = np.array(self.B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(n, -1) if B.size % max(n, 1) == 0 else B
        B = _frozen(B, "B", 2)
        R = _frozen(np.atleast_2d(np.asarray(self.R, dtype=float)), "R", 2)
        set_(self, "A", A)
        set_(self, "B", B)
        set_(self, "Q", _frozen(self.Q, "Q", 2))
        set_(self, "R", R)
        set_(self, "P", _frozen(self.P, "P", 2))
        set_(self, "x0", _frozen(np.ravel(self.x0), "x0", 1))
        try:
            set_(self, "eps", float(self.eps))
        except (TypeError, ValueError):
            raise InstanceError(f"eps: not a number ({self.eps!r})") from None
        if isinstance(self.N, bool) or int(self.N) != self.N:
            raise InstanceError(f"N: must be an integer, got {self.N!r}")
        set_(self, "N", int(self.N))
        self._validate()

    def _validate(self):
        n, m = self.n, self.m
        if self.A.shape != (n, n):
            raise InstanceError(f"A: must be square, got {self.A.shape}")
        if self.B.shape[0] != n:
            raise InstanceError(f"B: expected {n} rows, got {self.B.shape}")
        for name, M, k in (("Q", self.Q, n), ("P", self.P, n), ("R", self.R, m)):
            if M.shape != (k, k):
                raise InstanceError(f"{name}: expected shape {(k, k)}, got {M.shape}")
            if not np.allclose(M, M.T, rtol=0, atol=1e-12 * max(1.0, np.abs(M).max())):
                raise InstanceError(f"{name}: not symmetric")
        if self.x0.shape != (n,):
            raise InstanceError(f"x0: expected length {n}, got {self.x0.shape[0]}")
        if not self.eps > 0 or not np.isfinite(self.eps):
            raise InstanceError(f"eps: must be positive, got {self.eps}")
        if self.N < 1:
            raise InstanceError(f"N: must be >= 1, got {self.N}")
        tol = self.tol
        if np.linalg.eigvalsh(self.Q).min() < -tol.tol_psd:
            raise InstanceError("Q: not positive semi-definite")
        if np.linalg.eigvalsh(self.P).min() < -tol.tol_psd:
            raise InstanceError("P: not positive semi-definite")
        if np.linalg.eigvalsh(self.R).min() <= tol.tol_pd:
            raise InstanceError("R: not positive definite")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @cached_property
    def regions(self) -> "RegionSet":
        return build_regions(self.n, self.eps)

    def replace(self, **changes) -> "ProblemInstance":
        return dataclasses.replace(self, **changes)

    def is_stabilizable(self, tol: float = 1e-9) -> bool:
        """PBH test on every eigenvalue of A outside the open unit disc."""
        n = self.n
        for lam in np.linalg.eigvals(self.A):
            if abs(lam) >= 1.0 - tol:
                M = np.hstack([self.A - lam * np.eye(n), self.B])
                if np.linalg.matrix_rank(M, tol=tol * max(1.0, np.abs(M).max())) < n:
                    return False
        return True


@dataclass(frozen=True, eq=False)
class RegionSet:
    """The 2n closed polyhedra ``{x : T_p x <= d}`` covering ``||x||_inf >= eps``.

    ``T[p-1]`` and ``d`` describe region ``p`` (1-based); label 0 is the open
    box around the origin and has no matrix.
    """

    n: int
    eps: float
    T: np.ndarray  # (2n, 2n-1, n)
    d: np.ndarray  # (2n-1,)

    @property
    def regions(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(self.T[p], self.d) for p in range(2 * self.n)]

    def region(self, p: int) -> tuple[np.ndarray, np.ndarray]:
        if not 1 <= p <= 2 * self.n:
            raise IndexError(f"region label {p} outside 1..{2 * self.n}")
        return self.T[p - 1], self.d

    def box(self) -> tuple[np.ndarray, np.ndarray]:
        """Closed box ``||x||_inf <= eps`` as 2n rows."""
        eye = np.eye(self.n)
        return np.vstack([eye, -eye]), np.full(2 * self.n, self.eps)

    def constraint_rows(self, label: int) -> tuple[np.ndarray, np.ndarray]:
        return self.box() if label == 0 else self.region(label)


def build_regions(n: int, eps: float) -> RegionSet:
    """Partition of the triggered set by dominant coordinate and sign.

    Region order is ``+x1, ..., +xn, -x1, ..., -xn``.  Region (i, s) holds
    ``s*x_i >= |x_j|`` for all ``j != i`` and ``s*x_i >= eps``.
    """
    if int(n) != n or n < 1:
        raise ValueError(f"dimension must be a positive integer, got {n}")
    if not eps > 0:
        raise ValueError(f"threshold must be positive, got {eps}")
    n = int(n)
    rows = 2 * n - 1
    T = np.zeros((2 * n, rows, n))
    for p in range(2 * n):
        i, s = p % n, (1.0 if p < n else -1.0)
        r = 0
        for j in range(n):
            if j == i:
                continue
            T[p, r, j], T[p, r, i] = 1.0, -s
            T[p, r + 1, j], T[p, r + 1, i] = -1.0, -s
            r += 2
        T[p, r, i] = -s
    d = np.zeros(rows)
    d[-1] = -float(eps)
    T.setflags(write=False)
    d.setflags(write=False)
    return RegionSet(n=n, eps=float(eps), T=T, d=d)


def classify(x, rs: RegionSet, tol_mem: float = DEFAULT.tol_mem) -> int:
    """Region label of ``x``: 0 inside the open box, else the lowest containing region."""
    x = np.asarray(x, dtype=float)
    if x.shape != (rs.n,):
        raise ValueError(f"state has shape {x.shape}, expected ({rs.n},)")
    if np.max(np.abs(x)) < rs.eps:
        return 0
    viol = np.max(rs.T @ x - rs.d, axis=1)
    hits = np.flatnonzero(viol <= tol_mem)
    if hits.size:
        return int(hits[0]) + 1
    # only reachable through rounding at a dominance tie; fall back to the rule itself
    i = int(np.argmax(np.abs(x)))
    return i + 1 if x[i] >= 0 else rs.n + i + 1


def event_set(sigma: Sequence[int]) -> tuple[int, ...]:
    """Time steps with label 0, i.e. where the input is forced to zero."""
    return tuple(t for t, s in enumerate(sigma) if s == 0)


@dataclass(frozen=True, eq=False)
class Trajectory:
    states: np.ndarray  # (N+1, n)
    inputs: np.ndarray  # (N, m)

    @property
    def N(self) -> int:
        return self.inputs.shape[0]


@dataclass(frozen=True)
class SolverStats:
    qp_count: int = 0
    iterations: int = 0
    wall_time: float = 0.0


@dataclass(frozen=True, eq=False)
class Solution:
    trajectory: Trajectory | None
    cost: float
    sigma: tuple[int, ...]
    event_set: tuple[int, ...]
    status: Status
    stats: SolverStats = SolverStats()

    @property
    def inputs(self) -> np.ndarray:
        return self.trajectory.inputs

    @property
    def states(self) -> np.ndarray:
        return self.trajectory.states

    @classmethod
    def failed(cls, status: Status, sigma=(), stats: SolverStats = SolverStats()) -> "Solution":
        sigma = tuple(int(s) for s in sigma)
        return cls(None, float("inf"), sigma, event_set(sigma), status, stats)


def simulate(inst: ProblemInstance, inputs) -> Trajectory:
    """Roll the dynamics forward from ``inst.x0``."""
    U = np.asarray(inputs, dtype=float)
    if U.ndim == 1 and inst.m == 1:
        U = U.reshape(-1, 1)
    if U.shape != (inst.N, inst.m):
        raise ValueError(f"inputs have shape {U.shape}, expected {(inst.N, inst.m)}")
    X = np.empty((inst.N + 1, inst.n))
    X[0] = inst.x0
    for t in range(inst.N):
        X[t + 1] = inst.A @ X[t] + inst.B @ U[t]
    U = U.copy()
    X.setflags(write=False)
    U.setflags(write=False)
    return Trajectory(states=X, inputs=U)


def evaluate_cost(inst: ProblemInstance, traj: Trajectory) -> float:
    X, U = traj.states, traj.inputs
    if X.shape != (inst.N + 1, inst.n) or U.shape != (inst.N, inst.m):
        raise ValueError("trajectory dimensions do not match the instance")
    stage = np.einsum("ti,ij,tj->", X[:-1], inst.Q, X[:-1]) + np.einsum("ti,ij,tj->", U, inst.R, U)
    return float(X[-1] @ inst.P @ X[-1] + stage)


def dynamics_residual(inst: ProblemInstance, traj: Trajectory) -> float:
    X, U = traj.states, traj.inputs
    if U.shape[0] == 0:
        return float(np.max(np.abs(X[0] - inst.x0)))
    res = X[1:] - X[:-1] @ inst.A.T - U @ inst.B.T
    return float(max(np.max(np.abs(res)), np.max(np.abs(X[0] - inst.x0))))


def check_trigger_consistency(inst: ProblemInstance, traj: Trajectory, tol: Tolerances | None = None):
    """Return ``(ok, violating_steps)`` for the rule "zero input inside the box"."""
    tol = tol or inst.tol
    X, U = traj.states, traj.inputs
    bad = []
    for t in range(U.shape[0]):
        if np.max(np.abs(X[t])) < inst.eps - tol.tol_strict and np.max(np.abs(U[t]), initial=0.0) > tol.tol_zero:
            bad.append(t)
    return not bad, bad
