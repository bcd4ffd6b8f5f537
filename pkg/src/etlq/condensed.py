"""Input-only (condensed) form of the sequence subproblems."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .model import ProblemInstance, RegionSet
from .qp import solve_reduced
from .tolerances import DEFAULT, Tolerances

# per-sequence outcome codes
SEQ_FEASIBLE = 0
SEQ_INFEASIBLE = 1
SEQ_REJECTED = 2  # solved, but a state sits outside its region by more than tol_strict
SEQ_MAXITER = 3
SEQ_PRUNED = 4


@dataclass(frozen=True, eq=False)
class CondensedData:
    """Prediction matrices and region tables for one instance.

    ``x(t) = xf[t] + Gam[t] @ u`` and ``J(u) = u' Hu u + 2 fu' u + c0`` where
    ``u`` stacks all N inputs.
    """

    Hu: np.ndarray
    fu: np.ndarray
    c0: float
    Gam: np.ndarray
    xf: np.ndarray
    RT: np.ndarray
    Rd: np.ndarray
    nrow: np.ndarray
    n: int
    m: int
    N: int

    def qp(self, sigma):
        """Condensed QP ``(free, H, g, A, b)``; label -1 leaves a step free and unconstrained."""
        return K.build_condensed(self.Hu, self.fu, self.Gam, self.xf, self.RT, self.Rd,
                                 self.nrow, np.asarray(sigma, dtype=np.int64), self.m)

    def solve(self, sigma, tol: Tolerances = DEFAULT):
        """Solve one sequence; returns ``(code, cost, max_violation, iterations, inputs)``.

        ``max_violation`` is the largest row violation of the returned point,
        or the phase-1 value when the sequence is infeasible.
        """
        free, H, g, A, b = self.qp(sigma)
        st, y, _, viol, it = solve_reduced(H, g, A, b, tol)
        u = np.zeros(self.N * self.m)
        u[free] = y
        u = u.reshape(self.N, self.m)
        if st == K.INFEASIBLE:
            return SEQ_INFEASIBLE, np.inf, float(viol), int(it), u
        if st != K.OPTIMAL:
            return SEQ_MAXITER, np.inf, float(viol), int(it), u
        cost = float(0.5 * y @ H @ y + g @ y + self.c0)
        if viol > tol.tol_strict:
            return SEQ_REJECTED, cost, float(viol), int(it), u
        return SEQ_FEASIBLE, cost, float(viol), int(it), u


def region_tables(rs: RegionSet) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row tables indexed by label 0..2n (label 0 is the closed box)."""
    n = rs.n
    L = 2 * n + 1
    RT = np.zeros((L, 2 * n, n))
    Rd = np.zeros((L, 2 * n))
    nrow = np.zeros(L, dtype=np.int64)
    box_T, box_d = rs.box()
    RT[0], Rd[0], nrow[0] = box_T, box_d, 2 * n
    for p in range(1, L):
        T, d = rs.region(p)
        RT[p, : 2 * n - 1] = T
        Rd[p, : 2 * n - 1] = d
        nrow[p] = 2 * n - 1
    return RT, Rd, nrow


def prediction_matrices(A: np.ndarray, B: np.ndarray, x0: np.ndarray, N: int):
    """``Gam[t]`` (n x mN) and ``xf[t]`` with ``x(t) = xf[t] + Gam[t] u``."""
    n, m = B.shape
    Gam = np.zeros((N + 1, n, m * N))
    xf = np.zeros((N + 1, n))
    xf[0] = x0
    for t in range(1, N + 1):
        xf[t] = A @ xf[t - 1]
        Gam[t] = A @ Gam[t - 1]
        Gam[t][:, (t - 1) * m: t * m] = B
    return Gam, xf


def condense(inst: ProblemInstance) -> CondensedData:
    n, m, N = inst.n, inst.m, inst.N
    Gam, xf = prediction_matrices(inst.A, inst.B, inst.x0, N)
    Hu = np.kron(np.eye(N), inst.R)
    fu = np.zeros(m * N)
    c0 = 0.0
    for t in range(N + 1):
        W = inst.P if t == N else inst.Q
        c0 += xf[t] @ W @ xf[t]
        if t:
            Hu += Gam[t].T @ W @ Gam[t]
            fu += Gam[t].T @ W @ xf[t]
    Hu = 0.5 * (Hu + Hu.T)
    RT, Rd, nrow = region_tables(inst.regions)
    return CondensedData(Hu=Hu, fu=fu, c0=float(c0), Gam=Gam, xf=xf, RT=RT, Rd=Rd,
                         nrow=nrow, n=n, m=m, N=N)
