"""Dense convex QP solver and the per-sequence subproblem builder.

``solve_qp`` handles

    minimize 0.5 z'Hz + g'z   s.t.   A_eq z = b_eq,  A_in z <= b_in

by eliminating the equalities through a null-space basis.  When the reduced
Hessian is positive definite the inequality problem goes to the
Goldfarb-Idnani dual active-set method (``quadprog``), which starts at the
unconstrained minimizer and adds violated rows one at a time.  Infeasibility
is only declared after a phase-1 problem (minimize the largest row violation)
has an optimum above ``tol_feas``.  Singular reduced Hessians use the compiled
two-phase primal active-set method.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import quadprog
import scipy.linalg
from scipy.optimize import linprog

from . import _kernels as K
from .model import ProblemInstance, RegionSet, classify
from .tolerances import DEFAULT, Tolerances


class QpStatus(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    MAX_ITER = "MaxIter"
    UNBOUNDED = "Unbounded"


_KERNEL_STATUS = {
    K.OPTIMAL: QpStatus.OPTIMAL,
    K.INFEASIBLE: QpStatus.INFEASIBLE,
    K.MAXITER: QpStatus.MAX_ITER,
    K.UNBOUNDED: QpStatus.UNBOUNDED,
}


class SingularMatrixError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class SequenceLayout:
    """Where states and inputs live inside a sequence-QP decision vector."""

    N: int
    n: int
    m: int
    x0: np.ndarray
    free_steps: tuple[int, ...]

    @property
    def size(self) -> int:
        return self.n * self.N + self.m * len(self.free_steps)

    def split(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(states (N+1, n), inputs (N, m))`` with eliminated inputs at zero."""
        X = np.vstack([self.x0, z[: self.n * self.N].reshape(self.N, self.n)])
        U = np.zeros((self.N, self.m))
        off = self.n * self.N
        for k, t in enumerate(self.free_steps):
            U[t] = z[off + k * self.m: off + (k + 1) * self.m]
        return X, U


def _as2d(a, cols: int) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return a.reshape(0, cols) if a.size == 0 else np.atleast_2d(a)


@dataclass(frozen=True, eq=False)
class QpProblem:
    H: np.ndarray
    g: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    A_in: np.ndarray | None = None
    b_in: np.ndarray | None = None
    offset: float = 0.0
    layout: SequenceLayout | None = field(default=None, repr=False)

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        d = H.shape[0]
        if H.shape != (d, d):
            raise ValueError(f"H must be square, got {H.shape}")
        if not np.allclose(H, H.T, atol=1e-12 * max(1.0, np.abs(H).max(initial=0.0))):
            raise ValueError("H must be symmetric")
        g = np.asarray(self.g, dtype=float).reshape(d)
        A_eq = _as2d(np.zeros((0, d)) if self.A_eq is None else self.A_eq, d)
        b_eq = np.zeros(0) if self.b_eq is None else np.asarray(self.b_eq, dtype=float).ravel()
        A_in = _as2d(np.zeros((0, d)) if self.A_in is None else self.A_in, d)
        b_in = np.zeros(0) if self.b_in is None else np.asarray(self.b_in, dtype=float).ravel()
        if A_eq.shape[1] != d or A_eq.shape[0] != b_eq.size:
            raise ValueError("equality block has inconsistent dimensions")
        if A_in.shape[1] != d or A_in.shape[0] != b_in.size:
            raise ValueError("inequality block has inconsistent dimensions")
        for name, val in (("H", H), ("g", g), ("A_eq", A_eq), ("b_eq", b_eq), ("A_in", A_in), ("b_in", b_in)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def dim(self) -> int:
        return self.H.shape[0]

    def objective(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return float(0.5 * z @ self.H @ z + self.g @ z + self.offset)


@dataclass(frozen=True, eq=False)
class QpResult:
    z: np.ndarray
    objective: float
    status: QpStatus
    kkt_residual: float
    active_set: tuple[int, ...]
    max_violation: float = 0.0
    iterations: int = 0
    multipliers: np.ndarray | None = None


def _null_space(A: np.ndarray, d: int, tol: float):
    if A.shape[0] == 0:
        return np.eye(d), 0
    _, s, vt = np.linalg.svd(A)
    rank = int(np.sum(s > tol * max(1.0, s[0] if s.size else 0.0)))
    return vt[rank:].T.copy(), rank


def kkt_residuals(p: QpProblem, z: np.ndarray, lam: np.ndarray) -> dict:
    """Stationarity, primal/dual feasibility and complementarity at ``(z, lam)``."""
    grad = p.H @ z + p.g + p.A_in.T @ lam
    if p.A_eq.shape[0]:
        nu = np.linalg.lstsq(p.A_eq.T, -grad, rcond=None)[0]
        grad = grad + p.A_eq.T @ nu
    slack = p.A_in @ z - p.b_in
    return {
        "stationarity": float(np.max(np.abs(grad), initial=0.0)),
        "equality": float(np.max(np.abs(p.A_eq @ z - p.b_eq), initial=0.0)),
        "inequality": float(max(np.max(slack, initial=0.0), 0.0)),
        "dual": float(max(-np.min(lam, initial=0.0), 0.0)),
        "complementarity": float(np.max(np.abs(lam * slack), initial=0.0)),
    }


def phase1_value(A: np.ndarray, b: np.ndarray, y0=None, tol: Tolerances = DEFAULT):
    """Optimum of ``min_y max(0, max_i (A y - b)_i)`` and a point attaining it.

    The compiled LP answers most calls.  A positive value is accepted only
    when its row multipliers give a matching dual lower bound; anything the
    compiled LP cannot certify is recomputed with HiGHS.
    """
    nr, k = A.shape
    y0 = np.zeros(k) if y0 is None else np.asarray(y0, dtype=float)
    if nr == 0:
        return 0.0, y0
    y, s_up, st, _, lam = K.phase1(A, b, y0, 50 * (k + nr + 1))
    if s_up <= tol.tol_feas:
        return max(float(s_up), 0.0), y  # a point with small violation settles it
    if st == K.OPTIMAL:
        total = lam.sum()
        if total > 0.5:
            w = lam / total
            lower = -float(b @ w)
            resid = float(np.max(np.abs(A.T @ w)))
            scale = max(1.0, float(np.abs(A).max()))
            if resid <= 1e-10 * scale and lower > tol.tol_feas and s_up - lower <= 1e-7 * max(1.0, s_up):
                return float(s_up), y
    c = np.zeros(k + 1)
    c[k] = 1.0
    res = linprog(c, A_ub=np.hstack([A, -np.ones((nr, 1))]), b_ub=b,
                  bounds=[(None, None)] * k + [(0.0, None)], method="highs")
    if res.status != 0:
        raise RuntimeError(f"phase-1 LP failed: {res.message}")
    yh = res.x[:k]
    return max(float(np.max(A @ yh - b)), 0.0), yh


def _quadprog(H, g, A, b):
    if A.shape[0] == 0:
        out = quadprog.solve_qp(H, -g)
    else:
        out = quadprog.solve_qp(H, -g, np.ascontiguousarray(-A.T), -b, 0)
    lam = np.zeros(A.shape[0])
    if A.shape[0]:
        lam = np.maximum(out[4], 0.0)
    return out[0], lam, int(out[3][0])


def solve_reduced(H, g, A, b, tol: Tolerances = DEFAULT, cap: int | None = None):
    """``min 0.5 y'Hy + g'y  s.t.  A y <= b`` for positive definite ``H``.

    Returns ``(status, y, multipliers, max_violation, iterations)``.  For an
    infeasible problem ``max_violation`` is the certified phase-1 value.
    """
    k, nr = g.size, A.shape[0]
    cap = cap or 50 * (k + nr + 1)
    y = np.linalg.solve(H, -g) if k else np.zeros(0)
    if nr == 0 or np.max(A @ y - b) <= 0.0:
        return K.OPTIMAL, y, np.zeros(nr), 0.0, 0
    if k == 0:
        # nothing to optimize: the rows are constants and their violation is the phase-1 value
        s = float(np.max(-b))
        return (K.INFEASIBLE if s > tol.tol_feas else K.OPTIMAL), y, np.zeros(nr), s, 0
    bb = b
    try:
        y, lam, it = _quadprog(H, g, A, b)
    except ValueError as exc:
        if "inconsistent" not in str(exc):
            raise
        s, ys = phase1_value(A, b, y, tol)
        if s > tol.tol_feas:
            return K.INFEASIBLE, ys, np.zeros(nr), s, 0
        # feasible only within tolerance: solve on slightly relaxed rows
        bb = b + (s + 0.5 * tol.tol_strict)
        try:
            y, lam, it = _quadprog(H, g, A, bb)
        except ValueError:
            y, lam, st, it = K.active_set(H, g, A, bb, ys, cap, K.MODE_PD)
            if st != K.OPTIMAL:
                return st, y, lam, s, it
    if it > cap:
        return K.MAXITER, y, lam, 0.0, it
    v = float(np.max(A @ y - bb))
    if v > 0.1 * tol.tol_strict:
        # the dual method stops on its own tolerance; tighten the rows once
        try:
            y2, lam2, it2 = _quadprog(H, g, A, bb - v)
            if np.max(A @ y2 - bb) < v:
                y, lam, it = y2, lam2, it + it2
        except ValueError:
            pass
    return K.OPTIMAL, y, lam, max(float(np.max(A @ y - b)), 0.0), it


def solve_qp(p: QpProblem, warm_start=None, tol: Tolerances = DEFAULT) -> QpResult:
    """Solve a dense convex QP.

    A feasible ``warm_start`` seeds a primal active-set pass; it changes the
    pivot path but not the optimum.
    """
    d = p.dim
    n_in = p.A_in.shape[0]
    cap = 50 * (d + n_in + 1)
    if p.A_eq.shape[0]:
        z_p = np.linalg.lstsq(p.A_eq, p.b_eq, rcond=None)[0]
        eq_res = float(np.max(np.abs(p.A_eq @ z_p - p.b_eq)))
        if eq_res > tol.tol_feas:
            return QpResult(z_p, np.inf, QpStatus.INFEASIBLE, np.inf, (), eq_res, 0)
        Z, _ = _null_space(p.A_eq, d, 1e-12)
    else:
        z_p = np.zeros(d)
        Z = np.eye(d)
    Hr = Z.T @ p.H @ Z
    Hr = 0.5 * (Hr + Hr.T)
    gr = Z.T @ (p.H @ z_p + p.g)
    Ar = np.ascontiguousarray(p.A_in @ Z)
    br = p.b_in - p.A_in @ z_p
    scale = max(1.0, np.abs(Hr).max(initial=0.0))
    eig = np.linalg.eigvalsh(Hr) if Hr.size else np.zeros(0)
    if eig.size and eig.min() < -tol.tol_psd * scale:
        raise ValueError("H is not positive semi-definite on the equality null space")
    pd = bool(eig.size == 0 or eig.min() > tol.tol_pd * scale)
    mode = K.MODE_PD if pd else K.MODE_GENERIC

    y0 = None
    if warm_start is not None:
        y0 = Z.T @ (np.asarray(warm_start, dtype=float) - z_p)
        if n_in and np.max(Ar @ y0 - br) > 0.0:
            y0 = None
    st = None
    if Z.shape[1] == 0:
        y, lam, it = np.zeros(0), np.zeros(n_in), 0
        viol = float(max(np.max(-br, initial=0.0), 0.0))
        st = K.INFEASIBLE if viol > tol.tol_feas else K.OPTIMAL
    elif y0 is not None:
        y, lam, st, it = K.active_set(Hr, gr, Ar, br, y0, cap, mode)
        viol = float(max(np.max(Ar @ y - br, initial=0.0), 0.0))
        if pd and (st != K.OPTIMAL or viol > tol.tol_feas):
            st = None  # primal pass lost accuracy; redo from scratch
    if st is None:
        if pd:
            st, y, lam, viol, it = solve_reduced(Hr, gr, Ar, br, tol, cap)
        else:
            st, y, lam, viol, it = K.solve_ineq_qp(Hr, gr, Ar, br, tol.tol_feas, cap, False)
            if st == K.INFEASIBLE:
                viol, y = phase1_value(Ar, br, y, tol)
                if viol <= tol.tol_feas:
                    y, lam, st, it = K.active_set(Hr, gr, Ar, br + viol, y, cap, mode)
    status = _KERNEL_STATUS[int(st)]
    z = z_p + Z @ y
    if status is not QpStatus.OPTIMAL:
        return QpResult(z, np.inf, status, np.inf, (), float(viol), int(it))
    res = kkt_residuals(p, z, lam)
    slack = p.A_in @ z - p.b_in
    active = tuple(int(i) for i in np.flatnonzero(np.abs(slack) <= max(tol.tol_feas, 1e-9)))
    return QpResult(
        z=z,
        objective=p.objective(z),
        status=status,
        kkt_residual=max(res.values()) if res else 0.0,
        active_set=active,
        max_violation=float(viol),
        iterations=int(it),
        multipliers=lam,
    )


def check_sequence(inst: ProblemInstance, sigma, rs: RegionSet | None = None) -> tuple[int, ...]:
    rs = rs or inst.regions
    sigma = tuple(int(s) for s in sigma)
    if len(sigma) != inst.N:
        raise ValueError(f"sequence has length {len(sigma)}, expected N = {inst.N}")
    if any(not 0 <= s <= 2 * inst.n for s in sigma):
        raise ValueError(f"labels must lie in 0..{2 * inst.n}")
    s0 = classify(inst.x0, rs, inst.tol.tol_mem)
    if sigma[0] != s0:
        raise ValueError(f"sigma(0) = {sigma[0]} but x0 lies in region {s0}")
    return sigma


def build_sequence_qp(inst: ProblemInstance, sigma, rs: RegionSet | None = None) -> QpProblem:
    """QP for a fixed switching sequence over ``z = (x(1..N), free inputs)``.

    Inputs of steps labelled 0 are removed from the problem.  The constant
    ``x0' Q x0`` goes into ``offset`` so the objective equals the true cost.
    """
    rs = rs or inst.regions
    sigma = check_sequence(inst, sigma, rs)
    n, m, N = inst.n, inst.m, inst.N
    free = tuple(t for t in range(N) if sigma[t] != 0)
    layout = SequenceLayout(N=N, n=n, m=m, x0=inst.x0.copy(), free_steps=free)
    d = layout.size
    col_u = {t: n * N + k * m for k, t in enumerate(free)}

    H = np.zeros((d, d))
    for t in range(1, N + 1):
        W = inst.P if t == N else inst.Q
        i = (t - 1) * n
        H[i:i + n, i:i + n] = 2.0 * W
    for t, c in col_u.items():
        H[c:c + m, c:c + m] = 2.0 * inst.R

    A_eq = np.zeros((n * N, d))
    b_eq = np.zeros(n * N)
    for t in range(N):
        r = t * n
        A_eq[r:r + n, t * n: t * n + n] = np.eye(n)
        if t == 0:
            b_eq[r:r + n] = inst.A @ inst.x0
        else:
            A_eq[r:r + n, (t - 1) * n: t * n] = -inst.A
        if t in col_u:
            A_eq[r:r + n, col_u[t]: col_u[t] + m] = -inst.B

    rows, rhs = [], []
    for t in range(1, N):
        T, dv = rs.constraint_rows(sigma[t])
        block = np.zeros((T.shape[0], d))
        block[:, (t - 1) * n: t * n] = T
        rows.append(block)
        rhs.append(dv)
    A_in = np.vstack(rows) if rows else np.zeros((0, d))
    b_in = np.concatenate(rhs) if rhs else np.zeros(0)
    return QpProblem(H=H, g=np.zeros(d), A_eq=A_eq, b_eq=b_eq, A_in=A_in, b_in=b_in,
                     offset=float(inst.x0 @ inst.Q @ inst.x0), layout=layout)


@dataclass(frozen=True, eq=False)
class KktCache:
    """LDL' factors of a symmetric (possibly indefinite) matrix."""

    L: np.ndarray  # unit lower triangular in permuted order
    D_blocks: tuple  # (start, inverse block)
    perm: np.ndarray
    size: int


def kkt_factorize(M, pivot_tol: float = 1e-12) -> KktCache:
    """Bunch-Kaufman LDL' factorization (LAPACK ``sytrf``) with block inverses."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("matrix must be square")
    if not np.allclose(M, M.T, atol=1e-12 * max(1.0, np.abs(M).max(initial=0.0))):
        raise ValueError("matrix must be symmetric")
    size = M.shape[0]
    lu, D, perm = scipy.linalg.ldl(M, lower=True, hermitian=True)
    scale = max(1.0, np.abs(M).max(initial=0.0))
    blocks = []
    i = 0
    while i < size:
        if i + 1 < size and D[i + 1, i] != 0.0:
            blk = D[i:i + 2, i:i + 2]
            if abs(np.linalg.det(blk)) <= pivot_tol * scale * scale:
                raise SingularMatrixError(f"2x2 pivot at {i} is singular")
            blocks.append((i, np.linalg.inv(blk)))
            i += 2
        else:
            if abs(D[i, i]) <= pivot_tol * scale:
                raise SingularMatrixError(f"pivot {i} underflows ({D[i, i]:.3e})")
            blocks.append((i, np.array([[1.0 / D[i, i]]])))
            i += 1
    return KktCache(L=np.ascontiguousarray(lu[perm]), D_blocks=tuple(blocks), perm=perm, size=size)


def kkt_solve(c: KktCache, rhs) -> np.ndarray:
    rhs = np.asarray(rhs, dtype=float)
    w = scipy.linalg.solve_triangular(c.L, rhs[c.perm], lower=True, unit_diagonal=True)
    v = np.empty_like(w)
    for start, inv in c.D_blocks:
        k = inv.shape[0]
        v[start:start + k] = inv @ w[start:start + k]
    q = scipy.linalg.solve_triangular(c.L, v, lower=True, trans="T", unit_diagonal=True)
    y = np.empty_like(q)
    y[c.perm] = q
    return y
