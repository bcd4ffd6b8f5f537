"""Compiled inner loops: primal active-set QP, phase-1 LP, condensed builder.

Everything here works on plain arrays so numba can compile it.  The QP form is

    minimize 0.5 y'Hy + g'y   subject to   A y <= b

with H positive semi-definite.  Sequence problems are handled in condensed
form: states are eliminated through ``x(t) = xf[t] + Gam[t] u`` and only the
inputs of triggered steps remain as variables.
"""
import numpy as np
from numba import njit

OPTIMAL = 0
INFEASIBLE = 1
MAXITER = 2
UNBOUNDED = 3

_CURV_TOL = 1e-10
_STEP_TOL = 1e-10
_MULT_TOL = 1e-10
_DIR_TOL = 1e-11
_DRIFT_TOL = 1e-14


@njit(cache=True)
def _null_space(Aw, d):
    nw = Aw.shape[0]
    if nw == 0:
        return np.eye(d)
    _, _, vt = np.linalg.svd(Aw, full_matrices=True)
    return vt[nw:].T.copy()


MODE_GENERIC = 0
MODE_PD = 1
MODE_LINEAR = 2


@njit(cache=True)
def _face_step(H, grad, Aw, mode, hscale, gscale):
    """Step on the working face and, when stationary, the face multipliers.

    Returns ``(p, lam_w, ray)``.  ``ray`` marks a zero-curvature descent
    direction whose length is limited only by blocking constraints.
    """
    nw, d = Aw.shape
    if mode == MODE_PD:
        Kkt = np.zeros((d + nw, d + nw))
        Kkt[:d, :d] = H
        Kkt[:d, d:] = Aw.T
        Kkt[d:, :d] = Aw
        rhs = np.zeros(d + nw)
        rhs[:d] = -grad
        sol = np.linalg.solve(Kkt, rhs)
        return sol[:d].copy(), sol[d:].copy(), False
    if nw == d:
        return np.zeros(d), np.linalg.lstsq(Aw.T, -grad)[0], False
    if mode == MODE_LINEAR:
        if nw == 0:
            return -grad, np.zeros(0), True
        Qf, Rf = np.linalg.qr(Aw.T)
        Qf = np.ascontiguousarray(Qf)
        qg = Qf.T @ grad
        p = -grad + Qf @ qg
        lam_w = np.linalg.solve(Rf, -qg)
        return p, lam_w, True
    p = np.zeros(d)
    ray = False
    nz = d - nw
    if nz > 0:
        Z = _null_space(Aw, d)
        rg = Z.T @ grad
        w, V = np.linalg.eigh(Z.T @ H @ Z)
        c = V.T @ rg
        for j in range(nz):
            if w[j] <= _CURV_TOL * hscale and abs(c[j]) > _STEP_TOL * gscale:
                ray = True
        pr = np.zeros(nz)
        for j in range(nz):
            flat = w[j] <= _CURV_TOL * hscale
            if ray:
                if flat:
                    pr -= c[j] * V[:, j]
            elif not flat:
                pr -= (c[j] / w[j]) * V[:, j]
        p = Z @ pr
    lam_w = np.zeros(nw)
    if nw > 0:
        lam_w = np.linalg.lstsq(Aw.T, -grad)[0]
    return p, lam_w, ray


@njit(cache=True)
def active_set(H, g, A, b, x0, max_iter, mode):
    """Primal active-set iterations from a feasible point ``x0``.

    ``mode`` selects the face solver: direct KKT solve for positive definite
    H, projected gradient for H = 0, null-space eigen-split otherwise.
    Returns ``(x, lam, status, iterations)``.
    """
    d = x0.size
    nr = A.shape[0]
    x = x0.copy()
    in_w = np.zeros(nr, np.bool_)
    W = np.empty(d + 1, np.int64)
    nw = 0
    lam = np.zeros(nr)
    hscale = 1.0
    if H.size:
        hscale = max(1.0, np.max(np.abs(H)))
    status = MAXITER
    degenerate = 0
    it = 0
    while it < max_iter:
        it += 1
        grad = H @ x + g
        gscale = max(1.0, np.max(np.abs(grad)))
        Aw = np.empty((nw, d))
        for k in range(nw):
            Aw[k] = A[W[k]]
        p, lam_w, ray = _face_step(H, grad, Aw, mode, hscale, gscale)
        xscale = max(1.0, np.max(np.abs(x)))
        pmax = np.max(np.abs(p)) if d else 0.0
        if pmax <= _STEP_TOL * max(xscale, gscale):
            if nw == 0:
                status = OPTIMAL
                break
            kmin = -1
            vmin = -_MULT_TOL * gscale
            bland = degenerate > d
            for k in range(nw):
                if lam_w[k] < -_MULT_TOL * gscale:
                    if bland:
                        if kmin < 0 or W[k] < W[kmin]:
                            kmin = k
                    elif lam_w[k] < vmin or (kmin >= 0 and lam_w[k] == vmin and W[k] < W[kmin]):
                        vmin = lam_w[k]
                        kmin = k
            if kmin < 0:
                for k in range(nw):
                    lam[W[k]] = max(lam_w[k], 0.0)
                status = OPTIMAL
                break
            in_w[W[kmin]] = False
            for k in range(kmin, nw - 1):
                W[k] = W[k + 1]
            nw -= 1
            continue
        alpha = np.inf if ray else 1.0
        blk = -1
        pnorm = np.sqrt(p @ p)
        for i in range(nr):
            if in_w[i]:
                continue
            ap = A[i] @ p
            if ap > _DIR_TOL * pnorm * np.sqrt(A[i] @ A[i]):
                r = (b[i] - A[i] @ x) / ap
                if r < 0.0:
                    r = 0.0
                if r < alpha:
                    alpha = r
                    blk = i
        if alpha == np.inf:
            status = UNBOUNDED
            break
        if alpha == 0.0:
            degenerate += 1
        else:
            degenerate = 0
        x = x + alpha * p
        if blk >= 0 and nw < d:
            in_w[blk] = True
            W[nw] = blk
            nw += 1
        if nw > 0 and alpha > 0.0:
            # long steps amplify rounding in p; pull x back onto the face
            Aw = np.empty((nw, d))
            rw = np.empty(nw)
            for k in range(nw):
                Aw[k] = A[W[k]]
                rw[k] = Aw[k] @ x - b[W[k]]
            if np.max(np.abs(rw)) > _DRIFT_TOL * max(1.0, np.max(np.abs(x))):
                x = x - np.linalg.lstsq(Aw, rw)[0]
    return x, lam, status, it


@njit(cache=True)
def phase1(A, b, y0, max_iter):
    """Minimize the largest row violation ``max_i (A y - b)_i``, floored at zero.

    The floor stops the iteration at the first feasible point instead of
    chasing interior margin along unbounded directions.  Returns
    ``(y, max_violation, status, iterations, row_multipliers)``; at an optimum
    with positive value the multipliers form a dual certificate.
    """
    nr, k = A.shape
    A1 = np.zeros((nr + 1, k + 1))
    A1[:nr, :k] = A
    A1[:nr, k] = -1.0
    A1[nr, k] = -1.0
    b1 = np.empty(nr + 1)
    b1[:nr] = b
    b1[nr] = 0.0
    x = np.empty(k + 1)
    x[:k] = y0
    x[k] = max(np.max(A @ y0 - b), 0.0)
    g1 = np.zeros(k + 1)
    g1[k] = 1.0
    H1 = np.zeros((k + 1, k + 1))
    xs, lam, status, it = active_set(H1, g1, A1, b1, x, max_iter, MODE_LINEAR)
    y = xs[:k].copy()
    return y, np.max(A @ y - b), status, it, lam[:nr].copy()


@njit(cache=True)
def solve_ineq_qp(H, g, A, b, tol_feas, max_iter, pd):
    """Two-phase solve.  Returns ``(status, y, lam, max_violation, iterations)``.

    ``max_violation`` is the phase-1 optimum clipped at zero; it is only
    computed when the unconstrained minimizer is infeasible.
    """
    k = g.size
    nr = A.shape[0]
    if pd:
        y = np.linalg.solve(H, -g)
    else:
        y = np.linalg.lstsq(H, -g)[0]
    lam = np.zeros(nr)
    if nr == 0 or np.max(A @ y - b) <= 0.0:
        if pd or k == 0 or np.max(np.abs(H @ y + g)) <= 1e-9 * max(1.0, np.max(np.abs(g))):
            return OPTIMAL, y, lam, 0.0, 0
        # singular H with no stationary point: descend from this feasible point
        y2, lam, st2, it2 = active_set(H, g, A, b, y, max_iter, MODE_GENERIC)
        return st2, y2, lam, 0.0, it2
    ys, s, st1, it1, _ = phase1(A, b, y, max_iter)
    if st1 != OPTIMAL:
        return MAXITER, ys, lam, max(s, 0.0), it1
    if s > tol_feas:
        return INFEASIBLE, ys, lam, s, it1
    shift = max(s, 0.0)
    y2, lam, st2, it2 = active_set(H, g, A, b + shift, ys, max_iter, MODE_PD if pd else MODE_GENERIC)
    return st2, y2, lam, shift, it1 + it2


@njit(cache=True)
def build_condensed(Hu, fu, Gam, xf, RT, Rd, nrow, sigma, m):
    """Sequence QP in the inputs of triggered steps.

    Label -1 marks a step with a free input and no state constraint.
    Returns ``(free, H, g, A, b)`` with ``H = 2 Hu[free, free]``.
    """
    N = sigma.size
    free = np.empty(m * N, np.int64)
    k = 0
    for t in range(N):
        if sigma[t] != 0:
            for j in range(m):
                free[k] = t * m + j
                k += 1
    free = free[:k].copy()
    H = np.empty((k, k))
    g = np.empty(k)
    for a in range(k):
        g[a] = 2.0 * fu[free[a]]
        for c in range(k):
            H[a, c] = 2.0 * Hu[free[a], free[c]]
    nr = 0
    for t in range(1, N):
        if sigma[t] >= 0:
            nr += nrow[sigma[t]]
    A = np.empty((nr, k))
    b = np.empty(nr)
    n = xf.shape[1]
    r = 0
    for t in range(1, N):
        s = sigma[t]
        if s < 0:
            continue
        Gt = np.empty((n, k))
        for i in range(n):
            for a in range(k):
                Gt[i, a] = Gam[t, i, free[a]]
        for q in range(nrow[s]):
            A[r] = RT[s, q] @ Gt
            b[r] = Rd[s, q] - RT[s, q] @ xf[t]
            r += 1
    return free, H, g, A, b
