"""Self-contained LP / convex-QP / log-concave maximization routines.

One Mehrotra-style primal-dual interior-point loop handles both LPs
(H = 0) and convex QPs over ``A_eq x = b_eq, A_in x <= b_in``. The
hyper-rectangle volume objectives are maximized by a damped-Newton
log-barrier method. No external solver dependencies; every run with the
same inputs is bit-identical (fixed step rules, no restarts).

Project-wide tolerances: primal/dual feasibility 1e-8, duality gap 1e-8,
Newton decrement 1e-8, at most 200 iterations per solve.
"""

import enum

import numpy as np

FEAS_TOL = 1e-8
GAP_TOL = 1e-8
NEWTON_TOL = 1e-8
MAX_ITER = 200

# Objective magnitude beyond which a feasible minimizing sequence is
# declared an unbounded ray.
_DIVERGE = 1e12


class SolverError(Exception):
    pass


class DegenerateCoordinate(SolverError):
    """A box coordinate has (numerically) zero feasible width.

    Carries the offending coordinate indices; the caller decides whether
    to clamp them to zero width and retry.
    """

    def __init__(self, coords, widths):
        self.coords = list(coords)
        self.widths = widths
        super().__init__(f"degenerate box coordinates {self.coords}")


class Status(enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    MAXITER = "MaxIter"


class LpProblem:
    """maximize c.x  s.t.  A x <= b, optional A_eq x = b_eq and variable
    bounds lower <= x <= upper (unbounded by default)."""

    def __init__(self, c, A=None, b=None, A_eq=None, b_eq=None,
                 lower=None, upper=None):
        self.c = np.asarray(c, dtype=float).reshape(-1)
        self.A = None if A is None else np.asarray(A, dtype=float)
        self.b = None if b is None else np.asarray(b, dtype=float).reshape(-1)
        self.A_eq = None if A_eq is None else np.asarray(A_eq, dtype=float)
        self.b_eq = None if b_eq is None else np.asarray(b_eq, dtype=float).reshape(-1)
        _check_dims(self.c.size, self.A, self.b, self.A_eq, self.b_eq)
        n = self.c.size
        self.lower = np.full(n, -np.inf) if lower is None \
            else np.asarray(lower, dtype=float).reshape(n)
        self.upper = np.full(n, np.inf) if upper is None \
            else np.asarray(upper, dtype=float).reshape(n)
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound exceeds upper bound")

    def bound_rows(self):
        """Finite variable bounds as inequality rows (G, h)."""
        n = self.c.size
        rows, rhs = [], []
        for j in range(n):
            if np.isfinite(self.upper[j]):
                e = np.zeros(n)
                e[j] = 1.0
                rows.append(e)
                rhs.append(self.upper[j])
            if np.isfinite(self.lower[j]):
                e = np.zeros(n)
                e[j] = -1.0
                rows.append(e)
                rhs.append(-self.lower[j])
        if not rows:
            return np.zeros((0, n)), np.zeros(0)
        return np.array(rows), np.array(rhs)


class QpProblem:
    """minimize 0.5 x.H x + g.x  s.t.  A_eq x = b_eq, A_in x <= b_in.

    H must be symmetric positive semidefinite (eigenvalue floor -1e-10
    before symmetrization).
    """

    def __init__(self, H, g, A_in=None, b_in=None, A_eq=None, b_eq=None):
        H = np.asarray(H, dtype=float)
        self.H = 0.5 * (H + H.T)
        self.g = np.asarray(g, dtype=float).reshape(-1)
        if np.min(np.linalg.eigvalsh(self.H)) < -1e-10:
            raise ValueError("H must be positive semidefinite")
        self.A_in = None if A_in is None else np.asarray(A_in, dtype=float)
        self.b_in = None if b_in is None else np.asarray(b_in, dtype=float).reshape(-1)
        self.A_eq = None if A_eq is None else np.asarray(A_eq, dtype=float)
        self.b_eq = None if b_eq is None else np.asarray(b_eq, dtype=float).reshape(-1)
        _check_dims(self.g.size, self.A_in, self.b_in, self.A_eq, self.b_eq)


class SolveReport:
    """Outcome of one solve. Immutable.

    status OPTIMAL guarantees kkt_residual <= 1e-6 and constraint
    violation <= 1e-8 (both scaled by the problem data magnitude).
    """

    def __init__(self, status, x, objective, kkt_residual, iterations, certificate=None):
        self.status = status
        self.x = None if x is None else np.array(x, dtype=float)
        if self.x is not None:
            self.x.flags.writeable = False
        self.objective = None if objective is None else float(objective)
        self.kkt_residual = float(kkt_residual)
        self.iterations = int(iterations)
        self.certificate = certificate

    def __repr__(self):
        return f"SolveReport({self.status.value}, obj={self.objective}, kkt={self.kkt_residual:.2e})"


def _check_dims(n, A_in, b_in, A_eq, b_eq):
    for mat, vec, name in ((A_in, b_in, "inequality"), (A_eq, b_eq, "equality")):
        if (mat is None) != (vec is None):
            raise ValueError(f"{name} matrix and rhs must be given together")
        if mat is not None:
            if mat.ndim != 2 or mat.shape[1] != n or mat.shape[0] != vec.size:
                raise ValueError(f"{name} block has inconsistent dimensions")
            if not (np.all(np.isfinite(mat)) and np.all(np.isfinite(vec))):
                raise ValueError(f"{name} block must be finite")


def _empty(n):
    return np.zeros((0, n)), np.zeros(0)


def _ipm(H, g, A, b, G, h, tol, classify=True):
    """Mehrotra predictor-corrector on min 0.5 x.H x + g.x, Ax=b, Gx<=h.

    Returns (status, x, kkt_residual, iterations, certificate).
    """
    n = g.size
    p, m = A.shape[0], G.shape[0]

    scale_p = 1.0 + max(np.max(np.abs(b), initial=0.0), np.max(np.abs(h), initial=0.0))
    scale_d = 1.0 + np.max(np.abs(g), initial=0.0) + (np.max(np.abs(H)) if H.size else 0.0)

    # Deterministic start: least-squares on the equalities, unit slacks.
    if p > 0:
        x = np.linalg.lstsq(A, b, rcond=None)[0]
    else:
        x = np.zeros(n)
    y = np.zeros(p)
    if m > 0:
        s = np.maximum(h - G @ x, 1.0)
        z = np.ones(m)
    else:
        s = np.zeros(0)
        z = np.zeros(0)

    def residuals(x, y, z, s):
        rd = H @ x + g + (A.T @ y if p else 0.0) + (G.T @ z if m else 0.0)
        rp = (A @ x - b) if p else np.zeros(0)
        rg = (G @ x + s - h) if m else np.zeros(0)
        return rd, rp, rg

    if m == 0:
        # Pure equality-constrained QP: one KKT solve.
        K = np.block([[H, A.T], [A, np.zeros((p, p))]]) if p else H
        rhs = np.concatenate([-g, b]) if p else -g
        try:
            sol = np.linalg.solve(K + 1e-12 * np.eye(K.shape[0]), rhs)
        except np.linalg.LinAlgError:
            return Status.MAXITER, None, np.inf, 0, None
        x = sol[:n]
        y = sol[n:]
        rd, rp, _ = residuals(x, y, z, s)
        res = max(np.max(np.abs(rd)) / scale_d, (np.max(np.abs(rp)) / scale_p) if p else 0.0)
        if res <= 1e-6:
            return Status.OPTIMAL, x, res, 1, None
        # Singular H with a drift direction: unbounded below.
        return (Status.UNBOUNDED if classify else Status.MAXITER), None, res, 1, None

    best = None
    for it in range(1, MAX_ITER + 1):
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(s))
                and np.all(np.isfinite(z)) and np.max(s) < 1e100
                and np.max(z) < 1e100 and np.min(s) > 1e-200):
            break  # diverged; fall through to classification
        rd, rp, rg = residuals(x, y, z, s)
        mu = float(z @ s) / m
        pres = (np.max(np.abs(rp)) if p else 0.0, np.max(np.abs(rg)))
        res_p = max(pres) / scale_p
        res_d = np.max(np.abs(rd)) / scale_d
        res_g = mu / scale_d
        kkt = max(res_p, res_d, res_g)
        if best is None or kkt < best[0]:
            best = (kkt, x.copy(), it)
        if res_p <= tol and res_d <= tol and res_g <= tol:
            return Status.OPTIMAL, x, kkt, it, None

        obj = 0.5 * x @ H @ x + g @ x
        if classify and res_p <= 1e-6 and obj < -_DIVERGE * scale_d:
            return Status.UNBOUNDED, None, kkt, it, None

        d = z / s
        M = H + G.T @ (d[:, None] * G)
        reg = 1e-12 * scale_d
        K = None
        for _ in range(6):
            K = np.block([[M + reg * np.eye(n), A.T], [A, -reg * np.eye(p)]]) if p \
                else M + reg * np.eye(n)
            try:
                np.linalg.solve(K, np.zeros(K.shape[0]))
                break
            except np.linalg.LinAlgError:
                reg *= 100.0
                K = None
        if K is None:
            break

        def solve_kkt(rx, ry):
            rhs = np.concatenate([rx, ry]) if p else rx
            sol = np.linalg.solve(K, rhs)
            return (sol[:n], sol[n:]) if p else (sol, np.zeros(0))

        # Affine scaling (predictor) direction.
        rhs_x = -(rd + G.T @ (d * rg - z))
        dx_a, dy_a = solve_kkt(rhs_x, -rp if p else None)
        ds_a = -rg - G @ dx_a
        dz_a = -z - d * ds_a

        a_p = _max_step(s, ds_a)
        a_d = _max_step(z, dz_a)
        mu_aff = float((z + a_d * dz_a) @ (s + a_p * ds_a)) / m
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0

        # Corrector.
        corr = (sigma * mu - ds_a * dz_a) / s
        rhs_x = -(rd + G.T @ (d * rg - z + corr))
        dx, dy = solve_kkt(rhs_x, -rp if p else None)
        ds = -rg - G @ dx
        dz = (sigma * mu - ds_a * dz_a) / s - z - d * ds

        alpha = 0.995 * min(_max_step(s, ds), _max_step(z, dz))
        alpha = min(alpha, 1.0)
        x = x + alpha * dx
        y = y + alpha * dy
        s = s + alpha * ds
        z = z + alpha * dz

    # Did not converge: classify via an elastic phase-1 LP, never report a
    # silent wrong answer.
    if classify:
        t, cert = _phase1(A, b, G, h)
        if t is None:
            return Status.MAXITER, best[1], best[0], MAX_ITER, None
        if t > 1e-7:
            return Status.INFEASIBLE, None, best[0], MAX_ITER, cert
    return Status.MAXITER, best[1], best[0], MAX_ITER, None


def _max_step(v, dv):
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-v[neg] / dv[neg])))


def _phase1(A, b, G, h):
    """min t s.t. Gx <= h + t, Ax = b, t >= 0; classifies feasibility."""
    n = G.shape[1]
    m = G.shape[0]
    Gx = np.hstack([G, -np.ones((m, 1))])
    Gx = np.vstack([Gx, np.concatenate([np.zeros(n), [-1.0]])])
    hx = np.concatenate([h, [0.0]])
    Ax = np.hstack([A, np.zeros((A.shape[0], 1))]) if A.shape[0] else np.zeros((0, n + 1))
    c = np.zeros(n + 1)
    c[-1] = 1.0
    st, xt, kkt, _, _ = _ipm(np.zeros((n + 1, n + 1)), c, Ax, b, Gx, hx,
                             tol=FEAS_TOL, classify=False)
    if st != Status.OPTIMAL or xt is None:
        return None, None
    return float(xt[-1]), xt


def solve_lp(p, tol=FEAS_TOL):
    """Maximize c.x subject to the problem's constraints."""
    n = p.c.size
    G, h = (p.A, p.b) if p.A is not None else _empty(n)
    Gb, hb = p.bound_rows()
    if Gb.shape[0]:
        G = np.vstack([G, Gb])
        h = np.concatenate([h, hb])
    A, b = (p.A_eq, p.b_eq) if p.A_eq is not None else _empty(n)
    st, x, kkt, it, cert = _ipm(np.zeros((n, n)), -p.c, A, b, G, h, tol)
    if st == Status.OPTIMAL:
        x = _crossover(p.c, A, b, G, h, x)
    obj = float(p.c @ x) if x is not None and st == Status.OPTIMAL else None
    return SolveReport(st, x, obj, kkt, it, cert)


def _crossover(c, A, b, G, h, x):
    """Snap an interior-point iterate to the active-set vertex.

    Builds a full-rank basis from equality rows plus the tightest
    inequality rows and re-solves it exactly; accepted only when the
    refined point is feasible and at least as good, otherwise the
    unpolished iterate is kept. Removes the O(gap) objective bias of the
    barrier iterate on non-degenerate LPs.
    """
    n = x.size
    scale = 1.0 + float(np.max(np.abs(h), initial=0.0))
    slack = h - G @ x
    order = np.argsort(slack, kind="stable")
    rows = []
    basis = [A[i] for i in range(A.shape[0])]
    rhs = [b[i] for i in range(A.shape[0])]
    for i in order:
        if slack[i] > 1e-5 * scale or len(basis) == n:
            break
        trial = np.array(basis + [G[i]])
        if np.linalg.matrix_rank(trial, tol=1e-10) == len(basis) + 1:
            basis.append(G[i])
            rhs.append(h[i])
            rows.append(i)
    if len(basis) != n:
        return x
    try:
        xv = np.linalg.solve(np.array(basis), np.array(rhs))
    except np.linalg.LinAlgError:
        return x
    feas_ok = (np.max(G @ xv - h, initial=0.0) <= 1e-9 * scale
               and (A.shape[0] == 0 or np.max(np.abs(A @ xv - b)) <= 1e-9 * scale))
    if feas_ok and c @ xv >= c @ x - 1e-9 * scale:
        return xv
    return x


def solve_qp(p, tol=FEAS_TOL):
    """Minimize 0.5 x.H x + g.x subject to the problem's constraints."""
    n = p.g.size
    G, h = (p.A_in, p.b_in) if p.A_in is not None else _empty(n)
    A, b = (p.A_eq, p.b_eq) if p.A_eq is not None else _empty(n)
    st, x, kkt, it, cert = _ipm(p.H, p.g, A, b, G, h, tol)
    obj = float(0.5 * x @ p.H @ x + p.g @ x) if x is not None and st == Status.OPTIMAL else None
    return SolveReport(st, x, obj, kkt, it, cert)


def feasibility(A, b):
    """A strictly interior-ish point of {x : Ax <= b}, or None if empty."""
    t, xt = _phase1(np.zeros((0, A.shape[1])), np.zeros(0), np.asarray(A, float),
                    np.asarray(b, float).reshape(-1))
    if t is None or t > 1e-7:
        return None
    return xt[:-1]


# ---------------------------------------------------------------------------
# Hyper-rectangle volume maximization
# ---------------------------------------------------------------------------

MODE_SUM_LOG_WIDTH = "sum_log_width"   # f1: sum_j log(vbar_j + vund_j)
MODE_SUM_LOG_BOTH = "sum_log_both"     # f2: sum_j log(vbar_j) + log(vund_j)


def coordinate_widths(W, d):
    """Per-variable feasible maxima over {v >= 0 : W v <= d}.

    Valid because W is entrywise nonnegative in this problem family
    (vertex-support rows), which makes the feasible set downward closed:
    the max of v_j is attained with all other coordinates at zero, i.e.
    min_i d_i / W_ij over rows with W_ij > 0 (+inf if no row binds).
    """
    W = np.asarray(W, dtype=float)
    d = np.asarray(d, dtype=float).reshape(-1)
    if np.min(W, initial=0.0) < -1e-12:
        raise ValueError("coordinate_widths expects a nonnegative constraint matrix")
    out = np.full(W.shape[1], np.inf)
    for j in range(W.shape[1]):
        col = W[:, j]
        mask = col > 0
        if np.any(mask):
            out[j] = float(np.min(d[mask] / col[mask]))
    return np.maximum(out, 0.0)


def maximize_log_volume(W, d, mode, active=None):
    """Maximize a log-volume objective over {v >= 0 : W v <= d}.

    The variable v stacks the upper widths vbar (first k) and lower widths
    vund (last k) of a box around the origin. ``mode`` selects f1
    (sum of log total widths) or f2 (sum of logs of both one-sided widths).
    ``active`` optionally masks coordinate pairs; inactive pairs are pinned
    to zero width and excluded from the objective.

    Raises DegenerateCoordinate when an active coordinate pair has feasible
    width below 1e-9 (the caller decides the clamp), and Unbounded status
    when some width is infinite. In f1 mode a pair may survive with one
    side forced to zero (one-sided box); that side is fixed rather than
    treated as degenerate.
    """
    W = np.asarray(W, dtype=float)
    d = np.asarray(d, dtype=float).reshape(-1)
    if W.shape[1] % 2 != 0:
        raise ValueError("variable count must be even (vbar/vund pairs)")
    k = W.shape[1] // 2
    if mode not in (MODE_SUM_LOG_WIDTH, MODE_SUM_LOG_BOTH):
        raise ValueError(f"unknown mode {mode!r}")
    if np.min(d, initial=0.0) < -FEAS_TOL:
        raise SolverError("polyhedron infeasible at v = 0")
    d = np.maximum(d, 0.0)
    if active is None:
        active = np.ones(k, dtype=bool)
    else:
        active = np.asarray(active, dtype=bool).reshape(k)

    widths = coordinate_widths(W, d)
    if np.any(np.isinf(widths[np.concatenate([active, active])])):
        return SolveReport(Status.UNBOUNDED, None, None, np.inf, 0)

    up, dn = widths[:k], widths[k:]
    if mode == MODE_SUM_LOG_WIDTH:
        bad = active & (np.maximum(up, dn) < 1e-9)
    else:
        bad = active & (np.minimum(up, dn) < 1e-9)
    if np.any(bad):
        raise DegenerateCoordinate(np.flatnonzero(bad).tolist(), widths)

    # Live variables: members of active pairs with nonvanishing width.
    # (mode f2 keeps both sides of every active pair by the check above.)
    live = np.concatenate([active, active]) & (widths >= 1e-9)
    groups = []
    for j in np.flatnonzero(active):
        if mode == MODE_SUM_LOG_BOTH:
            groups.append([j])
            groups.append([k + j])
        else:
            groups.append([idx for idx in (j, k + j) if live[idx]])
    idx = np.flatnonzero(live)
    if idx.size == 0:
        return SolveReport(Status.OPTIMAL, np.zeros(2 * k), 0.0, 0.0, 0)

    remap = -np.ones(2 * k, dtype=int)
    remap[idx] = np.arange(idx.size)
    groups = [[int(remap[i]) for i in g] for g in groups]
    Wa = W[:, idx]
    keep = np.max(np.abs(Wa), axis=1) > 0
    Wa, da = Wa[keep], d[keep]
    wid = widths[idx]

    v, decrement, iters = _barrier_newton(Wa, da, groups, wid)
    if v is None:
        return SolveReport(Status.MAXITER, None, None, np.inf, iters)
    v = _kkt_polish(Wa, da, groups, v)

    full = np.zeros(2 * k)
    full[idx] = v
    obj = _group_log_volume(v, groups)
    return SolveReport(Status.OPTIMAL, full, obj, decrement, iters)


def _group_log_volume(v, groups):
    """sum over groups of log(sum of member variables); -inf off-domain."""
    out = 0.0
    for g in groups:
        s = float(np.sum(v[g]))
        if s <= 0:
            return -np.inf
        out += np.log(s)
    return out


def _group_terms(v, groups):
    """Gradient and Hessian of the grouped log objective."""
    nv = v.size
    g = np.zeros(nv)
    H = np.zeros((nv, nv))
    for grp in groups:
        s = max(float(np.sum(v[grp])), 1e-150)
        for i in grp:
            g[i] += 1.0 / s
            for jj in grp:
                H[i, jj] -= 1.0 / s ** 2
    return g, H


def _barrier_newton(W, d, groups, wid):
    """Damped Newton on t*(-f) + barrier, t increased geometrically.

    Stops at a moderate duality gap; the active-set polish afterwards
    removes the remaining O(gap) bias without driving the barrier into
    its ill-conditioned regime. ``wid`` holds per-variable feasible maxima
    used to pick a strictly interior start.
    """
    m, nv = W.shape
    v = 0.3 * np.minimum(wid, np.max(wid))
    for _ in range(200):
        if np.all(d - W @ v > 0):
            break
        v *= 0.5
    else:
        return None, np.inf, 0

    n_barrier = m + nv
    t = 1.0
    total_it = 0
    lam2 = np.inf
    while total_it < MAX_ITER:
        for _ in range(60):
            total_it += 1
            slack = d - W @ v
            grad_b = W.T @ (1.0 / slack) - 1.0 / v
            hess_b = (W.T * (1.0 / slack ** 2)) @ W + np.diag(1.0 / v ** 2)
            gf, hf = _group_terms(v, groups)
            grad = -t * gf + grad_b
            hess = -t * hf + hess_b
            step = _ridge_solve(hess, -grad)
            if step is None:
                return (v, lam2, total_it) if np.all(np.isfinite(v)) else (None, np.inf, total_it)
            lam2 = float(-grad @ step)
            if lam2 / 2.0 <= 1e-12 or total_it >= MAX_ITER:
                break
            # Backtrack to stay strictly feasible and decrease the merit.
            alpha = 1.0
            phi0 = _merit(v, W, d, groups, t)
            while alpha > 1e-14:
                vn = v + alpha * step
                if np.all(vn > 0) and np.all(d - W @ vn > 0):
                    if _merit(vn, W, d, groups, t) <= phi0 - 0.01 * alpha * lam2:
                        break
                alpha *= 0.5
            v = v + alpha * step
        if n_barrier / t <= 1e-7 and lam2 / 2.0 <= NEWTON_TOL:
            return v, lam2 / 2.0, total_it
        t *= 20.0
    return v, lam2 / 2.0, total_it


def _ridge_solve(Hm, rhs):
    scale = np.max(np.abs(Hm))
    if not np.isfinite(scale):
        return None
    reg = 0.0
    for _ in range(8):
        try:
            out = np.linalg.solve(Hm + reg * np.eye(Hm.shape[0]), rhs)
            if np.all(np.isfinite(out)):
                return out
        except np.linalg.LinAlgError:
            pass
        reg = max(reg * 100.0, 1e-14 * max(scale, 1.0))
    return None


def _kkt_polish(W, d, groups, v):
    """Active-set Newton refinement to machine accuracy.

    Pins the (near-)active constraint rows and near-zero variables as
    equalities and runs equality-constrained Newton on the smooth concave
    objective. The polished point is accepted only when it is feasible,
    stays in the objective domain, and does not lose objective value;
    otherwise the barrier point is returned unchanged.
    """
    nv = v.size
    scale = 1.0 + float(np.max(np.abs(d), initial=0.0))
    slack = d - W @ v
    act_rows = np.flatnonzero(slack <= 1e-5 * scale)
    singles = {g[0] for g in groups if len(g) == 1}
    act_vars = np.array([j for j in np.flatnonzero(v <= 1e-5 * scale)
                         if j not in singles], dtype=int)
    E = np.vstack([W[act_rows]] + [_unit(nv, j)[None, :] for j in act_vars]) \
        if (act_rows.size + act_vars.size) else np.zeros((0, nv))
    r = np.concatenate([d[act_rows], np.zeros(act_vars.size)])
    p = E.shape[0]

    vp = v.copy()
    lam = np.zeros(p)
    for _ in range(40):
        gf, hf = _group_terms(vp, groups)
        res_d = -gf + (E.T @ lam if p else 0.0)
        res_p = (E @ vp - r) if p else np.zeros(0)
        K = np.block([[-hf + 1e-13 * np.eye(nv), E.T],
                      [E, np.zeros((p, p))]]) if p else -hf + 1e-13 * np.eye(nv)
        sol = _ridge_solve(K, -np.concatenate([res_d, res_p]) if p else -res_d)
        if sol is None:
            return v
        dv = sol[:nv]
        dl = sol[nv:] if p else np.zeros(0)
        alpha = 1.0
        for _ in range(60):
            if _group_log_volume(vp + alpha * dv, groups) > -np.inf:
                break
            alpha *= 0.5
        else:
            return v
        vp = vp + alpha * dv
        lam = lam + alpha * dl
        if max(np.max(np.abs(res_d), initial=0.0),
               np.max(np.abs(res_p), initial=0.0)) <= 1e-13 * scale and alpha == 1.0:
            break
    vp[act_vars] = 0.0
    vp = np.maximum(vp, 0.0)

    ok = (np.min(d - W @ vp, initial=np.inf) >= -1e-12 * scale
          and _group_log_volume(vp, groups) >= _group_log_volume(v, groups))
    if not ok:
        return v
    lam_rows = lam[:act_rows.size]
    if lam_rows.size and np.min(lam_rows) < -1e-6:
        return v
    return vp


def _unit(n, j):
    e = np.zeros(n)
    e[j] = 1.0
    return e


def _merit(v, W, d, groups, t):
    slack = d - W @ v
    if np.any(slack <= 0) or np.any(v <= 0):
        return np.inf
    return -t * _group_log_volume(v, groups) - np.sum(np.log(slack)) - np.sum(np.log(v))
