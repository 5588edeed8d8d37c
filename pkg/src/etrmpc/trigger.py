"""Triggering-set construction around an optimal plan.

For each step j of the horizon the controller builds an error box E_j
such that, as long as the measured state stays within E_j of the nominal
prediction, a feasible shifted plan is guaranteed to exist and the value
function keeps decaying. The box is the maximum-volume hyper-rectangle
(containing the origin) inscribed in a principal polytope whose rows
encode, per facet of every tightened set, how much constraint slack the
candidate plan leaves for prediction errors.

Two exact convex-program routes (CP1/CP2, one per volume definition) and
two linear-program relaxations (LP1/LP2) are provided.
"""

import numpy as np

from . import geometry, solver
from .geometry import FEAS_TOL, HyperRect, Polytope

CP1, CP2, LP1, LP2 = "CP1", "CP2", "LP1", "LP2"
METHODS = (CP1, CP2, LP1, LP2)

# Matrix blocks with Frobenius norm at or below the nilpotency tolerance
# contribute vacuous rows (validated, then dropped).
ZERO_BLOCK_TOL = 1e-8


class TriggerError(Exception):
    pass


class InfeasibleCandidate(TriggerError):
    """A candidate point violates a raw constraint row: upstream bug."""


class CandidateData:
    """Shifted-and-extended plan for splice index j.

    u_tilde concatenates the last N-j optimal inputs with the nominal
    feedback applied to the terminal state; phi_tilde is the matching
    state sequence; the slack sequences splice the optimal projections
    with tail self-projections (the tail lies inside the targets, so it
    projects onto itself).
    """

    def __init__(self, j, u_tilde, phi_tilde, sx_tilde, su_tilde):
        self.j = j
        self.u_tilde = u_tilde
        self.phi_tilde = phi_tilde
        self.sx_tilde = sx_tilde
        self.su_tilde = su_tilde


def build_candidates(setup, sol, j):
    """Candidate sequences for splice index j in [1, N-1]."""
    N = setup.N
    if not 1 <= j <= N - 1:
        raise IndexError(f"splice index {j} outside [1, {N - 1}]")
    A, B, F = setup.plant.A, setup.plant.B, setup.F

    phi = np.zeros((N + 1, setup.nx))
    u = np.zeros((N, setup.nu))
    phi[:N - j + 1] = sol.x[j:]
    u[:N - j] = sol.u[j:]
    for i in range(N - j, N):
        u[i] = F @ phi[i]
        phi[i + 1] = A @ phi[i] + B @ u[i]

    sx = np.zeros((N, setup.nx))
    su = np.zeros((N, setup.nu))
    sx[:N - j] = sol.sx[j:]
    su[:N - j] = sol.su[j:]
    sx[N - j:] = phi[N - j:N]
    su[N - j:] = u[N - j:]
    return CandidateData(j, u, phi, sx, su)


class PrincipalPolytope:
    """Constraint rows over the box-vertex parameters [vbar; vund].

    G holds the error-space normals (one per surviving row), W the lifted
    vertex-support rows, d the offsets b - a.xi, and meta the provenance
    of each row as (family, stage, facet).
    """

    def __init__(self, k, W, d, G, meta):
        self.k = k
        self.W = W
        self.d = d
        self.G = G
        self.meta = meta

    @classmethod
    def from_error_rows(cls, G, d):
        """Build directly from error-space rows G e <= d (origin inside)."""
        G = np.asarray(G, dtype=float)
        d = np.asarray(d, dtype=float).reshape(-1)
        if np.min(d, initial=0.0) < -FEAS_TOL:
            raise InfeasibleCandidate("origin outside the supplied rows")
        W = np.hstack([np.maximum(G, 0.0), np.maximum(-G, 0.0)])
        meta = [("raw", 0, r) for r in range(G.shape[0])]
        return cls(G.shape[1], W, np.maximum(d, 0.0), G, meta)

    @property
    def n_rows(self):
        return self.d.size

    def error_polytope(self):
        """The principal polytope in error coordinates, {e : G e <= d}."""
        return Polytope(self.G, self.d)

    def box_slack(self, box):
        """min over rows of d - w.[vbar; vund]; >= 0 certifies the box."""
        v = np.concatenate([box.upper, -box.lower])
        return float(np.min(self.d - self.W @ v)) if self.d.size else np.inf


def assemble_principal(setup, cand, j=None):
    """Vertex-support rows for all 4N set constraints of splice index j.

    Rows whose mapped direction vanishes (nilpotent tail blocks) reduce to
    plain feasibility checks on the candidate: they are validated against
    the feasibility tolerance and dropped. Raises InfeasibleCandidate when
    any check fails.
    """
    if j is None:
        j = cand.j
    N, k = setup.N, setup.nx
    families = (
        ("state", cand.phi_tilde, setup.Xseq, lambda i: setup.Ltilde[i]),
        ("input", cand.u_tilde, setup.Useq, lambda i: setup.Ktilde[i] @ setup.Ltilde[i]),
        ("slack_state", cand.sx_tilde, setup.TXseq, lambda i: setup.Ltilde[i]),
        ("slack_input", cand.su_tilde, setup.TUseq, lambda i: setup.Ktilde[i] @ setup.Ltilde[i]),
    )
    Wrows, ds, Gs, meta = [], [], [], []
    for name, points, sets, mat in families:
        for i in range(N):
            S = sets[i]
            Mhat = mat(i)
            zero_block = np.linalg.norm(Mhat, "fro") <= ZERO_BLOCK_TOL
            xi = points[i]
            offs = S.b - S.A @ xi
            bad = np.min(offs)
            if bad < -FEAS_TOL:
                raise InfeasibleCandidate(
                    f"candidate j={j}: {name}[{i}] violates facet by {-bad:.3e}")
            if zero_block:
                continue
            Gblock = S.A @ Mhat
            for r in range(S.A.shape[0]):
                g = Gblock[r]
                if np.all(g == 0.0):
                    continue
                w = np.concatenate([np.maximum(g, 0.0), np.maximum(-g, 0.0)])
                Wrows.append(w)
                ds.append(max(offs[r], 0.0))
                Gs.append(g)
                meta.append((name, i, r))
    if not Wrows:
        raise TriggerError(f"no active rows at j={j}: error space unconstrained")
    return PrincipalPolytope(k, np.array(Wrows), np.array(ds), np.array(Gs), meta)


class BoxResult:
    def __init__(self, box, degenerate, objective=None):
        self.box = box
        self.degenerate = list(degenerate)
        self.objective = objective


def construct_box_cp(pp, q):
    """Maximum-volume box by the exact convex-program route.

    q=1 maximizes the product of total widths, q=2 the product of both
    one-sided widths. Coordinates with feasible width below 1e-9 are
    clamped to zero width and excluded from the log objective.
    """
    mode = solver.MODE_SUM_LOG_WIDTH if q == 1 else solver.MODE_SUM_LOG_BOTH
    k = pp.k
    active = np.ones(k, dtype=bool)
    degenerate = []
    for _ in range(k + 1):
        if not np.any(active):
            return BoxResult(HyperRect(np.zeros(k), np.zeros(k)), degenerate, 0.0)
        try:
            rep = solver.maximize_log_volume(pp.W, pp.d, mode, active=active)
        except solver.DegenerateCoordinate as exc:
            degenerate.extend(exc.coords)
            active[exc.coords] = False
            continue
        if rep.status == solver.Status.UNBOUNDED:
            raise TriggerError("principal polytope leaves a box coordinate unbounded")
        if rep.status != solver.Status.OPTIMAL:
            raise TriggerError(f"volume maximization failed: {rep.status}")
        vbar, vund = rep.x[:k], rep.x[k:]
        box = HyperRect(-vund, vbar)
        return BoxResult(box, sorted(degenerate), rep.objective)
    raise TriggerError("degenerate-coordinate clamping did not terminate")


def construct_box_lp(pp, q):
    """Maximum-volume r-constrained box by the linear-program relaxation.

    q=1: per-coordinate segment LPs in error space, then one scaling LP
    over the segment profile. q=2: per-direction widths of the lifted
    polytope (single-variable LPs, solved in closed form by row ratios)
    and a scalar scaling step.
    """
    if q == 1:
        return _lp1_box(pp)
    if q == 2:
        return _lp2_box(pp)
    raise ValueError(f"q must be 1 or 2, got {q}")


def _lp_point(rep, what):
    """Optimal point, or a near-converged iterate (the relaxation is
    allowed to be conservative; the built box is re-certified and scaled
    back into the rows afterwards)."""
    if rep.status == solver.Status.OPTIMAL:
        return rep.x
    if (rep.status == solver.Status.MAXITER and rep.x is not None
            and rep.kkt_residual <= 1e-6):
        return rep.x
    raise TriggerError(f"{what} failed: {rep.status}")


def _lp1_box(pp):
    k = pp.k
    G, d = pp.G, pp.d
    m = G.shape[0]
    r = np.zeros(k)
    for j in range(k):
        # max omega s.t. both segment ends in the polytope, z <= 0 <= z + omega e_j.
        nv = k + 1
        ej = np.zeros(k)
        ej[j] = 1.0
        rows = [np.hstack([G, np.zeros((m, 1))]),
                np.hstack([G, (G @ ej)[:, None]]),
                np.hstack([np.eye(k), np.zeros((k, 1))]),
                np.hstack([-np.eye(k), -ej[:, None]])]
        rhs = [d, d, np.zeros(k), np.zeros(k)]
        c = np.zeros(nv)
        c[-1] = 1.0
        rep = solver.solve_lp(solver.LpProblem(
            c=c, A=np.vstack(rows), b=np.concatenate(rhs)))
        omega = _lp_point(rep, f"segment LP on coordinate {j}")[-1]
        # Segments below the degenerate-width threshold collapse to
        # zero-width coordinates (kept out of the scaling LP).
        r[j] = omega if omega > 1e-9 else 0.0

    degenerate = np.flatnonzero(r == 0.0).tolist()
    act = r > 0.0
    if not np.any(act):
        return BoxResult(HyperRect(np.zeros(k), np.zeros(k)), degenerate)
    # Scaling LP over the non-degenerate coordinates: max lambda with the
    # r-profile box anchored at z <= 0 (zero-width coordinates pin z_j = 0).
    Ga = G[:, act]
    ka = int(np.sum(act))
    ra = r[act]
    Gpos = np.maximum(G, 0.0)
    nv = ka + 1
    rows = [np.hstack([Ga, (Gpos @ r)[:, None]]),
            np.hstack([np.eye(ka), np.zeros((ka, 1))]),
            np.hstack([-np.eye(ka), -ra[:, None]]),
            np.hstack([np.zeros((1, ka)), -np.ones((1, 1))])]
    rhs = [d, np.zeros(ka), np.zeros(ka), np.zeros(1)]
    c = np.zeros(nv)
    c[-1] = 1.0
    rep = solver.solve_lp(solver.LpProblem(
        c=c, A=np.vstack(rows), b=np.concatenate(rhs)))
    point = _lp_point(rep, "scaling LP")
    z = np.zeros(k)
    z[act] = np.minimum(point[:ka], 0.0)
    lam = max(point[-1], 0.0)
    upper = np.maximum(z + lam * r, 0.0)
    return BoxResult(_fit_into_rows(pp, HyperRect(z, upper)), degenerate)


def _fit_into_rows(pp, box):
    """Scale a box about the origin until every principal row holds.

    No-op for certified boxes; a near-converged LP iterate may stick out
    by its KKT residual, and any uniformly shrunk copy is still a valid
    (more conservative) trigger set.
    """
    v = np.concatenate([box.upper, -box.lower])
    prof = pp.W @ v
    mask = prof > pp.d
    if not np.any(mask):
        return box
    theta = float(np.min(pp.d[mask] / prof[mask]))
    theta = max(0.0, min(theta, 1.0)) * (1.0 - 1e-12)
    return HyperRect(theta * box.lower, theta * box.upper)


def _lp2_box(pp):
    k = pp.k
    W, d = pp.W, pp.d
    # Width of the axis segment from the origin in the lifted polytope:
    # single-variable LPs max {omega : omega W e_j <= d}, solved by ratios.
    r = solver.coordinate_widths(W, d)
    if np.any(np.isinf(r)):
        raise TriggerError("principal polytope leaves a box coordinate unbounded")
    r[r <= 1e-9] = 0.0
    prof = W @ r
    pos = prof > 0
    lam = float(np.min(d[pos] / prof[pos])) if np.any(pos) else 0.0
    lam = max(lam, 0.0)
    r_up, r_dn = r[:k], r[k:]
    box = _fit_into_rows(pp, HyperRect(-lam * r_dn, lam * r_up))
    degenerate = np.flatnonzero((r_up == 0.0) | (r_dn == 0.0)).tolist()
    return BoxResult(box, degenerate)


def volumes(box):
    """(vol_1, vol_2): product of total widths and of one-sided widths."""
    up = box.upper
    dn = -box.lower
    return float(np.prod(up + dn)), float(np.prod(up * dn))


class TriggerSchedule:
    """Error boxes E_1..E_{N-1} around a plan (E_0 is all of R^nx)."""

    def __init__(self, method, boxes, vol1, vol2, degenerate_coords,
                 shape_ratios, principals):
        self.method = method
        self.boxes = boxes
        self.vol1 = vol1
        self.vol2 = vol2
        self.degenerate_coords = degenerate_coords
        self.shape_ratios = shape_ratios
        self.principals = principals

    def box(self, j):
        """E_j for j in [1, N-1]."""
        return self.boxes[j - 1]

    def to_dict(self):
        return {
            "method": self.method,
            "boxes": [{"j": j + 1,
                       "lower": b.lower.tolist(),
                       "upper": b.upper.tolist(),
                       "vol1": self.vol1[j],
                       "vol2": self.vol2[j],
                       "degenerate_coords": self.degenerate_coords[j],
                       "shape_ratio": _json_float(self.shape_ratios[j])}
                      for j, b in enumerate(self.boxes)],
        }


def _json_float(x):
    return None if not np.isfinite(x) else float(x)


def build_schedule(setup, sol, method):
    """Construct E_1..E_{N-1} for an optimal solution with one method.

    Certifies every built box against the principal rows before
    accepting it; failures carry the splice index.
    """
    if method not in METHODS:
        raise ValueError(f"unknown construction method {method!r}")
    q = 1 if method in (CP1, LP1) else 2
    exact = method in (CP1, CP2)
    boxes, v1s, v2s, degs, ratios, pps = [], [], [], [], [], []
    for j in range(1, setup.N):
        try:
            cand = build_candidates(setup, sol, j)
            pp = assemble_principal(setup, cand, j)
            res = construct_box_cp(pp, q) if exact else construct_box_lp(pp, q)
            slack = pp.box_slack(res.box)
            if slack < -FEAS_TOL:
                raise TriggerError(f"built box violates principal rows by {-slack:.3e}")
            ratio = geometry.shape_ratio(pp.error_polytope())
        except InfeasibleCandidate:
            raise
        except TriggerError as exc:
            raise TriggerError(f"j={j}: {exc}") from exc
        boxes.append(res.box)
        v1, v2 = volumes(res.box)
        v1s.append(v1)
        v2s.append(v2)
        degs.append(res.degenerate)
        ratios.append(ratio)
        pps.append(pp)
    return TriggerSchedule(method, boxes, v1s, v2s, degs, ratios, pps)
