"""Finite-horizon robust MPC problem: assembly and solution.

One convex QP per query state: decision variables are the input sequence,
the nominal state sequence (kept explicit behind equality dynamics rows,
giving the sparse KKT structure), and one slack point per stage per
target set. The slack points realize the distance-to-set stage cost: at
the optimum they are exactly the weighted projections of the stage state
and input onto the tightened target sets.
"""

import numpy as np

from . import geometry, solver


class RmpcError(Exception):
    pass


class InfeasibleState(RmpcError):
    """The query state admits no feasible plan (value +inf).

    ``certificate`` carries the phase-1 dual evidence from the solver
    when the infeasibility was detected inside the QP.
    """

    def __init__(self, x0, detail="", certificate=None):
        self.x0 = np.asarray(x0, dtype=float)
        self.certificate = certificate
        super().__init__(f"RMPC infeasible at x0={self.x0.tolist()} {detail}".strip())


class MpcSolution:
    """Optimal plan: u_0..u_{N-1}, states phi_0..phi_N, per-stage slack
    projections and the optimal value."""

    def __init__(self, u, x, sx, su, value, stage_costs, kkt_residual):
        self.u = np.array(u, dtype=float)
        self.x = np.array(x, dtype=float)
        self.sx = np.array(sx, dtype=float)
        self.su = np.array(su, dtype=float)
        self.value = float(value)
        self.stage_costs = np.array(stage_costs, dtype=float)
        self.kkt_residual = float(kkt_residual)
        for a in (self.u, self.x, self.sx, self.su, self.stage_costs):
            a.flags.writeable = False

    def __repr__(self):
        return f"MpcSolution(value={self.value:.6g})"


def stage_cost(setup, x_i, u_i, i):
    """l(x_i, u_i) = d_Q(x_i, Tx_i) + d_R(u_i, Tu_i)."""
    if not 0 <= i < setup.N:
        raise IndexError(f"stage {i} outside horizon")
    dx = geometry.weighted_projection(x_i, setup.TXseq[i], setup.Q).distance_sq
    du = geometry.weighted_projection(u_i, setup.TUseq[i], setup.R).distance_sq
    return dx + du


def solve_rmpc(setup, x0):
    """Solve the tightened optimal-control QP from state x0.

    Raises InfeasibleState when x0 lies outside the feasible region
    (including x0 outside the raw state set). The returned solution has
    exactly consistent dynamics: states are re-propagated from the input
    sequence and slack points re-projected, so downstream error
    coordinates are bit-reproducible.
    """
    x0 = np.asarray(x0, dtype=float).reshape(setup.nx)
    N, nx, nu = setup.N, setup.nx, setup.nu

    if setup.Xseq[0].membership_residual(x0) > geometry.FEAS_TOL:
        raise InfeasibleState(x0, "(outside the state constraint set)")

    # Variable layout: [u_0..u_{N-1} | x_1..x_N | sx_0..sx_{N-1} | su_0..su_{N-1}]
    off_u = 0
    off_x = N * nu
    off_sx = off_x + N * nx
    off_su = off_sx + N * nx
    nv = off_su + N * nu

    def ui(i):
        return slice(off_u + i * nu, off_u + (i + 1) * nu)

    def xi(i):  # i = 1..N
        return slice(off_x + (i - 1) * nx, off_x + i * nx)

    def sxi(i):
        return slice(off_sx + i * nx, off_sx + (i + 1) * nx)

    def sui(i):
        return slice(off_su + i * nu, off_su + (i + 1) * nu)

    Q2, R2 = 2.0 * setup.Q, 2.0 * setup.R
    H = np.zeros((nv, nv))
    g = np.zeros(nv)
    # Stage 0 state term couples only sx_0 (x_0 is data).
    H[sxi(0), sxi(0)] = Q2
    g[sxi(0)] = -Q2 @ x0
    const = float(x0 @ setup.Q @ x0)
    for i in range(1, N):
        H[xi(i), xi(i)] = Q2
        H[sxi(i), sxi(i)] = Q2
        H[xi(i), sxi(i)] = -Q2
        H[sxi(i), xi(i)] = -Q2
    for i in range(N):
        H[ui(i), ui(i)] = R2
        H[sui(i), sui(i)] = R2
        H[ui(i), sui(i)] = -R2
        H[sui(i), ui(i)] = -R2

    A, B = setup.plant.A, setup.plant.B
    A_eq = np.zeros((N * nx, nv))
    b_eq = np.zeros(N * nx)
    for i in range(N):
        rows = slice(i * nx, (i + 1) * nx)
        A_eq[rows, xi(i + 1)] = -np.eye(nx)
        A_eq[rows, ui(i)] = B
        if i == 0:
            b_eq[rows] = -A @ x0
        else:
            A_eq[rows, xi(i)] = A

    in_rows, in_rhs = [], []

    def add_in(block, sl, rhs):
        mat = np.zeros((block.shape[0], nv))
        mat[:, sl] = block
        in_rows.append(mat)
        in_rhs.append(rhs)

    for i in range(N):
        add_in(setup.Useq[i].A, ui(i), setup.Useq[i].b)
        if i >= 1:
            add_in(setup.Xseq[i].A, xi(i), setup.Xseq[i].b)
        add_in(setup.TXseq[i].A, sxi(i), setup.TXseq[i].b)
        add_in(setup.TUseq[i].A, sui(i), setup.TUseq[i].b)
    Xf = setup.plant.Xf
    Xf = Xf.to_polytope() if isinstance(Xf, geometry.HyperRect) else Xf
    add_in(Xf.A, xi(N), Xf.b)

    # Solved tighter than the project-wide 1e-8 so that re-propagated
    # states keep their tightened-set memberships within tolerance; an
    # iterate that only reaches the standard tolerance is still accepted.
    rep = solver.solve_qp(
        solver.QpProblem(H=H, g=g, A_in=np.vstack(in_rows),
                         b_in=np.concatenate(in_rhs), A_eq=A_eq, b_eq=b_eq),
        tol=1e-10)
    if rep.status == solver.Status.INFEASIBLE:
        raise InfeasibleState(x0, "(QP infeasible)", certificate=rep.certificate)
    accepted_loose = (rep.status == solver.Status.MAXITER and rep.x is not None
                      and rep.kkt_residual <= solver.FEAS_TOL)
    if rep.status != solver.Status.OPTIMAL and not accepted_loose:
        raise RmpcError(f"RMPC QP failed with status {rep.status}")

    z = rep.x
    u = np.array([z[ui(i)] for i in range(N)])

    # Exact re-propagation kills the equality residual; re-projection then
    # keeps the value and slack invariants consistent to machine level.
    x = np.zeros((N + 1, nx))
    x[0] = x0
    for i in range(N):
        x[i + 1] = A @ x[i] + B @ u[i]
    sx = np.zeros((N, nx))
    su = np.zeros((N, nu))
    stage = np.zeros(N)
    for i in range(N):
        px = geometry.weighted_projection(x[i], setup.TXseq[i], setup.Q)
        pu = geometry.weighted_projection(u[i], setup.TUseq[i], setup.R)
        sx[i] = px.projection
        su[i] = pu.projection
        stage[i] = px.distance_sq + pu.distance_sq

    value = float(np.sum(stage))
    qp_value = float(0.5 * z @ H @ z + g @ z) + const
    if abs(value - qp_value) > 1e-6 * max(1.0, abs(qp_value)):
        raise RmpcError(
            f"re-projected value {value:.9g} deviates from QP value {qp_value:.9g}")
    return MpcSolution(u, x, sx, su, value, stage, rep.kkt_residual)
