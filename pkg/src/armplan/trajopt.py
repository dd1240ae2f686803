"""Sequential quadratic programming over a fixed-horizon waypoint trajectory.

The decision vector stacks joint configurations and velocities at H+1
waypoints separated by a fixed time interval. The objective penalizes squared
velocity differences (a sum-of-squared-accelerations surrogate); dynamics,
mechanical limits, and boundary rest are linear rows; obstacle clearance and
endpoint pose-set membership are nonlinear and enter through linearized rows
that are refreshed each iteration under box trust regions on the endpoint
configuration blocks.
"""

import csv
import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .config import PlannerParams
from .frames import GraspFrame
from .kinematics import (
    KinematicChain,
    MechanicalLimits,
    Pose,
    forward_kinematics,
    frames as chain_frames,
    frames_batch,
    jacobian,
    jacobian_from_frames,
    pose_error,
)
from .qpsolver import ADMMSolver, QPStatus, QuadraticProgram
from .scene import DepthField

_ACCEPT_SLACK = 1e-9


class SQPStatus(enum.Enum):
    CONVERGED = "converged"
    INFEASIBLE = "infeasible"
    ITERATION_CAPPED = "iteration_capped"


@dataclass
class TrajectoryVariables:
    """Stacked decision vector [q_0..q_H, v_0..v_H] at interval ``t_step``."""

    H: int
    t_step: float
    n: int
    x: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).reshape(-1)
        if self.H < 1 or self.t_step <= 0:
            raise ValueError("need H >= 1 and t_step > 0")
        if self.x.size != 2 * self.n * (self.H + 1):
            raise ValueError(
                f"expected {2 * self.n * (self.H + 1)} entries, got {self.x.size}"
            )

    @property
    def positions(self) -> np.ndarray:
        """(H+1, n) array of joint configurations."""
        return self.x[: self.n * (self.H + 1)].reshape(self.H + 1, self.n)

    @property
    def velocities(self) -> np.ndarray:
        return self.x[self.n * (self.H + 1) :].reshape(self.H + 1, self.n)

    @classmethod
    def from_waypoints(cls, positions, velocities, t_step: float) -> "TrajectoryVariables":
        positions = np.asarray(positions, dtype=float)
        velocities = np.asarray(velocities, dtype=float)
        if positions.shape != velocities.shape:
            raise ValueError("positions and velocities must have matching shape")
        H = positions.shape[0] - 1
        return cls(H=H, t_step=t_step, n=positions.shape[1],
                   x=np.concatenate([positions.ravel(), velocities.ravel()]))


@dataclass
class TrustRegionState:
    """Box trust regions on the endpoint configuration blocks plus the
    obstacle clearance margin added to depth-map heights."""

    radius_q0: float = 0.5
    radius_qH: float = 0.5
    obstacle_margin: float = 0.01
    shrink_factor: float = 0.5
    grow_factor: float = 1.5
    min_radius: float = 1e-3
    max_radius: float = 0.5

    def __post_init__(self):
        if not 0 < self.shrink_factor < 1 < self.grow_factor:
            raise ValueError("need 0 < shrink_factor < 1 < grow_factor")
        self.radius_q0 = max(self.radius_q0, self.min_radius)
        self.radius_qH = max(self.radius_qH, self.min_radius)

    @classmethod
    def from_params(cls, params: PlannerParams) -> "TrustRegionState":
        return cls(
            radius_q0=params.trust_init,
            radius_qH=params.trust_init,
            obstacle_margin=params.clearance_margin,
            shrink_factor=params.trust_shrink,
            grow_factor=params.trust_grow,
            min_radius=params.trust_min,
            max_radius=params.trust_init,
        )

    def shrink(self, step_q0: float | None = None, step_qH: float | None = None) -> None:
        """Halve the radii; when the rejected step is known, shrink straight
        past dead air so the tightened region actually binds the next solve."""
        r0 = self.radius_q0 * self.shrink_factor
        rH = self.radius_qH * self.shrink_factor
        if step_q0 is not None:
            r0 = min(r0, max(step_q0, self.min_radius) * self.shrink_factor)
        if step_qH is not None:
            rH = min(rH, max(step_qH, self.min_radius) * self.shrink_factor)
        self.radius_q0 = max(r0, self.min_radius)
        self.radius_qH = max(rH, self.min_radius)

    def grow(self) -> None:
        self.radius_q0 = min(self.radius_q0 * self.grow_factor, self.max_radius)
        self.radius_qH = min(self.radius_qH * self.grow_factor, self.max_radius)

    def at_floor(self) -> bool:
        return self.radius_q0 <= self.min_radius and self.radius_qH <= self.min_radius


@dataclass
class SQPOutcome:
    status: SQPStatus
    variables: TrajectoryVariables | None
    inner_iterations: int
    max_constraint_violation: float
    dual: np.ndarray | None = None  # constraint multipliers of the last QP


@dataclass
class LinearConstraints:
    """Constraint rows with named row ranges for diagnostics and tests."""

    A: sp.csc_matrix
    lower: np.ndarray
    upper: np.ndarray
    slices: dict[str, slice] = field(default_factory=dict)


def second_difference_matrix(H: int) -> sp.csc_matrix:
    """(H+1)x(H+1) tridiagonal velocity-smoothing form: 2 on the diagonal
    (including the boundary rows, harmless under the rest constraints), -1 off
    the diagonal."""
    if H < 1:
        raise ValueError("H must be >= 1")
    return sp.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(H + 1, H + 1), format="csc")


def build_objective(H: int, n: int) -> sp.csc_matrix:
    """Full objective matrix: zero block over configurations, the velocity
    smoothing form (Kronecker-expanded per joint) over velocities."""
    if H < 2:
        raise ValueError("H must be >= 2")
    Pv = second_difference_matrix(H)
    nq = n * (H + 1)
    return sp.block_diag(
        [sp.csc_matrix((nq, nq)), sp.kron(Pv, sp.eye(n), format="csc")], format="csc"
    )


def build_dynamics_constraints(
    H: int, n: int, t_step: float, limits: MechanicalLimits
) -> LinearConstraints:
    """Rows shared by every SQP iteration at one horizon.

    Emits (a) forward-Euler coupling q_{i+1} = q_i + v_i * t_step, (b) joint
    and velocity boxes at every waypoint, (c) acceleration rows bounding
    velocity differences, (d) boundary rest equalities v_0 = v_H = 0.
    """
    if t_step <= 0:
        raise ValueError("t_step must be positive")
    if limits.n != n:
        raise ValueError("limits dimension mismatch")
    nw = H + 1
    nq = n * nw
    eye_n = sp.eye(n, format="csc")
    diff = sp.diags([-1.0, 1.0], [0, 1], shape=(H, nw), format="csc")

    blocks = []
    lowers = []
    uppers = []
    slices = {}
    row = 0

    def add(name, A_block, lo, hi):
        nonlocal row
        blocks.append(A_block)
        lowers.append(lo)
        uppers.append(hi)
        slices[name] = slice(row, row + A_block.shape[0])
        row += A_block.shape[0]

    # (a) dynamics equality: q_{i+1} - q_i - t_step v_i = 0
    dyn_q = sp.kron(diff, eye_n, format="csc")
    dyn_v = sp.kron(
        sp.diags([-t_step], [0], shape=(H, nw), format="csc"), eye_n, format="csc"
    )
    add("dynamics", sp.hstack([dyn_q, dyn_v], format="csc"), np.zeros(n * H), np.zeros(n * H))

    # (b) joint boxes
    add(
        "q_box",
        sp.hstack([sp.eye(nq, format="csc"), sp.csc_matrix((nq, nq))], format="csc"),
        np.tile(limits.q_min, nw),
        np.tile(limits.q_max, nw),
    )
    add(
        "v_box",
        sp.hstack([sp.csc_matrix((nq, nq)), sp.eye(nq, format="csc")], format="csc"),
        np.tile(-limits.v_max, nw),
        np.tile(limits.v_max, nw),
    )

    # (d) boundary rest
    sel_v0 = sp.hstack(
        [sp.csc_matrix((n, nq)), sp.eye(n, format="csc"), sp.csc_matrix((n, nq - n))],
        format="csc",
    )
    sel_vH = sp.hstack(
        [sp.csc_matrix((n, nq)), sp.csc_matrix((n, nq - n)), sp.eye(n, format="csc")],
        format="csc",
    )
    add("v_start", sel_v0, np.zeros(n), np.zeros(n))
    add("v_end", sel_vH, np.zeros(n), np.zeros(n))

    # (c) acceleration rows: -a_max t <= v_{i+1} - v_i <= a_max t
    acc = sp.hstack([sp.csc_matrix((n * H, nq)), sp.kron(diff, eye_n, format="csc")], format="csc")
    add("acceleration", acc, np.tile(-limits.a_max * t_step, H), np.tile(limits.a_max * t_step, H))

    return LinearConstraints(
        A=sp.vstack(blocks, format="csc"),
        lower=np.concatenate(lowers),
        upper=np.concatenate(uppers),
        slices=slices,
    )


def linearize_obstacle(
    q_k: np.ndarray,
    chain: KinematicChain,
    depth: DepthField,
    margin: float = 0.01,
    dilation_radius: float = 0.0,
    link: int | None = None,
) -> tuple[np.ndarray, float]:
    """One clearance row for a waypoint: coefficients over its configuration
    block and the lower bound, encoding J_z q >= z_obstacle - p_z(q_k) + J_z q_k
    with the obstacle height queried under the check point's current xy."""
    fs = chain_frames(chain, q_k)
    tip = chain.n if link is None else int(link)
    p = fs[tip][:3, 3]
    Jz = jacobian(chain, q_k, link=link)[2]
    z_obs = depth.query(p[:2], dilation_radius) + margin
    lower = z_obs - p[2] + Jz @ np.asarray(q_k, dtype=float)
    return Jz, float(lower)


def linearize_pose_constraint(
    q_k: np.ndarray, frame: GraspFrame, chain: KinematicChain
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Six rows over an endpoint's configuration block bounding the pose
    residual, rotated so the grasp free axis owns a single component whose
    tolerance spans the rotation range."""
    q_k = np.asarray(q_k, dtype=float)
    J = jacobian(chain, q_k)
    Rf = frame.constraint_rotation()
    R6 = np.zeros((6, 6))
    R6[:3, :3] = Rf
    R6[3:, 3:] = Rf
    rows = R6 @ J
    err_k = pose_error(frame.pose, forward_kinematics(chain, q_k))
    b = R6 @ err_k + rows @ q_k
    center = frame.residual_center()
    lower = b - center - frame.epsilon
    upper = b - center + frame.epsilon
    return rows, lower, upper


def spline_init(q0: np.ndarray, qH: np.ndarray, H: int, t_step: float) -> TrajectoryVariables:
    """Warm start: per-joint cubic between the endpoints with zero boundary
    velocities, sampled at the H+1 waypoints (obstacles ignored)."""
    if H < 2:
        raise ValueError("H must be >= 2")
    q0 = np.asarray(q0, dtype=float).reshape(-1)
    qH = np.asarray(qH, dtype=float).reshape(-1)
    s = np.arange(H + 1) / H
    blend = 3.0 * s**2 - 2.0 * s**3
    dblend = (6.0 * s - 6.0 * s**2) / (H * t_step)
    delta = qH - q0
    positions = q0[None, :] + blend[:, None] * delta[None, :]
    velocities = dblend[:, None] * delta[None, :]
    velocities[0] = 0.0
    velocities[-1] = 0.0
    return TrajectoryVariables.from_waypoints(positions, velocities, t_step)


class _SQPWorkspace:
    """Constraint assembly for one horizon: static rows built once, linearized
    rows refreshed per iterate, trust rows updated in place."""

    def __init__(self, H, t_step, start, goal, limits, chain, depth, params):
        self.H = H
        self.t_step = t_step
        self.start = start
        self.goal = goal
        self.limits = limits
        self.chain = chain
        self.depth = depth
        self.params = params
        self.n = chain.n
        self.nw = H + 1
        self.P = build_objective(H, self.n)
        self.p = np.zeros(2 * self.n * self.nw)
        self.static = build_dynamics_constraints(H, self.n, t_step, limits)
        self.check_links = [None] + [int(i) for i in params.obstacle_links]
        n_obs = self.nw * len(self.check_links) if depth is not None else 0
        n_static = self.static.A.shape[0]
        self.obs_slice = slice(n_static, n_static + n_obs)
        self.pose_slice = slice(self.obs_slice.stop, self.obs_slice.stop + 12)
        self.trust_rows = np.arange(self.pose_slice.stop, self.pose_slice.stop + 2 * self.n)

    def assemble(self, traj: TrajectoryVariables, trust: TrustRegionState) -> QuadraticProgram:
        n, H, nw = self.n, self.H, self.nw
        nq = n * nw
        nvar = 2 * nq
        positions = traj.positions
        all_frames = frames_batch(self.chain, positions)

        rows_i: list[np.ndarray] = []
        cols_i: list[np.ndarray] = []
        vals: list[np.ndarray] = []
        lowers = [self.static.lower]
        uppers = [self.static.upper]
        row0 = 0  # relative to the dynamic block appended below the static rows

        if self.depth is not None:
            n_chk = len(self.check_links)
            obs_lo = np.zeros(nw * n_chk)
            for c, link in enumerate(self.check_links):
                tip = self.chain.n if link is None else int(link)
                p_tip = all_frames[:, tip, :3, 3]  # (nw, 3)
                axes = all_frames[:, :tip, :3, 2]
                origins = all_frames[:, :tip, :3, 3]
                Jz = np.zeros((nw, n))
                Jz[:, :tip] = np.cross(axes, p_tip[:, None, :] - origins)[:, :, 2]
                z_obs = self.depth.query_batch(p_tip[:, :2], self.params.dilation_radius)
                r = row0 + c + n_chk * np.arange(nw)
                rows_i.append(np.repeat(r, n))
                cols_i.append(np.tile(np.arange(n), nw) + np.repeat(np.arange(nw) * n, n))
                vals.append(Jz.ravel())
                obs_lo[c::n_chk] = (
                    z_obs
                    + trust.obstacle_margin
                    - p_tip[:, 2]
                    + np.einsum("ij,ij->i", Jz, positions)
                )
            lowers.append(obs_lo)
            uppers.append(np.full(nw * n_chk, np.inf))
            row0 += nw * n_chk

        for frame, widx in ((self.start, 0), (self.goal, H)):
            prows, lo, hi = linearize_pose_constraint(positions[widx], frame, self.chain)
            rr, cc = np.meshgrid(
                np.arange(row0, row0 + 6), np.arange(widx * n, (widx + 1) * n), indexing="ij"
            )
            rows_i.append(rr.ravel())
            cols_i.append(cc.ravel())
            vals.append(prows.ravel())
            lowers.append(lo)
            uppers.append(hi)
            row0 += 6

        # Trust-region boxes on the endpoint configuration blocks.
        rows_i.append(np.arange(row0, row0 + n))
        cols_i.append(np.arange(n))
        vals.append(np.ones(n))
        rows_i.append(np.arange(row0 + n, row0 + 2 * n))
        cols_i.append(np.arange(nq - n, nq))
        vals.append(np.ones(n))
        lo_t, hi_t = self.trust_bounds(traj, trust)
        lowers.append(lo_t)
        uppers.append(hi_t)
        row0 += 2 * n

        dyn = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows_i), np.concatenate(cols_i))),
            shape=(row0, nvar),
        ).tocsc()
        return QuadraticProgram(
            P=self.P,
            p=self.p,
            A=sp.vstack([self.static.A, dyn], format="csc"),
            lower=np.concatenate(lowers),
            upper=np.concatenate(uppers),
        )

    def trust_bounds(self, traj: TrajectoryVariables, trust: TrustRegionState):
        q0 = traj.positions[0]
        qH = traj.positions[self.H]
        lo = np.concatenate([q0 - trust.radius_q0, qH - trust.radius_qH])
        hi = np.concatenate([q0 + trust.radius_q0, qH + trust.radius_qH])
        return lo, hi

    def nonlinear_violation(self, traj: TrajectoryVariables, trust: TrustRegionState) -> tuple[float, float]:
        """True (not linearized) constraint violations: worst pose-membership
        excess beyond epsilon at the endpoints, and worst clearance shortfall
        below the margined obstacle height at any waypoint."""
        pose_viol = 0.0
        obstacle_viol = 0.0
        positions = traj.positions
        all_frames = frames_batch(self.chain, positions)
        for frame, widx in ((self.start, 0), (self.goal, self.H)):
            T = all_frames[widx, -1]
            pose = Pose(T[:3, :3], T[:3, 3])
            pose_viol = max(pose_viol, float(frame.membership_violation(pose).max()))
        if self.depth is not None:
            for link in self.check_links:
                tip = self.chain.n if link is None else link
                p = all_frames[:, tip, :3, 3]
                z_req = (
                    self.depth.query_batch(p[:, :2], self.params.dilation_radius)
                    + trust.obstacle_margin
                )
                obstacle_viol = max(obstacle_viol, float(np.maximum(z_req - p[:, 2], 0.0).max()))
        return pose_viol, obstacle_viol


def dual_layout(H: int, n: int, has_depth: bool, n_check_points: int = 1) -> list[tuple[str, int, int]]:
    """(block name, unit count, per-unit width) triples describing the dual
    vector of the assembled QP in row order. Unit counts scale with the
    horizon, which lets duals be resampled between horizons."""
    layout = [
        ("dynamics", H, n),
        ("q_box", H + 1, n),
        ("v_box", H + 1, n),
        ("v_start", 1, n),
        ("v_end", 1, n),
        ("acceleration", H, n),
    ]
    if has_depth:
        layout.append(("obstacle", H + 1, n_check_points))
    layout.extend([("pose", 1, 12), ("trust", 1, 2 * n)])
    return layout


def sqp_solve(
    H: int,
    t_step: float,
    start: GraspFrame,
    goal: GraspFrame,
    limits: MechanicalLimits,
    chain: KinematicChain,
    depth: DepthField | None = None,
    warm: TrajectoryVariables | None = None,
    trust: TrustRegionState | None = None,
    i_max: int = 20,
    params: PlannerParams | None = None,
    endpoints: tuple[np.ndarray, np.ndarray] | None = None,
    warm_dual: np.ndarray | None = None,
    trace_path=None,
) -> SQPOutcome:
    """Run the fixed-horizon SQP: solve the QP, re-linearize obstacle and pose
    rows at the accepted iterate, adapt the trust region, repeat.

    ``Infeasible`` (the QP reports a primal infeasibility certificate) and
    ``IterationCapped`` are ordinary outcomes, not faults; the time-minimizing
    caller treats either as the end of its horizon-shrinking loop. When no
    warm start is given the endpoints are inverse-kinematics solutions and the
    seed is the zero-velocity spline between them.
    """
    if params is None:
        params = PlannerParams(h_init=max(H, 2), t_step=t_step)
    if H < 2:
        raise ValueError("H must be >= 2")
    if warm is None:
        if endpoints is None:
            from .timeopt import ik_endpoints  # deferred: avoids a cycle

            q0, qH = ik_endpoints(start, goal, chain, limits, params)
        else:
            q0, qH = endpoints
        warm = spline_init(q0, qH, H, t_step)
    if warm.H != H or abs(warm.t_step - t_step) > 1e-12 or warm.n != chain.n:
        raise ValueError("warm start does not match horizon, interval, or joint count")
    if trust is None:
        trust = TrustRegionState.from_params(params)

    ws = _SQPWorkspace(H, t_step, start, goal, limits, chain, depth, params)
    solver = ADMMSolver(tol=params.qp_tol, max_iter=params.qp_max_iter, rho=params.qp_rho)

    def feasible(viol: tuple[float, float]) -> bool:
        return viol[0] <= params.residual_tol and viol[1] <= params.obstacle_residual_tol

    def not_worse(cand: tuple[float, float], cur: tuple[float, float]) -> bool:
        return (
            cand[0] <= max(cur[0], params.residual_tol) + _ACCEPT_SLACK
            and cand[1] <= max(cur[1], params.obstacle_residual_tol) + _ACCEPT_SLACK
        )

    current = warm
    viol_current = ws.nonlinear_violation(current, trust)
    qp = ws.assemble(current, trust)
    obj_accepted: float | None = None
    accepted_traj: TrajectoryVariables | None = None
    accepted_feasible = False
    trace_rows = []

    status = SQPStatus.ITERATION_CAPPED
    iterations = 0
    try:
        for i in range(1, i_max + 1):
            iterations = i
            result = solver.solve(
                qp, warm_start=current.x, warm_dual=warm_dual if i == 1 else None
            )
            if result.status is QPStatus.PRIMAL_INFEASIBLE:
                status = SQPStatus.INFEASIBLE
                break
            if result.status is QPStatus.ITERATION_LIMIT:
                # Not a certificate; reported distinctly from Infeasible.
                status = SQPStatus.ITERATION_CAPPED
                break
            candidate = TrajectoryVariables(H=H, t_step=t_step, n=chain.n, x=result.x)
            viol_candidate = ws.nonlinear_violation(candidate, trust)
            obj_candidate = qp.objective(result.x)
            step = float(np.abs(candidate.x - current.x).max())
            obj_slack = params.objective_rel_tol * max(
                1.0, abs(obj_accepted) if obj_accepted is not None else 1.0
            )
            trace_rows.append(
                (i, obj_candidate, max(viol_candidate), trust.radius_q0, trust.radius_qH)
            )

            # A feasible candidate converges once the iteration is stationary
            # (small step or settled objective), once two solves in a row come
            # out feasible, or once the trust radius has hit its floor.
            # Stationarity is checked before the descent gate because a
            # re-linearization legitimately drifts the optimal objective.
            if feasible(viol_candidate) and (
                step <= params.step_tol
                or (obj_accepted is not None and abs(obj_candidate - obj_accepted) <= obj_slack)
                or accepted_feasible
                or trust.at_floor()
            ):
                current = candidate
                viol_current = viol_candidate
                accepted_traj = candidate
                status = SQPStatus.CONVERGED
                break

            accept = not_worse(viol_candidate, viol_current)
            if (
                accept
                and obj_accepted is not None
                and accepted_feasible
                and obj_candidate > obj_accepted + obj_slack
            ):
                accept = False  # a feasible iterate never trades up in cost

            if accept:
                current = candidate
                viol_current = viol_candidate
                obj_accepted = obj_candidate
                accepted_traj = candidate
                accepted_feasible = feasible(viol_candidate)
                trust.grow()
                qp = ws.assemble(current, trust)
            else:
                if trust.at_floor():
                    status = SQPStatus.ITERATION_CAPPED
                    break
                step_q0 = float(np.abs(candidate.positions[0] - current.positions[0]).max())
                step_qH = float(np.abs(candidate.positions[H] - current.positions[H]).max())
                trust.shrink(step_q0, step_qH)
                lo, hi = ws.trust_bounds(current, trust)
                qp = qp.update_bounds(ws.trust_rows, lo, hi)
    finally:
        if trace_path is not None:
            with open(trace_path, "w", newline="") as f:
                writer = csv.writer(f)
                writer.writerow(["iteration", "objective", "max_residual", "radius_q0", "radius_qH"])
                writer.writerows(trace_rows)

    # A capped run that already holds a feasible accepted iterate is a
    # converged outcome: the residual tolerance is met and further iterations
    # would only polish the objective.
    if status is SQPStatus.ITERATION_CAPPED and accepted_feasible and accepted_traj is not None:
        status = SQPStatus.CONVERGED
        current = accepted_traj
        viol_current = ws.nonlinear_violation(current, trust)

    if status is SQPStatus.CONVERGED:
        return SQPOutcome(
            status, accepted_traj, iterations, max(viol_current), dual=solver.last_dual()
        )
    return SQPOutcome(status, None, iterations, max(viol_current))
