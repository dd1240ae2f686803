"""Time minimization by horizon shrinking, plus the comparison baseline.

A trajectory at horizon h takes exactly h * t_step seconds, so minimum time
means minimum feasible horizon: solve the SQP at the initial horizon, then
repeatedly drop one waypoint, warm-starting each shorter problem from a
resampled copy of the previous solution, until the subproblem is reported
infeasible (or capped). The search is anytime: every feasible horizon yields
a complete, valid trajectory, so a deadline can cut it short.
"""

import csv
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import PlannerParams
from .frames import GraspFrame
from .kinematics import (
    KinematicChain,
    MechanicalLimits,
    NoConvergence,
    Pose,
    inverse_kinematics,
)
from .scene import DepthField
from .trajopt import (
    SQPStatus,
    TrajectoryVariables,
    TrustRegionState,
    dual_layout,
    spline_init,
    sqp_solve,
)


class NoTrajectory(Exception):
    """No feasible trajectory exists for the request (unreachable endpoints
    or no horizon in range converged)."""


@dataclass
class TrajectorySolution:
    """Planned waypoints at a fixed interval plus feasibility metadata."""

    H: int
    t_step: float
    positions: np.ndarray  # (H+1, n)
    velocities: np.ndarray  # (H+1, n)
    history: list[tuple[int, float]] | None = None
    kind: str = "optimized"
    grasp_index: int | None = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.velocities = np.asarray(self.velocities, dtype=float)
        if self.positions.shape[0] != self.H + 1:
            raise ValueError("waypoint count must be H + 1")
        if self.positions.shape != self.velocities.shape:
            raise ValueError("positions and velocities must match in shape")

    @property
    def duration(self) -> float:
        return self.H * self.t_step

    @property
    def n(self) -> int:
        return self.positions.shape[1]

    @property
    def waypoints(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return list(zip(self.positions, self.velocities))

    @classmethod
    def from_variables(cls, var: TrajectoryVariables, **meta) -> "TrajectorySolution":
        return cls(H=var.H, t_step=var.t_step, positions=var.positions.copy(),
                   velocities=var.velocities.copy(), **meta)

    def to_variables(self) -> TrajectoryVariables:
        return TrajectoryVariables.from_waypoints(self.positions, self.velocities, self.t_step)


@dataclass
class PlanRequest:
    """Inputs for one minimum-time plan between two pose sets."""

    start: GraspFrame
    goal: GraspFrame
    h_init: int
    t_step: float
    limits: MechanicalLimits
    chain: KinematicChain
    depth: DepthField | None = None
    deadline: float | None = None  # wall-clock seconds for the whole search
    params: PlannerParams = field(default_factory=PlannerParams)

    def __post_init__(self):
        if self.h_init < 2:
            raise ValueError("h_init must be >= 2")
        if self.t_step <= 0:
            raise ValueError("t_step must be positive")


@dataclass
class PipelinePhases:
    """Fixed pick-cycle phase durations (s) surrounding the two motions."""

    imaging: float
    grasp_analysis: float
    gripper_close: float
    gripper_open: float

    def __post_init__(self):
        for name in ("imaging", "grasp_analysis", "gripper_close", "gripper_open"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


def estimate_pick_time(phases: PipelinePhases, motion_to_grasp: float, motion_to_place: float) -> float:
    """Total pick-cycle time: imaging, grasp analysis, motion to the grasp,
    gripper close, motion to the placement, gripper open."""
    if motion_to_grasp < 0 or motion_to_place < 0:
        raise ValueError("motion times must be nonnegative")
    return (
        phases.imaging
        + phases.grasp_analysis
        + motion_to_grasp
        + phases.gripper_close
        + motion_to_place
        + phases.gripper_open
    )


def default_home(n: int) -> np.ndarray:
    """Elbow-up, tool-down seed for 6-DOF arms; zeros otherwise."""
    if n == 6:
        return np.array([0.0, -np.pi / 2, np.pi / 2, -np.pi / 2, -np.pi / 2, 0.0])
    return np.zeros(n)


def ik_endpoints(
    start: GraspFrame,
    goal: GraspFrame,
    chain: KinematicChain,
    limits: MechanicalLimits,
    params: PlannerParams,
) -> tuple[np.ndarray, np.ndarray]:
    """Inverse kinematics for the two nominal endpoint poses.

    Seeds from the configured home configuration, then retries from a few
    deterministic perturbations; the goal is additionally seeded from the
    start solution so short motions stay on one branch.

    Raises:
        NoTrajectory: an endpoint is unreachable from every seed.
    """
    home = params.home if params.home is not None else default_home(chain.n)
    q0 = _ik_with_seeds(chain, start.pose, [home], limits, "start grasp")
    qH = _ik_with_seeds(chain, goal.pose, [q0, home], limits, "goal placement")
    return q0, qH


def _ik_with_seeds(chain, target: Pose, seeds, limits, label: str) -> np.ndarray:
    tried = list(seeds)
    for base in seeds:
        for scale in (0.1, 0.3):
            bump = np.full(chain.n, scale)
            bump[1:: 2] *= -1.0
            tried.append(np.clip(base + bump, limits.q_min, limits.q_max))
    last_error = None
    for seed in tried:
        try:
            return inverse_kinematics(chain, target, seed, limits)
        except NoConvergence as exc:
            last_error = exc
    raise NoTrajectory(f"{label} unreachable: {last_error}")


def shrink_warm_start(prev: TrajectoryVariables, new_h: int) -> TrajectoryVariables:
    """Resample a solution onto a shorter horizon: positions by linear
    interpolation in normalized time index, velocities rescaled by the time
    compression factor, boundary velocities re-zeroed."""
    if not 2 <= new_h <= prev.H:
        raise ValueError("need 2 <= new_h <= previous horizon")
    old_idx = np.arange(prev.H + 1, dtype=float)
    new_idx = np.arange(new_h + 1) * (prev.H / new_h)
    scale = prev.H / new_h
    positions = np.empty((new_h + 1, prev.n))
    velocities = np.empty((new_h + 1, prev.n))
    for j in range(prev.n):
        positions[:, j] = np.interp(new_idx, old_idx, prev.positions[:, j])
        velocities[:, j] = np.interp(new_idx, old_idx, prev.velocities[:, j]) * scale
    velocities[0] = 0.0
    velocities[-1] = 0.0
    return TrajectoryVariables.from_waypoints(positions, velocities, prev.t_step)


def _resample_dual(y: np.ndarray, req: PlanRequest, h_from: int, h_to: int) -> np.ndarray | None:
    """Warm-start guess for the shorter horizon's constraint multipliers:
    each per-waypoint dual block is linearly interpolated onto the new index
    grid. Purely an accelerator; any value is a valid warm start."""
    n_chk = 1 + len(req.params.obstacle_links)
    src = dual_layout(h_from, req.chain.n, req.depth is not None, n_chk)
    dst = dual_layout(h_to, req.chain.n, req.depth is not None, n_chk)
    if y.size != sum(u * w for _, u, w in src):
        return None
    out = []
    pos = 0
    for (_, units_s, width), (_, units_d, _) in zip(src, dst):
        block = y[pos : pos + units_s * width].reshape(units_s, width)
        pos += units_s * width
        if units_d == units_s:
            out.append(block.ravel())
            continue
        old_idx = np.arange(units_s, dtype=float)
        new_idx = np.arange(units_d) * ((units_s - 1) / max(units_d - 1, 1))
        resampled = np.empty((units_d, width))
        for c in range(width):
            resampled[:, c] = np.interp(new_idx, old_idx, block[:, c])
        out.append(resampled.ravel())
    return np.concatenate(out)


def plan_min_time(req: PlanRequest, on_horizon=None) -> TrajectorySolution:
    """Minimum-time plan via horizon shrinking.

    Runs the SQP at the initial horizon, then walks the horizon down one step
    at a time (warm-starting each from the previous solution) until the
    subproblem stops converging, and returns the solution at the smallest
    feasible horizon. The deadline, if any, is checked between horizons only,
    so a given completed horizon set is deterministic. ``on_horizon(h, vars)``
    is invoked after every feasible horizon.

    Raises:
        NoTrajectory: endpoints unreachable or no horizon converged.
    """
    t_begin = time.monotonic()
    q0, qH = ik_endpoints(req.start, req.goal, req.chain, req.limits, req.params)
    if req.params.shrink_mode == "bisect":
        return _plan_min_time_bisect(req, q0, qH, t_begin, on_horizon)

    history: list[tuple[int, float]] = []
    best: TrajectoryVariables | None = None
    warm = spline_init(q0, qH, req.h_init, req.t_step)
    warm_dual = None
    h = req.h_init
    while h >= 2:
        outcome = sqp_solve(
            H=h,
            t_step=req.t_step,
            start=req.start,
            goal=req.goal,
            limits=req.limits,
            chain=req.chain,
            depth=req.depth,
            warm=warm,
            trust=TrustRegionState.from_params(req.params),
            i_max=req.params.i_max,
            params=req.params,
            warm_dual=warm_dual,
        )
        if outcome.status is not SQPStatus.CONVERGED:
            break
        best = outcome.variables
        history.append((h, h * req.t_step))
        if on_horizon is not None:
            on_horizon(h, best)
        if h == 2:
            break
        if req.deadline is not None and time.monotonic() - t_begin >= req.deadline:
            break
        warm = shrink_warm_start(best, h - 1)
        if outcome.dual is not None:
            warm_dual = _resample_dual(outcome.dual, req, h, h - 1)
        h -= 1

    if best is None:
        raise NoTrajectory(
            f"no feasible horizon in [2, {req.h_init}] (first attempt ended "
            f"{outcome.status.value} with violation {outcome.max_constraint_violation:.2e})"
        )
    return TrajectorySolution.from_variables(best, history=history)


def _plan_min_time_bisect(req, q0, qH, t_begin, on_horizon) -> TrajectorySolution:
    """Experimental bisection mode: assumes horizon feasibility is monotone.
    Loses the anytime guarantee of the linear walk."""
    history: list[tuple[int, float]] = []
    solutions: dict[int, TrajectoryVariables] = {}

    def attempt(h: int) -> bool:
        above = [k for k in solutions if k >= h]
        if above:
            warm = shrink_warm_start(solutions[min(above)], h)
        else:
            warm = spline_init(q0, qH, h, req.t_step)
        outcome = sqp_solve(
            H=h, t_step=req.t_step, start=req.start, goal=req.goal,
            limits=req.limits, chain=req.chain, depth=req.depth, warm=warm,
            trust=TrustRegionState.from_params(req.params),
            i_max=req.params.i_max, params=req.params,
        )
        if outcome.status is SQPStatus.CONVERGED:
            solutions[h] = outcome.variables
            history.append((h, h * req.t_step))
            if on_horizon is not None:
                on_horizon(h, outcome.variables)
            return True
        return False

    if not attempt(req.h_init):
        raise NoTrajectory(f"initial horizon {req.h_init} did not converge")
    lo, hi = 2, req.h_init
    while lo < hi:
        if req.deadline is not None and time.monotonic() - t_begin >= req.deadline:
            break
        mid = (lo + hi) // 2
        if attempt(mid):
            hi = mid
        else:
            lo = mid + 1
    return TrajectorySolution.from_variables(solutions[hi], history=history)


@dataclass
class GraspSetResult:
    best_index: int
    solution: TrajectorySolution
    durations: list[float | None]
    failures: dict[int, str] = field(default_factory=dict)


def plan_grasp_set(
    grasps: list[GraspFrame],
    goal: GraspFrame,
    limits: MechanicalLimits,
    chain: KinematicChain,
    depth: DepthField | None,
    h_init: int,
    t_step: float,
    params: PlannerParams | None = None,
    deadline: float | None = None,
    jobs: int | None = None,
) -> GraspSetResult:
    """Plan every candidate grasp (possibly in parallel) and select the one
    with the shortest execution time; ties break to the lowest grasp index.

    Unreachable or infeasible grasps are skipped with a recorded reason.
    Results are merged in index order, so the outcome is independent of the
    number of worker threads.
    """
    if not grasps:
        raise ValueError("at least one grasp candidate required")
    params = params or PlannerParams(h_init=h_init, t_step=t_step)

    def plan_one(index: int):
        req = PlanRequest(
            start=grasps[index], goal=goal, h_init=h_init, t_step=t_step,
            limits=limits, chain=chain, depth=depth, deadline=deadline, params=params,
        )
        try:
            sol = plan_min_time(req)
            sol.grasp_index = index
            return index, sol, None
        except NoTrajectory as exc:
            return index, None, str(exc)

    workers = jobs if jobs and jobs > 0 else min(len(grasps), 4)
    if workers == 1 or len(grasps) == 1:
        outcomes = [plan_one(i) for i in range(len(grasps))]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(plan_one, range(len(grasps))))
    outcomes.sort(key=lambda item: item[0])

    durations: list[float | None] = [None] * len(grasps)
    failures: dict[int, str] = {}
    best_index, best_sol = -1, None
    for index, sol, reason in outcomes:
        if sol is None:
            failures[index] = reason
            continue
        durations[index] = sol.duration
        if best_sol is None or sol.duration < best_sol.duration:
            best_index, best_sol = index, sol
    if best_sol is None:
        raise NoTrajectory("all grasp candidates failed: " + "; ".join(
            f"[{i}] {r}" for i, r in failures.items()
        ))
    return GraspSetResult(best_index, best_sol, durations, failures)


# -- baseline planner ----------------------------------------------------


def _max_displacement_steps(m: int, M: float) -> float:
    """Sum of the capped tent profile min(i, m-i, M) over i = 0..m-1."""
    i = np.arange(m)
    return float(np.minimum(np.minimum(i, m - i), M).sum())


def _min_steps(delta: float, v: float, a: float, t: float) -> int:
    """Smallest waypoint count moving |delta| rad from rest to rest under the
    discrete velocity/acceleration limits."""
    delta = abs(delta)
    if delta == 0.0:
        return 0
    M = v / (a * t)
    m = max(2, int(np.ceil(2.0 * np.sqrt(delta / (a * t * t)))) - 2)
    while a * t * t * _max_displacement_steps(m, M) < delta:
        m += 1
    return m


def _segment_profile(dq: np.ndarray, limits: MechanicalLimits, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Synchronized rest-to-rest joint profiles covering displacement ``dq``.

    Every joint follows a velocity tent capped at its limit and scaled so the
    discrete integration lands exactly on the target; the shared step count is
    the slowest joint's minimum.
    """
    n = dq.size
    m = 0
    for j in range(n):
        m = max(m, _min_steps(dq[j], limits.v_max[j], limits.a_max[j], t))
    if m == 0:
        return np.zeros((1, n)), np.zeros((1, n))
    velocities = np.zeros((m + 1, n))
    i = np.arange(m + 1, dtype=float)
    for j in range(n):
        M = limits.v_max[j] / (limits.a_max[j] * t)
        tent = np.minimum(np.minimum(i, m - i), M) * limits.a_max[j] * t
        reach = t * tent[:m].sum()
        scale = 0.0 if reach == 0.0 else dq[j] / reach
        velocities[:, j] = scale * tent
    positions = np.zeros((m + 1, n))
    positions[1:] = np.cumsum(velocities[:-1] * t, axis=0)
    return positions, velocities


def baseline_plan(
    start: GraspFrame,
    goal: GraspFrame,
    safe_z: float,
    limits: MechanicalLimits,
    chain: KinematicChain,
    t_step: float,
    params: PlannerParams | None = None,
) -> TrajectorySolution:
    """Three-segment reference plan: lift the grasp straight up to the safe
    height, move over the placement at that height, lower to the placement.

    Each segment is a rest-to-rest trapezoidal joint-space motion at a
    configured fraction of the mechanical limits (modelling a conservative
    default controller speed); obstacles are cleared by construction of the
    safe height rather than by avoidance.

    Raises:
        NoTrajectory: a segment endpoint is IK-unreachable.
    """
    params = params or PlannerParams()
    scaled = limits.scaled(params.baseline_speed_fraction)
    home = params.home if params.home is not None else default_home(chain.n)

    def ik(target: Pose, seeds, label: str) -> np.ndarray:
        return _ik_with_seeds(chain, target, seeds, limits, label)

    lift_pose = Pose(start.pose.rotation.copy(),
                     np.array([start.pose.translation[0], start.pose.translation[1], safe_z]))
    over_pose = Pose(goal.pose.rotation.copy(),
                     np.array([goal.pose.translation[0], goal.pose.translation[1], safe_z]))
    q_pick = ik(start.pose, [home], "baseline pick")
    q_lift = ik(lift_pose, [q_pick, home], "baseline lift")
    q_over = ik(over_pose, [q_lift, home], "baseline transfer")
    q_place = ik(goal.pose, [q_over, home], "baseline place")

    anchors = [q_pick, q_lift, q_over, q_place]
    positions = [q_pick[None, :]]
    velocities = [np.zeros((1, chain.n))]
    for a, b in zip(anchors[:-1], anchors[1:]):
        pos, vel = _segment_profile(b - a, scaled, t_step)
        if pos.shape[0] == 1:
            continue  # zero-length segment contributes no steps
        positions.append(a[None, :] + pos[1:])
        velocities.append(vel[1:])
    positions = np.vstack(positions)
    velocities = np.vstack(velocities)
    if positions.shape[0] < 3:
        positions = np.repeat(positions[-1][None, :], 3, axis=0)
        velocities = np.zeros_like(positions)
    H = positions.shape[0] - 1
    return TrajectorySolution(
        H=H, t_step=t_step, positions=positions, velocities=velocities, kind="baseline"
    )


# -- trajectory file I/O --------------------------------------------------


def solution_to_dict(sol: TrajectorySolution) -> dict:
    return {
        "t_step": sol.t_step,
        "H": sol.H,
        "joints": sol.n,
        "waypoints": [
            {"q": q.tolist(), "v": v.tolist()} for q, v in zip(sol.positions, sol.velocities)
        ],
        "duration_s": sol.duration,
        "history": [[int(h), float(d)] for h, d in sol.history] if sol.history else None,
        "kind": sol.kind,
        "grasp_index": sol.grasp_index,
    }


def solution_from_dict(doc: dict) -> TrajectorySolution:
    waypoints = doc["waypoints"]
    positions = np.array([w["q"] for w in waypoints], dtype=float)
    velocities = np.array([w["v"] for w in waypoints], dtype=float)
    sol = TrajectorySolution(
        H=int(doc["H"]),
        t_step=float(doc["t_step"]),
        positions=positions,
        velocities=velocities,
        history=[(int(h), float(d)) for h, d in doc["history"]] if doc.get("history") else None,
        kind=doc.get("kind", "optimized"),
        grasp_index=doc.get("grasp_index"),
    )
    if int(doc.get("joints", sol.n)) != sol.n:
        raise ValueError("joints field disagrees with waypoint width")
    if abs(float(doc["duration_s"]) - sol.duration) > 1e-9:
        raise ValueError("duration_s disagrees with H * t_step")
    return sol


def save_solution(sol: TrajectorySolution, path: str | Path) -> None:
    with open(path, "w") as f:
        json.dump(solution_to_dict(sol), f, indent=1)


def load_solution(path: str | Path) -> TrajectorySolution:
    with open(path) as f:
        return solution_from_dict(json.load(f))


def save_velocity_csv(sol: TrajectorySolution, path: str | Path) -> None:
    """Per-interval trace: one row per step with the waypoint index, each
    joint's velocity, and each joint's implied acceleration."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        for i in range(sol.H):
            accel = (sol.velocities[i + 1] - sol.velocities[i]) / sol.t_step
            writer.writerow([i, *sol.velocities[i].tolist(), *accel.tolist()])
