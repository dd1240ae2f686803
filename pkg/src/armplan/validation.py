"""Post-hoc trajectory checking against the true nonlinear constraints.

Every trajectory the planners emit is expected to pass these checks; the CLI
``validate`` subcommand re-runs them on files, and the test suite runs them on
every solution it produces. Tolerances are deliberately small slacks over the
hard constraints to absorb solver round-off, not to hide violations.
"""

from dataclasses import dataclass, field

import numpy as np

from .frames import GraspFrame
from .kinematics import KinematicChain, MechanicalLimits, Pose, frames_batch
from .scene import DepthField
from .timeopt import TrajectorySolution


@dataclass
class Tolerances:
    joint_limit: float = 1e-4  # rad of allowed limit overshoot
    velocity: float = 1e-4  # rad/s over v_max
    acceleration: float = 1e-3  # rad/s^2 over a_max
    dynamics: float = 1e-5  # rad of forward-Euler residual
    boundary_velocity: float = 1e-6  # rad/s at the first/last waypoint
    pose: float = 1e-4  # beyond the frame's epsilon box
    obstacle: float = 1e-3  # m below the raw depth-map height


@dataclass
class Violation:
    check: str
    where: str
    magnitude: float
    allowed: float

    def __str__(self):
        return f"{self.check} at {self.where}: {self.magnitude:.3e} exceeds {self.allowed:.3e}"


def validate_trajectory(
    sol: TrajectorySolution,
    chain: KinematicChain,
    limits: MechanicalLimits,
    depth: DepthField | None = None,
    start: GraspFrame | None = None,
    goal: GraspFrame | None = None,
    tol: Tolerances | None = None,
    dilation_radius: float = 0.0,
) -> list[Violation]:
    """Re-evaluate every constraint on a finished trajectory.

    Obstacle clearance is checked against the raw depth-map heights (the
    planner's clearance margin is its own safety slack, not part of the
    contract). Returns all violations found, empty when the trajectory is
    valid.
    """
    tol = tol or Tolerances()
    out: list[Violation] = []
    q = sol.positions
    v = sol.velocities
    t = sol.t_step

    low = limits.q_min[None, :] - q
    high = q - limits.q_max[None, :]
    for name, overs in (("joint_limit_low", low), ("joint_limit_high", high)):
        for i, j in zip(*np.nonzero(overs > tol.joint_limit)):
            out.append(Violation(name, f"waypoint {i} joint {j}", float(overs[i, j]), tol.joint_limit))

    overs = np.abs(v) - limits.v_max[None, :]
    for i, j in zip(*np.nonzero(overs > tol.velocity)):
        out.append(Violation("velocity_limit", f"waypoint {i} joint {j}", float(overs[i, j]), tol.velocity))

    accel = (v[1:] - v[:-1]) / t
    overs = np.abs(accel) - limits.a_max[None, :]
    for i, j in zip(*np.nonzero(overs > tol.acceleration)):
        out.append(Violation("acceleration_limit", f"interval {i} joint {j}", float(overs[i, j]), tol.acceleration))

    dyn = np.abs(q[1:] - q[:-1] - t * v[:-1])
    for i, j in zip(*np.nonzero(dyn > tol.dynamics)):
        out.append(Violation("dynamics_residual", f"interval {i} joint {j}", float(dyn[i, j]), tol.dynamics))

    for name, vec in (("boundary_velocity_start", v[0]), ("boundary_velocity_end", v[-1])):
        worst = float(np.abs(vec).max())
        if worst > tol.boundary_velocity:
            out.append(Violation(name, "boundary waypoint", worst, tol.boundary_velocity))

    all_frames = frames_batch(chain, q)
    tool = all_frames[:, -1]
    if start is not None:
        viol = start.membership_violation(Pose(tool[0, :3, :3], tool[0, :3, 3]))
        if viol.max() > tol.pose:
            out.append(Violation("start_pose", "waypoint 0", float(viol.max()), tol.pose))
    if goal is not None:
        viol = goal.membership_violation(Pose(tool[-1, :3, :3], tool[-1, :3, 3]))
        if viol.max() > tol.pose:
            out.append(Violation("goal_pose", f"waypoint {sol.H}", float(viol.max()), tol.pose))

    if depth is not None:
        p = tool[:, :3, 3]
        required = depth.query_batch(p[:, :2], dilation_radius)
        short = required - p[:, 2]
        for i in np.nonzero(short > tol.obstacle)[0]:
            out.append(Violation("obstacle_clearance", f"waypoint {i}", float(short[i]), tol.obstacle))

    return out
