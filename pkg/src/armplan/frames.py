"""Endpoint pose sets: a nominal pose plus a free rotation about a grasp axis.

A parallel-jaw grasp is preserved under rotation about the line through the
two contact points, so the planner may pick any approach angle within a
configured range about that axis. A frame with a zero-width range pins the
pose exactly (up to small tolerances); a frame may instead leave all three
rotational components free.
"""

from dataclasses import dataclass, field

import numpy as np

from .kinematics import Pose, pose_error, rotation_about_axis

# Index of the free-axis rotational component after rotating the residual
# into the constraint frame (translation x', y', z', rotation x', y', z').
FREE_COMPONENT = 5

DEFAULT_TRANSLATION_TOL = 1e-3  # m
DEFAULT_ROTATION_TOL = 1e-2  # rad


@dataclass
class GraspFrame:
    """Nominal pose with per-component tolerances and one free rotation axis.

    ``free_axis`` is a unit vector in the nominal frame (for a top-down grasp
    this is the horizontal jaw axis). ``rotation_range`` is the allowed
    rotation interval about that axis, and ``epsilon`` holds the constraint
    half-widths in the rotated residual frame: three translations, two
    constrained rotations, then the free component at index 5 whose entry is
    the range half-width.
    """

    pose: Pose
    free_axis: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))
    rotation_range: tuple[float, float] = (0.0, 0.0)
    epsilon: np.ndarray | None = None
    translation_tol: float = DEFAULT_TRANSLATION_TOL
    rotation_tol: float = DEFAULT_ROTATION_TOL

    def __post_init__(self):
        self.free_axis = np.asarray(self.free_axis, dtype=float).reshape(3)
        norm = np.linalg.norm(self.free_axis)
        if abs(norm - 1.0) > 1e-9:
            if norm == 0.0:
                raise ValueError("free_axis must be a unit vector")
            self.free_axis = self.free_axis / norm
        lo, hi = self.rotation_range
        if not (lo <= 0.0 <= hi):
            raise ValueError("rotation_range must contain 0")
        if self.epsilon is None:
            eps = np.empty(6)
            eps[:3] = self.translation_tol
            eps[3:] = self.rotation_tol
            eps[FREE_COMPONENT] = 0.5 * (hi - lo)
            self.epsilon = eps
        else:
            self.epsilon = np.asarray(self.epsilon, dtype=float).reshape(6)
        if np.any(self.epsilon < 0):
            raise ValueError("epsilon must be nonnegative")

    @classmethod
    def fixed(cls, pose: Pose, translation_tol: float = DEFAULT_TRANSLATION_TOL,
              rotation_tol: float = DEFAULT_ROTATION_TOL) -> "GraspFrame":
        """Frame with no free rotation: the pose is pinned to the nominal."""
        return cls(pose, rotation_range=(0.0, 0.0),
                   translation_tol=translation_tol, rotation_tol=rotation_tol)

    @classmethod
    def about_axis(cls, pose: Pose, axis: np.ndarray, lo: float, hi: float,
                   translation_tol: float = DEFAULT_TRANSLATION_TOL,
                   rotation_tol: float = DEFAULT_ROTATION_TOL) -> "GraspFrame":
        return cls(pose, free_axis=axis, rotation_range=(lo, hi),
                   translation_tol=translation_tol, rotation_tol=rotation_tol)

    @classmethod
    def rotation_free(cls, pose: Pose,
                      translation_tol: float = DEFAULT_TRANSLATION_TOL) -> "GraspFrame":
        """Frame whose translation is pinned but whose rotation is unconstrained."""
        frame = cls(pose, rotation_range=(-np.pi, np.pi),
                    translation_tol=translation_tol, rotation_tol=np.pi)
        frame.epsilon[3:] = np.pi
        return frame

    @classmethod
    def top_down(cls, position: np.ndarray, yaw: float = 0.0,
                 lo: float = 0.0, hi: float = 0.0,
                 translation_tol: float = DEFAULT_TRANSLATION_TOL,
                 rotation_tol: float = DEFAULT_ROTATION_TOL) -> "GraspFrame":
        """Gripper approaching along -z, jaws along the yawed x axis.

        The free axis is the jaw axis, so the allowed rotations tilt the
        approach away from vertical while keeping the contact points fixed.
        """
        R = rotation_about_axis(np.array([0.0, 0.0, 1.0]), yaw) @ rotation_about_axis(
            np.array([1.0, 0.0, 0.0]), np.pi
        )
        pose = Pose(R, np.asarray(position, dtype=float))
        return cls(pose, free_axis=np.array([1.0, 0.0, 0.0]), rotation_range=(lo, hi),
                   translation_tol=translation_tol, rotation_tol=rotation_tol)

    def with_rotation_range(self, lo: float, hi: float) -> "GraspFrame":
        return GraspFrame(self.pose, free_axis=self.free_axis.copy(),
                          rotation_range=(lo, hi),
                          translation_tol=self.translation_tol,
                          rotation_tol=self.rotation_tol)

    def world_free_axis(self) -> np.ndarray:
        return self.pose.rotation @ self.free_axis

    def constraint_rotation(self) -> np.ndarray:
        """3x3 rotation taking world coordinates into the constraint frame,
        whose third axis is the world free axis."""
        a = self.world_free_axis()
        # Pick the world axis least aligned with a to build a stable basis.
        e = np.zeros(3)
        e[int(np.argmin(np.abs(a)))] = 1.0
        b1 = e - (e @ a) * a
        b1 /= np.linalg.norm(b1)
        b2 = np.cross(a, b1)
        return np.vstack([b1, b2, a])

    def residual_center(self) -> np.ndarray:
        """Center of the allowed residual box in the constraint frame.

        A pose rotated by theta about the free axis has residual component
        -theta along that axis, so an asymmetric range shifts the center.
        """
        lo, hi = self.rotation_range
        center = np.zeros(6)
        center[FREE_COMPONENT] = -0.5 * (lo + hi)
        return center

    def rotated_residual(self, actual: Pose) -> np.ndarray:
        """6-D residual of ``actual`` vs the nominal pose, expressed in the
        constraint frame (free component last)."""
        Rf = self.constraint_rotation()
        err = pose_error(self.pose, actual)
        out = np.empty(6)
        out[:3] = Rf @ err[:3]
        out[3:] = Rf @ err[3:]
        return out

    def membership_violation(self, actual: Pose) -> np.ndarray:
        """Per-component amount by which ``actual`` falls outside the set
        (zeros when the pose is a member)."""
        res = self.rotated_residual(actual) - self.residual_center()
        return np.maximum(0.0, np.abs(res) - self.epsilon)

    def contains(self, actual: Pose, slack: float = 0.0) -> bool:
        return bool(np.all(self.membership_violation(actual) <= slack))
