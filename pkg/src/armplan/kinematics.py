"""Serial-arm kinematics: forward kinematics, geometric Jacobian, iterative IK.

The arm model is a chain of revolute joints described by standard
Denavit-Hartenberg parameters. All operations are pure functions of their
inputs and safe for concurrent use.
"""

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np


class NoConvergence(Exception):
    """Iterative IK hit its iteration cap with the residual above tolerance."""


def rotation_about_axis(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix for a unit axis and angle (rad)."""
    axis = np.asarray(axis, dtype=float)
    k = skew(axis)
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def skew(v: np.ndarray) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def log_rotation(R: np.ndarray) -> np.ndarray:
    """Axis-angle logarithm of a rotation matrix, principal branch (angle < pi)."""
    trace = np.clip(np.trace(R), -1.0, 3.0)
    angle = np.arccos((trace - 1.0) / 2.0)
    if angle < 1e-10:
        return np.zeros(3)
    if np.pi - angle < 1e-6:
        # Near pi the off-diagonal formula degenerates; recover the axis from
        # the dominant column of R + I.
        B = R + np.eye(3)
        col = B[:, int(np.argmax(np.diag(B)))]
        axis = col / np.linalg.norm(col)
        return angle * axis
    axis = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return angle / (2.0 * np.sin(angle)) * axis


def quaternion_to_rotation(q: np.ndarray) -> np.ndarray:
    """Rotation matrix from a unit quaternion [w, x, y, z]."""
    w, x, y, z = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def rotation_to_quaternion(R: np.ndarray) -> np.ndarray:
    """Unit quaternion [w, x, y, z] from a rotation matrix (w >= 0)."""
    trace = R[0, 0] + R[1, 1] + R[2, 2]
    if trace > 0:
        s = 0.5 / np.sqrt(trace + 1.0)
        q = np.array([0.25 / s, (R[2, 1] - R[1, 2]) * s, (R[0, 2] - R[2, 0]) * s, (R[1, 0] - R[0, 1]) * s])
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = np.array([(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s])
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = np.array([(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s])
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = np.array([(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s])
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


@dataclass
class Pose:
    """Rigid transform: proper orthonormal rotation plus translation (m)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=float).reshape(3)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, T: np.ndarray) -> "Pose":
        T = np.asarray(T, dtype=float)
        return cls(T[:3, :3].copy(), T[:3, 3].copy())

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def __matmul__(self, other: "Pose") -> "Pose":
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def orthonormality_residual(self) -> float:
        return float(np.abs(self.rotation @ self.rotation.T - np.eye(3)).max())

    def is_valid(self, tol: float = 1e-9) -> bool:
        return (
            self.orthonormality_residual() <= tol
            and abs(np.linalg.det(self.rotation) - 1.0) <= tol
            and bool(np.all(np.isfinite(self.translation)))
        )


def pose_error(target: Pose, current: Pose) -> np.ndarray:
    """6-vector residual: translation difference stacked with the axis-angle
    logarithm of the relative rotation. Zero iff the poses coincide."""
    t_err = target.translation - current.translation
    r_err = log_rotation(target.rotation @ current.rotation.T)
    return np.concatenate([t_err, r_err])


@dataclass
class DHLink:
    """Standard Denavit-Hartenberg joint descriptor (revolute)."""

    a: float
    alpha: float
    d: float
    theta_offset: float = 0.0

    def transform(self, theta: float) -> np.ndarray:
        th = theta + self.theta_offset
        ct, st = np.cos(th), np.sin(th)
        ca, sa = np.cos(self.alpha), np.sin(self.alpha)
        return np.array(
            [
                [ct, -st * ca, st * sa, self.a * ct],
                [st, ct * ca, -ct * sa, self.a * st],
                [0.0, sa, ca, self.d],
                [0.0, 0.0, 0.0, 1.0],
            ]
        )

    def transform_batch(self, thetas: np.ndarray) -> np.ndarray:
        """(B, 4, 4) stack of joint transforms for a vector of angles."""
        th = np.asarray(thetas, dtype=float) + self.theta_offset
        ct, st = np.cos(th), np.sin(th)
        ca, sa = np.cos(self.alpha), np.sin(self.alpha)
        T = np.zeros((th.size, 4, 4))
        T[:, 0, 0] = ct
        T[:, 0, 1] = -st * ca
        T[:, 0, 2] = st * sa
        T[:, 0, 3] = self.a * ct
        T[:, 1, 0] = st
        T[:, 1, 1] = ct * ca
        T[:, 1, 2] = -ct * sa
        T[:, 1, 3] = self.a * st
        T[:, 2, 1] = sa
        T[:, 2, 2] = ca
        T[:, 2, 3] = self.d
        T[:, 3, 3] = 1.0
        return T


@dataclass
class KinematicChain:
    """Ordered list of revolute DH links."""

    links: list[DHLink]

    def __post_init__(self):
        if len(self.links) < 1:
            raise ValueError("chain needs at least one joint")
        for i, link in enumerate(self.links):
            vals = (link.a, link.alpha, link.d, link.theta_offset)
            if not all(np.isfinite(v) for v in vals):
                raise ValueError(f"non-finite DH parameter in link {i}")

    @property
    def n(self) -> int:
        return len(self.links)

    def total_length(self) -> float:
        """Upper bound on reach: sum of |a| and |d| over all links."""
        return float(sum(abs(l.a) + abs(l.d) for l in self.links))

    @classmethod
    def from_dict(cls, data: dict) -> "KinematicChain":
        links = [
            DHLink(
                a=float(l["a"]),
                alpha=float(l["alpha"]),
                d=float(l["d"]),
                theta_offset=float(l.get("theta_offset", 0.0)),
            )
            for l in data["links"]
        ]
        declared = data.get("joint_count")
        if declared is not None and int(declared) != len(links):
            raise ValueError(
                f"joint_count {declared} does not match {len(links)} links"
            )
        return cls(links)

    def to_dict(self) -> dict:
        return {
            "joint_count": self.n,
            "links": [
                {"a": l.a, "alpha": l.alpha, "d": l.d, "theta_offset": l.theta_offset}
                for l in self.links
            ],
        }


def load_chain(path: str | Path) -> KinematicChain:
    with open(path) as f:
        return KinematicChain.from_dict(json.load(f))


def default_ur5() -> KinematicChain:
    """UR5 chain from the packaged parameter file."""
    text = resources.files("armplan.data").joinpath("ur5.json").read_text()
    return KinematicChain.from_dict(json.loads(text))


@dataclass
class MechanicalLimits:
    """Per-joint position/velocity/acceleration limits. Minimum velocity and
    acceleration are the negatives of the maxima by construction."""

    q_min: np.ndarray
    q_max: np.ndarray
    v_max: np.ndarray
    a_max: np.ndarray

    def __post_init__(self):
        self.q_min = np.asarray(self.q_min, dtype=float).reshape(-1)
        self.q_max = np.asarray(self.q_max, dtype=float).reshape(-1)
        self.v_max = np.asarray(self.v_max, dtype=float).reshape(-1)
        self.a_max = np.asarray(self.a_max, dtype=float).reshape(-1)
        n = self.q_min.size
        if not (self.q_max.size == self.v_max.size == self.a_max.size == n):
            raise ValueError("limit vectors must share one length")
        if not np.all(self.q_min < self.q_max):
            raise ValueError("q_min must be < q_max elementwise")
        if not np.all(self.v_max > 0) or not np.all(self.a_max > 0):
            raise ValueError("v_max and a_max must be positive")

    @property
    def n(self) -> int:
        return self.q_min.size

    def scaled(self, fraction: float) -> "MechanicalLimits":
        """Same position range, velocity/acceleration scaled down."""
        return MechanicalLimits(self.q_min, self.q_max, self.v_max * fraction, self.a_max * fraction)

    def contains(self, q: np.ndarray, slack: float = 0.0) -> bool:
        return bool(np.all(q >= self.q_min - slack) and np.all(q <= self.q_max + slack))


def frames(chain: KinematicChain, q: np.ndarray) -> list[np.ndarray]:
    """Homogeneous transforms of every joint frame plus the tool frame.

    Element i is the pose of frame i in the base frame; element 0 is the
    identity (base), element n is the tool.
    """
    q = _check_config(chain, q)
    out = [np.eye(4)]
    T = np.eye(4)
    for link, theta in zip(chain.links, q):
        T = T @ link.transform(theta)
        out.append(T.copy())
    return out


def forward_kinematics(chain: KinematicChain, q: np.ndarray) -> Pose:
    """Tool-frame pose as the ordered product of per-joint transforms."""
    q = _check_config(chain, q)
    T = np.eye(4)
    for link, theta in zip(chain.links, q):
        T = T @ link.transform(theta)
    return Pose.from_matrix(T)


def jacobian(chain: KinematicChain, q: np.ndarray, link: int | None = None) -> np.ndarray:
    """Geometric Jacobian mapping joint velocities to spatial velocity of the
    tool (or of an intermediate link frame).

    Rows 0..2 are translation (row 2 is the z-translation row), rows 3..5 are
    rotation. Columns beyond ``link`` are zero when a link index is given.
    """
    q = _check_config(chain, q)
    n = chain.n
    fs = frames(chain, q)
    tip = n if link is None else int(link)
    if not 1 <= tip <= n:
        raise ValueError(f"link index {tip} outside 1..{n}")
    p_tip = fs[tip][:3, 3]
    J = np.zeros((6, n))
    for j in range(tip):
        axis = fs[j][:3, 2]
        origin = fs[j][:3, 3]
        J[:3, j] = np.cross(axis, p_tip - origin)
        J[3:, j] = axis
    return J


def frames_batch(chain: KinematicChain, Q: np.ndarray) -> np.ndarray:
    """Joint and tool frames for a whole batch of configurations.

    Returns a (B, n+1, 4, 4) array; entry [b, i] is frame i of configuration
    b. The per-joint transforms are vectorized over the batch, which is what
    the per-waypoint constraint sweep wants.
    """
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[1] != chain.n:
        raise ValueError(f"expected (B, {chain.n}) configurations")
    B = Q.shape[0]
    out = np.empty((B, chain.n + 1, 4, 4))
    out[:, 0] = np.eye(4)
    T = np.broadcast_to(np.eye(4), (B, 4, 4)).copy()
    for j, link in enumerate(chain.links):
        T = T @ link.transform_batch(Q[:, j])
        out[:, j + 1] = T
    return out


def jacobian_from_frames(fs, link: int | None = None) -> np.ndarray:
    """Geometric Jacobian computed from a precomputed ``frames`` list; saves
    the repeated forward pass in per-waypoint loops."""
    n = len(fs) - 1
    tip = n if link is None else int(link)
    p_tip = fs[tip][:3, 3]
    J = np.zeros((6, n))
    for j in range(tip):
        axis = fs[j][:3, 2]
        J[:3, j] = np.cross(axis, p_tip - fs[j][:3, 3])
        J[3:, j] = axis
    return J


def inverse_kinematics(
    chain: KinematicChain,
    target: Pose,
    seed: np.ndarray,
    limits: MechanicalLimits,
    tol: float = 1e-6,
    max_iter: int = 200,
    damping: float = 1e-3,
    step_clamp: float = 0.2,
) -> np.ndarray:
    """Damped least squares IK on the 6-D pose residual.

    Iterates from ``seed``, clamping each step to ``step_clamp`` rad per joint
    and each iterate to the joint limits, until the residual norm drops below
    ``tol``. Returns the branch nearest the seed.

    Raises:
        NoConvergence: iteration cap hit with the residual above tolerance;
            callers should try another seed or reject the target.
    """
    q = _check_config(chain, seed).copy()
    if limits.n != chain.n:
        raise ValueError("limits dimension does not match chain")
    q = np.clip(q, limits.q_min, limits.q_max)
    for _ in range(max_iter):
        err = pose_error(target, forward_kinematics(chain, q))
        err_norm = np.linalg.norm(err)
        if err_norm <= tol:
            return q
        J = jacobian(chain, q)
        # Levenberg-Marquardt damping: proportional to the residual so the
        # step stays regularized far out but converges fast near the root.
        lam = damping * min(1.0, err_norm)
        JJt = J @ J.T + lam * np.eye(6)
        dq = J.T @ np.linalg.solve(JJt, err)
        dq = np.clip(dq, -step_clamp, step_clamp)
        q = np.clip(q + dq, limits.q_min, limits.q_max)
    err = pose_error(target, forward_kinematics(chain, q))
    if np.linalg.norm(err) <= tol:
        return q
    raise NoConvergence(
        f"IK residual {np.linalg.norm(err):.3e} above {tol:.1e} after {max_iter} iterations"
    )


def _check_config(chain: KinematicChain, q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float).reshape(-1)
    if q.size != chain.n:
        raise ValueError(f"configuration has {q.size} entries, chain has {chain.n} joints")
    if not np.all(np.isfinite(q)):
        raise ValueError("configuration contains non-finite entries")
    return q
