"""armplan: minimum-time, obstacle-aware pick-and-place trajectory planning
for serial arms, exploiting the free rotation about the grasp axis."""

from .config import PlannerParams
from .frames import GraspFrame
from .kinematics import (
    DHLink,
    KinematicChain,
    MechanicalLimits,
    NoConvergence,
    Pose,
    default_ur5,
    forward_kinematics,
    inverse_kinematics,
    jacobian,
    load_chain,
    pose_error,
)
from .qpsolver import (
    ADMMSolver,
    QPResult,
    QPStatus,
    QuadraticProgram,
    solve,
    update_bounds,
    verify_infeasibility_certificate,
)
from .scene import (
    DepthField,
    GraspCandidate,
    ParseError,
    SceneConfig,
    ValidationError,
    diversity_filter,
    example_scene_path,
    list_example_scenes,
    load_scene,
    query_height,
    save_scene,
)

__version__ = "0.1.0"
