"""Scene ingestion and validation: robot model, limits, depth-map obstacle
field, grasp candidates, placement frame, planner parameters.

A scene is a single JSON document. Depth heights may live inline or in a
sidecar binary file of little-endian 32-bit floats (row-major). A loaded
``SceneConfig`` is immutable by convention and freely shareable across
concurrent planning sessions.
"""

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .config import PlannerParams
from .frames import GraspFrame
from .kinematics import (
    KinematicChain,
    MechanicalLimits,
    Pose,
    quaternion_to_rotation,
    rotation_to_quaternion,
)


class ParseError(Exception):
    """Scene or trajectory file could not be read or parsed."""


class ValidationError(Exception):
    """A scene invariant is violated; the message names the field."""


@dataclass
class DepthField:
    """Heightfield obstacle model over the workspace xy plane.

    ``heights`` is row-major: entry ``[iy, ix]`` covers the cell whose corner
    is ``origin + (ix, iy) * resolution``. Queries outside the grid return
    ``exterior_height``.
    """

    origin: np.ndarray
    resolution: float
    width: int
    height: int
    heights: np.ndarray
    exterior_height: float = 0.0

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float).reshape(2)
        self.heights = np.asarray(self.heights, dtype=float).reshape(self.height, self.width)
        if self.resolution <= 0:
            raise ValidationError("depth.resolution: must be positive")
        if self.width < 1 or self.height < 1:
            raise ValidationError("depth.width/height: grid must be non-empty")
        bad = np.argwhere(~np.isfinite(self.heights))
        if bad.size:
            iy, ix = bad[0]
            raise ValidationError(f"depth.heights[{iy},{ix}]: non-finite cell")

    def query(self, xy, dilation_radius: float = 0.0) -> float:
        """Height of the cell containing ``xy`` (nearest-cell, no
        interpolation), or ``exterior_height`` outside the grid.

        A positive ``dilation_radius`` returns the maximum height over all
        cells within that radius, modelling the gripper's lateral extent.
        """
        x, y = float(xy[0]), float(xy[1])
        if dilation_radius > 0.0:
            return self._query_dilated(x, y, dilation_radius)
        ix = math.floor((x - self.origin[0]) / self.resolution)
        iy = math.floor((y - self.origin[1]) / self.resolution)
        if 0 <= ix < self.width and 0 <= iy < self.height:
            return float(self.heights[iy, ix])
        return float(self.exterior_height)

    def query_batch(self, xy: np.ndarray, dilation_radius: float = 0.0) -> np.ndarray:
        """Vectorized ``query`` over an (B, 2) array of points."""
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        if dilation_radius > 0.0:
            return np.array([self._query_dilated(x, y, dilation_radius) for x, y in xy])
        ij = np.floor((xy - self.origin) / self.resolution).astype(int)
        inside = (
            (ij[:, 0] >= 0)
            & (ij[:, 0] < self.width)
            & (ij[:, 1] >= 0)
            & (ij[:, 1] < self.height)
        )
        out = np.full(xy.shape[0], float(self.exterior_height))
        out[inside] = self.heights[ij[inside, 1], ij[inside, 0]]
        return out

    def _query_dilated(self, x: float, y: float, radius: float) -> float:
        ix_lo = math.floor((x - radius - self.origin[0]) / self.resolution)
        ix_hi = math.floor((x + radius - self.origin[0]) / self.resolution)
        iy_lo = math.floor((y - radius - self.origin[1]) / self.resolution)
        iy_hi = math.floor((y + radius - self.origin[1]) / self.resolution)
        best = -np.inf
        covers_exterior = (
            ix_lo < 0 or iy_lo < 0 or ix_hi >= self.width or iy_hi >= self.height
        )
        if covers_exterior:
            best = float(self.exterior_height)
        x0 = max(ix_lo, 0)
        x1 = min(ix_hi, self.width - 1)
        y0 = max(iy_lo, 0)
        y1 = min(iy_hi, self.height - 1)
        if x0 <= x1 and y0 <= y1:
            best = max(best, float(self.heights[y0 : y1 + 1, x0 : x1 + 1].max()))
        return best if np.isfinite(best) else float(self.exterior_height)


def query_height(depth: DepthField, xy) -> float:
    return depth.query(xy)


@dataclass
class GraspCandidate:
    """A grasp frame with its analysis score and provenance labels."""

    frame: GraspFrame
    score: float = 1.0
    object_id: str = ""
    image_xy: np.ndarray | None = None

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValidationError(f"grasp score {self.score}: must lie in [0, 1]")
        if self.image_xy is not None:
            self.image_xy = np.asarray(self.image_xy, dtype=float).reshape(2)


@dataclass
class SceneConfig:
    chain: KinematicChain
    limits: MechanicalLimits
    depth: DepthField
    grasps: list[GraspCandidate]
    place: GraspFrame
    planner: PlannerParams
    chain_ref: str = "inline"


def diversity_filter(
    grasps: list[GraspCandidate], d_min: float, space: str = "image_px"
) -> list[GraspCandidate]:
    """Greedy minimum-distance filter over grasp candidates.

    Candidates are visited in descending score order (ties by input index)
    and kept iff their distance to every already-kept grasp is >= ``d_min``.
    ``space`` selects the metric: pixel distance on ``image_xy`` or metric
    distance on the frame translation.
    """
    if d_min < 0:
        raise ValueError("d_min must be nonnegative")
    if space not in ("image_px", "workspace_m"):
        raise ValueError("space must be 'image_px' or 'workspace_m'")

    def coords(g: GraspCandidate, idx: int) -> np.ndarray:
        if space == "image_px":
            if g.image_xy is None:
                raise ValueError(f"grasp {idx} has no image_xy for image-space filtering")
            return g.image_xy
        return g.frame.pose.translation

    order = sorted(range(len(grasps)), key=lambda i: (-grasps[i].score, i))
    kept: list[GraspCandidate] = []
    kept_xy: list[np.ndarray] = []
    for i in order:
        xy = coords(grasps[i], i)
        if all(np.linalg.norm(xy - other) >= d_min for other in kept_xy):
            kept.append(grasps[i])
            kept_xy.append(xy)
    return kept


# -- scene file I/O -----------------------------------------------------


def load_scene(path: str | Path) -> SceneConfig:
    """Load and fully validate a scene file.

    Raises:
        ParseError: the file is missing or not valid JSON.
        ValidationError: an invariant is violated; the message names the
            offending field.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read scene file {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON in {path}: {exc}") from exc
    return scene_from_dict(doc, base_dir=path.parent)


def scene_from_dict(doc: dict, base_dir: Path | None = None) -> SceneConfig:
    if not isinstance(doc, dict):
        raise ValidationError("scene: top level must be an object")

    robot = _require(doc, "robot", dict)
    chain, chain_ref = _load_chain_section(robot, base_dir)

    limits_doc = _require(doc, "limits", dict)
    try:
        limits = MechanicalLimits(
            q_min=_require(limits_doc, "q_min", list),
            q_max=_require(limits_doc, "q_max", list),
            v_max=_require(limits_doc, "v_max", list),
            a_max=_require(limits_doc, "a_max", list),
        )
    except ValueError as exc:
        raise ValidationError(f"limits: {exc}") from exc
    if limits.n != chain.n:
        raise ValidationError(f"limits: expected {chain.n} joints, got {limits.n}")

    planner = _load_planner_section(doc.get("planner", {}), chain.n)

    depth = _load_depth_section(_require(doc, "depth", dict), base_dir)

    grasps_doc = _require(doc, "grasps", list)
    if not grasps_doc:
        raise ValidationError("grasps: at least one grasp candidate required")
    grasps = []
    for i, g in enumerate(grasps_doc):
        try:
            frame = frame_from_dict(_require(g, "frame", dict), planner)
            grasps.append(
                GraspCandidate(
                    frame=frame,
                    score=float(g.get("score", 1.0)),
                    object_id=str(g.get("object_id", "")),
                    image_xy=g.get("image_xy"),
                )
            )
        except (ValidationError, ValueError, KeyError) as exc:
            raise ValidationError(f"grasps[{i}]: {exc}") from exc

    try:
        place = frame_from_dict(_require(doc, "place", dict), planner)
    except (ValueError, KeyError) as exc:
        raise ValidationError(f"place: {exc}") from exc

    return SceneConfig(
        chain=chain,
        limits=limits,
        depth=depth,
        grasps=grasps,
        place=place,
        planner=planner,
        chain_ref=chain_ref,
    )


def scene_to_dict(scene: SceneConfig) -> dict:
    """Inverse of ``scene_from_dict`` (depth heights always inline)."""
    planner = scene.planner
    doc = {
        "robot": {"chain": scene.chain.to_dict()},
        "limits": {
            "q_min": scene.limits.q_min.tolist(),
            "q_max": scene.limits.q_max.tolist(),
            "v_max": scene.limits.v_max.tolist(),
            "a_max": scene.limits.a_max.tolist(),
        },
        "depth": {
            "origin": scene.depth.origin.tolist(),
            "resolution": scene.depth.resolution,
            "width": scene.depth.width,
            "height": scene.depth.height,
            "heights": scene.depth.heights.ravel().tolist(),
            "exterior_height": scene.depth.exterior_height,
        },
        "grasps": [
            {
                "frame": frame_to_dict(g.frame),
                "score": g.score,
                "object_id": g.object_id,
                **({"image_xy": g.image_xy.tolist()} if g.image_xy is not None else {}),
            }
            for g in scene.grasps
        ],
        "place": frame_to_dict(scene.place),
        "planner": {
            "h_init": planner.h_init,
            "t_step": planner.t_step,
            "i_max": planner.i_max,
            "qp_tol": planner.qp_tol,
            "residual_tol": planner.residual_tol,
            "trust_init": planner.trust_init,
            "trust_shrink": planner.trust_shrink,
            "trust_grow": planner.trust_grow,
            "trust_min": planner.trust_min,
            "clearance_margin": planner.clearance_margin,
            "translation_tol": planner.translation_tol,
            "rotation_tol": planner.rotation_tol,
            "safe_z": planner.safe_z,
            "baseline_speed_fraction": planner.baseline_speed_fraction,
            "dilation_radius": planner.dilation_radius,
            "shrink_mode": planner.shrink_mode,
            **({"home": planner.home.tolist()} if planner.home is not None else {}),
        },
    }
    return doc


def save_scene(scene: SceneConfig, path: str | Path) -> None:
    with open(path, "w") as f:
        json.dump(scene_to_dict(scene), f, indent=1)


def frame_from_dict(doc: dict, planner: PlannerParams | None = None) -> GraspFrame:
    """Build a GraspFrame from its JSON form.

    Two forms are accepted: the full form (position + quaternion [w,x,y,z] +
    axis + rotation_range) and a top-down convenience form (position + yaw)
    that expands at load time.
    """
    ttol = doc.get("translation_tol", planner.translation_tol if planner else 1e-3)
    rtol = doc.get("rotation_tol", planner.rotation_tol if planner else 1e-2)
    position = np.asarray(_require(doc, "position", list), dtype=float)
    if position.size != 3:
        raise ValidationError("position: expected 3 entries")
    lo, hi = doc.get("rotation_range", (0.0, 0.0))
    if doc.get("rotation_free", False):
        if "quaternion" in doc:
            rot = quaternion_to_rotation(np.asarray(doc["quaternion"], dtype=float))
        else:
            rot = GraspFrame.top_down(position, float(doc.get("yaw", 0.0))).pose.rotation
        return GraspFrame.rotation_free(Pose(rot, position), translation_tol=ttol)
    if "quaternion" in doc:
        rot = quaternion_to_rotation(np.asarray(doc["quaternion"], dtype=float))
        axis = np.asarray(doc.get("axis", [1.0, 0.0, 0.0]), dtype=float)
        return GraspFrame.about_axis(
            Pose(rot, position), axis, float(lo), float(hi),
            translation_tol=ttol, rotation_tol=rtol,
        )
    return GraspFrame.top_down(
        position, float(doc.get("yaw", 0.0)), float(lo), float(hi),
        translation_tol=ttol, rotation_tol=rtol,
    )


def frame_to_dict(frame: GraspFrame) -> dict:
    doc = {
        "position": frame.pose.translation.tolist(),
        "quaternion": rotation_to_quaternion(frame.pose.rotation).tolist(),
        "axis": frame.free_axis.tolist(),
        "rotation_range": [frame.rotation_range[0], frame.rotation_range[1]],
        "translation_tol": frame.translation_tol,
        "rotation_tol": frame.rotation_tol,
    }
    if np.all(frame.epsilon[3:] >= np.pi):
        doc["rotation_free"] = True
    return doc


def example_scene_path(name: str) -> Path:
    """Filesystem path of a packaged example scene (with or without .json)."""
    if not name.endswith(".json"):
        name += ".json"
    return Path(str(resources.files("armplan.data").joinpath("scenes", name)))


def list_example_scenes() -> list[str]:
    root = resources.files("armplan.data").joinpath("scenes")
    return sorted(p.name[: -len(".json")] for p in root.iterdir() if p.name.endswith(".json"))


# -- section loaders ----------------------------------------------------


def _load_chain_section(robot: dict, base_dir: Path | None) -> tuple[KinematicChain, str]:
    spec = robot.get("chain", "ur5")
    try:
        if isinstance(spec, dict):
            return KinematicChain.from_dict(spec), "inline"
        if spec == "ur5":
            text = resources.files("armplan.data").joinpath("ur5.json").read_text()
            return KinematicChain.from_dict(json.loads(text)), "ur5"
        chain_path = Path(spec)
        if base_dir is not None and not chain_path.is_absolute():
            chain_path = base_dir / chain_path
        with open(chain_path) as f:
            return KinematicChain.from_dict(json.load(f)), str(spec)
    except (ValueError, KeyError) as exc:
        raise ValidationError(f"robot.chain: {exc}") from exc
    except OSError as exc:
        raise ParseError(f"robot.chain: cannot read {spec}: {exc}") from exc


def _load_planner_section(doc: dict, n_joints: int) -> PlannerParams:
    if not isinstance(doc, dict):
        raise ValidationError("planner: must be an object")
    known = {f for f in PlannerParams.__dataclass_fields__}
    unknown = set(doc) - known
    if unknown:
        raise ValidationError(f"planner.{sorted(unknown)[0]}: unknown field")
    try:
        params = PlannerParams(**{k: v for k, v in doc.items()})
    except (ValueError, TypeError) as exc:
        field_name = _blame_planner_field(doc, exc)
        raise ValidationError(f"planner.{field_name}: {exc}") from exc
    if params.home is not None and params.home.size != n_joints:
        raise ValidationError(
            f"planner.home: expected {n_joints} entries, got {params.home.size}"
        )
    if params.obstacle_links:
        params = PlannerParams(**{**doc, "obstacle_links": tuple(int(i) for i in params.obstacle_links)})
    return params


def _blame_planner_field(doc: dict, exc: Exception) -> str:
    msg = str(exc)
    for name in doc:
        if name in msg:
            return name
    # Re-run field checks one at a time to find the offender.
    for name, value in doc.items():
        try:
            PlannerParams(**{name: value})
        except (ValueError, TypeError):
            return name
    return "?"


def _load_depth_section(doc: dict, base_dir: Path | None) -> DepthField:
    origin = _require(doc, "origin", list)
    resolution = float(_require(doc, "resolution", (int, float)))
    width = int(_require(doc, "width", int))
    height = int(_require(doc, "height", int))
    if "heights" in doc:
        heights = np.asarray(doc["heights"], dtype=float)
        if heights.size != width * height:
            raise ValidationError(
                f"depth.heights: expected {width * height} values, got {heights.size}"
            )
    elif "heights_file" in doc:
        rel = Path(doc["heights_file"])
        full = rel if rel.is_absolute() or base_dir is None else base_dir / rel
        declared = int(_require(doc, "count", int))
        if declared != width * height:
            raise ValidationError(
                f"depth.count: declared {declared}, expected width*height = {width * height}"
            )
        try:
            raw = np.fromfile(full, dtype="<f4")
        except OSError as exc:
            raise ParseError(f"depth.heights_file: cannot read {full}: {exc}") from exc
        if raw.size != declared:
            raise ValidationError(
                f"depth.heights_file: contains {raw.size} floats, declared {declared}"
            )
        heights = raw.astype(float)
    else:
        raise ValidationError("depth.heights: missing (or provide heights_file)")
    try:
        return DepthField(
            origin=origin,
            resolution=resolution,
            width=width,
            height=height,
            heights=heights,
            exterior_height=float(doc.get("exterior_height", 0.0)),
        )
    except ValidationError:
        raise
    except ValueError as exc:
        raise ValidationError(f"depth: {exc}") from exc


def _require(doc: dict, key: str, types) -> object:
    if key not in doc:
        raise ValidationError(f"{key}: missing required field")
    value = doc[key]
    if types is not None and not isinstance(value, types):
        raise ValidationError(f"{key}: unexpected type {type(value).__name__}")
    return value
