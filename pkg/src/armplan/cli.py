"""Command-line surface: plan one grasp, compare against the baseline,
select the fastest grasp per object, and validate trajectory files.

Exit codes are stable: 0 success, 1 input error (parse or validation of
inputs), 2 no trajectory found, 3 trajectory validation failure. Human
readable tables go to stdout, machine-readable JSON to files, diagnostics to
stderr.
"""

import argparse
import json
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .scene import ParseError, SceneConfig, ValidationError, load_scene
from .timeopt import (
    NoTrajectory,
    PlanRequest,
    TrajectorySolution,
    baseline_plan,
    load_solution,
    plan_grasp_set,
    plan_min_time,
    save_solution,
    save_velocity_csv,
)
from .validation import validate_trajectory

EXIT_OK = 0
EXIT_INPUT_ERROR = 1
EXIT_NO_TRAJECTORY = 2
EXIT_VALIDATION_FAILURE = 3


@dataclass
class GraspRow:
    grasp_index: int
    object_id: str
    status: str
    duration_s: float | None
    baseline_duration_s: float | None = None
    speedup: float | None = None
    horizons_tried: int = 0
    wall_ms: float = 0.0


@dataclass
class RunReport:
    """Per-grasp outcomes plus aggregates for the comparison table."""

    rows: list[GraspRow] = field(default_factory=list)

    def aggregates(self) -> dict:
        out = {}
        ok = [r for r in self.rows if r.duration_s is not None]
        if ok:
            out["optimized"] = _stats([r.duration_s for r in ok])
        with_baseline = [r for r in ok if r.baseline_duration_s is not None]
        if with_baseline:
            out["baseline"] = _stats([r.baseline_duration_s for r in with_baseline])
            out["speedup"] = _stats([r.speedup for r in with_baseline])
        return out

    def to_dict(self) -> dict:
        return {
            "rows": [vars(r).copy() for r in self.rows],
            "aggregates": self.aggregates(),
        }


def _stats(values: list[float]) -> dict:
    arr = np.asarray(values, dtype=float)
    return {
        "mean": float(arr.mean()),
        "stdev": float(arr.std()),  # population stdev: a single row reports 0
        "min": float(arr.min()),
        "max": float(arr.max()),
        "count": int(arr.size),
    }


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # argparse exits 2 by default, which collides with "no trajectory".
        self.print_usage(sys.stderr)
        raise SystemExit(_fail(message))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="armplan", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument("--scene", required=True, help="scene JSON file")
        if needs_out:
            p.add_argument("--out", required=True, help="output JSON file")
        p.add_argument("--h-init", type=int, default=None,
                       help="override the scene's initial horizon")
        p.add_argument("--t-step", type=float, default=None,
                       help="override the scene's waypoint interval (s)")
        p.add_argument("--deadline-ms", type=float, default=None,
                       help="wall-clock budget per plan; the search is anytime")
        p.add_argument("--jobs", type=int, default=None,
                       help="max concurrent per-grasp plans (default: up to 4)")
        p.add_argument("--seed", type=int, default=0,
                       help="seed for randomized tooling; the planner itself is deterministic")

    p_plan = sub.add_parser("plan", help="plan one grasp to the placement")
    common(p_plan)
    p_plan.add_argument("--grasp", type=int, default=0, help="grasp index in the scene")
    p_plan.add_argument("--csv", default=None,
                        help="also write a per-interval velocity/acceleration CSV")

    p_cmp = sub.add_parser("compare", help="baseline vs optimized for every grasp")
    common(p_cmp)

    p_sel = sub.add_parser("select", help="per-object fastest-grasp selection")
    common(p_sel)

    p_val = sub.add_parser("validate", help="re-check a trajectory file against a scene")
    p_val.add_argument("--scene", required=True)
    p_val.add_argument("--trajectory", required=True)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        scene = load_scene(args.scene)
    except (ParseError, ValidationError) as exc:
        return _fail(str(exc))
    if args.command == "plan":
        return cmd_plan(scene, args)
    if args.command == "compare":
        return cmd_compare(scene, args)
    if args.command == "select":
        return cmd_select(scene, args)
    return cmd_validate(scene, args)


def _fail(message: str, code: int = EXIT_INPUT_ERROR) -> int:
    print(f"armplan: {message}", file=sys.stderr)
    return code


def _request(scene: SceneConfig, grasp_index: int, args) -> PlanRequest:
    params = scene.planner
    h_init = args.h_init if args.h_init is not None else params.h_init
    t_step = args.t_step if args.t_step is not None else params.t_step
    deadline = args.deadline_ms / 1000.0 if args.deadline_ms is not None else None
    return PlanRequest(
        start=scene.grasps[grasp_index].frame,
        goal=scene.place,
        h_init=h_init,
        t_step=t_step,
        limits=scene.limits,
        chain=scene.chain,
        depth=scene.depth,
        deadline=deadline,
        params=params,
    )


def cmd_plan(scene: SceneConfig, args) -> int:
    if not 0 <= args.grasp < len(scene.grasps):
        return _fail(f"grasp index {args.grasp} out of range (scene has {len(scene.grasps)})")
    try:
        sol = plan_min_time(_request(scene, args.grasp, args))
    except NoTrajectory as exc:
        return _fail(str(exc), EXIT_NO_TRAJECTORY)
    sol.grasp_index = args.grasp
    save_solution(sol, args.out)
    if args.csv:
        save_velocity_csv(sol, args.csv)
    horizons = len(sol.history) if sol.history else 1
    print(f"grasp {args.grasp}: duration {sol.duration:.3f} s "
          f"(H = {sol.H}, t_step = {sol.t_step}, {horizons} feasible horizons)")
    return EXIT_OK


def cmd_compare(scene: SceneConfig, args) -> int:
    report = RunReport()
    params = scene.planner
    failures = 0
    for index, grasp in enumerate(scene.grasps):
        row = GraspRow(grasp_index=index, object_id=grasp.object_id, status="ok", duration_s=None)
        begin = time.monotonic()
        try:
            sol = plan_min_time(_request(scene, index, args))
            base = baseline_plan(
                grasp.frame, scene.place, params.safe_z, scene.limits,
                scene.chain, sol.t_step, params,
            )
            row.duration_s = sol.duration
            row.baseline_duration_s = base.duration
            row.speedup = base.duration / sol.duration
            row.horizons_tried = len(sol.history) if sol.history else 1
        except NoTrajectory as exc:
            row.status = f"no_trajectory: {exc}"
            failures += 1
        row.wall_ms = (time.monotonic() - begin) * 1000.0
        report.rows.append(row)

    with open(args.out, "w") as f:
        json.dump(report.to_dict(), f, indent=1)
    _print_compare_table(report)
    if failures == len(scene.grasps):
        return _fail("every grasp failed to plan", EXIT_NO_TRAJECTORY)
    return EXIT_OK


def _print_compare_table(report: RunReport) -> None:
    agg = report.aggregates()
    if "baseline" not in agg:
        print("no successful baseline/optimized pairs")
        return
    print(f"{'':8s}{'baseline':>12s}{'optimized':>12s}{'speedup':>10s}")
    rows = [
        ("mean", agg["baseline"]["mean"], agg["optimized"]["mean"], agg["speedup"]["mean"]),
        ("stdev", agg["baseline"]["stdev"], agg["optimized"]["stdev"], None),
        ("min", agg["baseline"]["min"], agg["optimized"]["min"], agg["speedup"]["min"]),
        ("max", agg["baseline"]["max"], agg["optimized"]["max"], agg["speedup"]["max"]),
    ]
    for name, b, g, s in rows:
        tail = f"{s:9.1f}x" if s is not None else ""
        print(f"{name:8s}{b:10.3f} s{g:10.3f} s{tail}")


def cmd_select(scene: SceneConfig, args) -> int:
    params = scene.planner
    h_init = args.h_init if args.h_init is not None else params.h_init
    t_step = args.t_step if args.t_step is not None else params.t_step
    deadline = args.deadline_ms / 1000.0 if args.deadline_ms is not None else None

    groups: dict[str, list[int]] = {}
    for index, grasp in enumerate(scene.grasps):
        groups.setdefault(grasp.object_id, []).append(index)

    objects = []
    any_ok = False
    for object_id in sorted(groups):
        indices = groups[object_id]
        try:
            result = plan_grasp_set(
                [scene.grasps[i].frame for i in indices],
                scene.place, scene.limits, scene.chain, scene.depth,
                h_init, t_step, params, deadline=deadline, jobs=args.jobs,
            )
        except NoTrajectory as exc:
            objects.append({"object_id": object_id, "grasps": len(indices),
                            "error": str(exc)})
            continue
        any_ok = True
        durations = [d for d in result.durations if d is not None]
        objects.append({
            "object_id": object_id,
            "grasps": len(indices),
            "planned": len(durations),
            "min_s": min(durations),
            "mean_s": float(np.mean(durations)),
            "max_s": max(durations),
            "best_grasp_index": indices[result.best_index],
            "best_duration_s": result.solution.duration,
            "durations": {str(indices[i]): d for i, d in enumerate(result.durations)},
            "failures": {str(indices[i]): r for i, r in result.failures.items()},
        })

    with open(args.out, "w") as f:
        json.dump({"objects": objects}, f, indent=1)
    print(f"{'object':<16s}{'grasps':>7s}{'min':>9s}{'mean':>9s}{'max':>9s}{'best':>6s}")
    for o in objects:
        if "error" in o:
            print(f"{o['object_id']:<16s}{o['grasps']:>7d}  {o['error']}")
        else:
            print(f"{o['object_id']:<16s}{o['grasps']:>7d}{o['min_s']:>9.3f}{o['mean_s']:>9.3f}"
                  f"{o['max_s']:>9.3f}{o['best_grasp_index']:>6d}")
    if not any_ok:
        return _fail("no object produced a trajectory", EXIT_NO_TRAJECTORY)
    return EXIT_OK


def cmd_validate(scene: SceneConfig, args) -> int:
    try:
        sol = load_solution(args.trajectory)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        return _fail(f"cannot read trajectory {args.trajectory}: {exc}")
    start = goal = None
    if sol.grasp_index is not None:
        if not 0 <= sol.grasp_index < len(scene.grasps):
            return _fail(f"trajectory references grasp {sol.grasp_index}, "
                         f"scene has {len(scene.grasps)}")
        start = scene.grasps[sol.grasp_index].frame
        goal = scene.place
    else:
        print("trajectory carries no grasp index; skipping endpoint pose checks",
              file=sys.stderr)
    violations = validate_trajectory(
        sol, scene.chain, scene.limits, depth=scene.depth, start=start, goal=goal,
        dilation_radius=scene.planner.dilation_radius,
    )
    if violations:
        for v in violations:
            print(str(v))
        print(f"{len(violations)} constraint violation(s)")
        return EXIT_VALIDATION_FAILURE
    print(f"trajectory valid: {sol.H + 1} waypoints, duration {sol.duration:.3f} s")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
