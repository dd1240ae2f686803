"""Planner parameter bundle shared by the scene loader and the planners."""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class PlannerParams:
    """Knobs for the SQP planner, the horizon-shrinking loop, and the
    baseline planner. Values here are defaults; scene files may override any
    of them."""

    h_init: int = 48
    t_step: float = 0.008
    i_max: int = 20
    qp_tol: float = 1e-6
    qp_max_iter: int = 20000
    qp_rho: float = 4.0  # the banded trajectory QPs favor a larger step than
    # the solver-wide default; adaptive rescaling still applies
    residual_tol: float = 1e-4
    # The obstacle rows are linearized at every waypoint but only the endpoint
    # blocks carry trust regions, so their re-linearization wobble does not
    # shrink below ~1e-4; their convergence tolerance is looser and still sits
    # an order of magnitude inside the clearance margin.
    obstacle_residual_tol: float = 1e-3
    step_tol: float = 1e-3
    objective_rel_tol: float = 1e-5
    trust_init: float = 0.5
    trust_shrink: float = 0.5
    trust_grow: float = 1.5
    trust_min: float = 1e-3
    clearance_margin: float = 0.01
    translation_tol: float = 1e-3
    rotation_tol: float = 1e-2
    safe_z: float = 0.5
    baseline_speed_fraction: float = 0.25
    home: np.ndarray | None = None
    obstacle_links: tuple[int, ...] = ()
    dilation_radius: float = 0.0
    shrink_mode: str = "linear"  # or "bisect" (experimental)

    def __post_init__(self):
        if self.h_init < 2:
            raise ValueError("h_init must be >= 2")
        if self.t_step <= 0:
            raise ValueError("t_step must be positive")
        if not 0 < self.trust_shrink < 1 < self.trust_grow:
            raise ValueError("need 0 < trust_shrink < 1 < trust_grow")
        if self.shrink_mode not in ("linear", "bisect"):
            raise ValueError("shrink_mode must be 'linear' or 'bisect'")
        if self.home is not None:
            self.home = np.asarray(self.home, dtype=float).reshape(-1)
