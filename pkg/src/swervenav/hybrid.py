"""Real-time switching between the twist and diagonal-wheel sampling spaces.

The twist sampler drives efficiently but destabilizes when tracking error
grows; the diagonal-wheel sampler is slower but far more reliable in tight
spots.  The hybrid controller picks the space each tick from the raw path
tracking errors and keeps both warm starts current by converting the solved
sequence into the other space after every solve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import mppi
from .kinematics import (
    Pose2,
    VehicleCommand8,
    VehicleGeometry,
    expand_diagonal,
    reduce_diagonal,
    steer_and_speed,
    wheel_velocity_components,
)
from .planner import PathIndex, query_errors
from .world import InflatedGrid


@dataclass(frozen=True)
class HybridConfig:
    """Switching thresholds on raw (unsquared) tracking errors.

    space_a names the twist-sampler variance variant ("a" wide, "b" fitted);
    None lets the episode runner pick by scenario type.  A positive
    hysteresis widens the 4dof band: once switched, errors must drop that
    far below the thresholds before returning to the twist space.
    """

    d_thresh: float = 0.3
    theta_thresh: float = 0.3
    space_a: str | None = None
    space_b: str = "4dof"
    hysteresis: float = 0.0

    def __post_init__(self):
        # zero thresholds are allowed: they pin the controller to the
        # cautious diagonal-wheel space
        if self.d_thresh < 0.0 or self.theta_thresh < 0.0:
            raise ValueError("thresholds must be non-negative")
        if self.space_a not in (None, "a", "b"):
            raise ValueError("space_a must be 'a', 'b' or None")
        if self.hysteresis < 0.0:
            raise ValueError("hysteresis must be non-negative")


@dataclass
class HybridState:
    """Warm starts for both spaces plus the last selected mode."""

    U3: np.ndarray  # (T, 3)
    U4: np.ndarray  # (T, 4)
    mode: str = "3dof"

    @staticmethod
    def initial(T: int) -> "HybridState":
        return HybridState(U3=np.zeros((T, 3)), U4=np.zeros((T, 4)))


def select_mode(dist_err: float, angle_err: float, cfg: HybridConfig) -> str:
    """Pick the twist space only while both raw errors are under threshold."""
    if dist_err < cfg.d_thresh and angle_err < cfg.theta_thresh:
        return "3dof"
    return "4dof"


def convert_3_to_4(U3: np.ndarray, geom: VehicleGeometry) -> np.ndarray:
    """Convert a twist sequence (T, 3) into the diagonal-wheel space (T, 4).

    Each row expands to wheel velocities and projects to steering/speed;
    rows with zero wheel speeds inherit the steering of the previous
    converted row (zero steering for a leading singular row).
    """
    U3 = np.asarray(U3, dtype=float)
    vx, vy = wheel_velocity_components(U3, geom)
    out = np.empty((len(U3), 4))
    prev_delta = np.zeros(4)
    for t in range(len(U3)):
        delta, speed = steer_and_speed(vx[t], vy[t], prev_delta)
        out[t] = (speed[0], speed[3], delta[0], delta[3])
        prev_delta = delta
    return out


def convert_4_to_3(U4: np.ndarray, geom: VehicleGeometry, bounds=None) -> np.ndarray:
    """Convert a diagonal-wheel sequence (T, 4) back to the twist space,
    clamping to the twist bounds when given."""
    U3 = reduce_diagonal(expand_diagonal(np.asarray(U4, dtype=float)), geom)
    if bounds is not None:
        b = np.asarray(bounds)
        U3 = np.clip(U3, -b, b)
    return U3


def hybrid_step(
    x0: Pose2,
    state: HybridState,
    world: InflatedGrid,
    path,
    goal: Pose2,
    cfg3: mppi.MppiConfig,
    cfg4: mppi.MppiConfig,
    hybrid_cfg: HybridConfig,
    weights: mppi.CostWeights,
    iteration: int = 0,
    prev_cmd: VehicleCommand8 | None = None,
):
    """Select a space, solve in it, and refresh both warm starts.

    Returns (command, new_state, diagnostics); stored warm starts are
    clamped to their space bounds so subsequent solves start in-bounds.
    """
    ref = path.path if isinstance(path, PathIndex) else path
    dist_err, angle_err, _ = query_errors(ref, x0)
    mode = select_mode(dist_err, angle_err, hybrid_cfg)
    if (
        hybrid_cfg.hysteresis > 0.0
        and state.mode == "4dof"
        and mode == "3dof"
        and not (
            dist_err < hybrid_cfg.d_thresh - hybrid_cfg.hysteresis
            and angle_err < hybrid_cfg.theta_thresh - hybrid_cfg.hysteresis
        )
    ):
        mode = "4dof"

    if mode == "3dof":
        cmd, warm3, diag = mppi.step(
            x0, state.U3, world, path, goal, cfg3, weights, iteration, prev_cmd
        )
        warm4 = convert_3_to_4(warm3, cfg3.geometry)
        b3, b4 = np.asarray(cfg3.bounds), np.asarray(cfg4.bounds)
        new_state = HybridState(
            U3=np.clip(warm3, -b3, b3), U4=np.clip(warm4, -b4, b4), mode=mode
        )
    else:
        cmd, warm4, diag = mppi.step(
            x0, state.U4, world, path, goal, cfg4, weights, iteration, prev_cmd
        )
        warm3 = convert_4_to_3(warm4, cfg4.geometry, bounds=cfg3.bounds)
        b4 = np.asarray(cfg4.bounds)
        new_state = HybridState(U3=warm3, U4=np.clip(warm4, -b4, b4), mode=mode)
    diag.mode = mode
    return cmd, new_state, diag
