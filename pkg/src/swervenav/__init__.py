"""Sampling-based MPC navigation for four-wheel independent drive/steer vehicles."""

from .kinematics import (
    Control3,
    Control4,
    Pose2,
    VehicleCommand8,
    VehicleGeometry,
    WheelVelocities8,
    compose_4_to_command,
    control4_from_command,
    expand_3_to_8,
    expand_4,
    jacobian_of_projection,
    project_to_command,
    propagate,
    reduce_4_to_3,
    twist_from_command,
    wrap_angle,
)
from .world import (
    GenerationError,
    InflatedGrid,
    OccupancyGrid,
    Scenario,
    generate,
    in_collision,
    inflate,
    load_map,
    save_map,
)
from .planner import NoPathError, PathIndex, ReferencePath, plan, query_errors
from .mppi import (
    CostWeights,
    Diagnostics,
    MppiConfig,
    RolloutResult,
    build_candidates,
    compute_weights,
    config_3dof_a,
    config_3dof_b,
    config_4dof,
    rollout,
    sample_noise,
    stage_cost,
    step,
    terminal_cost,
)
from .hybrid import (
    HybridConfig,
    HybridState,
    convert_3_to_4,
    convert_4_to_3,
    hybrid_step,
    select_mode,
)
from .harness import (
    BUILTIN_SCENARIOS,
    EpisodeConfig,
    EpisodeMetrics,
    SolverParams,
    compute_metrics,
    run_batch,
    run_episode,
)

__version__ = "0.1.0"
