"""Episode runner, evaluation metrics, batch aggregation and config loading.

An episode drops the vehicle at the field center and asks it to visit the
generated goals in order.  The plant is the same kinematic model the solver
rolls out: each tick the emitted 8-DoF command is reduced to its implied
body twist and integrated over one control interval.  An episode fails on
collision of the true state or on a per-goal timeout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import mppi
from .hybrid import HybridConfig, HybridState, hybrid_step
from .kinematics import (
    Pose2,
    VehicleGeometry,
    fold_half_pi,
    propagate,
    twist_from_command,
    wrap_angle,
)

from .mppi import CostWeights, config_3dof_a, config_3dof_b, config_4dof
from .planner import NoPathError, PathIndex, plan
from .world import Scenario, default_start, generate, in_collision, inflate

_SEED_MASK = (1 << 63) - 1

CONTROLLERS = ("mppi3a", "mppi3b", "mppi4", "hybrid")


@dataclass(frozen=True)
class SolverParams:
    """Solver knobs shared by every controller in a run.

    Defaults are desk-scale: a small sample count so a 4-controller batch
    finishes in minutes, and temperature/coupling scaled down with the
    roughly 10x smaller cost spreads of desk fields (the full-scale solver
    values, K=3000 T=30 lambda=250 gamma=6.25, are one config file away and
    remain the MppiConfig defaults).
    """

    K: int = 448
    T: int = 18
    dt: float = 0.033
    alpha: float = 0.1
    lambda_: float = 25.0
    gamma: float = 0.625
    v_des: float = 2.0


@dataclass(frozen=True)
class EpisodeConfig:
    scenario: Scenario = field(default_factory=Scenario)
    controller: str = "mppi4"
    episodes: int = 30
    goal_timeout: float = 60.0  # seconds of sim time per goal
    control_dt: float = 0.05
    seed: int = 0  # master seed; episode i uses seed ^ i
    workers: int = 1
    goal_pos_tol: float = 0.2
    goal_heading_tol: float = 0.2
    inflation_margin: float = 0.05
    # extra inflation used only for global planning, so the reference path
    # keeps clearance from the collision boundary and rollouts along it
    # survive; planning falls back to the collision grid when the vehicle
    # sits inside the margin band
    plan_margin: float = 0.12
    # wall-clock solve times are the one non-deterministic output; disable
    # recording to make every byte of the results reproducible
    record_timing: bool = True
    # recovery replan: if the vehicle strays farther than replan_error from
    # its reference path for replan_patience consecutive ticks (e.g. it ends
    # up behind an obstacle after a sharp turn), the route is recomputed from
    # the current pose; 0 disables
    replan_error: float = 0.6
    replan_patience: int = 20
    # the solver's goal is a point this far ahead along the reference path
    # (the episode goal once within reach): the terminal cost then settles
    # travel direction without dragging the vehicle off detouring routes
    lookahead: float = 2.5
    solver: SolverParams = field(default_factory=SolverParams)
    weights: CostWeights = field(default_factory=CostWeights)
    hybrid: HybridConfig = field(default_factory=HybridConfig)
    geometry: VehicleGeometry = field(default_factory=VehicleGeometry)

    def __post_init__(self):
        if self.controller not in CONTROLLERS:
            raise ValueError(
                f"unknown controller {self.controller!r}; choose from {CONTROLLERS}"
            )
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")
        if self.goal_timeout <= 0.0 or self.control_dt <= 0.0:
            raise ValueError("timeouts and control interval must be positive")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass
class EpisodeMetrics:
    total_cost: float
    mean_calc_time: float  # ms
    mean_steering_rate: float  # rad/s
    mean_wheel_acc: float  # m/s^2
    trajectory_length: float  # m
    episode_time: float  # s
    success: bool
    failure_kind: str = ""  # "", "collision" or "timeout"


@dataclass
class Trace:
    """Per-tick record of one episode (poses has one extra, final row)."""

    poses: np.ndarray  # (N+1, 3)
    commands: np.ndarray  # (N, 8) = [delta x4, speed x4]
    modes: list
    solve_ms: np.ndarray  # (N,)
    opt_cost: np.ndarray  # (N,)
    sample_min: np.ndarray  # (N,)
    sample_mean: np.ndarray  # (N,)
    goal_index: np.ndarray  # (N,)
    control_dt: float
    success: bool
    failure_kind: str


class _SingleSpaceController:
    def __init__(self, cfg: mppi.MppiConfig, weights: CostWeights):
        self.cfg = cfg
        self.weights = weights
        self.U = np.zeros((cfg.T, cfg.dim))

    def step(self, pose, grid, path, goal, tick, prev_cmd):
        cmd, self.U, diag = mppi.step(
            pose, self.U, grid, path, goal, self.cfg, self.weights,
            iteration=tick, prev_cmd=prev_cmd,
        )
        return cmd, diag


class _HybridController:
    def __init__(self, cfg3, cfg4, hybrid_cfg: HybridConfig, weights: CostWeights):
        self.cfg3 = cfg3
        self.cfg4 = cfg4
        self.hybrid_cfg = hybrid_cfg
        self.weights = weights
        self.state = HybridState.initial(cfg3.T)

    def step(self, pose, grid, path, goal, tick, prev_cmd):
        cmd, self.state, diag = hybrid_step(
            pose, self.state, grid, path, goal,
            self.cfg3, self.cfg4, self.hybrid_cfg, self.weights,
            iteration=tick, prev_cmd=prev_cmd,
        )
        return cmd, diag


def make_controller(cfg: EpisodeConfig, solver_seed: int):
    sp = cfg.solver
    common = dict(
        K=sp.K, T=sp.T, dt=sp.dt, alpha=sp.alpha, lambda_=sp.lambda_,
        gamma=sp.gamma, v_des=sp.v_des, seed=solver_seed, workers=cfg.workers,
        geometry=cfg.geometry,
    )
    if cfg.controller == "mppi3a":
        return _SingleSpaceController(config_3dof_a(**common), cfg.weights)
    if cfg.controller == "mppi3b":
        return _SingleSpaceController(config_3dof_b(**common), cfg.weights)
    if cfg.controller == "mppi4":
        return _SingleSpaceController(config_4dof(**common), cfg.weights)
    # hybrid: the twist-space variant defaults to the wide variances in the
    # open cylinder field and the fitted ones in the maze
    variant = cfg.hybrid.space_a
    if variant is None:
        variant = "a" if cfg.scenario.kind == "cylinder_garden" else "b"
    cfg3 = config_3dof_a(**common) if variant == "a" else config_3dof_b(**common)
    return _HybridController(cfg3, config_4dof(**common), cfg.hybrid, cfg.weights)


def _goal_reached(pose: Pose2, goal: Pose2, cfg: EpisodeConfig) -> bool:
    pos_err = math.hypot(pose.x - goal.x, pose.y - goal.y)
    heading_err = abs(float(wrap_angle(pose.theta - goal.theta)))
    return pos_err < cfg.goal_pos_tol and heading_err < cfg.goal_heading_tol


def run_episode(cfg: EpisodeConfig, episode_index: int = 0):
    """Run one navigation episode; returns (EpisodeMetrics, Trace).

    Episode i regenerates the world with the scenario seed XOR the episode
    seed, so a batch samples layout variety deterministically.
    """
    ep_seed = (cfg.seed ^ episode_index) & _SEED_MASK
    scenario = replace(cfg.scenario, seed=(cfg.scenario.seed ^ ep_seed) & _SEED_MASK)
    grid, goals = generate(scenario)
    start = default_start(grid, scenario, goals)
    return simulate(cfg, grid, goals, start, ep_seed)


def simulate(cfg: EpisodeConfig, grid, goals, start: Pose2, solver_seed: int = 0):
    """Drive one episode on an explicit world; returns (EpisodeMetrics, Trace)."""
    radius = cfg.geometry.circumscribed_radius() + cfg.inflation_margin
    world = inflate(grid, radius)
    plan_world = inflate(grid, radius + cfg.plan_margin) if cfg.plan_margin > 0 else world
    pose = start
    controller = make_controller(cfg, solver_seed)

    poses = [pose.as_array()]
    commands, modes, solve_ms, opt_cost, goal_idx = [], [], [], [], []
    smin, smean = [], []
    success = False
    failure = ""
    goal_i = 0
    path_index = None
    prev_cmd = None
    tick = 0
    per_goal_ticks = 0
    max_goal_ticks = int(math.ceil(cfg.goal_timeout / cfg.control_dt))

    goal_eff = None
    off_path_ticks = 0
    while True:
        if path_index is None:
            try:
                path = plan(plan_world, pose, goals[goal_i])
            except NoPathError:
                path = plan(world, pose, goals[goal_i])
            # goals are reached points, not prescribed parking yaws: the
            # heading target is the direction the route arrives from, so the
            # tracking cost and the goal check agree
            if len(path.theta) > 1:
                arrival = float(path.theta[-2])
                theta = path.theta.copy()
                theta[-1] = arrival
                path = replace(path, theta=theta)
            else:
                arrival = goals[goal_i].theta
            goal_eff = Pose2(goals[goal_i].x, goals[goal_i].y, arrival)
            path_index = PathIndex(path, world)
            off_path_ticks = 0
            if tick == 0:
                # the vehicle starts parked facing its route
                pose = Pose2(pose.x, pose.y, float(path.theta[0]))
                poses[0] = pose.as_array()
        if _goal_reached(pose, goal_eff, cfg):
            goal_i += 1
            per_goal_ticks = 0
            path_index = None
            if goal_i >= len(goals):
                success = True
                break
            continue
        if per_goal_ticks >= max_goal_ticks:
            failure = "timeout"
            break
        row, col = world.world_to_cell(pose.x, pose.y)
        wp = int(
            path_index.nearest[
                np.clip(row, 0, world.height - 1), np.clip(col, 0, world.width - 1)
            ]
        )
        if cfg.replan_error > 0:
            dist_err, _ = path_index.query(pose.x, pose.y, pose.theta)
            off_path_ticks = off_path_ticks + 1 if dist_err > cfg.replan_error else 0
            if off_path_ticks >= cfg.replan_patience:
                path_index = None
                continue
        target = goal_eff
        if cfg.lookahead > 0:
            s_target = float(path.s[wp]) + cfg.lookahead
            if s_target < path.length:
                ahead = int(np.searchsorted(path.s, s_target))
                target = Pose2(
                    float(path.xy[ahead, 0]),
                    float(path.xy[ahead, 1]),
                    float(path.theta[ahead]),
                )

        cmd, diag = controller.step(
            pose, world, path_index, target, tick, prev_cmd
        )
        commands.append(cmd.as_array())
        modes.append(diag.mode)
        solve_ms.append(diag.solve_time_ms if cfg.record_timing else 0.0)
        opt_cost.append(diag.optimal_cost)
        smin.append(diag.sample_min)
        smean.append(diag.sample_mean)
        goal_idx.append(goal_i)

        twist = twist_from_command(cmd, cfg.geometry)
        pose = propagate(pose, twist, cfg.control_dt)
        poses.append(pose.as_array())
        prev_cmd = cmd
        tick += 1
        per_goal_ticks += 1
        if in_collision(world, pose):
            failure = "collision"
            break

    trace = Trace(
        poses=np.asarray(poses),
        commands=np.asarray(commands).reshape(len(commands), 8),
        modes=modes,
        solve_ms=np.asarray(solve_ms, dtype=float),
        opt_cost=np.asarray(opt_cost, dtype=float),
        sample_min=np.asarray(smin, dtype=float),
        sample_mean=np.asarray(smean, dtype=float),
        goal_index=np.asarray(goal_idx, dtype=int),
        control_dt=cfg.control_dt,
        success=success,
        failure_kind=failure,
    )
    return compute_metrics(trace), trace


def compute_metrics(trace: Trace) -> EpisodeMetrics:
    """Evaluation metrics of a trace.

    Steering rate and wheel acceleration are the mean absolute per-tick
    command changes over the four wheels divided by the control interval;
    steering differences are folded into (-pi/2, pi/2] because the steering
    axis is periodic in pi under signed wheel speeds.
    """
    n = len(trace.commands)
    dt = trace.control_dt
    if n >= 2:
        d_delta = fold_half_pi(np.diff(trace.commands[:, :4], axis=0))
        d_speed = np.diff(trace.commands[:, 4:], axis=0)
        steering_rate = float(np.mean(np.abs(d_delta))) / dt
        wheel_acc = float(np.mean(np.abs(d_speed))) / dt
    else:
        steering_rate = 0.0
        wheel_acc = 0.0
    seg = np.diff(trace.poses[:, :2], axis=0)
    traj_len = float(np.sum(np.hypot(seg[:, 0], seg[:, 1])))
    return EpisodeMetrics(
        total_cost=float(np.mean(trace.opt_cost)) if n else 0.0,
        mean_calc_time=float(np.mean(trace.solve_ms)) if n else 0.0,
        mean_steering_rate=steering_rate,
        mean_wheel_acc=wheel_acc,
        trajectory_length=traj_len,
        episode_time=n * dt,
        success=trace.success,
        failure_kind=trace.failure_kind,
    )


@dataclass
class BatchResult:
    metrics: list  # EpisodeMetrics per episode, in index order
    summary: dict


def run_batch(cfg: EpisodeConfig, episodes: int | None = None, trace_hook=None) -> BatchResult:
    """Run seeded episodes and aggregate per-metric means plus success rate.

    Episode i is fully determined by (cfg, cfg.seed ^ i); aggregation is in
    index order so results do not depend on execution order.
    """
    n = cfg.episodes if episodes is None else episodes
    rows = []
    for i in range(n):
        metrics, trace = run_episode(cfg, i)
        rows.append(metrics)
        if trace_hook is not None:
            trace_hook(i, trace)
    return BatchResult(metrics=rows, summary=summarize(rows))


def summarize(rows) -> dict:
    n = len(rows)
    return {
        "episodes": n,
        "success_rate_pct": 100.0 * sum(r.success for r in rows) / n,
        "cost": sum(r.total_cost for r in rows) / n,
        "calc_time_ms": sum(r.mean_calc_time for r in rows) / n,
        "steering_rate": sum(r.mean_steering_rate for r in rows) / n,
        "wheel_acc": sum(r.mean_wheel_acc for r in rows) / n,
        "traj_len_m": sum(r.trajectory_length for r in rows) / n,
        "episode_time_s": sum(r.episode_time for r in rows) / n,
    }


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------

RESULTS_HEADER = (
    "episode,success,cost,calc_time_ms,steering_rate,wheel_acc,"
    "traj_len_m,episode_time_s,failure_kind"
)


def results_csv(result: BatchResult) -> str:
    lines = [RESULTS_HEADER]
    for i, m in enumerate(result.metrics):
        lines.append(
            f"{i},{int(m.success)},{m.total_cost!r},{m.mean_calc_time!r},"
            f"{m.mean_steering_rate!r},{m.mean_wheel_acc!r},"
            f"{m.trajectory_length!r},{m.episode_time!r},{m.failure_kind}"
        )
    s = result.summary
    lines.append(
        f"summary,{s['success_rate_pct']!r},{s['cost']!r},{s['calc_time_ms']!r},"
        f"{s['steering_rate']!r},{s['wheel_acc']!r},{s['traj_len_m']!r},"
        f"{s['episode_time_s']!r},"
    )
    return "\n".join(lines) + "\n"


def save_results_csv(result: BatchResult, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(results_csv(result))


def save_trace_csv(trace: Trace, path: str) -> None:
    """Per-tick trace: pose, mode, 8-value command, solve time, cost."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(
            "tick,x,y,theta,mode,goal,"
            "delta_fl,delta_fr,delta_rl,delta_rr,v_fl,v_fr,v_rl,v_rr,"
            "solve_ms,opt_cost,sample_min,sample_mean\n"
        )
        for i in range(len(trace.commands)):
            p = trace.poses[i]
            c = trace.commands[i]
            f.write(
                f"{i},{float(p[0])!r},{float(p[1])!r},{float(p[2])!r},"
                f"{trace.modes[i]},{int(trace.goal_index[i])},"
                + ",".join(repr(float(v)) for v in c)
                + f",{float(trace.solve_ms[i])!r},{float(trace.opt_cost[i])!r}"
                + f",{float(trace.sample_min[i])!r},{float(trace.sample_mean[i])!r}\n"
            )


# ---------------------------------------------------------------------------
# config files (flat "key = value" text)
# ---------------------------------------------------------------------------

_SCENARIO_FIELDS = {f.name: f.type for f in fields(Scenario)}

# keys accepted in --config files, routed to the owning dataclass; "seed"
# means the master episode seed (per-episode scenario and solver seeds are
# derived from it)
_EPISODE_KEYS = {
    "controller": str, "episodes": int, "goal_timeout": float,
    "control_dt": float, "seed": int, "workers": int,
    "goal_pos_tol": float, "goal_heading_tol": float, "inflation_margin": float,
}
_SOLVER_KEYS = {
    "K": int, "T": int, "dt": float, "alpha": float, "lambda_": float,
    "gamma": float, "v_des": float,
}
_WEIGHT_KEYS = {k: float for k in ("w_dist", "w_angle", "w_speed", "w_collision", "w_goal")}
_HYBRID_KEYS = {"d_thresh": float, "theta_thresh": float, "space_a": str, "hysteresis": float}
_ALIASES = {"lambda": "lambda_"}


def parse_kv_text(text: str) -> dict:
    """Parse flat 'key = value' lines; '#' starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key or not value:
            raise ValueError(f"line {lineno}: empty key or value in {raw!r}")
        if key in out:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _convert(key, value, typ):
    try:
        if typ is bool:
            return value.lower() in ("1", "true", "yes")
        return typ(value)
    except ValueError as e:
        raise ValueError(f"config key {key!r}: cannot parse {value!r} as {typ.__name__}") from e


def load_scenario_file(path: str) -> Scenario:
    """Scenario files use the same key = value format with Scenario fields."""
    with open(path, "r", encoding="utf-8") as f:
        kv = parse_kv_text(f.read())
    values = {}
    for key, value in kv.items():
        if key not in _SCENARIO_FIELDS:
            raise ValueError(f"unknown scenario key {key!r}")
        typ = {"kind": str, "seed": int, "goal_count": int, "wall_count": int,
               "max_attempts": int}.get(key, float)
        values[key] = _convert(key, value, typ)
    return Scenario(**values)


def apply_config(cfg: EpisodeConfig, kv: dict) -> EpisodeConfig:
    """Apply flat config keys onto an EpisodeConfig; unknown keys are errors."""
    episode, solver, weight, hyb = {}, {}, {}, {}
    for key, value in kv.items():
        key = _ALIASES.get(key, key)
        if key in _EPISODE_KEYS:
            episode[key] = _convert(key, value, _EPISODE_KEYS[key])
        elif key in _SOLVER_KEYS:
            solver[key] = _convert(key, value, _SOLVER_KEYS[key])
        elif key in _WEIGHT_KEYS:
            weight[key] = _convert(key, value, _WEIGHT_KEYS[key])
        elif key in _HYBRID_KEYS:
            hyb[key] = _convert(key, value, _HYBRID_KEYS[key])
        else:
            raise ValueError(f"unknown config key {key!r}")
    if solver:
        cfg = replace(cfg, solver=replace(cfg.solver, **solver))
    if weight:
        cfg = replace(cfg, weights=replace(cfg.weights, **weight))
    if hyb:
        cfg = replace(cfg, hybrid=replace(cfg.hybrid, **hyb))
    if episode:
        cfg = replace(cfg, **episode)
    return cfg


def load_config_file(cfg: EpisodeConfig, path: str) -> EpisodeConfig:
    with open(path, "r", encoding="utf-8") as f:
        return apply_config(cfg, parse_kv_text(f.read()))


# desk-scale builtin fields: procedural analogs of the evaluation arenas,
# sized so a 4-controller, 30-episode batch runs in minutes. Goal pockets
# keep generous clearance (turning room) while the transit corridors between
# them stay tight.
BUILTIN_SCENARIOS = {
    "cylinder_garden": Scenario(
        kind="cylinder_garden", width_m=20.0, height_m=20.0, resolution=0.1,
        goal_count=5, min_goal_separation=5.0, clearance=1.2,
        cylinder_radius=0.30, cylinder_count=26, min_cylinder_separation=2.7,
    ),
    "maze": Scenario(
        kind="maze", width_m=16.0, height_m=16.0, resolution=0.1,
        goal_count=5, min_goal_separation=4.0, clearance=1.0,
        wall_count=3, door_width=3.0,
    ),
}
