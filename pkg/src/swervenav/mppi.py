"""Sampling-based model-predictive control with path-integral weighting.

Each solve perturbs a warm-started control sequence with Gaussian noise,
rolls every candidate forward through the vehicle kinematics, scores the
resulting trajectories, and blends the candidates with softmax weights
(lower cost = exponentially larger weight).  The sampler is generic over the
control space: either the body twist (3 dims) or the diagonal-wheel space
(4 dims), both projected to the full 8-DoF actuator command for execution
and for the command-smoothness cost.

Determinism: noise comes from a counter-based generator keyed by
(seed, iteration), candidate evaluation uses only elementwise/per-candidate
operations, and all cross-candidate reductions run over fully assembled
arrays in index order -- so results are bit-identical for any worker count.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .kinematics import (
    Pose2,
    VehicleCommand8,
    VehicleGeometry,
    expand_diagonal,
    reduce_diagonal,
    steer_and_speed,
    wheel_velocity_components,
    wrap_angle,
)
from .planner import PathIndex, ReferencePath, query_errors
from .world import InflatedGrid, collision_mask, in_collision

_SPACE_DIMS = {"3dof": 3, "4dof": 4}
_DEFAULT_SIGMA = {"3dof": (1.0, 1.0, 0.78), "4dof": (1.0, 1.0, 0.78, 0.78)}
_DEFAULT_BOUNDS = {"3dof": (2.0, 2.0, 1.58), "4dof": (2.0, 2.0, 1.58, 1.58)}


@dataclass(frozen=True)
class CostWeights:
    """Weights of the tracking stage cost and the goal terminal cost."""

    w_dist: float = 40.0
    w_angle: float = 30.0
    w_speed: float = 10.0
    w_collision: float = 50.0
    w_goal: float = 50.0

    def __post_init__(self):
        for name in ("w_dist", "w_angle", "w_speed", "w_collision", "w_goal"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True)
class MppiConfig:
    """Solver parameterization.

    sigma holds per-dimension noise *variances* (diagonal covariance);
    bounds are symmetric per-dimension clamp magnitudes applied to every
    candidate before rollout.
    """

    space: str = "3dof"
    K: int = 3000
    T: int = 30
    dt: float = 0.033
    alpha: float = 0.1
    lambda_: float = 250.0
    gamma: float = 6.25
    sigma: tuple = None
    bounds: tuple = None
    v_des: float = 2.0
    seed: int = 0
    workers: int = 1
    tail_init: str = "copy"
    geometry: VehicleGeometry = field(default_factory=VehicleGeometry)

    def __post_init__(self):
        if self.space not in _SPACE_DIMS:
            raise ValueError(f"unknown control space {self.space!r}")
        if self.sigma is None:
            object.__setattr__(self, "sigma", _DEFAULT_SIGMA[self.space])
        if self.bounds is None:
            object.__setattr__(self, "bounds", _DEFAULT_BOUNDS[self.space])
        object.__setattr__(self, "sigma", tuple(float(v) for v in self.sigma))
        object.__setattr__(self, "bounds", tuple(float(v) for v in self.bounds))
        dim = self.dim
        if len(self.sigma) != dim:
            raise ValueError(
                f"sigma has {len(self.sigma)} entries but space {self.space} needs {dim}"
            )
        if len(self.bounds) != dim:
            raise ValueError(
                f"bounds has {len(self.bounds)} entries but space {self.space} needs {dim}"
            )
        if self.K < 1 or self.T < 1:
            raise ValueError("K and T must be >= 1")
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.lambda_ <= 0.0:
            raise ValueError("lambda_ must be positive")
        if self.gamma < 0.0:
            raise ValueError("gamma must be non-negative")
        if any(v <= 0.0 for v in self.sigma):
            raise ValueError("sigma entries must be positive")
        if any(v <= 0.0 for v in self.bounds):
            raise ValueError("bounds entries must be positive")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.tail_init not in ("copy", "zero"):
            raise ValueError("tail_init must be 'copy' or 'zero'")

    @property
    def dim(self) -> int:
        return _SPACE_DIMS[self.space]


def config_3dof_a(**overrides) -> MppiConfig:
    """Body-twist sampler with wide variances (half of each control maximum)."""
    overrides.setdefault("sigma", (1.0, 1.0, 0.78))
    return MppiConfig(space="3dof", **overrides)


def config_3dof_b(**overrides) -> MppiConfig:
    """Body-twist sampler with variances fitted to the diagonal-wheel sampler's
    stationary spread (smaller translation, larger yaw)."""
    overrides.setdefault("sigma", (0.55, 0.55, 0.96))
    return MppiConfig(space="3dof", **overrides)


def config_4dof(**overrides) -> MppiConfig:
    """Diagonal-wheel-space sampler (speeds and steering of the fl/rr wheels)."""
    overrides.setdefault("sigma", (1.0, 1.0, 0.78, 0.78))
    return MppiConfig(space="4dof", **overrides)


@dataclass
class RolloutResult:
    """Outcome of simulating one control sequence."""

    cost: float
    poses: np.ndarray  # (T, 3)
    collisions: np.ndarray  # (T,) bool
    sequence: np.ndarray  # (T, dim) controls that were rolled out


@dataclass
class Diagnostics:
    """Per-solve record serialized into episode traces."""

    solve_time_ms: float
    optimal_cost: float
    sample_min: float
    sample_mean: float
    mode: str
    collisions: np.ndarray  # (T,) collision flags of the optimal trajectory
    optimal_poses: np.ndarray  # (T, 3)
    optimal_sequence: np.ndarray  # (T, dim), before the warm-start shift


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def sample_noise(cfg: MppiConfig, iteration: int) -> np.ndarray:
    """Zero-mean Gaussian noise tensor of shape (K, T, dim), float32.

    Drawn from a counter-based generator keyed by (seed, iteration): the
    full tensor is produced in one deterministic pass, so the result does
    not depend on how candidates are later distributed across workers.
    Single precision keeps the K*T*dim pipeline memory-bound work low; the
    granularity is orders of magnitude below the control noise scale.
    """
    if iteration < 0:
        raise ValueError("iteration must be non-negative")
    key = np.array([cfg.seed, iteration], dtype=np.uint64)
    gen = np.random.Generator(np.random.Philox(key=key))
    std = np.sqrt(np.asarray(cfg.sigma, dtype=np.float32))
    return gen.standard_normal((cfg.K, cfg.T, cfg.dim), dtype=np.float32) * std


def exploration_split(cfg: MppiConfig) -> int:
    """Number of exploitation candidates; the remaining round(alpha*K) are
    sampled around zero instead of the warm start."""
    return cfg.K - int(round(cfg.alpha * cfg.K))


def build_candidates(U: np.ndarray, noise: np.ndarray, cfg: MppiConfig) -> np.ndarray:
    """Perturbed candidate sequences, clamped to the control bounds.

    The first (1 - alpha) * K candidates are warm start + noise; the rest
    are pure noise for exploration.
    """
    U = np.asarray(U, dtype=float)
    if U.shape != (cfg.T, cfg.dim):
        raise ValueError(f"warm start has shape {U.shape}, expected ({cfg.T}, {cfg.dim})")
    if noise.shape != (cfg.K, cfg.T, cfg.dim):
        raise ValueError(
            f"noise has shape {noise.shape}, expected ({cfg.K}, {cfg.T}, {cfg.dim})"
        )
    n_exploit = exploration_split(cfg)
    cand = U.astype(noise.dtype) + noise
    cand[n_exploit:] = noise[n_exploit:]
    b = np.asarray(cfg.bounds, dtype=noise.dtype)
    np.clip(cand, -b, b, out=cand)
    return cand


# ---------------------------------------------------------------------------
# costs
# ---------------------------------------------------------------------------

def terminal_cost(p: Pose2, goal: Pose2, weights: CostWeights) -> float:
    """Quadratic goal-position cost discouraging drift away from the goal."""
    return weights.w_goal * ((p.x - goal.x) ** 2 + (p.y - goal.y) ** 2)


def _to_twists(cand: np.ndarray, cfg: MppiConfig) -> np.ndarray:
    """Candidates (B, T, dim) -> body twists (B, T, 3), dtype preserved.

    Same math as kinematics.reduce_diagonal(expand_diagonal(...)) but fused
    so the hot path avoids double-precision intermediates.
    """
    if cfg.space == "3dof":
        return cand
    g = cfg.geometry
    v_fl, v_rr = cand[..., 0], cand[..., 1]
    c_fl, c_rr = np.cos(cand[..., 2]), np.cos(cand[..., 3])
    s_fl, s_rr = np.sin(cand[..., 2]), np.sin(cand[..., 3])
    vxfl = v_fl * c_fl
    vxrr = v_rr * c_rr
    vyfl = v_fl * s_fl
    vyrr = v_rr * s_rr
    dsum = g.d_l + g.d_r
    lsum = g.l_f + g.l_r
    out = np.empty(cand.shape[:-1] + (3,), dtype=cand.dtype)
    out[..., 0] = (g.d_r * vxfl + g.d_l * vxrr) / dsum
    out[..., 1] = (g.l_r * vyfl + g.l_f * vyrr) / lsum
    out[..., 2] = (vxrr - vxfl) / (2.0 * dsum) + (vyfl - vyrr) / (2.0 * lsum)
    return out


def _command_of_twist(twist_row: np.ndarray, cfg: MppiConfig, prev: VehicleCommand8 | None):
    vx, vy = wheel_velocity_components(twist_row, cfg.geometry)
    prev_delta = prev.delta if prev is not None else np.zeros(4)
    delta, speed = steer_and_speed(vx, vy, prev_delta)
    return VehicleCommand8(np.asarray(delta, dtype=float), np.asarray(speed, dtype=float))


def stage_cost(
    p: Pose2,
    u_cand,
    u_mean_row,
    path,
    grid: InflatedGrid,
    prev_cmd: VehicleCommand8 | None,
    weights: CostWeights,
    cfg: MppiConfig,
) -> float:
    """Single-step cost of a candidate control at a pose.

    Sums quadratic path-distance, heading and speed-tracking errors, the
    binary collision cost, the actuator-smoothness penalty against
    ``prev_cmd`` (skipped when None), and the gamma control-coupling term
    against the mean sequence row (skipped when None).
    """
    ref = path.path if isinstance(path, PathIndex) else path
    dist_err, angle_err, _ = query_errors(ref, p)
    u_cand = np.asarray(u_cand, dtype=float)
    twist = u_cand if cfg.space == "3dof" else reduce_diagonal(expand_diagonal(u_cand), cfg.geometry)
    speed = math.hypot(float(twist[0]), float(twist[1]))
    cmd = _command_of_twist(twist, cfg, prev_cmd)
    c_cmd = 0.0
    if prev_cmd is not None:
        c_cmd = float(np.linalg.norm(cmd.as_array() - prev_cmd.as_array()))
    coupling = 0.0
    if u_mean_row is not None:
        inv_sigma = 1.0 / np.asarray(cfg.sigma)
        coupling = cfg.gamma * float(np.sum(np.asarray(u_mean_row) * inv_sigma * u_cand))
    return (
        weights.w_dist * dist_err**2
        + weights.w_angle * angle_err**2
        + weights.w_speed * (speed - cfg.v_des) ** 2
        + weights.w_collision * in_collision(grid, p)
        + c_cmd
        + coupling
    )


# ---------------------------------------------------------------------------
# batched rollout evaluation
# ---------------------------------------------------------------------------

def _ensure_index(path, grid: InflatedGrid) -> PathIndex:
    if isinstance(path, PathIndex):
        return path
    return PathIndex(path, grid)


def _propagate_batch(x0: Pose2, twists: np.ndarray, dt: float):
    """Roll poses forward; twists (B, T, 3) -> xs, ys, thetas each (B, T).

    Dtype follows the twists (float32 inside the solver)."""
    B, T, _ = twists.shape
    dtype = twists.dtype
    xs = np.empty((B, T), dtype=dtype)
    ys = np.empty((B, T), dtype=dtype)
    ths = np.empty((B, T), dtype=dtype)
    x = np.full(B, x0.x, dtype=dtype)
    y = np.full(B, x0.y, dtype=dtype)
    th = np.full(B, x0.theta, dtype=dtype)
    s0 = np.sin(th)
    c0 = np.cos(th)
    for t in range(T):
        vx = twists[:, t, 0]
        vy = twists[:, t, 1]
        om = twists[:, t, 2]
        th1 = th + om * dt
        s1 = np.sin(th1)
        c1 = np.cos(th1)
        straight = np.abs(om * dt) < 1e-9
        if straight.any():
            # near-zero yaw rates fall back to first-order Euler
            w = np.where(straight, 1.0, om)
            a = (s1 - s0) / w
            b = (c1 - c0) / w
            x = np.where(straight, x + (vx * c0 - vy * s0) * dt, x + vx * a + vy * b)
            y = np.where(straight, y + (vx * s0 + vy * c0) * dt, y - vx * b + vy * a)
        else:
            a = (s1 - s0) / om
            b = (c1 - c0) / om
            x = x + vx * a + vy * b
            y = y - vx * b + vy * a
        th = th1
        s0, c0 = s1, c1
        xs[:, t] = x
        ys[:, t] = y
        ths[:, t] = th
    # dtype-preserving wrap into (-pi, pi]
    np.subtract(np.pi, np.mod(np.pi - ths, 2.0 * np.pi), out=ths)
    return xs, ys, ths


def _commands_batch(twists: np.ndarray, geom: VehicleGeometry, prev_delta: np.ndarray):
    """Project twists (B, T, 3) to steering/speed arrays (B, T, 4) each.

    Zero-velocity wheels hold the steering angle of the most recent moving
    step (seeded from ``prev_delta`` shape (4,) for the first step).  Dtype
    follows the twists; same fold convention as kinematics.steer_and_speed.
    """
    dtype = twists.dtype
    om = twists[..., 2:3]
    vx = twists[..., 0:1] + om * geom.vx_omega.astype(dtype)
    vy = twists[..., 1:2] + om * geom.vy_omega.astype(dtype)
    speed = np.hypot(vx, vy)
    moving = speed != 0.0
    delta = np.arctan2(vy, vx, out=vy)
    flip = (delta > np.pi / 2) | (delta <= -np.pi / 2)
    np.subtract(delta, np.copysign(dtype.type(np.pi), delta), out=delta, where=flip)
    signed = speed
    np.negative(signed, out=signed, where=flip)
    if not moving.all():
        B, T, _ = delta.shape
        tidx = np.arange(T)[None, :, None]
        last = np.maximum.accumulate(np.where(moving, tidx, -1), axis=1)
        held = np.take_along_axis(delta, np.maximum(last, 0), axis=1)
        seed = np.broadcast_to(prev_delta.astype(dtype), delta.shape)
        delta = np.where(moving, delta, np.where(last >= 0, held, seed))
        signed = np.where(moving, signed, dtype.type(0.0))
    return delta, signed


def _evaluate_chunk(
    x0: Pose2,
    cand: np.ndarray,
    u_mean: np.ndarray,
    index: PathIndex,
    grid: InflatedGrid,
    goal: Pose2,
    cfg: MppiConfig,
    weights: CostWeights,
    prev_cmd: VehicleCommand8 | None,
    details: bool = False,
):
    dtype = cand.dtype
    twists = _to_twists(cand, cfg)
    xs, ys, ths = _propagate_batch(x0, twists, cfg.dt)

    # one cell lookup serves both the collision test and the path query
    inv_res = 1.0 / grid.resolution
    cols = np.floor((xs - grid.origin.x) * inv_res).astype(np.int32)
    rows = np.floor((ys - grid.origin.y) * inv_res).astype(np.int32)
    inside = (rows >= 0) & (rows < grid.height) & (cols >= 0) & (cols < grid.width)
    rr = np.clip(rows, 0, grid.height - 1)
    cc = np.clip(cols, 0, grid.width - 1)
    coll = (~inside | grid.cells[rr, cc]).astype(dtype)

    wp = index.nearest[rr, cc]
    dx = xs - index.wx[wp].astype(dtype, copy=False)
    dy = ys - index.wy[wp].astype(dtype, copy=False)
    d2 = dx * dx
    d2 += dy * dy
    dth = ths - index.wtheta[wp].astype(dtype, copy=False)
    angle_err = np.abs(np.pi - np.mod(np.pi - dth, 2.0 * np.pi))

    center_speed = np.hypot(twists[..., 0], twists[..., 1])

    prev_delta = prev_cmd.delta if prev_cmd is not None else np.zeros(4)
    delta, speed = _commands_batch(twists, cfg.geometry, prev_delta)
    dd = np.empty_like(delta)
    dv = np.empty_like(speed)
    np.subtract(delta[:, 1:], delta[:, :-1], out=dd[:, 1:])
    np.subtract(speed[:, 1:], speed[:, :-1], out=dv[:, 1:])
    if prev_cmd is not None:
        dd[:, 0] = delta[:, 0] - prev_cmd.delta.astype(dtype)
        dv[:, 0] = speed[:, 0] - prev_cmd.speed.astype(dtype)
    else:
        dd[:, 0] = 0.0
        dv[:, 0] = 0.0
    c_cmd = np.einsum("ktw,ktw->kt", dd, dd)
    c_cmd += np.einsum("ktw,ktw->kt", dv, dv)
    np.sqrt(c_cmd, out=c_cmd)

    inv_sigma = 1.0 / np.asarray(cfg.sigma)
    coupling = np.einsum("ktd,td->kt", cand, (u_mean * inv_sigma).astype(dtype))
    coupling *= dtype.type(cfg.gamma)

    stage = (
        weights.w_dist * d2
        + weights.w_angle * angle_err**2
        + weights.w_speed * (center_speed - cfg.v_des) ** 2
        + weights.w_collision * coll
        + c_cmd
        + coupling
    )
    # accumulate in double precision; stage terms are single
    S = np.sum(stage, axis=1, dtype=np.float64)
    gx = xs[:, -1].astype(np.float64) - goal.x
    gy = ys[:, -1].astype(np.float64) - goal.y
    S += weights.w_goal * (gx * gx + gy * gy)
    if details:
        poses = np.stack([xs, ys, ths], axis=2)
        return S, poses, coll.astype(bool)
    return S


@lru_cache(maxsize=4)
def _worker_pool(workers: int) -> ThreadPoolExecutor:
    return ThreadPoolExecutor(max_workers=workers)


def _evaluate(x0, cand, u_mean, index, grid, goal, cfg, weights, prev_cmd):
    K = cand.shape[0]
    if cfg.workers == 1 or K < 2 * cfg.workers:
        return _evaluate_chunk(x0, cand, u_mean, index, grid, goal, cfg, weights, prev_cmd)
    chunks = np.array_split(np.arange(K), cfg.workers)
    out = np.empty(K)
    pool = _worker_pool(cfg.workers)
    futures = [
        pool.submit(
            _evaluate_chunk,
            x0,
            cand[c[0] : c[-1] + 1],
            u_mean,
            index,
            grid,
            goal,
            cfg,
            weights,
            prev_cmd,
        )
        for c in chunks
        if c.size
    ]
    pos = 0
    for fut in futures:
        s = fut.result()
        out[pos : pos + s.size] = s
        pos += s.size
    return out


def rollout(
    x0: Pose2,
    candidate: np.ndarray,
    world: InflatedGrid,
    path,
    cfg: MppiConfig,
    weights: CostWeights,
    goal: Pose2 | None = None,
    prev_cmd: VehicleCommand8 | None = None,
) -> RolloutResult:
    """Simulate one control sequence and accumulate its total cost.

    The terminal cost targets ``goal`` (defaulting to the path's final
    waypoint); the gamma coupling term is evaluated against the sequence
    itself.
    """
    candidate = np.asarray(candidate, dtype=float)
    if candidate.shape != (cfg.T, cfg.dim):
        raise ValueError(
            f"candidate has shape {candidate.shape}, expected ({cfg.T}, {cfg.dim})"
        )
    index = _ensure_index(path, world)
    if goal is None:
        ex, ey = index.path.end
        goal = Pose2(float(ex), float(ey), float(index.path.theta[-1]))
    S, poses, coll = _evaluate_chunk(
        x0,
        candidate[None, :, :],
        candidate,
        index,
        world,
        goal,
        cfg,
        weights,
        prev_cmd,
        details=True,
    )
    return RolloutResult(
        cost=float(S[0]),
        poses=poses[0],
        collisions=coll[0],
        sequence=candidate.copy(),
    )


def compute_weights(S, lambda_: float) -> np.ndarray:
    """Softmax weights over sample costs with min-cost baseline subtraction.

    w_k = exp(-(S_k - min S) / lambda) / sum(...); stable for arbitrarily
    large costs, sums to 1, and strictly decreases with cost.
    """
    S = np.asarray(S, dtype=float)
    if S.ndim != 1 or S.size == 0:
        raise ValueError("S must be a non-empty 1-D array")
    rho = S.min()
    z = np.exp(-(S - rho) / lambda_)
    return z / z.sum()


def step(
    x0: Pose2,
    U: np.ndarray,
    world: InflatedGrid,
    path,
    goal: Pose2,
    cfg: MppiConfig,
    weights: CostWeights,
    iteration: int = 0,
    prev_cmd: VehicleCommand8 | None = None,
):
    """One full solve: sample, roll out, reweight, emit, shift.

    Returns (command, warm_start, diagnostics) where ``command`` is the
    8-DoF actuator command for the first step of the updated sequence and
    ``warm_start`` is the updated sequence shifted one step for the next
    solve.  The update is the weight-averaged candidate sequence, i.e. the
    warm start plus the weighted effective (post-clamp) perturbations, so
    every row stays inside the candidates' convex hull.
    """
    t_start = time.perf_counter()
    U = np.asarray(U, dtype=float)
    index = _ensure_index(path, world)
    noise = sample_noise(cfg, iteration)
    cand = build_candidates(U, noise, cfg)
    S = _evaluate(x0, cand, U, index, world, goal, cfg, weights, prev_cmd)
    w = compute_weights(S, cfg.lambda_)
    U_next = np.einsum("k,ktd->td", w, cand)

    best = rollout(x0, U_next, world, index, cfg, weights, goal=goal, prev_cmd=prev_cmd)

    twist0 = U_next[0] if cfg.space == "3dof" else reduce_diagonal(
        expand_diagonal(U_next[0]), cfg.geometry
    )
    command = _command_of_twist(twist0, cfg, prev_cmd)

    warm = np.empty_like(U_next)
    warm[:-1] = U_next[1:]
    warm[-1] = U_next[-1] if cfg.tail_init == "copy" else 0.0

    diag = Diagnostics(
        solve_time_ms=(time.perf_counter() - t_start) * 1e3,
        optimal_cost=best.cost,
        sample_min=float(S.min()),
        sample_mean=float(S.mean()),
        mode=cfg.space,
        collisions=best.collisions,
        optimal_poses=best.poses,
        optimal_sequence=U_next,
    )
    return command, warm, diag
