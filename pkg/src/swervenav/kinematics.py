"""Control spaces and kinematics for a four-wheel independent drive/steer vehicle.

The vehicle has eight actuated degrees of freedom (a steering angle and a
signed wheel speed for each of the four wheels).  Under the no-slip
assumption every feasible motion is a rigid-body twist, so the command space
collapses to three dimensions.  This module provides the conversions between
the spaces used by the samplers:

    twist (v_x, v_y, omega)
      -> per-wheel planar velocities (8 values, linear map)
      -> steering angles + signed speeds (nonlinear projection)

    diagonal-wheel space (V_fl, V_rr, delta_fl, delta_rr)
      -> planar velocity components of the two diagonal wheels
      -> twist (averaging reduction) -> full command

Wheel order is always fl, fr, rl, rr.  x points forward, y points left,
angles are CCW positive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi

# Below this |omega * dt| the exact-arc pose update degenerates and plain
# Euler integration is used instead.
_OMEGA_EPS = 1e-9


def wrap_angle(theta):
    """Wrap an angle (scalar or array) into (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(theta, dtype=float), TWO_PI)


def fold_half_pi(delta):
    """Fold an angle difference into (-pi/2, pi/2] (steering axis is mod pi)."""
    return np.pi / 2 - np.mod(np.pi / 2 - np.asarray(delta, dtype=float), np.pi)


@dataclass(frozen=True)
class Pose2:
    """Planar pose of the vehicle center; theta is kept wrapped to (-pi, pi]."""

    x: float
    y: float
    theta: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.theta)):
            raise ValueError("pose components must be finite")
        object.__setattr__(self, "theta", float(wrap_angle(self.theta)))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta], dtype=float)


@dataclass(frozen=True)
class VehicleGeometry:
    """Wheel offsets from the vehicle center.

    l_f/l_r are the longitudinal distances to the front/rear axles, d_l/d_r
    the lateral distances to the left/right wheel rows.  All must be > 0.
    """

    l_f: float = 0.5
    l_r: float = 0.5
    d_l: float = 0.5
    d_r: float = 0.5

    # omega coefficients per wheel (fl, fr, rl, rr), derived in __post_init__
    vx_omega: np.ndarray = field(init=False, repr=False, compare=False)
    vy_omega: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        for name in ("l_f", "l_r", "d_l", "d_r"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0.0):
                raise ValueError(f"geometry field {name} must be positive and finite, got {v}")
        object.__setattr__(
            self, "vx_omega", np.array([-self.d_l, self.d_r, -self.d_l, self.d_r])
        )
        object.__setattr__(
            self, "vy_omega", np.array([self.l_f, self.l_f, -self.l_r, -self.l_r])
        )

    def circumscribed_radius(self) -> float:
        """Radius of the smallest center disc covering all wheel positions."""
        return max(
            math.hypot(lon, lat)
            for lon in (self.l_f, self.l_r)
            for lat in (self.d_l, self.d_r)
        )


@dataclass(frozen=True)
class Control3:
    """Body twist of the vehicle center: forward, lateral and yaw velocity."""

    v_x: float
    v_y: float
    omega: float

    def as_array(self) -> np.ndarray:
        return np.array([self.v_x, self.v_y, self.omega], dtype=float)

    @staticmethod
    def from_array(a) -> "Control3":
        a = np.asarray(a, dtype=float)
        return Control3(float(a[0]), float(a[1]), float(a[2]))


@dataclass(frozen=True)
class Control4:
    """Diagonal-wheel control: speed and steering of the fl and rr wheels."""

    v_fl: float
    v_rr: float
    delta_fl: float
    delta_rr: float

    def as_array(self) -> np.ndarray:
        return np.array([self.v_fl, self.v_rr, self.delta_fl, self.delta_rr], dtype=float)

    @staticmethod
    def from_array(a) -> "Control4":
        a = np.asarray(a, dtype=float)
        return Control4(float(a[0]), float(a[1]), float(a[2]), float(a[3]))


@dataclass(frozen=True)
class WheelVelocities8:
    """Planar velocity components of all four wheel contact points.

    Array layout is [vx_fl, vx_fr, vx_rl, vx_rr, vy_fl, vy_fr, vy_rl, vy_rr].
    """

    vx: np.ndarray  # shape (4,), wheel order fl, fr, rl, rr
    vy: np.ndarray  # shape (4,)

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.vx, self.vy]).astype(float)

    @staticmethod
    def from_array(a) -> "WheelVelocities8":
        a = np.asarray(a, dtype=float)
        return WheelVelocities8(a[:4].copy(), a[4:].copy())


@dataclass(frozen=True)
class VehicleCommand8:
    """Actuator command: four steering angles plus four signed wheel speeds.

    Steering angles live in (-pi/2, pi/2]; reverse travel is expressed by a
    negative speed rather than a flipped steering angle.  Array layout is
    [delta_fl, delta_fr, delta_rl, delta_rr, v_fl, v_fr, v_rl, v_rr].
    """

    delta: np.ndarray  # shape (4,)
    speed: np.ndarray  # shape (4,)

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.delta, self.speed]).astype(float)

    @staticmethod
    def from_array(a) -> "VehicleCommand8":
        a = np.asarray(a, dtype=float)
        return VehicleCommand8(a[:4].copy(), a[4:].copy())

    @staticmethod
    def zero() -> "VehicleCommand8":
        return VehicleCommand8(np.zeros(4), np.zeros(4))


# ---------------------------------------------------------------------------
# conversion matrices
# ---------------------------------------------------------------------------

def twist_expansion_matrix(geom: VehicleGeometry) -> np.ndarray:
    """8x3 matrix mapping a body twist to per-wheel planar velocities."""
    m = np.zeros((8, 3))
    m[:4, 0] = 1.0
    m[4:, 1] = 1.0
    m[:4, 2] = geom.vx_omega
    m[4:, 2] = geom.vy_omega
    return m


def diagonal_reduction_matrix(geom: VehicleGeometry, printed: bool = False) -> np.ndarray:
    """3x4 matrix recovering a twist from [vx_fl, vx_rr, vy_fl, vy_rr].

    The yaw row averages the two independent yaw-rate estimates (lateral
    wheel spacing and longitudinal wheel spacing).  ``printed=True`` drops
    the longitudinal estimate and halves the recovered yaw rate on
    kinematically consistent inputs; it exists only so tests can document
    the difference.
    """
    dsum = geom.d_l + geom.d_r
    lsum = geom.l_f + geom.l_r
    m = np.array(
        [
            [geom.d_r / dsum, geom.d_l / dsum, 0.0, 0.0],
            [0.0, 0.0, geom.l_r / lsum, geom.l_f / lsum],
            [-0.5 / dsum, 0.5 / dsum, 0.5 / lsum, -0.5 / lsum],
        ]
    )
    if printed:
        m[2, 2] = 0.0
        m[2, 3] = 0.0
    return m


# ---------------------------------------------------------------------------
# array cores (broadcast over leading dimensions; used by the samplers)
# ---------------------------------------------------------------------------

def wheel_velocity_components(twist: np.ndarray, geom: VehicleGeometry):
    """Per-wheel planar velocities for twists of shape (..., 3).

    Returns (vx, vy), each shaped (..., 4) in wheel order fl, fr, rl, rr.
    Written as explicit linear combinations so results are bitwise
    independent of batch shape.
    """
    twist = np.asarray(twist, dtype=float)
    omega = twist[..., 2:3]
    vx = twist[..., 0:1] + omega * geom.vx_omega
    vy = twist[..., 1:2] + omega * geom.vy_omega
    return vx, vy


def steer_and_speed(vx: np.ndarray, vy: np.ndarray, prev_delta: np.ndarray):
    """Project planar wheel velocities onto (steering angle, signed speed).

    Angles are folded into (-pi/2, pi/2] with the fold's sign carried onto
    the speed, so (speed*cos(delta), speed*sin(delta)) reconstructs the
    input exactly.  Wheels with exactly zero planar velocity keep the
    steering angle from ``prev_delta`` and get speed 0.
    """
    vx = np.asarray(vx, dtype=float)
    vy = np.asarray(vy, dtype=float)
    speed = np.hypot(vx, vy)
    raw = np.arctan2(vy, vx)
    flip = (raw > np.pi / 2) | (raw <= -np.pi / 2)
    delta = np.where(flip, raw - np.sign(raw) * np.pi, raw)
    signed = np.where(flip, -speed, speed)
    still = speed == 0.0
    delta = np.where(still, prev_delta, delta)
    signed = np.where(still, 0.0, signed)
    return delta, signed


def expand_diagonal(u4: np.ndarray) -> np.ndarray:
    """[V_fl, V_rr, d_fl, d_rr] (..., 4) -> [vx_fl, vx_rr, vy_fl, vy_rr]."""
    u4 = np.asarray(u4, dtype=float)
    v_fl, v_rr = u4[..., 0], u4[..., 1]
    c_fl, c_rr = np.cos(u4[..., 2]), np.cos(u4[..., 3])
    s_fl, s_rr = np.sin(u4[..., 2]), np.sin(u4[..., 3])
    return np.stack(
        [v_fl * c_fl, v_rr * c_rr, v_fl * s_fl, v_rr * s_rr], axis=-1
    )


def reduce_diagonal(u4p: np.ndarray, geom: VehicleGeometry, printed: bool = False) -> np.ndarray:
    """Average diagonal-wheel velocities (..., 4) down to a twist (..., 3).

    Explicit per-component arithmetic (rather than a matmul) keeps results
    bitwise independent of batch shape.
    """
    u4p = np.asarray(u4p, dtype=float)
    vxfl, vxrr = u4p[..., 0], u4p[..., 1]
    vyfl, vyrr = u4p[..., 2], u4p[..., 3]
    dsum = geom.d_l + geom.d_r
    lsum = geom.l_f + geom.l_r
    v_x = (geom.d_r * vxfl + geom.d_l * vxrr) / dsum
    v_y = (geom.l_r * vyfl + geom.l_f * vyrr) / lsum
    omega = (vxrr - vxfl) / (2.0 * dsum)
    if not printed:
        omega = omega + (vyfl - vyrr) / (2.0 * lsum)
    return np.stack([v_x, v_y, omega], axis=-1)


def propagate_arrays(x, y, theta, v_x, v_y, omega, dt: float):
    """Exact constant-twist pose update, broadcast over arrays.

    Body-frame velocities are held constant over dt, tracing a circular arc
    (straight line for omega ~ 0).  Returns (x1, y1, theta1_wrapped).
    """
    s0, c0 = np.sin(theta), np.cos(theta)
    theta1 = theta + omega * dt
    s1, c1 = np.sin(theta1), np.cos(theta1)
    straight = np.abs(omega * dt) < _OMEGA_EPS
    w = np.where(straight, 1.0, omega)
    a = (s1 - s0) / w
    b = (c1 - c0) / w
    x_arc = x + v_x * a + v_y * b
    y_arc = y - v_x * b + v_y * a
    x_lin = x + (v_x * c0 - v_y * s0) * dt
    y_lin = y + (v_x * s0 + v_y * c0) * dt
    return (
        np.where(straight, x_lin, x_arc),
        np.where(straight, y_lin, y_arc),
        wrap_angle(theta1),
    )


# ---------------------------------------------------------------------------
# typed operations
# ---------------------------------------------------------------------------

def expand_3_to_8(u3: Control3, geom: VehicleGeometry) -> WheelVelocities8:
    """Expand a body twist into the planar velocities of all four wheels."""
    vx, vy = wheel_velocity_components(u3.as_array(), geom)
    return WheelVelocities8(vx, vy)


def project_to_command(u8: WheelVelocities8, prev: VehicleCommand8) -> VehicleCommand8:
    """Turn per-wheel planar velocities into steering angles and signed speeds.

    Zero-velocity wheels hold the steering angle of ``prev`` to avoid
    arbitrary jumps at the singularity.
    """
    delta, speed = steer_and_speed(u8.vx, u8.vy, prev.delta)
    return VehicleCommand8(delta, speed)


def expand_4(u4: Control4) -> np.ndarray:
    """Decompose the diagonal-wheel control into planar velocity components."""
    return expand_diagonal(u4.as_array())


def reduce_4_to_3(u4p, geom: VehicleGeometry, printed: bool = False) -> Control3:
    """Reduce diagonal-wheel planar velocities [vx_fl, vx_rr, vy_fl, vy_rr]
    to the averaged body twist."""
    return Control3.from_array(reduce_diagonal(u4p, geom, printed=printed))


def compose_4_to_command(
    u4: Control4, geom: VehicleGeometry, prev: VehicleCommand8
) -> VehicleCommand8:
    """Full pipeline from the diagonal-wheel space to the vehicle command.

    The intermediate reduction to a twist guarantees the emitted command is
    kinematically consistent (all four wheels agree on one rigid motion).
    """
    twist = reduce_4_to_3(expand_4(u4), geom)
    return project_to_command(expand_3_to_8(twist, geom), prev)


def control4_from_command(cmd: VehicleCommand8) -> Control4:
    """Extract the fl/rr wheel entries of a command as a diagonal control."""
    return Control4(
        float(cmd.speed[0]), float(cmd.speed[3]), float(cmd.delta[0]), float(cmd.delta[3])
    )


def twist_from_command(cmd: VehicleCommand8, geom: VehicleGeometry) -> Control3:
    """Least-squares body twist implied by a full command.

    Exact when the command is kinematically consistent (as everything this
    package emits is); used by the simulator as the plant model.
    """
    vx = cmd.speed * np.cos(cmd.delta)
    vy = cmd.speed * np.sin(cmd.delta)
    u8 = np.concatenate([vx, vy])
    c = twist_expansion_matrix(geom)
    sol = np.linalg.solve(c.T @ c, c.T @ u8)
    return Control3.from_array(sol)


def propagate(state: Pose2, u3: Control3, dt: float) -> Pose2:
    """Advance a pose by one interval of the constant body twist."""
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    x, y, theta = propagate_arrays(
        state.x, state.y, state.theta, u3.v_x, u3.v_y, u3.omega, dt
    )
    return Pose2(float(x), float(y), float(theta))


# ---------------------------------------------------------------------------
# Jacobians of the projections into the command space
# ---------------------------------------------------------------------------

def _command_map(space: str, point: np.ndarray, geom: VehicleGeometry) -> np.ndarray:
    zero_prev = np.zeros(4)
    if space == "3dof":
        vx, vy = wheel_velocity_components(point, geom)
    elif space == "4dof":
        twist = reduce_diagonal(expand_diagonal(point), geom)
        vx, vy = wheel_velocity_components(twist, geom)
    else:
        raise ValueError(f"unknown space {space!r}")
    delta, speed = steer_and_speed(vx, vy, zero_prev)
    return np.concatenate([delta, speed])


def jacobian_of_projection(
    space: str,
    operating_point,
    geom: VehicleGeometry,
    step: float = 1e-6,
    speed_eps: float = 1e-8,
):
    """Central finite-difference Jacobian of the space -> command projection.

    Returns (jacobian, normalized) where ``normalized`` is scaled to a max
    absolute entry of 1.  Raises at operating points where any wheel speed
    falls below ``speed_eps`` (the projection is not differentiable there).
    """
    point = np.asarray(operating_point, dtype=float)
    dim = 3 if space == "3dof" else 4
    if space not in ("3dof", "4dof"):
        raise ValueError(f"unknown space {space!r}")
    if point.shape != (dim,):
        raise ValueError(f"operating point for {space} must have shape ({dim},)")

    if space == "3dof":
        vx, vy = wheel_velocity_components(point, geom)
    else:
        vx, vy = wheel_velocity_components(
            reduce_diagonal(expand_diagonal(point), geom), geom
        )
    if np.any(np.hypot(vx, vy) < speed_eps):
        raise ValueError(
            "projection not differentiable: a wheel speed is below "
            f"{speed_eps} at the given operating point"
        )

    jac = np.zeros((8, dim))
    for j in range(dim):
        hi = point.copy()
        lo = point.copy()
        hi[j] += step
        lo[j] -= step
        jac[:, j] = (_command_map(space, hi, geom) - _command_map(space, lo, geom)) / (
            2.0 * step
        )
    peak = np.max(np.abs(jac))
    normalized = jac / peak if peak > 0.0 else jac.copy()
    return jac, normalized
