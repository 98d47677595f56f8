"""Cart-pole plant: dynamics, rendering, saturation, and the LQR oracle policy.

All functions are pure given their inputs plus an explicit numpy Generator,
so callers may run many plants in parallel with independent streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .errors import ConfigurationError

# World-space drawing geometry (meters). Fixed constants rather than config:
# they are rasterization details, not experiment parameters.
CART_WIDTH = 0.5
CART_HEIGHT = 0.25
CART_CENTER_Y = -0.5
POLE_HALF_WIDTH_PIXELS = 0.6  # pole half-thickness, in units of one pixel

DEFAULT_STATE_WEIGHTS = (1.0, 0.1, 10.0, 0.1)
DEFAULT_ACTION_WEIGHT = 0.01


@dataclass(frozen=True)
class PlantParams:
    """Physical constants; integration_dt doubles as the sampling period."""

    cart_mass: float = 1.0
    pole_mass: float = 0.1
    pole_half_length: float = 0.5
    gravity: float = 9.81
    integration_dt: float = 1e-3
    process_noise_std: float = 1e-4
    u_max: float = 20.0
    u_min: float = -20.0
    track_limit: float = 2.4

    def __post_init__(self):
        if self.cart_mass <= 0 or self.pole_mass <= 0:
            raise ConfigurationError("masses must be positive")
        if self.pole_half_length <= 0:
            raise ConfigurationError("pole_half_length must be positive")
        if self.integration_dt <= 0:
            raise ConfigurationError("integration_dt must be positive")
        if not (self.u_min < 0 < self.u_max):
            raise ConfigurationError("force limits must satisfy u_min < 0 < u_max")
        if self.process_noise_std < 0:
            raise ConfigurationError("process_noise_std must be >= 0")
        if self.track_limit <= 0:
            raise ConfigurationError("track_limit must be positive")


@dataclass(frozen=True)
class PlantState:
    cart_position: float
    cart_velocity: float
    pole_angle: float  # radians, 0 = upright
    pole_angular_velocity: float

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.cart_position, self.cart_velocity, self.pole_angle, self.pole_angular_velocity],
            dtype=np.float64,
        )

    @classmethod
    def from_array(cls, arr) -> "PlantState":
        return cls(float(arr[0]), float(arr[1]), float(arr[2]), float(arr[3]))

    def is_finite(self) -> bool:
        return all(
            math.isfinite(c)
            for c in (self.cart_position, self.cart_velocity, self.pole_angle, self.pole_angular_velocity)
        )


@dataclass(frozen=True)
class Action:
    force: float


@dataclass(frozen=True)
class RenderConfig:
    width: int = 32
    height: int = 32
    channels: int = 1
    world_window: float = 4.8  # horizontal extent, meters

    def __post_init__(self):
        if self.width < 16 or self.height < 16:
            raise ConfigurationError("render size must be at least 16x16")
        if self.channels not in (1, 3):
            raise ConfigurationError("channels must be 1 or 3")
        if self.world_window <= 0:
            raise ConfigurationError("world_window must be positive")

    @property
    def scale(self) -> float:
        """Meters per pixel."""
        return self.world_window / self.width

    @property
    def pixels(self) -> int:
        return self.width * self.height * self.channels


def clamp_action(raw: float, params: PlantParams) -> Action:
    return Action(min(max(float(raw), params.u_min), params.u_max))


def step_dynamics(
    state: PlantState,
    action: Action,
    params: PlantParams,
    rng: Optional[np.random.Generator] = None,
) -> PlantState:
    """Advance one sampling period; additive Gaussian noise on the next state.

    A non-finite input state is returned unchanged (divergence is a flag
    checked via is_failed, never a crash).
    """
    if not state.is_finite():
        return state
    sin_t = math.sin(state.pole_angle)
    cos_t = math.cos(state.pole_angle)
    x2, v2, th2, w2 = kernels.cartpole_step(
        state.cart_position,
        state.cart_velocity,
        state.pole_angle,
        state.pole_angular_velocity,
        action.force,
        sin_t,
        cos_t,
        params.cart_mass,
        params.pole_mass,
        params.pole_half_length,
        params.gravity,
        params.integration_dt,
    )
    if params.process_noise_std > 0:
        if rng is None:
            raise ValueError("process noise enabled but no random stream given")
        noise = rng.standard_normal(4)
        std = params.process_noise_std
        x2 = x2 + std * noise[0]
        v2 = v2 + std * noise[1]
        th2 = th2 + std * noise[2]
        w2 = w2 + std * noise[3]
    return PlantState(x2, v2, th2, w2)


def is_failed(state: PlantState, params: PlantParams) -> bool:
    """Divergence predicate: pole fell over, cart left the track, or numbers blew up."""
    if not state.is_finite():
        return True
    return abs(state.pole_angle) > math.pi / 2 or abs(state.cart_position) > params.track_limit


def render_observation(state: PlantState, cfg: RenderConfig, params: PlantParams) -> np.ndarray:
    """Rasterize the state to a flattened row-major (H, W, C) float64 buffer in [0, 1]."""
    scale = cfg.scale
    sin_t = math.sin(state.pole_angle)
    cos_t = math.cos(state.pole_angle)
    pole_len = 2.0 * params.pole_half_length
    ex = pole_len * sin_t
    ey = pole_len * cos_t
    seg_len2 = ex * ex + ey * ey
    frame = np.empty((cfg.height, cfg.width), dtype=np.float64)
    kernels.render_frame(
        frame,
        state.cart_position,
        CART_CENTER_Y,
        CART_WIDTH * 0.5,
        CART_HEIGHT * 0.5,
        CART_CENTER_Y + CART_HEIGHT * 0.5,
        ex,
        ey,
        seg_len2,
        POLE_HALF_WIDTH_PIXELS * scale,
        scale,
    )
    if cfg.channels == 1:
        return frame.reshape(-1)
    return np.repeat(frame[:, :, None], cfg.channels, axis=2).reshape(-1)


def stack_frames(history: Sequence[np.ndarray], frame_stack: int) -> np.ndarray:
    """Concatenate the most recent ``frame_stack`` frames, oldest first.

    Shorter histories are padded by replicating the earliest frame (episode
    start rule).
    """
    if len(history) == 0:
        raise ValueError("empty frame history")
    if frame_stack < 1:
        raise ValueError("frame_stack must be >= 1")
    recent = list(history[-frame_stack:])
    while len(recent) < frame_stack:
        recent.insert(0, recent[0])
    return np.concatenate(recent)


def linearize(params: PlantParams) -> tuple[np.ndarray, np.ndarray]:
    """Exact Jacobians (A, B) of the discrete semi-implicit Euler map at upright.

    State order (position, velocity, angle, angular velocity). Because the
    positions are advanced with the new velocities, the position rows pick up
    dt^2 terms; this matches step_dynamics exactly, not just to O(dt).
    """
    total_m = params.cart_mass + params.pole_mass
    denom = params.pole_half_length * (4.0 / 3.0 - params.pole_mass / total_m)
    ang_d_theta = params.gravity / denom
    ang_d_force = -1.0 / (total_m * denom)
    lin_d_theta = -params.pole_mass * params.pole_half_length * params.gravity / (total_m * denom)
    lin_d_force = 1.0 / total_m + params.pole_mass * params.pole_half_length / (
        total_m * total_m * denom
    )
    dt = params.integration_dt
    a = np.array(
        [
            [1.0, dt, dt * dt * lin_d_theta, 0.0],
            [0.0, 1.0, dt * lin_d_theta, 0.0],
            [0.0, 0.0, 1.0 + dt * dt * ang_d_theta, dt],
            [0.0, 0.0, dt * ang_d_theta, 1.0],
        ]
    )
    b = np.array([[dt * dt * lin_d_force], [dt * lin_d_force], [dt * dt * ang_d_force], [dt * ang_d_force]])
    return a, b


def lqr_gain(
    params: PlantParams,
    state_weights: Sequence[float] = DEFAULT_STATE_WEIGHTS,
    action_weight: float = DEFAULT_ACTION_WEIGHT,
    tol: float = 1e-9,
    max_iter: int = 10000,
) -> np.ndarray:
    """Infinite-horizon discrete LQR gain via fixed-point Riccati iteration.

    Returns the 1x4 row gain K for u = -K x. Raises ConfigurationError if the
    recursion has not converged (max abs element change <= tol) within
    max_iter sweeps.
    """
    a, b = linearize(params)
    q = np.diag(np.asarray(state_weights, dtype=np.float64))
    r = float(action_weight)
    p = q.copy()
    for _ in range(max_iter):
        btpb = r + (b.T @ p @ b).item()
        btpa = b.T @ p @ a
        p_next = q + a.T @ p @ a - (a.T @ p @ b) @ (btpa / btpb)
        if np.max(np.abs(p_next - p)) <= tol:
            btpb = r + (b.T @ p_next @ b).item()
            return np.asarray((b.T @ p_next @ a) / btpb)
        p = p_next
    raise ConfigurationError(
        f"Riccati recursion did not converge within {max_iter} iterations (tol {tol})"
    )


def oracle_policy(state: PlantState, gain: np.ndarray, params: PlantParams) -> Action:
    """Saturated linear state feedback u = clamp(-K x)."""
    raw = -float(np.dot(np.asarray(gain).reshape(-1), state.as_array()))
    return clamp_action(raw, params)


def sample_initial_state(
    rng: np.random.Generator, angle_range: float = 0.05, position_range: float = 0.2
) -> PlantState:
    """Uniform angle/position perturbation around upright, zero velocities."""
    position = float(rng.uniform(-position_range, position_range)) if position_range > 0 else 0.0
    angle = float(rng.uniform(-angle_range, angle_range)) if angle_range > 0 else 0.0
    return PlantState(position, 0.0, angle, 0.0)
