"""Low-level flight response: velocity-command tracking at 12 Hz.

The simulated platform follows a first-order velocity tracking model with
an acceleration cap derived from thrust-to-weight, standing in for a full
rotor/controller stack. The policy interface is velocity commands, so
fidelity below that abstraction only shows up as tracking lag, which is
exposed (and randomized) through the tracking time constants.

Command latency is a FIFO queue primed with hover commands; actuation
noise perturbs each integrated displacement component.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, replace

import numpy as np

from .core import Action, DroneState, SpeedLimits, Vec3, wrap_angle

DT = 0.085  # 12 simulation steps per second
NOMINAL_MASS = 0.752
GRAVITY = 9.81


class InvalidCommand(ValueError):
    """Command exceeds the configured speed limits."""


@dataclass(frozen=True, slots=True)
class DroneParams:
    mass: float = NOMINAL_MASS
    inertia_scale: float = 1.0
    v_tracking_tau: float = 0.30
    omega_tracking_tau: float = 0.15
    thrust_scale: float = 1.0
    accel_limit: float = 8.0

    def __post_init__(self):
        if self.mass <= 0 or self.v_tracking_tau <= 0 or self.omega_tracking_tau <= 0:
            raise ValueError("mass and tracking taus must be positive")
        if self.accel_limit <= 0 or self.thrust_scale <= 0:
            raise ValueError("accel_limit and thrust_scale must be positive")

    def effective_accel_limit(self) -> float:
        """Thrust grows with thrust_scale, is eaten by mass above nominal."""
        return self.accel_limit * self.thrust_scale / (self.mass / NOMINAL_MASS)


@dataclass(frozen=True, slots=True)
class ActuationNoise:
    movement_noise_frac: float = 0.05
    param_jitter_frac: float = 0.10
    lag_steps_range: tuple = (0, 2)

    def __post_init__(self):
        if not (0.0 <= self.movement_noise_frac < 1.0):
            raise ValueError("movement_noise_frac must be in [0, 1)")
        if not (0.0 <= self.param_jitter_frac < 1.0):
            raise ValueError("param_jitter_frac must be in [0, 1)")
        lo, hi = self.lag_steps_range
        if lo < 0 or hi < lo:
            raise ValueError("lag range must be non-negative and ordered")

    @staticmethod
    def none() -> "ActuationNoise":
        return ActuationNoise(0.0, 0.0, (0, 0))


@dataclass(frozen=True, slots=True)
class StepOutcome:
    next_state: DroneState
    applied_action: Action  # post-lag, post-jitter command seen by the tracker


def randomize_params(nominal: DroneParams, noise: ActuationNoise, rng_seed) -> DroneParams:
    """Jitter the flight-dynamics parameters uniformly by +-param_jitter_frac.

    Mass, inertia scale, and both tracking time constants are randomized;
    thrust_scale and accel_limit stay nominal so the effective
    thrust-to-weight varies with the mass draw.
    """
    j = noise.param_jitter_frac
    rng = np.random.default_rng(rng_seed)
    if j == 0.0:
        return nominal
    scale = lambda v: v * rng.uniform(1.0 - j, 1.0 + j)
    return replace(
        nominal,
        mass=scale(nominal.mass),
        inertia_scale=scale(nominal.inertia_scale),
        v_tracking_tau=scale(nominal.v_tracking_tau),
        omega_tracking_tau=scale(nominal.omega_tracking_tau),
    )


def scale_drone(params: DroneParams, scale: float) -> DroneParams:
    """Grow weight and thrust proportionally; response slows as sqrt(scale)."""
    if scale <= 0:
        raise ValueError("scale must be positive")
    k = math.sqrt(scale)
    return replace(
        params,
        mass=params.mass * scale,
        thrust_scale=params.thrust_scale * scale,
        v_tracking_tau=params.v_tracking_tau * k,
        omega_tracking_tau=params.omega_tracking_tau * k,
    )


def _clip_gaussian_frac(rng, frac: float, size=None):
    """Multiplicative noise factor: N(0, frac/3) clipped to +-frac."""
    if frac == 0.0:
        if size is None:
            return 0.0
        return np.zeros(size)
    eps = rng.normal(0.0, frac / 3.0, size=size)
    return np.clip(eps, -frac, frac)


def step(state: DroneState, cmd: Action, params: DroneParams,
         noise: ActuationNoise, dt: float, rng,
         limits: SpeedLimits | None = None,
         lag_queue: deque | None = None,
         prev_tilt: tuple = (0.0, 0.0)) -> StepOutcome:
    """Advance one tick: delay, track, integrate, perturb.

    The command is pushed through the lag queue (when provided), then the
    drone's world velocity relaxes toward R(yaw)*(v_x, 0, v_z) with time
    constant v_tracking_tau under the acceleration cap, the yaw rate
    relaxes with omega_tracking_tau, position integrates the new velocity,
    and each displacement component picks up multiplicative Gaussian noise.

    Roll/pitch rates are a small-angle proxy: tilt ~ body-frame horizontal
    acceleration / g, rate = per-tick tilt change. prev_tilt carries the
    (roll, pitch) tilt from the previous tick (the Drone wrapper tracks it).
    """
    if limits is not None:
        if (abs(cmd.v_x) > limits.v_x_max + 1e-9
                or abs(cmd.v_z) > limits.v_z_max + 1e-9
                or abs(cmd.omega) > limits.omega_max + 1e-9):
            raise InvalidCommand(f"command {cmd} exceeds limits {limits}")

    if lag_queue is not None and len(lag_queue) > 0:
        lag_queue.append(cmd)
        applied = lag_queue.popleft()
    else:
        applied = cmd

    # commanded world velocity: v_x along heading, v_z up
    sin_y, cos_y = math.sin(state.yaw), math.cos(state.yaw)
    v_des = np.array([applied.v_x * sin_y, applied.v_x * cos_y, applied.v_z])
    v0 = state.velocity.as_array()

    alpha = 1.0 - math.exp(-dt / params.v_tracking_tau)
    a = (v_des - v0) * alpha / dt
    a_max = params.effective_accel_limit()
    a_norm = float(np.linalg.norm(a))
    if a_norm > a_max:
        a *= a_max / a_norm
    v1 = v0 + a * dt

    beta = 1.0 - math.exp(-dt / (params.omega_tracking_tau * params.inertia_scale))
    omega0 = state.body_rates.z
    omega1 = omega0 + (applied.omega - omega0) * beta
    yaw1 = wrap_angle(state.yaw + omega1 * dt)

    disp = v1 * dt
    disp = disp * (1.0 + _clip_gaussian_frac(rng, noise.movement_noise_frac, size=3))
    p1 = state.position.as_array() + disp

    ax_body = a[0] * sin_y + a[1] * cos_y   # forward
    ay_body = a[0] * cos_y - a[1] * sin_y   # lateral
    roll_tilt = ay_body / GRAVITY
    pitch_tilt = ax_body / GRAVITY
    roll_rate = (roll_tilt - prev_tilt[0]) / dt
    pitch_rate = (pitch_tilt - prev_tilt[1]) / dt

    next_state = DroneState(
        position=Vec3.from_array(p1),
        velocity=Vec3.from_array(v1),
        yaw=yaw1,
        body_rates=Vec3(roll_rate, pitch_rate, omega1),
        time_step=state.time_step + 1,
    )
    return StepOutcome(next_state=next_state, applied_action=applied)


def _tilt_of(state: DroneState, accel: np.ndarray) -> tuple:
    sin_y, cos_y = math.sin(state.yaw), math.cos(state.yaw)
    return (
        (accel[0] * cos_y - accel[1] * sin_y) / GRAVITY,
        (accel[0] * sin_y + accel[1] * cos_y) / GRAVITY,
    )


class Drone:
    """Stateful wrapper owning a drone's state, lag queue, and RNG stream."""

    def __init__(self, initial: DroneState, params: DroneParams,
                 noise: ActuationNoise, rng, dt: float = DT,
                 limits: SpeedLimits | None = None):
        self.state = initial
        self.params = params
        self.noise = noise
        self.rng = rng
        self.dt = dt
        self.limits = limits
        self._tilt = (0.0, 0.0)
        lo, hi = noise.lag_steps_range
        lag = int(rng.integers(lo, hi + 1)) if hi > lo else lo
        self.lag_steps = lag
        self.lag_queue = deque([Action(0.0, 0.0, 0.0)] * lag) if lag > 0 else None

    def step(self, cmd: Action) -> StepOutcome:
        v_before = self.state.velocity.as_array()
        out = step(self.state, cmd, self.params, self.noise, self.dt,
                   self.rng, limits=self.limits, lag_queue=self.lag_queue,
                   prev_tilt=self._tilt)
        accel = (out.next_state.velocity.as_array() - v_before) / self.dt
        self._tilt = _tilt_of(self.state, accel)
        self.state = out.next_state
        return out
