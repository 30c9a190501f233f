"""Episodic navigation environment binding dynamics, camera, and planner.

Step rewards sum eleven shaped terms (survival cost, goal-distance
progress, heading error, altitude error, yaw-rate magnitude, vertical
velocity direction, velocity toward goal, command acceleration, command
yaw jerk, obstacle proximity, and — during privileged training only —
proximity to the planned trajectory) plus a terminal reward for one of
four episode outcomes. The acceleration penalty uses componentwise
absolute command differences: a signed dot product would pay out for large
negative swings, the opposite of a smoothness penalty.

The action fed to the reward is the scaled command the policy issued this
tick (pre-lag); the lag queue only delays what the tracking model sees.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import torch

from .camera import CameraModel, DepthNoise, apply_noise, normalize_for_policy, render
from .core import (Action, DegenerateHeading, DroneState, Environment,
                   SpeedLimits, Vec3, desired_heading, is_out_of_bounds,
                   min_obstacle_distance, wrap_angle, wrap_angle_diff)
from .dynamics import DT, ActuationNoise, Drone, DroneParams, randomize_params
from .planner import OptimalTrajectory, nearest_trajectory_distance

TERMINAL_NONE = None
TERMINAL_REACHED = "reached_goal"
TERMINAL_CRASHED = "crashed"
TERMINAL_OOB = "out_of_bounds"
TERMINAL_TIMEOUT = "timeout"

Z_FLOOR = 0.2   # altitude plumbing bounds, not a terminal condition
Z_CEIL = 20.0

STATE_NOISE_FRAC = 0.02


class MissingTrajectory(RuntimeError):
    """Privileged reward requested without a planned trajectory."""


@dataclass(frozen=True)
class RewardWeights:
    survival: float = 1e-3
    distance: float = 1e-3
    heading: float = 1.0 / 3000.0
    z_error: float = 1e-3
    omega_mag: float = 1.0 / 25.0
    vz_direction: float = 1.0 / 5000.0
    velocity_to_goal: float = 1.0 / 8000.0
    accel: tuple = (1.0 / 20000.0, 1.0 / 15000.0, 1.0 / 20000.0)
    yaw_jerk: float = 1e-3
    obstacle_prox: float = 1.0 / 3000.0
    trajectory_prox: float = 1.0 / 2000.0
    terminal_reached: float = 2.0
    terminal_oob: float = 0.16
    terminal_crash: float = 0.08
    terminal_timeout: float = -1.0

    def ablate(self, name: str) -> "RewardWeights":
        """Copy with one shaping weight zeroed (reward-term ablations)."""
        from dataclasses import replace

        if name == "omega_mag":
            return replace(self, omega_mag=0.0)
        if name == "accel":
            return replace(self, accel=(0.0, 0.0, 0.0))
        if name == "yaw_jerk":
            return replace(self, yaw_jerk=0.0)
        raise ValueError(f"unknown ablation {name!r}")


@dataclass(frozen=True)
class EpisodeConfig:
    t_max: int = 480
    goal_radius: float = 1.0
    crash_radius: float = 1.25
    privileged: bool = False
    limits: SpeedLimits = field(default_factory=SpeedLimits)
    state_noise: bool = True
    depth_noise: bool = True
    actuation_noise: bool = True
    dt: float = DT


@dataclass
class Observation:
    state7: np.ndarray                 # [g-p (3), roll/pitch/yaw rates, dpsi]
    frame: np.ndarray                  # normalized depth image
    latent: np.ndarray | None = None   # filled by the encoder stage


def scale_action(raw: np.ndarray, limits: SpeedLimits) -> Action:
    """Clamp raw outputs to [-1, 1] and scale by the per-axis limits."""
    r = np.clip(np.asarray(raw, dtype=np.float64), -1.0, 1.0)
    return Action(r[0] * limits.v_x_max, r[1] * limits.v_z_max,
                  r[2] * limits.omega_max)


def compute_reward(prev: DroneState, curr: DroneState, a_t: Action,
                   a_tm1: Action, a_tm2: Action, env: Environment,
                   traj: OptimalTrajectory | None, w: RewardWeights,
                   privileged: bool = False,
                   fallback_heading: float | None = None) -> float:
    """Sum of the shaped per-step reward terms for one transition."""
    p = curr.position
    g = env.goal
    d_goal = (g - p).norm()
    d_start = (g - env.start).norm()

    r = -w.survival
    r += w.distance * (1.0 - d_goal / d_start)

    try:
        zeta = desired_heading(p, g)
    except DegenerateHeading:
        zeta = fallback_heading if fallback_heading is not None else curr.yaw
    h_err = wrap_angle_diff(curr.yaw, zeta)
    r += -w.heading * h_err
    r += -w.z_error * (g.z - p.z) ** 2
    r += -w.omega_mag * a_t.omega ** 2
    r += w.vz_direction * (-1.0 if a_t.v_z * (g.z - p.z) < 0.0 else 0.03)
    r += w.velocity_to_goal * a_t.v_x * math.cos(h_err)
    r += -(w.accel[0] * abs(a_t.v_x - a_tm1.v_x)
           + w.accel[1] * abs(a_t.v_z - a_tm1.v_z)
           + w.accel[2] * abs(a_t.omega - a_tm1.omega))
    r += -w.yaw_jerk * abs((a_t.omega - a_tm1.omega) - (a_tm1.omega - a_tm2.omega))

    min_d = min_obstacle_distance(p, env)
    r += -w.obstacle_prox * max(0.0, 1.0 - min_d / 3.0)

    if privileged:
        if traj is None:
            raise MissingTrajectory("privileged reward needs a trajectory")
        min_r = nearest_trajectory_distance(p, traj)
        r += w.trajectory_prox * max(0.0, 1.0 - min_r / 5.0)
    return r


def check_terminal(state: DroneState, env: Environment, config: EpisodeConfig,
                   w: RewardWeights | None = None):
    """Classify the state; precedence goal > crash > out-of-bounds > timeout.

    Returns (kind, terminal_reward); (None, 0.0) when the episode goes on.
    """
    w = w or RewardWeights()
    if (env.goal - state.position).norm() <= config.goal_radius:
        return TERMINAL_REACHED, w.terminal_reached
    if min_obstacle_distance(state.position, env) <= config.crash_radius:
        return TERMINAL_CRASHED, w.terminal_crash
    if is_out_of_bounds(state.position, env):
        return TERMINAL_OOB, w.terminal_oob
    if state.time_step >= config.t_max:
        return TERMINAL_TIMEOUT, w.terminal_timeout
    return TERMINAL_NONE, 0.0


def observe(state: DroneState, env: Environment, cam: CameraModel,
            rng, config: EpisodeConfig, depth_noise: DepthNoise,
            fallback_heading: float | None = None,
            render_depth: bool = True) -> Observation:
    """Assemble the 7-value state vector plus the normalized depth frame.

    Positional components (goal offset) pick up clipped +-2% multiplicative
    Gaussian noise; the heading-to-goal difference is recomputed from the
    noisy offsets so it stays consistent with what the policy reads.
    """
    g = env.goal
    p = state.position
    dg = np.array([g.x - p.x, g.y - p.y, g.z - p.z])
    if config.state_noise:
        eps = np.clip(rng.normal(0.0, STATE_NOISE_FRAC / 3.0, size=3),
                      -STATE_NOISE_FRAC, STATE_NOISE_FRAC)
        dg = dg * (1.0 + eps)
    if math.hypot(dg[0], dg[1]) > 1e-9:
        zeta = math.atan2(dg[0], dg[1])
    else:
        zeta = fallback_heading if fallback_heading is not None else state.yaw
    dpsi = wrap_angle(zeta - state.yaw)
    state7 = np.array([dg[0], dg[1], dg[2], state.body_rates.x,
                       state.body_rates.y, state.body_rates.z, dpsi],
                      dtype=np.float32)
    frame = None
    if render_depth:
        depth = render(state, env, cam)
        if config.depth_noise:
            depth = apply_noise(depth, depth_noise, rng,
                                cam.min_range, cam.max_range)
        frame = normalize_for_policy(depth, cam.min_range, cam.max_range)
    return Observation(state7=state7, frame=frame)


class NavEnv:
    """One drone, one episode at a time, gym-style reset/step.

    env_source(rng, progress) -> (Environment, OptimalTrajectory | None)
    supplies a fresh scenario per episode. The instance owns its RNG,
    dynamics, and camera, so many instances step concurrently.
    """

    def __init__(self, env_source, config: EpisodeConfig, seed: int,
                 cam: CameraModel | None = None,
                 weights: RewardWeights | None = None,
                 params: DroneParams | None = None,
                 noise: ActuationNoise | None = None):
        self.source = env_source
        self.config = config
        self.cam = cam or CameraModel()
        self.weights = weights or RewardWeights()
        self.nominal_params = params or DroneParams()
        base_noise = noise if noise is not None else ActuationNoise()
        self.noise = base_noise if config.actuation_noise else ActuationNoise.none()
        self.rng = np.random.default_rng(seed)
        self.depth_noise = DepthNoise()
        self.progress = 0.0

        self.env: Environment | None = None
        self.traj: OptimalTrajectory | None = None
        self.drone: Drone | None = None
        self._a_hist = [Action(0, 0, 0), Action(0, 0, 0)]
        self._last_heading = 0.0
        self.episode_reward = 0.0

    def reset(self) -> Observation:
        self.env, self.traj = self.source(self.rng, self.progress)
        if self.config.privileged and self.traj is None:
            raise MissingTrajectory("privileged episode without a trajectory")
        start, goal = self.env.start, self.env.goal
        yaw0 = desired_heading(start, goal)
        state = DroneState(position=start, velocity=Vec3(0.0, 0.0, 0.0),
                           yaw=yaw0, body_rates=Vec3(0.0, 0.0, 0.0), time_step=0)
        params = randomize_params(self.nominal_params, self.noise,
                                  self.rng.integers(2 ** 63))
        self.drone = Drone(state, params, self.noise, self.rng,
                           dt=self.config.dt, limits=None)
        self._a_hist = [Action(0, 0, 0), Action(0, 0, 0)]
        self._last_heading = yaw0
        self.episode_reward = 0.0
        return observe(state, self.env, self.cam, self.rng, self.config,
                       self.depth_noise, fallback_heading=yaw0)

    def step(self, raw_action: np.ndarray):
        """Returns (obs | None, reward, done, info); obs is None at terminal."""
        cmd = scale_action(raw_action, self.config.limits)
        prev = self.drone.state
        self.drone.step(cmd)
        state = self.drone.state
        # altitude plumbing bounds
        if state.position.z < Z_FLOOR or state.position.z > Z_CEIL:
            clamped = Vec3(state.position.x, state.position.y,
                           float(np.clip(state.position.z, Z_FLOOR, Z_CEIL)))
            state = DroneState(clamped, state.velocity, state.yaw,
                               state.body_rates, state.time_step)
            self.drone.state = state

        reward = compute_reward(prev, state, cmd, self._a_hist[-1],
                                self._a_hist[-2], self.env, self.traj,
                                self.weights, privileged=self.config.privileged,
                                fallback_heading=self._last_heading)
        kind, term_r = check_terminal(state, self.env, self.config, self.weights)
        reward += term_r
        done = kind is not None

        try:
            self._last_heading = desired_heading(state.position, self.env.goal)
        except DegenerateHeading:
            pass
        self._a_hist.append(cmd)
        self._a_hist = self._a_hist[-2:]
        self.episode_reward += reward

        info = {
            "terminal": kind,
            "time_step": state.time_step,
            "position": (state.position.x, state.position.y, state.position.z),
            "speed": state.velocity.norm(),
            "goal_distance": (self.env.goal - state.position).norm(),
            "command": (cmd.v_x, cmd.v_z, cmd.omega),
        }
        if done:
            info["episode_reward"] = self.episode_reward
            return None, reward, True, info
        obs = observe(state, self.env, self.cam, self.rng, self.config,
                      self.depth_noise, fallback_heading=self._last_heading)
        return obs, reward, False, info


def worker_count(default: int = 1) -> int:
    try:
        return max(int(os.environ.get("AERONAV_WORKERS", default)), 1)
    except ValueError:
        return default


class VecNavEnv:
    """Synchronous vector of NavEnv instances with central batch encoding.

    Stepping fans out across a thread pool when AERONAV_WORKERS > 1 (the
    render path releases the GIL inside numpy); results are gathered in
    env-index order, so rollouts are identical for any worker count.
    """

    def __init__(self, envs: list, encoder=None, workers: int | None = None):
        self.envs = envs
        self.encoder = encoder
        self.workers = worker_count() if workers is None else max(workers, 1)
        self._pool = (ThreadPoolExecutor(max_workers=self.workers)
                      if self.workers > 1 else None)

    def __len__(self):
        return len(self.envs)

    def set_progress(self, progress: float) -> None:
        for e in self.envs:
            e.progress = progress

    def encode_frames(self, frames: np.ndarray) -> np.ndarray:
        """(N, H, W) -> (N, 128) through the frozen perception head."""
        if self.encoder is None:
            raise RuntimeError("no encoder attached")
        with torch.no_grad():
            x = torch.from_numpy(np.ascontiguousarray(frames))
            return self.encoder.encode(x).numpy()

    def _finish(self, obs_list):
        """Attach latents to a list of Observations in one batched call."""
        frames = np.stack([o.frame for o in obs_list])
        if self.encoder is not None:
            latents = self.encode_frames(frames)
            for o, z in zip(obs_list, latents):
                o.latent = z
        return obs_list

    def reset_all(self):
        obs = [e.reset() for e in self.envs]
        return self._finish(obs)

    def step(self, raw_actions: np.ndarray):
        """Step every env; auto-reset finished ones inline.

        Returns (observations, rewards, dones, infos); the observation for
        a finished env is the first observation of its next episode.
        """
        if self._pool is not None:
            results = list(self._pool.map(
                lambda pair: pair[0].step(pair[1]),
                zip(self.envs, raw_actions)))
        else:
            results = [e.step(a) for e, a in zip(self.envs, raw_actions)]
        obs_list, rewards, dones, infos = [], [], [], []
        for e, (obs, r, done, info) in zip(self.envs, results):
            if done:
                obs = e.reset()
            obs_list.append(obs)
            rewards.append(r)
            dones.append(done)
            infos.append(info)
        return (self._finish(obs_list), np.array(rewards, dtype=np.float64),
                np.array(dones, dtype=bool), infos)
