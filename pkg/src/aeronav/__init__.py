"""Depth-vision quadrotor navigation: simulator, perception, recurrent PPO,
and the evaluation/ablation harness."""

__version__ = "0.1.0"

from .core import (Action, DroneState, Environment, Panel, Pillar, SpeedLimits,
                   Vec3, Wall, desired_heading, is_out_of_bounds,
                   min_obstacle_distance, obstacle_distance, wrap_angle_diff)
from .dynamics import ActuationNoise, Drone, DroneParams, StepOutcome, \
    randomize_params, scale_drone, step
from .camera import CameraModel, DepthNoise, apply_noise, normalize_for_policy, \
    render
from .rlenv import (EpisodeConfig, NavEnv, Observation, RewardWeights,
                    VecNavEnv, check_terminal, compute_reward, observe,
                    scale_action)
from .planner import OccupancyGrid, OptimalTrajectory, nearest_trajectory_distance, \
    plan, voxelize
from .ppo import PolicyNet, PpoConfig, RolloutBuffer, collect_rollouts, \
    compute_gae, ppo_update, train_stage
from .evaluate import EvalReport, evaluate, mean_yaw_jerk, mission_progress
