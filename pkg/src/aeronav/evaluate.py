"""Policy evaluation: outcome classification, smoothness and progress metrics.

Episodes are independent: episode e draws all of its randomness from seeds
derived from (seed, e), and actions come from the deterministic policy
mean, so reports are identical regardless of how episodes are batched.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .dynamics import DT
from .rlenv import EpisodeConfig, NavEnv, VecNavEnv, TERMINAL_REACHED

OUTCOMES = ("success", "crash", "timeout", "out_of_bounds")
_TERMINAL_TO_OUTCOME = {
    "reached_goal": "success",
    "crashed": "crash",
    "timeout": "timeout",
    "out_of_bounds": "out_of_bounds",
}


class TraceTooShort(ValueError):
    pass


def mean_yaw_jerk(omega_commands, dt: float = DT) -> float:
    """Mean absolute second difference of the commanded yaw rate, / dt^2."""
    w = np.asarray(omega_commands, dtype=np.float64)
    if w.size < 3:
        raise TraceTooShort("need at least 3 commands")
    second = (w[2:] - w[1:-1]) - (w[1:-1] - w[:-2])
    return float(np.mean(np.abs(second))) / (dt * dt)


def mission_progress(positions, env) -> float:
    """Percent of the start-goal distance covered at closest approach."""
    pts = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("empty trace")
    g = env.goal.as_array()
    d_min = float(np.min(np.linalg.norm(pts - g[None, :], axis=1)))
    d0 = (env.goal - env.start).norm()
    return 100.0 * float(np.clip(1.0 - d_min / d0, 0.0, 1.0))


@dataclass
class EvalRecord:
    episode: int
    outcome: str
    time_to_goal: float        # seconds; nan unless success
    mean_speed: float
    mean_yaw_jerk: float
    mission_progress: float
    episode_len: int
    episode_reward: float


@dataclass
class EvalReport:
    records: list
    config_hash: str = ""
    condition: str = ""

    def counts(self) -> dict:
        c = {k: 0 for k in OUTCOMES}
        for r in self.records:
            c[r.outcome] += 1
        return c

    def success_rate(self) -> float:
        return self.counts()["success"] / max(len(self.records), 1)

    def mean(self, attr: str, success_only: bool = False) -> float:
        vals = [getattr(r, attr) for r in self.records
                if not success_only or r.outcome == "success"]
        vals = [v for v in vals if not math.isnan(v)]
        return float(np.mean(vals)) if vals else float("nan")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            f.write(f"# config_hash={self.config_hash} condition={self.condition}\n")
            w = csv.writer(f)
            w.writerow(["episode", "outcome", "time_to_goal", "mean_speed",
                        "mean_yaw_jerk", "mission_progress", "episode_len",
                        "episode_reward"])
            for r in self.records:
                w.writerow([r.episode, r.outcome, f"{r.time_to_goal:.4f}",
                            f"{r.mean_speed:.4f}", f"{r.mean_yaw_jerk:.6f}",
                            f"{r.mission_progress:.3f}", r.episode_len,
                            f"{r.episode_reward:.6f}"])


def evaluate(policy, n_runs: int, env_factory, seed: int,
             config: EpisodeConfig, encoder=None, batch: int = 48,
             config_hash: str = "", condition: str = "",
             trace_path=None, log=None) -> EvalReport:
    """Run n_runs deterministic-policy episodes and classify every outcome.

    env_factory(rng) -> (Environment, trajectory | None) generates the
    held-out scenario for one episode from that episode's own RNG stream.
    """
    encoder = encoder if encoder is not None else policy.perception
    batch = max(1, min(batch, n_runs))
    queue = list(range(n_runs))
    records: dict[int, EvalRecord] = {}
    trace_f = open(trace_path, "w") if trace_path else None

    class Slot:
        __slots__ = ("ep", "env", "obs", "ha", "ca", "hc", "cc",
                     "positions", "omegas", "speeds", "reward")

    slots = []

    def start_episode(slot: Slot, ep: int):
        slot.ep = ep
        source = lambda rng, progress: env_factory(rng)
        nav = NavEnv(source, config, seed=[seed, ep, 7])
        slot.env = nav
        slot.obs = nav.reset()
        slot.ha = torch.zeros(1, 64)
        slot.ca = torch.zeros(1, 64)
        slot.hc = torch.zeros(1, 64)
        slot.cc = torch.zeros(1, 64)
        p = nav.drone.state.position
        slot.positions = [(p.x, p.y, p.z)]
        slot.omegas = []
        slot.speeds = []
        slot.reward = 0.0

    for _ in range(min(batch, len(queue))):
        s = Slot()
        start_episode(s, queue.pop(0))
        slots.append(s)

    helper = VecNavEnv([], encoder=encoder)  # batched encode only
    while slots:
        frames = np.stack([s.obs.frame for s in slots])
        latents = helper.encode_frames(frames)
        state7 = torch.from_numpy(np.stack([s.obs.state7 for s in slots]))
        z = torch.from_numpy(latents)
        ha = torch.cat([s.ha for s in slots])
        ca = torch.cat([s.ca for s in slots])
        hc = torch.cat([s.hc for s in slots])
        cc = torch.cat([s.cc for s in slots])
        action, _, _, _, (ha, ca), (hc, cc) = policy.act(
            state7, z, (ha, ca), (hc, cc), deterministic=True)
        act_np = action.numpy()

        finished = []
        for i, s in enumerate(slots):
            s.ha, s.ca = ha[i:i + 1], ca[i:i + 1]
            s.hc, s.cc = hc[i:i + 1], cc[i:i + 1]
            obs, r, done, info = s.env.step(act_np[i])
            s.reward += r
            s.positions.append(info["position"])
            s.omegas.append(info["command"][2])
            s.speeds.append(info["speed"])
            if trace_f is not None:
                trace_f.write(json.dumps({
                    "episode": s.ep, "t": info["time_step"],
                    "pos": [round(v, 4) for v in info["position"]],
                    "cmd": [round(v, 4) for v in info["command"]],
                    "reward": round(r, 8),
                    "terminal": info["terminal"]}) + "\n")
            if done:
                outcome = _TERMINAL_TO_OUTCOME[info["terminal"]]
                n_steps = info["time_step"]
                jerk = (mean_yaw_jerk(s.omegas, s.env.config.dt)
                        if len(s.omegas) >= 3 else 0.0)
                records[s.ep] = EvalRecord(
                    episode=s.ep, outcome=outcome,
                    time_to_goal=(n_steps * s.env.config.dt
                                  if outcome == "success" else float("nan")),
                    mean_speed=float(np.mean(s.speeds)),
                    mean_yaw_jerk=jerk,
                    mission_progress=mission_progress(s.positions, s.env.env),
                    episode_len=n_steps,
                    episode_reward=s.reward)
                if log and len(records) % 50 == 0:
                    log(f"eval {len(records)}/{n_runs}")
                if queue:
                    start_episode(s, queue.pop(0))
                else:
                    finished.append(i)
            else:
                s.obs = obs
        for i in reversed(finished):
            slots.pop(i)
    if trace_f is not None:
        trace_f.close()

    ordered = [records[e] for e in sorted(records)]
    return EvalReport(records=ordered, config_hash=config_hash,
                      condition=condition)
