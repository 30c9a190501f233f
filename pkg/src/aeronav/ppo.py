"""Recurrent PPO with a clipped surrogate and GAE over LSTM fragments.

The actor and critic own separate 64-unit LSTMs fed by a shared
state-mixing + perception feature stack; gradients flow through truncated
BPTT fragments (default length 64) whose initial hidden states are
snapshotted during collection. The perception encoder stays frozen
throughout policy optimization.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
import torch
import torch.nn as nn

from .autoencoder import LATENT_DIM, DepthAutoencoder
from .nets import (CheckpointMismatch, LstmCell, freeze, gaussian_entropy,
                   load_checkpoint, load_module_tensors, mlp, module_tensors,
                   save_checkpoint, tanh_gaussian_log_prob, tanh_gaussian_sample)
from .rlenv import TERMINAL_REACHED, VecNavEnv

STAGE_PRIVILEGED = "privileged"
STAGE_FINETUNE = "finetune"

# fixed input scaling for the 7-value state head (goal offsets span tens of
# meters while rates and heading error are order-1)
STATE7_SCALE = np.array([0.05, 0.05, 0.05, 1.0, 1.0, 1.0, 1.0 / math.pi],
                        dtype=np.float32)


class ConfigError(ValueError):
    pass


class NonFiniteLoss(RuntimeError):
    pass


@dataclass(frozen=True)
class PpoConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip: float = 0.2
    epochs_per_update: int = 4
    minibatches: int = 8
    entropy_coef: float = 0.005
    value_coef: float = 0.5
    grad_clip: float = 0.5
    lr: float = 3e-4
    horizon: int = 256
    n_envs: int = 150
    fragment_len: int = 64
    total_iterations: int = 50
    log_std_init: float = -0.5
    checkpoint_every: int = 10

    def __post_init__(self):
        if not (0.0 < self.gamma <= 1.0 and 0.0 < self.gae_lambda <= 1.0):
            raise ConfigError("gamma and gae_lambda must lie in (0, 1]")
        if self.clip <= 0:
            raise ConfigError("clip must be positive")
        if self.horizon % self.fragment_len != 0:
            raise ConfigError("horizon must be a multiple of fragment_len")


class PerceptionEncoder(nn.Module):
    """Frozen copy of the autoencoder's encoder half."""

    def __init__(self, channels=(4, 8, 16, 16), height: int = 108,
                 width: int = 192, dtype=torch.float32):
        super().__init__()
        ref = DepthAutoencoder(height=height, width=width, channels=channels,
                               dtype=dtype)
        self.channels = tuple(channels)
        self.height, self.width = height, width
        self.encoder_conv = ref.encoder_conv
        self.encoder_fc = ref.encoder_fc

    @staticmethod
    def from_autoencoder(ae: DepthAutoencoder) -> "PerceptionEncoder":
        enc = PerceptionEncoder(channels=ae.channels, height=ae.height,
                                width=ae.width)
        enc.encoder_conv.load_state_dict(ae.encoder_conv.state_dict())
        enc.encoder_fc.load_state_dict(ae.encoder_fc.state_dict())
        freeze(enc)
        return enc

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() == 3:
            x = x.unsqueeze(1)
        return self.encoder_fc(self.encoder_conv(x).flatten(1))


class PolicyNet(nn.Module):
    """State-mixing head, frozen perception, and LSTM actor/critic towers."""

    def __init__(self, encoder: PerceptionEncoder, dtype=torch.float32,
                 log_std_init: float = -0.5):
        super().__init__()
        self.perception = encoder
        self.state_head = mlp([7, 64, 64], activation="tanh",
                              out_activation="tanh", dtype=dtype)
        self.mix_head = mlp([64 + LATENT_DIM, 256, 256], activation="tanh",
                            out_activation="tanh", dtype=dtype)
        self.actor_lstm = LstmCell(256, 64, dtype=dtype)
        self.critic_lstm = LstmCell(256, 64, dtype=dtype)
        self.actor_head = mlp([64, 128, 32, 3], activation="tanh",
                              out_activation="identity", out_gain=0.01,
                              dtype=dtype)
        self.critic_head = mlp([64, 128, 64, 1], activation="tanh",
                               out_activation="identity", out_gain=1.0,
                               dtype=dtype)
        self.log_std = nn.Parameter(torch.full((3,), log_std_init, dtype=dtype))
        scale = torch.from_numpy(STATE7_SCALE).to(dtype)
        self.register_buffer("state7_scale", scale)

    def trainable_parameters(self):
        """Everything except the frozen perception head."""
        for name, p in self.named_parameters():
            if not name.startswith("perception."):
                yield p

    def features(self, state7: torch.Tensor, latent: torch.Tensor) -> torch.Tensor:
        s = self.state_head(state7 * self.state7_scale)
        return self.mix_head(torch.cat([s, latent], dim=-1))

    def zero_states(self, batch: int):
        return (self.actor_lstm.zero_state(batch),
                self.critic_lstm.zero_state(batch))

    @torch.no_grad()
    def act(self, state7: torch.Tensor, latent: torch.Tensor, actor_state,
            critic_state, deterministic: bool = False, generator=None):
        """One batched control tick; returns action and bookkeeping."""
        feat = self.features(state7, latent)
        ha, ca = self.actor_lstm(feat, actor_state)
        hc, cc = self.critic_lstm(feat, critic_state)
        mean = self.actor_head(ha)
        value = self.critic_head(hc).squeeze(-1)
        if deterministic:
            action = torch.tanh(mean)
            u = mean
            logp = tanh_gaussian_log_prob(u, mean, self.log_std)
        else:
            action, u = tanh_gaussian_sample(mean, self.log_std, generator)
            logp = tanh_gaussian_log_prob(u, mean, self.log_std)
        return action, u, logp, value, (ha, ca), (hc, cc)


@dataclass
class RolloutBuffer:
    """Transitions laid out [time, env] plus fragment-boundary LSTM states."""

    state7: np.ndarray       # (T, N, 7)
    latent: np.ndarray       # (T, N, 128)
    u: np.ndarray            # (T, N, 3) pre-squash action samples
    logp: np.ndarray         # (T, N)
    value: np.ndarray        # (T, N)
    reward: np.ndarray       # (T, N)
    done: np.ndarray         # (T, N) bool
    start: np.ndarray        # (T, N) bool, episode starts
    frag_states: np.ndarray  # (T//F, N, 4, 64): ha, ca, hc, cc
    last_value: np.ndarray   # (N,) bootstrap values for the step after T-1
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    @property
    def horizon(self):
        return self.state7.shape[0]

    @property
    def n_envs(self):
        return self.state7.shape[1]

    def size(self):
        return self.horizon * self.n_envs


def compute_gae(buffer: RolloutBuffer, gamma: float, lam: float):
    """delta_t = r + gamma*V(s_{t+1})*(1-done) - V(s_t), discounted scan."""
    T, N = buffer.reward.shape
    adv = np.zeros((T, N), dtype=np.float64)
    not_done = 1.0 - buffer.done.astype(np.float64)
    running = np.zeros(N, dtype=np.float64)
    next_value = buffer.last_value.astype(np.float64)
    for t in range(T - 1, -1, -1):
        delta = (buffer.reward[t] + gamma * next_value * not_done[t]
                 - buffer.value[t])
        running = delta + gamma * lam * not_done[t] * running
        adv[t] = running
        next_value = buffer.value[t]
    returns = adv + buffer.value
    buffer.advantages = adv
    buffer.returns = returns
    return adv, returns


def collect_rollouts(policy: PolicyNet, vecenv: VecNavEnv, horizon: int,
                     fragment_len: int, generator: torch.Generator,
                     obs_list, actor_state, critic_state,
                     episode_stats: "EpisodeStats"):
    """Gather `horizon` steps from every env; episodes auto-reset inline.

    obs_list and the LSTM states carry over between successive calls so
    episodes may span rollout boundaries. Returns the filled buffer plus
    the carried-over observations/states.
    """
    N = len(vecenv)
    T = horizon
    buf = RolloutBuffer(
        state7=np.empty((T, N, 7), dtype=np.float32),
        latent=np.empty((T, N, LATENT_DIM), dtype=np.float32),
        u=np.empty((T, N, 3), dtype=np.float32),
        logp=np.empty((T, N), dtype=np.float64),
        value=np.empty((T, N), dtype=np.float64),
        reward=np.empty((T, N), dtype=np.float64),
        done=np.zeros((T, N), dtype=bool),
        start=np.zeros((T, N), dtype=bool),
        frag_states=np.empty((T // fragment_len, N, 4, 64), dtype=np.float32),
        last_value=np.zeros(N, dtype=np.float64),
    )
    fresh = episode_stats.fresh_flags
    for t in range(T):
        if t % fragment_len == 0:
            k = t // fragment_len
            buf.frag_states[k, :, 0] = actor_state[0].numpy()
            buf.frag_states[k, :, 1] = actor_state[1].numpy()
            buf.frag_states[k, :, 2] = critic_state[0].numpy()
            buf.frag_states[k, :, 3] = critic_state[1].numpy()
        state7 = np.stack([o.state7 for o in obs_list])
        latent = np.stack([o.latent for o in obs_list])
        buf.state7[t] = state7
        buf.latent[t] = latent
        buf.start[t] = fresh

        s_t = torch.from_numpy(state7)
        z_t = torch.from_numpy(latent)
        action, u, logp, value, actor_state, critic_state = policy.act(
            s_t, z_t, actor_state, critic_state, generator=generator)
        buf.u[t] = u.numpy()
        buf.logp[t] = logp.numpy()
        buf.value[t] = value.numpy()

        obs_list, rewards, dones, infos = vecenv.step(action.numpy())
        buf.reward[t] = rewards
        buf.done[t] = dones
        episode_stats.record(rewards, dones, infos)
        fresh = dones
        if np.any(dones):
            mask = torch.from_numpy(~dones).float().unsqueeze(1)
            actor_state = (actor_state[0] * mask, actor_state[1] * mask)
            critic_state = (critic_state[0] * mask, critic_state[1] * mask)

    with torch.no_grad():
        s_t = torch.from_numpy(np.stack([o.state7 for o in obs_list]))
        z_t = torch.from_numpy(np.stack([o.latent for o in obs_list]))
        feat = policy.features(s_t, z_t)
        hc, _ = policy.critic_lstm(feat, critic_state)
        buf.last_value[:] = policy.critic_head(hc).squeeze(-1).numpy()
    episode_stats.fresh_flags = fresh
    return buf, obs_list, actor_state, critic_state


class EpisodeStats:
    """Per-iteration episode bookkeeping across auto-resetting envs."""

    def __init__(self, n_envs: int, dt: float):
        self.dt = dt
        self.fresh_flags = np.ones(n_envs, dtype=bool)
        self._len = np.zeros(n_envs, dtype=int)
        self._rew = np.zeros(n_envs, dtype=np.float64)
        self._jerk_sum = np.zeros(n_envs, dtype=np.float64)
        self._jerk_cnt = np.zeros(n_envs, dtype=int)
        self._om1 = np.zeros(n_envs, dtype=np.float64)
        self._om2 = np.zeros(n_envs, dtype=np.float64)
        self.reset_epoch()

    def reset_epoch(self):
        self.episodes = 0
        self.successes = 0
        self.sum_len = 0
        self.sum_reward = 0.0
        self.sum_jerk = 0.0
        self.goal_times = []

    def record(self, rewards, dones, infos):
        self._len += 1
        self._rew += rewards
        omega = np.array([i["command"][2] for i in infos])
        jerk = np.abs((omega - self._om1) - (self._om1 - self._om2)) / (self.dt ** 2)
        mature = self._len >= 3
        self._jerk_sum[mature] += jerk[mature]
        self._jerk_cnt[mature] += 1
        self._om2 = self._om1.copy()
        self._om1 = omega
        for i, done in enumerate(dones):
            if not done:
                continue
            self.episodes += 1
            self.sum_len += self._len[i]
            self.sum_reward += self._rew[i]
            if self._jerk_cnt[i] > 0:
                self.sum_jerk += self._jerk_sum[i] / self._jerk_cnt[i]
            if infos[i]["terminal"] == TERMINAL_REACHED:
                self.successes += 1
                self.goal_times.append(self._len[i] * self.dt)
            self._len[i] = 0
            self._rew[i] = 0.0
            self._jerk_sum[i] = 0.0
            self._jerk_cnt[i] = 0
            self._om1[i] = 0.0
            self._om2[i] = 0.0

    def summary(self) -> dict:
        n = max(self.episodes, 1)
        return {
            "episodes": self.episodes,
            "success_rate": self.successes / n,
            "mean_reward": self.sum_reward / n,
            "mean_episode_len": self.sum_len / n,
            "mean_yaw_jerk": self.sum_jerk / n,
            "time_to_goal_mean": (float(np.mean(self.goal_times))
                                  if self.goal_times else float("nan")),
        }


def clipped_surrogate(ratio: torch.Tensor, advantage: torch.Tensor,
                      clip: float) -> torch.Tensor:
    """Per-sample clipped objective: min(r*A, clip(r, 1-eps, 1+eps)*A)."""
    return torch.min(ratio * advantage,
                     torch.clamp(ratio, 1.0 - clip, 1.0 + clip) * advantage)


def ppo_update(policy: PolicyNet, buffer: RolloutBuffer, cfg: PpoConfig,
               optimizer: torch.optim.Optimizer,
               rng: np.random.Generator) -> dict:
    """Clipped-surrogate epochs over fragment minibatches (truncated BPTT)."""
    if buffer.advantages is None:
        raise RuntimeError("advantages not computed")
    T, N = buffer.horizon, buffer.n_envs
    F = cfg.fragment_len
    n_frag_t = T // F

    adv = buffer.advantages
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)

    # fragment tensors: index f = k * N + i  ->  time block k, env i
    def frag_view(x, extra=()):
        return (x.reshape(n_frag_t, F, N, *extra)
                .swapaxes(1, 2).reshape(n_frag_t * N, F, *extra))

    state7 = torch.from_numpy(frag_view(buffer.state7, (7,)))
    latent = torch.from_numpy(frag_view(buffer.latent, (LATENT_DIM,)))
    u_all = torch.from_numpy(frag_view(buffer.u, (3,)))
    logp_old = torch.from_numpy(frag_view(buffer.logp)).to(torch.float32)
    adv_t = torch.from_numpy(frag_view(adv)).to(torch.float32)
    ret_t = torch.from_numpy(frag_view(buffer.returns)).to(torch.float32)
    start = torch.from_numpy(frag_view(buffer.start.astype(np.float32)))
    init_states = torch.from_numpy(
        buffer.frag_states.reshape(n_frag_t * N, 4, 64))

    n_frags = n_frag_t * N
    stats = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0,
             "approx_kl": 0.0, "clip_frac": 0.0, "updates": 0}

    for _ in range(cfg.epochs_per_update):
        order = rng.permutation(n_frags)
        mb_size = max(n_frags // cfg.minibatches, 1)
        for lo in range(0, n_frags, mb_size):
            idx = torch.from_numpy(order[lo:lo + mb_size].copy())
            B = len(idx)
            ha = init_states[idx, 0].clone()
            ca = init_states[idx, 1].clone()
            hc = init_states[idx, 2].clone()
            cc = init_states[idx, 3].clone()
            means, values = [], []
            for t in range(F):
                keep = (1.0 - start[idx, t]).unsqueeze(1)
                ha, ca, hc, cc = ha * keep, ca * keep, hc * keep, cc * keep
                feat = policy.features(state7[idx, t], latent[idx, t])
                ha, ca = policy.actor_lstm(feat, (ha, ca))
                hc, cc = policy.critic_lstm(feat, (hc, cc))
                means.append(policy.actor_head(ha))
                values.append(policy.critic_head(hc).squeeze(-1))
            mean = torch.stack(means, dim=1)          # (B, F, 3)
            value = torch.stack(values, dim=1)        # (B, F)
            logp_new = tanh_gaussian_log_prob(
                u_all[idx].reshape(B * F, 3),
                mean.reshape(B * F, 3), policy.log_std).reshape(B, F)

            ratio = torch.exp(logp_new - logp_old[idx])
            a = adv_t[idx]
            policy_loss = -clipped_surrogate(ratio, a, cfg.clip).mean()
            value_loss = torch.nn.functional.mse_loss(value, ret_t[idx])
            entropy = gaussian_entropy(policy.log_std)
            loss = (policy_loss + cfg.value_coef * value_loss
                    - cfg.entropy_coef * entropy)
            if not torch.isfinite(loss):
                raise NonFiniteLoss(f"loss diverged: {loss.item()}")

            optimizer.zero_grad()
            loss.backward()
            nn.utils.clip_grad_norm_(
                [p for p in policy.trainable_parameters()], cfg.grad_clip)
            optimizer.step()

            with torch.no_grad():
                stats["policy_loss"] += float(policy_loss)
                stats["value_loss"] += float(value_loss)
                stats["entropy"] += float(entropy)
                stats["approx_kl"] += float((logp_old[idx] - logp_new).mean())
                stats["clip_frac"] += float(
                    ((ratio - 1.0).abs() > cfg.clip).float().mean())
                stats["updates"] += 1
    n = max(stats.pop("updates"), 1)
    return {k: v / n for k, v in stats.items()}


# ---------------------------------------------------------------------------
# Policy checkpoints
# ---------------------------------------------------------------------------


def save_policy(path, policy: PolicyNet, meta: dict | None = None) -> None:
    meta = dict(meta or {})
    meta["arch"] = {"channels": list(policy.perception.channels),
                    "height": policy.perception.height,
                    "width": policy.perception.width}
    save_checkpoint(path, module_tensors(policy), meta=meta)


def load_policy(path) -> tuple:
    """Rebuild a PolicyNet from an ANRL1 checkpoint; returns (policy, meta)."""
    tensors, meta, _rng = load_checkpoint(path)
    arch = meta.get("arch")
    if arch is None:
        raise CheckpointMismatch("checkpoint carries no architecture metadata")
    enc = PerceptionEncoder(channels=tuple(arch["channels"]),
                            height=arch["height"], width=arch["width"])
    policy = PolicyNet(enc)
    load_module_tensors(policy, tensors)
    freeze(policy.perception)
    return policy, meta


# ---------------------------------------------------------------------------
# Stage trainer
# ---------------------------------------------------------------------------


def train_stage(stage: str, policy: PolicyNet | None, cfg: PpoConfig,
                make_vecenv, seed: int, metrics_path=None,
                checkpoint_dir=None, log=None, meta: dict | None = None,
                stop_at_success: float | None = None, stop_window: int = 3):
    """Run one training stage; returns (policy, metrics_rows).

    stage "privileged" may start from scratch; "finetune" must receive the
    stage-1 policy (stage ordering contract). make_vecenv(stage, cfg, seed)
    builds the 150-instance vector environment with the perception encoder
    attached. When stop_at_success is set, training ends early once the
    rollout success rate holds at or above it for stop_window iterations.
    """
    if stage not in (STAGE_PRIVILEGED, STAGE_FINETUNE):
        raise ConfigError(f"unknown stage {stage!r}")
    if stage == STAGE_FINETUNE and policy is None:
        raise ConfigError("finetune requires the privileged-stage policy")
    if policy is None:
        raise ConfigError("privileged stage needs a policy with a trained encoder")

    torch.manual_seed(seed)
    gen = torch.Generator().manual_seed(seed)
    update_rng = np.random.default_rng(seed + 1)
    vecenv = make_vecenv(stage, cfg, seed)
    optimizer = torch.optim.Adam(policy.trainable_parameters(), lr=cfg.lr)

    stats = EpisodeStats(cfg.n_envs, vecenv.envs[0].config.dt)
    vecenv.set_progress(0.0)
    obs_list = vecenv.reset_all()
    actor_state, critic_state = policy.zero_states(cfg.n_envs)

    rows = []
    writer = None
    fh = None
    if metrics_path is not None:
        fh = open(metrics_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["iteration", "env_steps", "episodes", "success_rate",
                         "mean_reward", "mean_episode_len", "mean_yaw_jerk",
                         "time_to_goal_mean", "policy_loss", "value_loss",
                         "entropy", "approx_kl"])
    t_start = time.time()
    try:
        for it in range(1, cfg.total_iterations + 1):
            progress = (it - 1) / max(cfg.total_iterations - 1, 1)
            vecenv.set_progress(progress)
            stats.reset_epoch()
            buf, obs_list, actor_state, critic_state = collect_rollouts(
                policy, vecenv, cfg.horizon, cfg.fragment_len, gen,
                obs_list, actor_state, critic_state, stats)
            compute_gae(buf, cfg.gamma, cfg.gae_lambda)
            upd = ppo_update(policy, buf, cfg, optimizer, update_rng)
            s = stats.summary()
            row = [it, it * cfg.horizon * cfg.n_envs, s["episodes"],
                   f"{s['success_rate']:.6f}", f"{s['mean_reward']:.6f}",
                   f"{s['mean_episode_len']:.3f}", f"{s['mean_yaw_jerk']:.6f}",
                   f"{s['time_to_goal_mean']:.3f}",
                   f"{upd['policy_loss']:.6f}", f"{upd['value_loss']:.6f}",
                   f"{upd['entropy']:.6f}", f"{upd['approx_kl']:.6f}"]
            rows.append(row)
            if writer:
                writer.writerow(row)
                fh.flush()
            if log:
                log(f"[{stage}] it {it}/{cfg.total_iterations} "
                    f"ep {s['episodes']} success {s['success_rate']:.2f} "
                    f"rew {s['mean_reward']:.3f} len {s['mean_episode_len']:.0f} "
                    f"kl {upd['approx_kl']:.4f} "
                    f"({time.time() - t_start:.0f}s)")
            if checkpoint_dir is not None and (
                    it % cfg.checkpoint_every == 0 or it == cfg.total_iterations):
                ck = dict(meta or {})
                ck.update({"stage": stage, "iteration": it, "seed": seed})
                save_policy(f"{checkpoint_dir}/policy_{stage}_{it:04d}.anrl",
                            policy, meta=ck)
            if stop_at_success is not None and len(rows) >= stop_window:
                recent = [float(r[3]) for r in rows[-stop_window:]]
                episodes = [int(r[2]) for r in rows[-stop_window:]]
                if all(e > 0 for e in episodes) and all(
                        v >= stop_at_success for v in recent):
                    if log:
                        log(f"[{stage}] early stop: success >= "
                            f"{stop_at_success:.2f} for {stop_window} iters")
                    break
    finally:
        if fh:
            fh.close()
    return policy, rows
