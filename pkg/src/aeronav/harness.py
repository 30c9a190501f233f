"""Experiment harness: env sources, training pipelines, sweeps, ablations.

Everything here shells out to the library modules; artifacts (CSV, SVG
figures, checkpoints) land in the run directory and embed the config hash.
"""

from __future__ import annotations

import dataclasses
import json
import math
import time
from pathlib import Path

import numpy as np

from . import envgen, plots
from .autoencoder import (DepthAutoencoder, load_autoencoder, pretrain,
                          save_autoencoder, synthesize_dataset)
from .config import RunConfig
from .core import Environment, Vec3, environment_from_dict, environment_to_dict
from .dynamics import DroneParams, scale_drone
from .envgen import CurriculumSchedule, densify, gen_privileged_env, gen_region
from .evaluate import EvalReport, evaluate
from .planner import (OptimalTrajectory, load_trajectory_csv, plan,
                      save_trajectory_csv, voxelize)
from .ppo import (STAGE_FINETUNE, STAGE_PRIVILEGED, ConfigError,
                  PerceptionEncoder, PolicyNet, load_policy, save_policy,
                  train_stage)
from .rlenv import NavEnv, RewardWeights, VecNavEnv


# ---------------------------------------------------------------------------
# Episode sources
# ---------------------------------------------------------------------------


def toy_source(goal_distance: float = 10.0, altitude: float = 2.0):
    """Obstacle-free go-to-goal: fixed range, random horizontal direction."""

    def source(rng, progress):
        theta = rng.uniform(0.0, 2.0 * math.pi)
        goal = Vec3(goal_distance * math.sin(theta),
                    goal_distance * math.cos(theta), altitude)
        env = Environment([], Vec3(0.0, 0.0, altitude), goal)
        return env, None

    return source


class PrivilegedPool:
    """Pre-planned (environment, optimal trajectory) pairs.

    Planning per episode is too slow at desk scale, so the privileged stage
    samples from a pool planned up front; held-out evaluation environments
    come from a disjoint seed stream.
    """

    def __init__(self, entries: list):
        if not entries:
            raise ValueError("empty pool")
        self.entries = entries

    def __len__(self):
        return len(self.entries)

    def __call__(self, rng, progress):
        return self.entries[int(rng.integers(len(self.entries)))]

    @staticmethod
    def build(n: int, seed: int, spec=None, v_max: float = 3.0,
              a_max: float = 3.0, rho_time: float = 10.0, log=None
              ) -> "PrivilegedPool":
        spec = spec or envgen.privileged_spec()
        rng = np.random.default_rng([seed, 2809])
        entries = []
        t0 = time.time()
        attempts = 0
        while len(entries) < n:
            attempts += 1
            env = gen_privileged_env(rng, spec)
            grid = voxelize(env)
            try:
                traj = plan(grid, env.start, env.goal, v_max=v_max,
                            a_max=a_max, rho_time=rho_time)
            except Exception:
                continue  # unplannable layout: regenerate (counted)
            entries.append((env, traj))
            if log and len(entries) % 25 == 0:
                log(f"pool {len(entries)}/{n} "
                    f"({attempts - len(entries)} rejected, "
                    f"{time.time() - t0:.0f}s)")
        return PrivilegedPool(entries)

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        manifest = []
        for k, (env, traj) in enumerate(self.entries):
            env_p = d / f"env_{k:04d}.json"
            traj_p = d / f"traj_{k:04d}.csv"
            with open(env_p, "w") as f:
                json.dump(environment_to_dict(env), f)
            save_trajectory_csv(traj, traj_p)
            manifest.append({"env": env_p.name, "traj": traj_p.name})
        with open(d / "manifest.json", "w") as f:
            json.dump({"count": len(manifest), "entries": manifest}, f)

    @staticmethod
    def load(directory) -> "PrivilegedPool":
        d = Path(directory)
        with open(d / "manifest.json") as f:
            manifest = json.load(f)
        entries = []
        for e in manifest["entries"]:
            with open(d / e["env"]) as f:
                env = environment_from_dict(json.load(f))
            entries.append((env, load_trajectory_csv(d / e["traj"])))
        return PrivilegedPool(entries)


def curriculum_source(schedule: CurriculumSchedule | None = None,
                      specs=None, density: float = 1.0):
    schedule = schedule or CurriculumSchedule()
    specs = specs or (envgen.region1_spec(), envgen.region2_spec(),
                      envgen.region3_spec())
    if density != 1.0:
        specs = tuple(densify(s, density) for s in specs)

    def source(rng, progress):
        return envgen.sample_curriculum(schedule, progress, rng, specs), None

    return source


def heldout_pillar_factory(density: float = 1.0):
    spec = envgen.privileged_spec()
    if density != 1.0:
        spec = densify(spec, density)

    def factory(rng):
        return gen_privileged_env(rng, spec), None

    return factory


def eval_course_factory(density: float = 1.0):
    """Uniform draw across the three curriculum regions."""
    specs = (envgen.region1_spec(), envgen.region2_spec(), envgen.region3_spec())
    if density != 1.0:
        specs = tuple(densify(s, density) for s in specs)

    def factory(rng):
        return gen_region(specs[int(rng.integers(3))], rng), None

    return factory


def toy_factory(goal_distance: float = 10.0):
    src = toy_source(goal_distance)

    def factory(rng):
        return src(rng, 1.0)

    return factory


# ---------------------------------------------------------------------------
# Model assembly
# ---------------------------------------------------------------------------


def pretrain_encoder(cfg: RunConfig, out_path=None, log=None) -> DepthAutoencoder:
    rng = np.random.default_rng([cfg.seed, 11])
    ds = synthesize_dataset(cfg.ae_dataset_n, rng)
    ae = DepthAutoencoder(channels=cfg.ae_channels)
    pretrain(ae, ds, epochs=cfg.ae_epochs, lr=cfg.ae_lr, seed=cfg.seed,
             noise_sigma=cfg.ae_sigma, stop_at_val=cfg.ae_stop_at_val, log=log)
    if out_path is not None:
        save_autoencoder(out_path, ae, meta={"config_hash": cfg.config_hash()})
    return ae


def make_policy(ae: DepthAutoencoder, cfg: RunConfig) -> PolicyNet:
    import torch

    torch.manual_seed(cfg.seed)
    enc = PerceptionEncoder.from_autoencoder(ae)
    return PolicyNet(enc, log_std_init=cfg.ppo.log_std_init)


def _reward_weights(cfg: RunConfig) -> RewardWeights:
    w = RewardWeights()
    if cfg.drop_reward_term:
        w = w.ablate(cfg.drop_reward_term)
    return w


def _drone_params(cfg: RunConfig) -> DroneParams:
    params = DroneParams()
    if cfg.drone_scale != 1.0:
        params = scale_drone(params, cfg.drone_scale)
    return params


def make_vecenv_builder(cfg: RunConfig, encoder, pool: PrivilegedPool | None):
    """Returns make_vecenv(stage, ppo_cfg, seed) for train_stage."""
    weights = _reward_weights(cfg)
    params = _drone_params(cfg)

    def make_vecenv(stage, ppo_cfg, seed):
        privileged = stage == STAGE_PRIVILEGED
        if cfg.toy_task:
            source = toy_source(cfg.toy_goal_distance)
            privileged = False
        elif privileged:
            if pool is None:
                raise ConfigError("privileged stage requires a planned pool")
            source = pool
        else:
            source = curriculum_source(density=cfg.density)
        ep_cfg = cfg.episode_config(privileged)
        seeds = np.random.SeedSequence([seed, 71]).spawn(ppo_cfg.n_envs)
        envs = [NavEnv(source, ep_cfg, seed=s, weights=weights, params=params)
                for s in seeds]
        return VecNavEnv(envs, encoder=encoder)

    return make_vecenv


# ---------------------------------------------------------------------------
# Pipelines
# ---------------------------------------------------------------------------


def run_training(cfg: RunConfig, ae: DepthAutoencoder, out_dir,
                 pool: PrivilegedPool | None = None, log=None,
                 stop_at_success: float | None = None):
    """Train per cfg.stage_mode; returns (policy, dict of stage metric rows)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    policy = make_policy(ae, cfg)
    builder = make_vecenv_builder(cfg, policy.perception, pool)
    meta = {"config_hash": cfg.config_hash()}
    all_rows = {}

    def stage_cfg(iters):
        return dataclasses.replace(cfg.ppo, total_iterations=iters)

    if cfg.toy_task:
        policy, rows = train_stage(
            STAGE_FINETUNE, policy, stage_cfg(cfg.finetune_iterations),
            builder, cfg.seed, metrics_path=out / "metrics_toy.csv",
            checkpoint_dir=out, log=log, meta=meta,
            stop_at_success=stop_at_success)
        all_rows["toy"] = rows
    elif cfg.stage_mode == "hybrid":
        policy, rows = train_stage(
            STAGE_PRIVILEGED, policy, stage_cfg(cfg.privileged_iterations),
            builder, cfg.seed, metrics_path=out / "metrics_privileged.csv",
            checkpoint_dir=out, log=log, meta=meta)
        all_rows["privileged"] = rows
        policy, rows = train_stage(
            STAGE_FINETUNE, policy, stage_cfg(cfg.finetune_iterations),
            builder, cfg.seed + 1, metrics_path=out / "metrics_finetune.csv",
            checkpoint_dir=out, log=log, meta=meta)
        all_rows["finetune"] = rows
    elif cfg.stage_mode == "privileged":
        iters = cfg.privileged_iterations + cfg.finetune_iterations
        policy, rows = train_stage(
            STAGE_PRIVILEGED, policy, stage_cfg(iters), builder, cfg.seed,
            metrics_path=out / "metrics_privileged.csv",
            checkpoint_dir=out, log=log, meta=meta)
        all_rows["privileged"] = rows
    else:  # curriculum from scratch: fine-tune stage seeded with fresh params
        iters = cfg.privileged_iterations + cfg.finetune_iterations
        policy, rows = train_stage(
            STAGE_FINETUNE, policy, stage_cfg(iters), builder, cfg.seed,
            metrics_path=out / "metrics_curriculum.csv",
            checkpoint_dir=out, log=log, meta=meta)
        all_rows["curriculum"] = rows

    final_path = out / "policy_final.anrl"
    save_policy(final_path, policy, meta=meta)
    plots.training_curves(all_rows, out / "training_curves.svg",
                          cfg.config_hash())
    return policy, all_rows


def pick_eval_factory(cfg: RunConfig, course: str):
    if course == "toy" or (course == "auto" and cfg.toy_task):
        return toy_factory(cfg.toy_goal_distance)
    if course == "pillars" or (course == "auto" and cfg.stage_mode == "privileged"):
        return heldout_pillar_factory(cfg.density)
    return eval_course_factory(cfg.density)


def run_eval(policy: PolicyNet, cfg: RunConfig, out_dir, course: str = "auto",
             condition: str = "", n_runs: int | None = None,
             trace_path=None, log=None) -> EvalReport:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    factory = pick_eval_factory(cfg, course)
    ep_cfg = cfg.episode_config(privileged=False)
    report = evaluate(policy, n_runs or cfg.eval_runs, factory,
                      seed=cfg.seed + 9000, config=ep_cfg,
                      batch=cfg.eval_batch, config_hash=cfg.config_hash(),
                      condition=condition or course, trace_path=trace_path,
                      log=log)
    name = (condition or course).replace(" ", "_").replace("/", "-") or "eval"
    report.to_csv(out / f"eval_{name}.csv")
    return report


def run_speed_sweep(policy: PolicyNet, cfg: RunConfig, speeds, out_dir,
                    course: str = "auto", log=None) -> dict:
    """Evaluate one policy across v_x_max settings (speed-sweep table)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    reports = {}
    for v in speeds:
        c = dataclasses.replace(cfg, v_x_max=float(v))
        reports[v] = run_eval(policy, c, out, course=course,
                              condition=f"speed_{v:g}", log=log)
        if log:
            cts = reports[v].counts()
            log(f"v_x_max={v:g}: success {cts['success']} crash {cts['crash']} "
                f"timeout {cts['timeout']} oob {cts['out_of_bounds']}")
    rows = [[v, r.counts()["success"], r.counts()["crash"],
             r.counts()["timeout"], r.counts()["out_of_bounds"],
             f"{r.mean('time_to_goal', success_only=True):.3f}",
             f"{r.mean('mean_yaw_jerk'):.6f}"] for v, r in reports.items()]
    _write_csv(out / "speed_sweep.csv", cfg.config_hash(),
               ["v_x_max", "success", "crash", "timeout", "out_of_bounds",
                "time_to_goal_mean", "mean_yaw_jerk"], rows)
    plots.speed_sweep({v: r for v, r in reports.items()},
                      out / "speed_sweep.svg", cfg.config_hash())
    return reports


def run_reward_ablation(cfg: RunConfig, ae: DepthAutoencoder, out_dir,
                        arms=("omega_mag", "accel", "yaw_jerk"),
                        baseline_policy: PolicyNet | None = None,
                        pool: PrivilegedPool | None = None,
                        course: str = "auto", log=None) -> dict:
    """Train paired-seed arms with one shaping term removed each.

    Arm configs differ from the baseline only in drop_reward_term; budgets
    and seeds are identical. Returns {arm_name: (config, EvalReport)}.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results = {}
    base_cfg = dataclasses.replace(cfg, drop_reward_term="")
    if baseline_policy is None:
        baseline_policy, _ = run_training(base_cfg, ae, out / "arm_baseline",
                                          pool=pool, log=log)
    results["baseline"] = (base_cfg, run_eval(
        baseline_policy, base_cfg, out, course=course, condition="baseline",
        log=log))
    for arm in arms:
        arm_cfg = dataclasses.replace(cfg, drop_reward_term=arm)
        policy, _ = run_training(arm_cfg, ae, out / f"arm_no_{arm}",
                                 pool=pool, log=log)
        results[f"no_{arm}"] = (arm_cfg, run_eval(
            policy, arm_cfg, out, course=course, condition=f"no_{arm}", log=log))
        if log:
            log(f"arm no_{arm}: jerk {results[f'no_{arm}'][1].mean('mean_yaw_jerk'):.4f} "
                f"vs baseline {results['baseline'][1].mean('mean_yaw_jerk'):.4f}")
    rows = [[name, f"{rep.mean('mean_yaw_jerk'):.6f}",
             f"{rep.success_rate():.4f}"] for name, (_, rep) in results.items()]
    _write_csv(out / "reward_ablation.csv", cfg.config_hash(),
               ["arm", "mean_yaw_jerk", "success_rate"], rows)
    plots.jerk_distributions(
        {name: [r.mean_yaw_jerk for r in rep.records]
         for name, (_, rep) in results.items()},
        out / "reward_ablation.svg", cfg.config_hash())
    return results


def run_stage_ablation(cfg: RunConfig, ae: DepthAutoencoder, out_dir,
                       pool: PrivilegedPool | None = None, course: str = "regions",
                       eval_fraction_checkpoints=(0.25, 1.0), log=None) -> dict:
    """Hybrid vs privileged-only vs curriculum-only under equal budgets.

    Each arm is evaluated at the requested fractions of its budget using
    the checkpoints written during training.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    total = cfg.privileged_iterations + cfg.finetune_iterations
    every = max(int(round(total * min(eval_fraction_checkpoints))), 1)
    results = {}
    for mode in ("privileged", "curriculum", "hybrid"):
        arm_cfg = dataclasses.replace(
            cfg, stage_mode=mode,
            ppo=dataclasses.replace(cfg.ppo, checkpoint_every=every))
        arm_dir = out / f"arm_{mode}"
        policy, rows = run_training(arm_cfg, ae, arm_dir, pool=pool, log=log)
        evals = {}
        for frac in eval_fraction_checkpoints:
            ck_policy = _checkpoint_at_fraction(arm_dir, total, frac,
                                                cfg.privileged_iterations)
            report = run_eval(ck_policy if ck_policy is not None else policy,
                              arm_cfg, out, course=course,
                              condition=f"{mode}_at_{int(frac * 100)}", log=log)
            evals[frac] = report
        results[mode] = {"config": arm_cfg, "rows": rows, "evals": evals}
    rows_out = []
    for mode, res in results.items():
        for frac, rep in res["evals"].items():
            rows_out.append([mode, frac, f"{rep.success_rate():.4f}",
                             f"{rep.mean('time_to_goal', success_only=True):.3f}",
                             f"{rep.mean('mean_yaw_jerk'):.6f}"])
    _write_csv(out / "stage_ablation.csv", cfg.config_hash(),
               ["arm", "budget_fraction", "success_rate", "time_to_goal_mean",
                "mean_yaw_jerk"], rows_out)
    plots.stage_ablation(results, out / "stage_ablation.svg", cfg.config_hash())
    return results


def _checkpoint_at_fraction(arm_dir, total_iters, frac, priv_iters):
    """Load the checkpoint closest to frac of the arm's total budget."""
    target = int(round(total_iters * frac))
    best = None
    for p in sorted(Path(arm_dir).glob("policy_*.anrl")):
        it = int(p.stem.split("_")[-1])
        stage = p.stem.split("_")[-2]
        # hybrid fine-tune checkpoints count on top of the privileged stage
        if stage == "finetune" and (Path(arm_dir) / "metrics_privileged.csv").exists():
            it += priv_iters
        if best is None or abs(it - target) < abs(best[0] - target):
            best = (it, p)
    if best is None:
        return None
    policy, _ = load_policy(best[1])
    return policy


def sweep_generalization(policy: PolicyNet, cfg: RunConfig, scales, densities,
                         out_dir, course: str = "pillars", log=None) -> dict:
    """Frozen-policy evaluation over the drone-scale x obstacle-density grid."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid = {}
    for s in scales:
        for d in densities:
            c = dataclasses.replace(cfg, drone_scale=float(s), density=float(d))
            rep = run_eval(policy, c, out, course=course,
                           condition=f"scale_{s:g}_density_{d:g}", log=log)
            grid[(s, d)] = rep
            if log:
                log(f"scale {s:g} density {d:g}: success {rep.success_rate():.3f} "
                    f"jerk {rep.mean('mean_yaw_jerk'):.4f}")
    rows = [[s, d, f"{rep.success_rate():.4f}",
             f"{rep.mean('mean_yaw_jerk'):.6f}",
             f"{rep.mean('time_to_goal', success_only=True):.3f}"]
            for (s, d), rep in grid.items()]
    _write_csv(out / "generalization_grid.csv", cfg.config_hash(),
               ["scale", "density", "success_rate", "mean_yaw_jerk",
                "time_to_goal_mean"], rows)
    plots.generalization_grid(grid, scales, densities,
                              out / "generalization_grid.svg", cfg.config_hash())
    return grid


def _write_csv(path, config_hash, header, rows):
    import csv

    with open(path, "w", newline="") as f:
        f.write(f"# config_hash={config_hash}\n")
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)
