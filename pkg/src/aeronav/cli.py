"""Command-line entry points.

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
AERONAV_WORKERS overrides the environment-stepping worker count.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import envgen, harness, plots
from .autoencoder import DepthAutoencoder, load_autoencoder, pretrain, \
    save_autoencoder, synthesize_dataset
from .camera import CameraModel, render, write_pgm
from .core import DroneState, Vec3, load_environment, save_environment
from .planner import plan, save_trajectory_csv, voxelize
from .ppo import ConfigError, load_policy
from .rlenv import worker_count


def _log(msg: str) -> None:
    print(msg, flush=True)


def _load_config(args) -> config_mod.RunConfig:
    cfg = (config_mod.from_toml(args.config) if args.config
           else config_mod.RunConfig())
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _ensure_out(args) -> Path:
    out = Path(args.out or "runs/latest")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_pretrain_ae(args) -> int:
    cfg = _load_config(args)
    if args.epochs is not None:
        cfg = dataclasses.replace(cfg, ae_epochs=args.epochs)
    if args.lr is not None:
        cfg = dataclasses.replace(cfg, ae_lr=args.lr)
    out = _ensure_out(args)
    rng = np.random.default_rng([cfg.seed, 11])
    _log(f"synthesizing {cfg.ae_dataset_n} frames")
    ds = synthesize_dataset(cfg.ae_dataset_n, rng)
    if args.cache:
        from .autoencoder import save_dataset

        save_dataset(ds, args.cache)
        _log(f"dataset cached to {args.cache}")
    ae = DepthAutoencoder(channels=cfg.ae_channels)
    losses = pretrain(ae, ds, epochs=cfg.ae_epochs, lr=cfg.ae_lr,
                      seed=cfg.seed, noise_sigma=cfg.ae_sigma,
                      stop_at_val=cfg.ae_stop_at_val, log=_log)
    path = out / "autoencoder.anrl"
    save_autoencoder(path, ae, meta={"config_hash": cfg.config_hash(),
                                     "val_losses": losses})
    _log(f"encoder saved to {path} (final val mse {losses[-1]:.6f})")
    return 0


def cmd_gen(args) -> int:
    cfg = _load_config(args)
    out = _ensure_out(args)
    rng = np.random.default_rng(cfg.seed)
    specs = {
        "privileged": envgen.privileged_spec(),
        "region1": envgen.region1_spec(),
        "region2": envgen.region2_spec(),
        "region3": envgen.region3_spec(),
    }
    for k in range(args.count):
        if args.kind == "curriculum":
            env = envgen.sample_curriculum(envgen.CurriculumSchedule(),
                                           args.progress, rng)
        else:
            spec = envgen.densify(specs[args.kind], cfg.density)
            env = envgen.gen_region(spec, rng)
        path = out / f"env_{k:04d}.json"
        save_environment(env, path)
        _log(f"wrote {path} ({len(env.obstacles)} obstacles)")
    return 0


def cmd_plan(args) -> int:
    cfg = _load_config(args)
    out = _ensure_out(args)
    env = load_environment(args.env)
    grid = voxelize(env)
    traj = plan(grid, env.start, env.goal, v_max=cfg.v_x_max + 1.0,
                rho_time=args.rho_time)
    path = out / (Path(args.env).stem + "_traj.csv")
    save_trajectory_csv(traj, path)
    _log(f"planned {traj.total_time:.2f}s / {len(traj)} samples -> {path}")
    return 0


def _get_encoder(args, cfg, out) -> DepthAutoencoder:
    if args.encoder:
        return load_autoencoder(args.encoder)
    path = out / "autoencoder.anrl"
    if path.exists():
        _log(f"reusing encoder {path}")
        return load_autoencoder(path)
    _log("pretraining encoder (pass --encoder to reuse one)")
    return harness.pretrain_encoder(cfg, out_path=path, log=_log)


def _get_pool(cfg, out, needed: bool):
    if not needed or cfg.toy_task:
        return None
    pool_dir = out / "pool"
    if (pool_dir / "manifest.json").exists():
        pool = harness.PrivilegedPool.load(pool_dir)
        if len(pool) >= cfg.pool_size:
            _log(f"reusing pool of {len(pool)} planned environments")
            return pool
    _log(f"planning privileged pool of {cfg.pool_size} environments")
    pool = harness.PrivilegedPool.build(cfg.pool_size, cfg.seed,
                                        v_max=cfg.v_x_max + 1.0, log=_log)
    pool.save(pool_dir)
    return pool


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = _ensure_out(args)
    with open(out / "run_config.json", "w") as f:
        json.dump({"hash": cfg.config_hash(), **cfg.to_dict()}, f, indent=2)
    ae = _get_encoder(args, cfg, out)
    pool = _get_pool(cfg, out, needed=cfg.stage_mode in ("hybrid", "privileged"))
    _log(f"training stage_mode={cfg.stage_mode} hash={cfg.config_hash()} "
         f"workers={worker_count()}")
    harness.run_training(cfg, ae, out, pool=pool, log=_log)
    _log(f"final policy at {out / 'policy_final.anrl'}")
    return 0


def cmd_finetune(args) -> int:
    cfg = _load_config(args)
    out = _ensure_out(args)
    policy, meta = load_policy(args.init)
    builder = harness.make_vecenv_builder(cfg, policy.perception, None)
    from .ppo import STAGE_FINETUNE, train_stage

    stage_cfg = dataclasses.replace(cfg.ppo,
                                    total_iterations=cfg.finetune_iterations)
    policy, _ = train_stage(STAGE_FINETUNE, policy, stage_cfg, builder,
                            cfg.seed, metrics_path=out / "metrics_finetune.csv",
                            checkpoint_dir=out, log=_log,
                            meta={"config_hash": cfg.config_hash()})
    from .ppo import save_policy

    save_policy(out / "policy_final.anrl", policy,
                meta={"config_hash": cfg.config_hash()})
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    out = _ensure_out(args)
    policy, _meta = load_policy(args.policy)
    report = harness.run_eval(policy, cfg, out, course=args.course,
                              n_runs=args.runs, trace_path=args.trace,
                              log=_log)
    counts = report.counts()
    _log(f"success {counts['success']} crash {counts['crash']} "
         f"timeout {counts['timeout']} oob {counts['out_of_bounds']} "
         f"(rate {report.success_rate():.3f})")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    out = _ensure_out(args)
    ae = _get_encoder(args, cfg, out)
    if args.kind == "reward":
        pool = _get_pool(cfg, out, needed=cfg.stage_mode in ("hybrid", "privileged"))
        harness.run_reward_ablation(cfg, ae, out, pool=pool, log=_log)
    else:
        pool = _get_pool(cfg, out, needed=True)
        harness.run_stage_ablation(cfg, ae, out, pool=pool, log=_log)
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    out = _ensure_out(args)
    policy, _meta = load_policy(args.policy)
    if args.speeds:
        speeds = [float(v) for v in args.speeds.split(",")]
        harness.run_speed_sweep(policy, cfg, speeds, out, course=args.course,
                                log=_log)
        return 0
    scales = [float(v) for v in args.scales.split(",")]
    densities = [float(v) for v in args.densities.split(",")]
    harness.sweep_generalization(policy, cfg, scales, densities, out,
                                 course=args.course, log=_log)
    return 0


def cmd_render(args) -> int:
    _load_config(args)
    out = _ensure_out(args)
    env = load_environment(args.env)
    x, y, z, yaw = (float(v) for v in args.pose.split(","))
    pose = DroneState(position=Vec3(x, y, z), velocity=Vec3(0, 0, 0),
                      yaw=yaw, body_rates=Vec3(0, 0, 0))
    img = render(pose, env, CameraModel())
    pgm = out / "depth.pgm"
    write_pgm(img, pgm)
    plots.depth_preview(img, out / "depth.svg")
    _log(f"wrote {pgm} and {out / 'depth.svg'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aeronav",
                                description="depth-vision quadrotor navigation")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="TOML run configuration")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", help="output directory")

    sp = sub.add_parser("pretrain-ae", help="train the depth autoencoder")
    common(sp)
    sp.add_argument("--epochs", type=int, default=None)
    sp.add_argument("--lr", type=float, default=None)
    sp.add_argument("--cache", help="write the synthetic dataset cache here")
    sp.set_defaults(func=cmd_pretrain_ae)

    sp = sub.add_parser("gen", help="generate environments")
    common(sp)
    sp.add_argument("--kind", default="privileged",
                    choices=["privileged", "region1", "region2", "region3",
                             "curriculum"])
    sp.add_argument("--count", type=int, default=1)
    sp.add_argument("--progress", type=float, default=1.0)
    sp.set_defaults(func=cmd_gen)

    sp = sub.add_parser("plan", help="plan a trajectory for an environment")
    common(sp)
    sp.add_argument("--env", required=True)
    sp.add_argument("--rho-time", type=float, default=10.0)
    sp.set_defaults(func=cmd_plan)

    sp = sub.add_parser("train", help="run the training pipeline")
    common(sp)
    sp.add_argument("--encoder", help="autoencoder checkpoint to reuse")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("finetune", help="curriculum fine-tuning only")
    common(sp)
    sp.add_argument("--init", required=True, help="stage-1 policy checkpoint")
    sp.set_defaults(func=cmd_finetune)

    sp = sub.add_parser("eval", help="evaluate a policy checkpoint")
    common(sp)
    sp.add_argument("--policy", required=True)
    sp.add_argument("--course", default="auto",
                    choices=["auto", "pillars", "regions", "toy"])
    sp.add_argument("--runs", type=int, default=None)
    sp.add_argument("--trace", help="write per-transition JSONL here")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("ablate", help="reward-term or training-stage ablation")
    common(sp)
    sp.add_argument("--kind", default="reward", choices=["reward", "stage"])
    sp.add_argument("--encoder")
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("sweep", help="speed sweep or scale/density grid")
    common(sp)
    sp.add_argument("--policy", required=True)
    sp.add_argument("--speeds", help="comma list, e.g. 1,2,3")
    sp.add_argument("--scales", default="1,2,4,8")
    sp.add_argument("--densities", default="1")
    sp.add_argument("--course", default="pillars",
                    choices=["auto", "pillars", "regions", "toy"])
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("render", help="dump a depth frame as PGM + SVG")
    common(sp)
    sp.add_argument("--env", required=True)
    sp.add_argument("--pose", default="0,0,2,0", help="x,y,z,yaw")
    sp.set_defaults(func=cmd_render)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 3
    except Exception as e:  # runtime failure contract
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
