"""Report figures. CSVs are the ground-truth artifact; every figure embeds
the run's config hash so plots can be traced to their settings."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _finish(fig, path, config_hash):
    fig.text(0.99, 0.01, f"config {config_hash}", ha="right", va="bottom",
             fontsize=6, color="0.6")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def training_curves(rows_by_stage: dict, path, config_hash: str) -> None:
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.2))
    offset = 0
    for stage, rows in rows_by_stage.items():
        its = [offset + int(r[0]) for r in rows]
        axes[0].plot(its, [float(r[3]) for r in rows], label=stage)
        axes[1].plot(its, [float(r[4]) for r in rows], label=stage)
        axes[2].plot(its, [float(r[6]) for r in rows], label=stage)
        offset = its[-1] if its else offset
    axes[0].set_ylabel("success rate")
    axes[1].set_ylabel("mean episode reward")
    axes[2].set_ylabel("mean |yaw jerk| (rad/s^3)")
    for ax in axes:
        ax.set_xlabel("iteration")
        ax.grid(alpha=0.3)
    axes[0].legend(fontsize=8)
    _finish(fig, path, config_hash)


def speed_sweep(reports: dict, path, config_hash: str) -> None:
    speeds = sorted(reports)
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3.2))
    ax1.plot(speeds, [reports[v].success_rate() for v in speeds], "o-")
    ax1.set_xlabel("v_x_max (m/s)")
    ax1.set_ylabel("success rate")
    ax1.set_ylim(0, 1.02)
    ax1.grid(alpha=0.3)
    counts = np.array([[reports[v].counts()[k] for v in speeds]
                       for k in ("crash", "timeout", "out_of_bounds")])
    bottom = np.zeros(len(speeds))
    for row, label in zip(counts, ("crash", "timeout", "out of bounds")):
        ax2.bar(speeds, row, bottom=bottom, label=label, width=0.5)
        bottom += row
    ax2.set_xlabel("v_x_max (m/s)")
    ax2.set_ylabel("failure count")
    ax2.legend(fontsize=8)
    _finish(fig, path, config_hash)


def jerk_distributions(jerks_by_arm: dict, path, config_hash: str) -> None:
    fig, ax = plt.subplots(figsize=(6, 3.4))
    names = list(jerks_by_arm)
    data = [jerks_by_arm[n] for n in names]
    ax.boxplot(data, tick_labels=names, showfliers=False)
    ax.set_ylabel("mean |yaw jerk| per run (rad/s^3)")
    ax.grid(alpha=0.3, axis="y")
    _finish(fig, path, config_hash)


def stage_ablation(results: dict, path, config_hash: str) -> None:
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4))
    for mode, res in results.items():
        offset = 0
        its, succ = [], []
        for rows in ([res["rows"][k] for k in res["rows"]]
                     if isinstance(res["rows"], dict) else [res["rows"]]):
            for r in rows:
                its.append(offset + int(r[0]))
                succ.append(float(r[3]))
            offset = its[-1] if its else 0
        ax1.plot(its, succ, label=mode)
    ax1.set_xlabel("training iteration")
    ax1.set_ylabel("rollout success rate")
    ax1.legend(fontsize=8)
    ax1.grid(alpha=0.3)
    modes = list(results)
    ttg = []
    for mode in modes:
        evals = results[mode]["evals"]
        full = evals[max(evals)]
        vals = [r.time_to_goal for r in full.records if r.outcome == "success"]
        ttg.append(vals if vals else [float("nan")])
    ax2.boxplot(ttg, tick_labels=modes, showfliers=False)
    ax2.set_ylabel("time to goal (s)")
    ax2.grid(alpha=0.3, axis="y")
    _finish(fig, path, config_hash)


def generalization_grid(grid: dict, scales, densities, path,
                        config_hash: str) -> None:
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4))
    mat = np.array([[grid[(s, d)].success_rate() for d in densities]
                    for s in scales])
    im = ax1.imshow(mat, vmin=0.0, vmax=1.0, cmap="viridis", aspect="auto")
    ax1.set_xticks(range(len(densities)), [f"{d:g}" for d in densities])
    ax1.set_yticks(range(len(scales)), [f"{s:g}" for s in scales])
    ax1.set_xlabel("obstacle density")
    ax1.set_ylabel("drone scale")
    for i in range(len(scales)):
        for j in range(len(densities)):
            ax1.text(j, i, f"{mat[i, j]:.2f}", ha="center", va="center",
                     fontsize=7, color="w")
    fig.colorbar(im, ax=ax1, label="success rate")
    jerks = [[r.mean_yaw_jerk for d in densities
              for r in grid[(s, d)].records] for s in scales]
    ax2.boxplot(jerks, tick_labels=[f"{s:g}" for s in scales], showfliers=False)
    ax2.set_xlabel("drone scale")
    ax2.set_ylabel("mean |yaw jerk| per run")
    ax2.grid(alpha=0.3, axis="y")
    _finish(fig, path, config_hash)


def depth_preview(img: np.ndarray, path, config_hash: str = "") -> None:
    fig, ax = plt.subplots(figsize=(5, 3))
    im = ax.imshow(img, cmap="magma")
    fig.colorbar(im, ax=ax, label="depth (m)")
    ax.set_xticks([])
    ax.set_yticks([])
    _finish(fig, path, config_hash)
