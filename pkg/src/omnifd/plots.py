"""Matplotlib figures for training curves, ablations, efficiency and attention."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evaluate import PRIMARY_METRIC  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_loss_curve(rows, path, smooth=25):
    """Per-component losses from training-log rows with a moving-average overlay on the total."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    steps = np.array([r["step"] for r in rows])
    for key in ("l_img", "l_sp", "l_vid", "l_tmp"):
        if any(r["present"].get(key) for r in rows):
            ax.plot(steps, [r[key] for r in rows], lw=0.6, alpha=0.6, label=key)
    total = np.array([r["total"] for r in rows])
    if len(total) >= smooth:
        kernel = np.ones(smooth) / smooth
        ax.plot(steps[smooth - 1:], np.convolve(total, kernel, mode="valid"), color="k", lw=1.5,
                label=f"total ({smooth}-step mean)")
    else:
        ax.plot(steps, total, color="k", lw=1.5, label="total")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend(fontsize=7)
    return _save(fig, path)


def plot_ablation(result, path):
    """Bars of each subset's primary metrics, with std over seeds as error bars."""
    summary = result.summary()
    subsets = list(summary)
    keys = sorted({k for d in summary.values() for k in d if PRIMARY_METRIC.get(k[0]) == k[1]})
    fig, ax = plt.subplots(figsize=(max(5, 1.2 * len(subsets)), 3.5))
    width = 0.8 / max(1, len(keys))
    for i, key in enumerate(keys):
        xs, ms, ss = [], [], []
        for j, s in enumerate(subsets):
            if key in summary[s]:
                m, sd, _ = summary[s][key]
                xs.append(j + i * width)
                ms.append(100 * m)
                ss.append(100 * sd)
        ax.bar(xs, ms, width, yerr=ss, capsize=3, label=f"{key[0]} {key[1]}")
    ax.set_xticks(np.arange(len(subsets)) + width * (len(keys) - 1) / 2)
    ax.set_xticklabels(subsets, rotation=20, fontsize=8)
    ax.set_ylabel("score (%)")
    ax.legend(fontsize=7)
    return _save(fig, path)


def plot_efficiency(report, path):
    names = ["unified"] + [f"single\n{t}" for t in report["clones"]]
    params = [report["unified"]["params"]] + [c["params"] for c in report["clones"].values()]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(names, np.array(params) / 1e6)
    ax.axhline(report["sum_clone_params"] / 1e6, color="r", ls="--", lw=1, label="sum of single-task")
    ax.set_ylabel("parameters (M)")
    ax.set_title(f"parameter reduction {100 * report['param_reduction']:.2f}%", fontsize=9)
    ax.legend(fontsize=7)
    return _save(fig, path)


def plot_attention_overlay(frame, heat, path, title=None):
    fig, ax = plt.subplots(figsize=(3, 3))
    ax.imshow(frame)
    ax.imshow(heat, cmap="jet", alpha=0.5)
    ax.axis("off")
    if title:
        ax.set_title(title, fontsize=7)
    return _save(fig, path)
