"""Parameter sharing, FLOPs and latency of the unified model versus single-task clones."""
from __future__ import annotations

import json
import statistics
import time
from dataclasses import replace as dc_replace
from pathlib import Path

import torch
from torch.utils.flop_counter import FlopCounterMode

from .data.dataset import BatchSpec
from .model import IMAGE_TASKS, TASKS, VIDEO_TASKS, ModelConfig, build_model, count_parameters, parameter_table

# parameter reduction the reference model reports for its unified design
REFERENCE_REDUCTION = 0.6340


def _inputs(cfg: ModelConfig, frame_count):
    H, W = cfg.encoder.input_size
    return torch.zeros(1, 1, H, W, 3), torch.zeros(1, frame_count, H, W, 3)


def _forwards(model, tasks, image, video):
    calls = []
    if set(tasks) & set(IMAGE_TASKS):
        calls.append(lambda: model.forward_image(image))
    if set(tasks) & set(VIDEO_TASKS):
        calls.append(lambda: model.forward_video(video))
    return calls


def count_flops(model, tasks, image, video):
    """FLOPs of one forward per needed modality (one image plus one clip), from op shapes.

    Runs with autograd on: the counter's module tracker cannot hook views of
    parameters created under ``no_grad``.
    """
    counter = FlopCounterMode(display=False)
    with torch.enable_grad(), counter:
        for call in _forwards(model, tasks, image, video):
            call()
    return int(counter.get_total_flops())


@torch.no_grad()
def measure_latency(model, tasks, image, video, runs=20, warmup=3):
    """Median wall-clock seconds of the forward passes over ``runs`` timed repetitions."""
    calls = _forwards(model, tasks, image, video)
    for _ in range(warmup):
        for call in calls:
            call()
    times = []
    for _ in range(runs):
        t0 = time.perf_counter()
        for call in calls:
            call()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def _profile(cfg, tasks, image, video, runs, warmup, seed):
    model = build_model(dc_replace(cfg, tasks=tuple(tasks)), seed).eval()
    return model, {
        "tasks": list(model.tasks),
        "params": count_parameters(model),
        "namespaces": parameter_table(model),
        "flops": count_flops(model, model.tasks, image, video),
        "latency_s": measure_latency(model, model.tasks, image, video, runs, warmup) if runs else None,
    }


def efficiency_report(cfg: ModelConfig, batch: BatchSpec | None = None, runs=20, warmup=3, seed=0):
    """Unified all-task model against four independently instantiated single-task models.

    The sharing ratio is unified params / sum of clone params; the reduction
    is one minus that ratio and is reported next to REFERENCE_REDUCTION.
    """
    batch = batch or BatchSpec()
    image, video = _inputs(cfg, batch.frame_count)
    _, unified = _profile(cfg, TASKS, image, video, runs, warmup, seed)
    clones = {t: _profile(cfg, (t,), image, video, runs, warmup, seed)[1] for t in TASKS}
    clone_params = sum(c["params"] for c in clones.values())
    ratio = unified["params"] / clone_params
    shared = unified["namespaces"]["encoder"] + unified["namespaces"]["interaction"]
    report = {
        "unified": unified,
        "clones": clones,
        "sum_clone_params": clone_params,
        "sum_clone_flops": sum(c["flops"] for c in clones.values()),
        "sum_clone_latency_s": (sum(c["latency_s"] for c in clones.values()) if runs else None),
        "shared_params": shared,
        "sharing_ratio": ratio,
        "param_reduction": 1.0 - ratio,
        "reference_reduction": REFERENCE_REDUCTION,
        "flop_reduction": 1.0 - unified["flops"] / sum(c["flops"] for c in clones.values()),
    }
    if runs:
        report["latency_reduction"] = 1.0 - unified["latency_s"] / report["sum_clone_latency_s"]
    return report


def write_efficiency(report, out_dir):
    from .plots import plot_efficiency

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "efficiency.json").write_text(json.dumps(report, indent=2))
    rows = [("unified(all)", report["unified"])] + [(f"single({t})", c) for t, c in report["clones"].items()]
    lines = ["model\tparams\tflops\tlatency_ms"]
    for name, r in rows:
        lat = "" if r["latency_s"] is None else f"{1000 * r['latency_s']:.3f}"
        lines.append(f"{name}\t{r['params']}\t{r['flops']}\t{lat}")
    lat = report["sum_clone_latency_s"]
    lines.append(f"sum(single)\t{report['sum_clone_params']}\t{report['sum_clone_flops']}\t"
                 + ("" if lat is None else f"{1000 * lat:.3f}"))
    lines += ["", "quantity\tvalue",
              f"sharing_ratio\t{report['sharing_ratio']:.6f}",
              f"param_reduction\t{report['param_reduction']:.6f}",
              f"reference_reduction\t{report['reference_reduction']:.4f}",
              f"flop_reduction\t{report['flop_reduction']:.6f}"]
    if "latency_reduction" in report:
        lines.append(f"latency_reduction\t{report['latency_reduction']:.6f}")
    lines += ["", "namespace\tparams"]
    lines += [f"{k}\t{v}" for k, v in report["unified"]["namespaces"].items()]
    (out_dir / "efficiency.tsv").write_text("\n".join(lines) + "\n")
    plot_efficiency(report, out_dir / "efficiency.png")
    return out_dir / "efficiency.tsv"
