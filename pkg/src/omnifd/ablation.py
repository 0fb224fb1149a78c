"""Task-combination ablation: one model per (task subset, seed), summarized as mean and std."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, replace
from .model import parse_tasks, task_set_label
from .train import load_data, train

log = logging.getLogger(__name__)

# rows of the task-combination table, in display order
TABLE_ROWS = ("Video", "Temporal", "Image", "Spatial", "Video+Temporal", "Image+Spatial",
              "Video+Image", "All")


@dataclass
class AblationResult:
    runs: list = field(default_factory=list)  # one dict per (subset, seed, task, metric)
    seconds: dict = field(default_factory=dict)  # wall time per (subset, seed)

    def summary(self):
        """{subset: {(task, metric): (mean, std, n)}} with population std over seeds."""
        grouped = {}
        for r in self.runs:
            grouped.setdefault(r["subset"], {}).setdefault((r["task"], r["metric"]), []).append(r["value"])
        return {s: {k: (float(np.mean(v)), float(np.std(v)), len(v)) for k, v in d.items()}
                for s, d in grouped.items()}

    def mean(self, subset, task, metric):
        return self.summary()[subset][(task, metric)][0]

    def table(self):
        """Rows of the comparison table: subset, task, metric, mean, std, n_seeds, mean±std."""
        rows = []
        for subset, d in self.summary().items():
            for (task, metric), (m, s, n) in sorted(d.items()):
                rows.append({"subset": subset, "task": task, "metric": metric, "mean": m, "std": s,
                             "n_seeds": n, "display": f"{100 * m:.2f}±{100 * s:.2f}"})
        return rows


def ablate_tasks(base: ExperimentConfig, subsets, seeds=(0,), data=None, out_dir=None, steps=None):
    """Train and evaluate one model per (subset, seed) on the validation split.

    Each run evaluates its final weights. With ``out_dir`` every run keeps its
    own run directory and the table is written as TSV plus a bar chart.
    """
    subsets = [parse_tasks(s) for s in subsets]
    if len(subsets) < 1:
        raise ValueError("need at least one task subset")
    data = data if data is not None else load_data(base)
    out_dir = Path(out_dir) if out_dir else None
    result = AblationResult()
    for tasks in subsets:
        label = task_set_label(tasks)
        for seed in seeds:
            cfg = replace(base, seed=int(seed), model={"tasks": list(tasks)})
            if steps is not None:
                cfg = replace(cfg, total_steps=int(steps))
            run_dir = out_dir / "runs" / label.replace("+", "_") / f"seed{seed}" if out_dir else None
            t0 = time.perf_counter()
            trainer = train(cfg, data, run_dir=run_dir, evaluate_at_end=False)
            reports = trainer.evaluate()
            result.seconds[(label, int(seed))] = time.perf_counter() - t0
            log.info("%s seed %s done in %.0fs", label, seed, result.seconds[(label, int(seed))])
            for r in reports:
                result.runs.append({"subset": label, "seed": int(seed), "task": r.task,
                                    "metric": r.metric, "value": r.value})
    if out_dir:
        write_ablation(result, out_dir)
    return result


def write_ablation(result: AblationResult, out_dir):
    from .plots import plot_ablation

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "runs.jsonl", "w") as fh:
        for r in result.runs:
            fh.write(json.dumps(r) + "\n")
    lines = ["subset\ttask\tmetric\tmean\tstd\tn_seeds\tmean±std (%)"]
    for r in result.table():
        lines.append(f"{r['subset']}\t{r['task']}\t{r['metric']}\t{r['mean']:.6f}\t{r['std']:.6f}"
                     f"\t{r['n_seeds']}\t{r['display']}")
    (out_dir / "ablation.tsv").write_text("\n".join(lines) + "\n")
    plot_ablation(result, out_dir / "ablation.png")
    return out_dir / "ablation.tsv"
