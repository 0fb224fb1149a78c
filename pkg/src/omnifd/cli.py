"""Command-line entry point: ``omnifd <verb> [options]``.

Configuration precedence is defaults < ``--config`` file < flags, where
``--set section.key=value`` reaches any field. Failures print one JSON error
record to stderr and exit nonzero.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ExperimentConfig, apply_overrides, load_config, save_config
from .errors import OmniFDError

log = logging.getLogger("omnifd")


def _config_flags(p):
    p.add_argument("--config", help="JSON or YAML experiment config")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config field, e.g. optim.lr=3e-4 (repeatable)")
    p.add_argument("--tasks", help="task set, e.g. 'Video+Image' or 'all'")
    p.add_argument("--steps", type=int, help="total training steps")
    p.add_argument("--seed", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--data-root", help="benchmark directory written by generate-data")


def build_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    overrides = list(getattr(args, "set", []) or [])
    for flag, key in (("tasks", "model.tasks"), ("steps", "total_steps"), ("seed", "seed"),
                      ("lr", "optim.lr"), ("data_root", "data_root")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append(f"{key}={json.dumps(value)}")
    return apply_overrides(cfg, overrides)


def _split(cfg, args):
    from .train import load_data

    data = load_data(cfg)
    if args.split not in data:
        raise KeyError(f"split {args.split!r} not found; have {sorted(data)}")
    return data[args.split]


def cmd_generate_data(args):
    from .data.dataset import pixel_difference_oracle, write_benchmark

    cfg = build_config(args)
    out = Path(args.out)
    splits = write_benchmark(cfg.data, out)
    summary = {name: {"images": d.n_images, "videos": d.n_videos} for name, d in splits.items()}
    if args.check:
        summary["pixel_difference_oracle_val"] = pixel_difference_oracle(splits["val"])
    print(json.dumps(summary))


def cmd_train(args):
    from .plots import plot_loss_curve
    from .train import train

    cfg = build_config(args)
    run_dir = Path(args.run_dir)
    trainer = train(cfg, run_dir=run_dir, resume=args.resume)
    with open(run_dir / "train_log.jsonl") as fh:
        rows = [json.loads(line) for line in fh]
    plot_loss_curve(rows, run_dir / "loss.png")
    print(json.dumps({"run_dir": str(run_dir), "step": trainer.step_count,
                      "final_loss": rows[-1]["total"] if rows else None}))


def cmd_evaluate(args):
    from .evaluate import evaluate
    from .model import parse_tasks
    from .train import load_checkpoint, model_from_checkpoint

    model, cfg = model_from_checkpoint(load_checkpoint(args.checkpoint))
    if args.data_root:
        cfg = apply_overrides(cfg, [f"data_root={json.dumps(args.data_root)}"])
    tasks = parse_tasks(args.tasks) if args.tasks else model.tasks
    data = _split(cfg, args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.json")
    reports = evaluate(model, data, cfg.batch, tasks, cfg.decode, out, cfg.eval_batch_size)
    for r in reports:
        print(json.dumps(r.to_record()))


def cmd_ablate(args):
    from .ablation import ablate_tasks

    cfg = build_config(args)
    out = Path(args.run_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.json")
    result = ablate_tasks(cfg, args.subsets, args.seeds, out_dir=out)
    print((out / "ablation.tsv").read_text(), end="")
    return result


def cmd_efficiency(args):
    from .efficiency import efficiency_report, write_efficiency

    cfg = build_config(args)
    out = Path(args.run_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.json")
    report = efficiency_report(cfg.model, cfg.batch, runs=args.runs, warmup=args.warmup, seed=cfg.seed)
    print(write_efficiency(report, out).read_text(), end="")


def cmd_export_attention(args):
    from .attention import export_attention
    from .train import load_checkpoint, model_from_checkpoint

    model, cfg = model_from_checkpoint(load_checkpoint(args.checkpoint))
    if args.data_root:
        cfg = apply_overrides(cfg, [f"data_root={json.dumps(args.data_root)}"])
    data = _split(cfg, args)
    samples = args.samples or [data.records[0].sample_id]
    meta = export_attention(model, data, samples, args.out, args.queries, args.level, cfg.batch)
    print(json.dumps({"out": args.out, "maps": len(meta)}))


def build_parser():
    parser = argparse.ArgumentParser(prog="omnifd", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("generate-data", help="write the synthetic benchmark")
    _config_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--check", action="store_true", help="also run the pixel-difference oracle")
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("train", help="train one model")
    _config_flags(p)
    p.add_argument("--run-dir", required=True)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint and dump predictions")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--data-root")
    p.add_argument("--split", default="val")
    p.add_argument("--tasks")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="task-combination ablation over seeds")
    _config_flags(p)
    p.add_argument("--run-dir", required=True)
    p.add_argument("--subsets", nargs="+", default=["Video", "Video+Image"])
    p.add_argument("--seeds", nargs="+", type=int, default=[0, 1, 2])
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("efficiency", help="parameters, FLOPs and latency versus single-task models")
    _config_flags(p)
    p.add_argument("--run-dir", required=True)
    p.add_argument("--runs", type=int, default=20)
    p.add_argument("--warmup", type=int, default=3)
    p.set_defaults(func=cmd_efficiency)

    p = sub.add_parser("export-attention", help="per-query attention heatmaps")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--data-root")
    p.add_argument("--split", default="val")
    p.add_argument("--samples", nargs="*")
    p.add_argument("--queries", nargs="+", type=int, default=[0])
    p.add_argument("--level", type=int, default=0)
    p.set_defaults(func=cmd_export_attention)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        args.func(args)
    except OmniFDError as exc:
        print(json.dumps({**exc.to_record(), "verb": args.verb}), file=sys.stderr)
        return 2
    except (KeyError, ValueError, FileNotFoundError, IndexError, RuntimeError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "verb": args.verb}),
              file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
