"""Command-line front end: train, eval, grid, gen-data, trace, pca.

Every run honors --seed, --config, and --out, and drops a manifest (config
hash, seed, package/numpy versions) alongside whatever it writes. Exit
codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import platform
import sys

import numpy as np

from . import __version__, analysis, evaluation, models, tasks, training


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _build_parser():
    p = _Parser(prog="liemem", description="Lie-access external memory toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True, out_help="output directory"):
        sp.add_argument("--config", help="flat key=value run configuration file")
        sp.add_argument("--seed", type=int, help="run seed")
        sp.add_argument("--out", required=out_required, help=out_help)

    sp = sub.add_parser("train", help="train one model on one task")
    sp.add_argument("--task", required=True, choices=tasks.TASK_NAMES)
    sp.add_argument("--model", required=True, choices=models.MODEL_KINDS)
    sp.add_argument("--weighting", choices=models.WEIGHTINGS)
    common(sp)

    sp = sub.add_parser("eval", help="score a checkpoint on generated instances")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--task", choices=tasks.TASK_NAMES, help="defaults to the checkpoint's task")
    sp.add_argument("--regime", default="2x", choices=("in-sample", "in_sample", "2x"))
    sp.add_argument("--count", type=int, default=3200)
    common(sp, out_required=False, out_help="also write the report JSON here")

    sp = sub.add_parser("grid", help="grid search over config axes and seeds")
    sp.add_argument("--task", required=True, choices=tasks.TASK_NAMES)
    sp.add_argument("--model", required=True, choices=models.MODEL_KINDS)
    sp.add_argument("--weighting", choices=models.WEIGHTINGS)
    sp.add_argument("--seeds", default="1,2,3", help="comma-separated run seeds")
    sp.add_argument("--workers", type=int, help=f"pool size (default ${training.WORKERS_ENV} or 1)")
    common(sp)

    sp = sub.add_parser("gen-data", help="write generated instances to a dataset file")
    sp.add_argument("--task", required=True, choices=tasks.TASK_NAMES)
    sp.add_argument("--count", type=int, required=True)
    sp.add_argument("--regime", default="in-sample", choices=("in-sample", "in_sample", "2x"))
    common(sp, out_help="dataset file path")

    sp = sub.add_parser("trace", help="export memory-access events for one instance")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--task", choices=tasks.TASK_NAMES, help="defaults to the checkpoint's task")
    sp.add_argument("--instance-seed", type=int, default=0)
    sp.add_argument("--regime", default="in-sample", choices=("in-sample", "in_sample", "2x"))
    common(sp, out_help="trace JSONL path")

    sp = sub.add_parser("pca", help="project traced keys onto principal components")
    sp.add_argument("--trace", required=True, help="trace JSONL file")
    sp.add_argument("--dim", type=int, default=1, choices=(1, 2))
    sp.add_argument("--events", default="write", choices=("write", "read", "both"))
    sp.add_argument("--phases", default="both", choices=("encode", "decode", "both"))
    common(sp, out_help="projection JSON path")
    return p


def _regime(arg):
    return "in_sample" if arg in ("in-sample", "in_sample") else "2x"


def _load_flat(args):
    flat = training.load_config_file(args.config) if args.config else {}
    if args.seed is not None:
        flat["train.seed"] = args.seed
    return flat


def _configs(args, flat, kind=None):
    spec = tasks.task_spec(args.task)
    model_over, train_over, task_over, grid = training.split_config(flat)
    if task_over:
        spec = dataclasses.replace(spec, **task_over)
    model_cfg = models.default_config(kind or args.model, vocab=spec.vocab, **model_over)
    if getattr(args, "weighting", None):
        model_cfg = dataclasses.replace(model_cfg, weighting=args.weighting)
    train_cfg = dataclasses.replace(training.TrainConfig(), **train_over)
    if args.seed is not None:
        train_cfg = dataclasses.replace(train_cfg, seed=args.seed)
    return model_cfg, train_cfg, spec, grid


def _write_manifest(out_path, command, flat, seed):
    manifest = {
        "command": command,
        "seed": seed,
        "config_hash": training.config_hash(flat),
        "liemem_version": __version__,
        "numpy_version": np.__version__,
        "python_version": platform.python_version(),
    }
    if os.path.isdir(out_path):
        path = os.path.join(out_path, "manifest.json")
    else:
        path = out_path + ".manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2)
    return path


def _cmd_train(args):
    flat = _load_flat(args)
    model_cfg, train_cfg, spec, _ = _configs(args, flat)
    os.makedirs(args.out, exist_ok=True)
    record, _ = training.run_training(model_cfg, train_cfg, spec, out_dir=args.out)
    with open(os.path.join(args.out, "run.json"), "w") as fh:
        fh.write(record.to_json() + "\n")
    _write_manifest(args.out, "train", record.config, train_cfg.seed)
    print(record.to_json())
    return 0 if record.status == "ok" else 2


def _cmd_eval(args):
    flat = _load_flat(args)
    model, meta = models.load_checkpoint(args.checkpoint)
    task_name = args.task or meta.get("task")
    if not task_name:
        raise _UsageError("--task required (checkpoint carries no task name)")
    _, _, task_over, _ = training.split_config(flat)
    spec = tasks.task_spec(task_name, vocab=model.config.vocab)
    if task_over:
        spec = dataclasses.replace(spec, **task_over)
    if spec.vocab != model.config.vocab:
        raise ValueError(
            f"task vocab {spec.vocab} != checkpoint vocab {model.config.vocab}"
        )
    seed = args.seed if args.seed is not None else 0
    instances = tasks.generate(spec, args.count, _regime(args.regime), seed=seed)
    report = evaluation.evaluate(model, instances, task_name=spec.name)
    print(report.to_json())
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(report.to_json() + "\n")
        _write_manifest(args.out, "eval", flat, seed)
    return 0


def _cmd_grid(args):
    flat = _load_flat(args)
    model_cfg, train_cfg, spec, grid = _configs(args, flat)
    seeds = tuple(int(s) for s in args.seeds.split(","))
    os.makedirs(args.out, exist_ok=True)
    best, records = training.grid_search(
        model_cfg, train_cfg, spec, grid, seeds=seeds, out_dir=args.out, workers=args.workers
    )
    _write_manifest(args.out, "grid", flat, train_cfg.seed)
    summary = {
        "cells": len(records),
        "best": None if best is None else best.deterministic_fields(),
    }
    print(json.dumps(summary))
    return 0 if best is not None else 2


def _cmd_gen_data(args):
    flat = _load_flat(args)
    _, _, task_over, _ = training.split_config(flat)
    spec = tasks.task_spec(args.task)
    if task_over:
        spec = dataclasses.replace(spec, **task_over)
    seed = args.seed if args.seed is not None else 0
    instances = tasks.generate(spec, args.count, _regime(args.regime), seed=seed)
    tasks.write_dataset(args.out, instances)
    _write_manifest(args.out, "gen-data", flat, seed)
    print(json.dumps({"written": len(instances), "path": args.out}))
    return 0


def _cmd_trace(args):
    flat = _load_flat(args)
    model, meta = models.load_checkpoint(args.checkpoint)
    task_name = args.task or meta.get("task")
    if not task_name:
        raise _UsageError("--task required (checkpoint carries no task name)")
    spec = tasks.task_spec(task_name, vocab=model.config.vocab)
    _, _, task_over, _ = training.split_config(flat)
    if task_over:
        spec = dataclasses.replace(spec, **task_over)
    inst = tasks.generate(spec, 1, _regime(args.regime), seed=args.instance_seed)[0]
    events, decoded, truncated = analysis.trace_run(model, inst.inputs, target_len=len(inst.targets))
    analysis.write_trace(args.out, events)
    _write_manifest(args.out, "trace", flat, args.instance_seed)
    print(
        json.dumps(
            {
                "events": len(events),
                "decoded_len": len(decoded),
                "target_len": len(inst.targets),
                "truncated": truncated,
                "path": args.out,
            }
        )
    )
    return 0


def _cmd_pca(args):
    flat = _load_flat(args)
    events = analysis.read_trace(args.trace)
    heads = ("read", "write") if args.events == "both" else (args.events,)
    phases = ("encode", "decode") if args.phases == "both" else (args.phases,)
    points = analysis.trace_keys(events, heads=heads, phases=phases)
    seed = args.seed if args.seed is not None else 0
    proj, variances = analysis.pca_project(points, args.dim, seed=seed)
    payload = {
        "dim": args.dim,
        "count": int(proj.shape[0]),
        "explained_variance": [float(v) for v in variances],
        "coords": [[float(x) for x in row] for row in proj],
    }
    with open(args.out, "w") as fh:
        json.dump(payload, fh)
    _write_manifest(args.out, "pca", flat, seed)
    print(json.dumps({"count": payload["count"], "explained_variance": payload["explained_variance"]}))
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "grid": _cmd_grid,
    "gen-data": _cmd_gen_data,
    "trace": _cmd_trace,
    "pca": _cmd_pca,
}


def cli_dispatch(argv):
    """Parse and run; 0 on success, 1 on usage error, 2 on runtime failure."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main():
    return cli_dispatch(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
