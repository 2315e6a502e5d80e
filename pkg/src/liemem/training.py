"""Training harness: NLL loss, RMSProp, decay/clipping, runs and grids.

A run is fully determined by its seed: one SeedSequence fans out into
independent streams for parameter init, dataset generation, the held-out
2x evaluation set, and batch shuffling. Batches group instances of equal
(input, target) length so sequences stay rectangular; per-instance lengths
remain uniform over the training range.

The learning rate halves every ``decay_delay`` updates after an equally
long warm period. Gradients are clipped to a global norm bound. A run that
produces a non-finite value is recorded as diverged, not raised.

Run configuration files are flat key-value text, one ``dotted.path = value``
per line; values parse as JSON scalars/lists with a bare-string fallback.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import product

import numpy as np

from . import autodiff as ad
from . import evaluation, models, tasks
from .vocab import specials

WORKERS_ENV = "LIE_MEM_THREADS"


@dataclass
class TrainConfig:
    lr: float = 0.02
    decay_delay: int = 300
    init_scheme: str = "fan_in"      # "uniform" | "fan_in"
    batch_size: int = 32
    total_samples: int = 8000
    passes: int = 20
    seed: int = 1
    rmsprop_rho: float = 0.9
    rmsprop_eps: float = 1e-8
    clip_norm: float = 5.0
    eval_every: int = 200            # updates between held-out evals; 0 disables
    eval_size: int = 320             # instances per interim eval
    final_eval_size: int = 3200
    stop_coarse: float = 0.0         # early stop once interim coarse >= this; 0 disables
    max_updates: int = 0             # hard cap on updates; 0 disables
    select_best: bool = True         # final scores/checkpoint from the best interim eval


@dataclass
class RunRecord:
    task: str
    model_kind: str
    weighting: str
    seed: int
    config: dict
    epoch_losses: list = field(default_factory=list)
    evals: list = field(default_factory=list)
    final_fine: float = 0.0
    final_coarse: float = 0.0
    final_count: int = 0
    updates: int = 0
    selected_update: int = 0        # update whose parameters were kept
    status: str = "ok"              # ok | diverged
    wall_time_s: float = 0.0
    checkpoint_path: str = ""

    def to_json(self):
        return json.dumps(dataclasses.asdict(self))

    @classmethod
    def from_json(cls, line):
        return cls(**json.loads(line))

    def deterministic_fields(self):
        """Everything that must be bit-identical for a fixed seed."""
        d = dataclasses.asdict(self)
        d.pop("wall_time_s")
        d.pop("checkpoint_path")
        return d


# ---------------------------------------------------------------------------
# loss and optimizer


def nll_loss(logits, targets):
    """Mean over steps (and batch) of -log softmax(logits)[target].

    logits (B, S, V); targets (B, S) already carry the end-of-output symbol,
    so S must equal |target| + 1.
    """
    targets = np.asarray(targets, dtype=np.int64)
    if logits.data.shape[:2] != targets.shape:
        raise ad.ShapeError(
            f"logits steps {logits.data.shape[:2]} != targets {targets.shape}"
        )
    shift = logits.data.max(axis=-1, keepdims=True)  # constant, exact for softmax
    lse = ad.add(ad.tlog(ad.tsum(ad.texp(ad.sub(logits, shift)), axis=-1, keepdims=True)), shift)
    log_probs = ad.sub(logits, lse)
    picked = ad.gather_last(log_probs, targets[..., None])
    return ad.neg(ad.tmean(picked))


class RMSProp:
    """s <- rho*s + (1-rho)*g^2;  p <- p - lr * g / (sqrt(s) + eps)."""

    def __init__(self, params, rho=0.9, eps=1e-8):
        self.rho = rho
        self.eps = eps
        self.state = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, params, grads, lr):
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.data.shape:
                raise ad.ShapeError(f"gradient shape mismatch for {name}")
            s = self.state[name]
            s *= self.rho
            s += (1.0 - self.rho) * g * g
            p.data = p.data - lr * g / (np.sqrt(s) + self.eps)


def clip_gradients(grads, max_norm):
    """Scale all gradients so the global L2 norm is at most max_norm."""
    total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if max_norm and total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


def decayed_lr(base_lr, updates, decay_delay):
    return base_lr * 0.5 ** (updates // decay_delay) if decay_delay else base_lr


# ---------------------------------------------------------------------------
# batching


def _buckets(instances):
    out = {}
    for inst in instances:
        out.setdefault((len(inst.inputs), len(inst.targets)), []).append(inst)
    return out


def _batches_for_pass(buckets, batch_size, rng):
    batches = []
    for key in sorted(buckets):
        bucket = buckets[key]
        order = rng.permutation(len(bucket))
        for i in range(0, len(bucket), batch_size):
            batches.append([bucket[int(j)] for j in order[i : i + batch_size]])
    rng.shuffle(batches)
    return batches


def _batch_arrays(batch, vocab):
    eos = specials(vocab).eos_out
    inputs = np.asarray([inst.inputs for inst in batch], dtype=np.int64)
    targets = np.asarray([inst.targets + [eos] for inst in batch], dtype=np.int64)
    return inputs, targets


# ---------------------------------------------------------------------------
# single run


def run_training(model_cfg, train_cfg, spec, out_dir=None):
    """Train one model on one task; deterministic given train_cfg.seed."""
    start = time.monotonic()
    init_ss, data_ss, eval_ss, shuf_ss = np.random.SeedSequence(train_cfg.seed).spawn(4)
    model = models.Model.init(model_cfg, seed=init_ss, scheme=train_cfg.init_scheme)
    optimizer = RMSProp(model.params, rho=train_cfg.rmsprop_rho, eps=train_cfg.rmsprop_eps)

    record = RunRecord(
        task=spec.name,
        model_kind=model_cfg.kind,
        weighting=model_cfg.weighting if model_cfg.kind in ("lantm", "slantm") else "",
        seed=train_cfg.seed,
        config=flat_config(model_cfg, train_cfg, spec),
    )

    data = tasks.generate(
        spec, train_cfg.total_samples, "in_sample", rng=np.random.default_rng(data_ss)
    ) if train_cfg.total_samples > 0 else []
    held_out = tasks.generate(
        spec, train_cfg.final_eval_size, "2x", rng=np.random.default_rng(eval_ss)
    )
    interim = held_out[: train_cfg.eval_size]
    buckets = _buckets(data)
    shuffle_rng = np.random.default_rng(shuf_ss)

    updates = 0
    stop = False
    best = None  # (coarse, fine, update, params snapshot)
    for _ in range(train_cfg.passes if data else 0):
        pass_losses = []
        for batch in _batches_for_pass(buckets, train_cfg.batch_size, shuffle_rng):
            inputs, targets = _batch_arrays(batch, model_cfg.vocab)
            try:
                ad.zero_grads(model.params)
                logits = model.forward(inputs, n_dec_steps=targets.shape[1])
                loss = nll_loss(logits, targets)
                ad.backward(loss)
            except ad.NonFiniteError:
                record.status = "diverged"
                stop = True
                break
            grads = {k: ad.grad_of(p) for k, p in model.params.items()}
            clip_gradients(grads, train_cfg.clip_norm)
            lr = decayed_lr(train_cfg.lr, updates, train_cfg.decay_delay)
            optimizer.step(model.params, grads, lr)
            updates += 1
            pass_losses.append(float(loss.data))

            if train_cfg.eval_every and updates % train_cfg.eval_every == 0:
                rep = evaluation.evaluate(model, interim, train_cfg.batch_size)
                record.evals.append({"update": updates, "fine": rep.fine, "coarse": rep.coarse})
                if train_cfg.select_best and (
                    best is None or (rep.coarse, rep.fine) > (best[0], best[1])
                ):
                    best = (rep.coarse, rep.fine, updates,
                            {k: p.data.copy() for k, p in model.params.items()})
                if train_cfg.stop_coarse and rep.coarse >= train_cfg.stop_coarse:
                    stop = True
                    break
            if train_cfg.max_updates and updates >= train_cfg.max_updates:
                stop = True
                break
        if pass_losses:
            record.epoch_losses.append(float(np.mean(pass_losses)))
        if stop:
            break

    record.updates = updates
    record.selected_update = updates
    if record.status == "ok" and train_cfg.select_best and best is not None:
        for name, data in best[3].items():
            model.params[name].data = data
        record.selected_update = best[2]
    if record.status == "ok":
        rep = evaluation.evaluate(model, held_out, train_cfg.batch_size, task_name=spec.name)
        record.final_fine = rep.fine
        record.final_coarse = rep.coarse
        record.final_count = rep.count
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        ckpt = os.path.join(out_dir, "checkpoint.ckpt")
        models.save_checkpoint(ckpt, model, meta={"task": spec.name, "seed": str(train_cfg.seed)})
        record.checkpoint_path = ckpt
    record.wall_time_s = time.monotonic() - start
    return record, model


# ---------------------------------------------------------------------------
# grid search


def _grid_cells(grid):
    if not grid:
        return [()]
    keys = sorted(grid)
    return [tuple(zip(keys, vals)) for vals in product(*(grid[k] for k in keys))]


def _apply_overrides(model_cfg, train_cfg, spec, cell):
    for key, value in cell:
        scope, _, name = key.partition(".")
        if scope == "model":
            model_cfg = replace(model_cfg, **{name: value})
        elif scope == "train":
            train_cfg = replace(train_cfg, **{name: value})
        elif scope == "task":
            spec = replace(spec, **{name: value})
        else:
            raise ValueError(f"unknown grid scope in {key!r}")
    return model_cfg, train_cfg, spec


def _run_cell(args):
    model_cfg, train_cfg, spec, out_dir = args
    record, _ = run_training(model_cfg, train_cfg, spec, out_dir=out_dir)
    return record


def select_best(records):
    """Best non-diverged record by coarse score, ties broken by fine score."""
    viable = [r for r in records if r.status == "ok"]
    return max(viable, key=lambda r: (r.final_coarse, r.final_fine)) if viable else None


def grid_search(model_cfg, train_cfg, spec, grid, seeds=(1, 2, 3), out_dir=None, workers=None):
    """Cross product of grid axes and seeds; best record by coarse then fine.

    Diverged runs are recorded but never selected. Cells run in a process
    pool bounded by ``workers`` (default: LIE_MEM_THREADS or 1).
    """
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1"))
    jobs = []
    for idx, cell in enumerate(_grid_cells(grid)):
        for seed in seeds:
            m_cfg, t_cfg, t_spec = _apply_overrides(model_cfg, train_cfg, spec, cell)
            t_cfg = replace(t_cfg, seed=seed)
            cell_dir = os.path.join(out_dir, f"cell{idx:03d}_seed{seed}") if out_dir else None
            jobs.append((m_cfg, t_cfg, t_spec, cell_dir))

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_cell, jobs))
    else:
        records = [_run_cell(j) for j in jobs]

    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "records.jsonl"), "w") as fh:
            for rec in records:
                fh.write(rec.to_json() + "\n")

    return select_best(records), records


# ---------------------------------------------------------------------------
# flat key-value run configuration files


def parse_config_text(text):
    """Lines of ``dotted.key = value``; values are JSON scalars/lists with a
    bare-string fallback. '#' starts a comment; blank lines are skipped."""
    out = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"bad config line (missing '='): {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


def load_config_file(path):
    with open(path) as fh:
        return parse_config_text(fh.read())


def config_hash(flat):
    text = "\n".join(f"{k}={json.dumps(flat[k])}" for k in sorted(flat))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def flat_config(model_cfg, train_cfg, spec):
    out = {}
    for prefix, cfg in (("model", model_cfg), ("train", train_cfg), ("task", spec)):
        for k, v in dataclasses.asdict(cfg).items():
            out[f"{prefix}.{k}"] = v
    return out


def split_config(flat):
    """Partition a flat dict into (model, train, task, grid) override dicts."""
    scopes = {"model": {}, "train": {}, "task": {}, "grid": {}}
    for key, value in flat.items():
        scope, _, rest = key.partition(".")
        if scope not in scopes:
            raise ValueError(f"unknown config scope in {key!r}")
        scopes[scope][rest] = value
    return scopes["model"], scopes["train"], scopes["task"], scopes["grid"]


def apply_config(flat, model_cfg, train_cfg, spec):
    model_over, train_over, task_over, _ = split_config(flat)
    if model_over:
        model_cfg = replace(model_cfg, **model_over)
    if train_over:
        train_cfg = replace(train_cfg, **train_over)
    if task_over:
        spec = replace(spec, **task_over)
    return model_cfg, train_cfg, spec
