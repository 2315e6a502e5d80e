"""Greedy decoding and fine/coarse scoring on held-out instances.

The fine score of one answer is the fraction of correctly predicted
positions out of |target| + 1, where the extra position is the required
end-of-output symbol: the prediction earns it by stopping exactly after
|target| tokens. Missing positions count as wrong; tokens predicted past
the target length add no further penalty beyond the missed stop. The
coarse score is 1 exactly when every position is right.

A report aggregates per-instance fine fractions (mean) and coarse
indicators over an evaluation set, typically 2x out-of-sample lengths.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .models import decode_cap


def score(prediction, target):
    """(fine fraction, coarse indicator) for one prediction.

    ``prediction`` holds content tokens only; emitting end-of-output at the
    right position is scored as predicting position |target| correctly,
    which happens exactly when len(prediction) == len(target).
    """
    n_positions = len(target) + 1
    correct = sum(
        1 for i in range(min(len(prediction), len(target))) if prediction[i] == target[i]
    )
    if len(prediction) == len(target):
        correct += 1
    fine = correct / n_positions
    return fine, 1 if correct == n_positions else 0


def greedy_decode(model, inputs, max_steps=None, target_len=None, trace=None):
    """Argmax decoding of one instance; returns (tokens, truncated flag)."""
    if max_steps is None:
        max_steps = decode_cap(target_len if target_len is not None else len(inputs))
    with ad.no_grad():
        state = model.encode(np.asarray([inputs], dtype=np.int64), trace=trace)
        seqs, truncated = model.decode_greedy(state, max_steps, trace=trace)
    return seqs[0], bool(truncated[0])


@dataclass
class ScoreReport:
    fine: float
    coarse: float
    count: int
    per_task: dict = field(default_factory=dict)
    truncated: int = 0

    def to_json(self):
        return json.dumps(
            {
                "fine": self.fine,
                "coarse": self.coarse,
                "count": self.count,
                "per_task": self.per_task,
                "truncated": self.truncated,
            }
        )


def _batched(instances, batch_size):
    """Group by (input length, target length) so batches stay rectangular."""
    buckets = defaultdict(list)
    for inst in instances:
        buckets[(len(inst.inputs), len(inst.targets))].append(inst)
    for _, bucket in sorted(buckets.items()):
        for i in range(0, len(bucket), batch_size):
            yield bucket[i : i + batch_size]


def evaluate(model, instances, batch_size=32, task_name=None):
    """Greedy-decode a set of instances and aggregate fine/coarse scores."""
    fines, coarses, n_trunc = [], [], 0
    with ad.no_grad():
        for batch in _batched(instances, batch_size):
            inputs = np.asarray([inst.inputs for inst in batch], dtype=np.int64)
            cap = decode_cap(len(batch[0].targets))
            state = model.encode(inputs)
            seqs, truncated = model.decode_greedy(state, cap)
            n_trunc += int(truncated.sum())
            for inst, seq in zip(batch, seqs):
                f, c = score(seq, inst.targets)
                fines.append(f)
                coarses.append(c)
    fine = float(np.mean(fines)) if fines else 0.0
    coarse = float(np.mean(coarses)) if coarses else 0.0
    report = ScoreReport(fine=fine, coarse=coarse, count=len(fines), truncated=n_trunc)
    if task_name:
        report.per_task[task_name] = {"fine": fine, "coarse": coarse, "count": len(fines)}
    return report
