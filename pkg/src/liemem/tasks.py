"""Algorithmic sequence tasks: generators, oracles, and dataset files.

Eight tasks, each defined by an input/output transformation over content
symbols, a training size range, and a content vocabulary:

    copy             a1..ak            -> a1..ak          k in [2,64],  |V|=128
    reverse          a1..ak            -> ak..a1          k in [2,64],  |V|=128
    bigram_flip      a1 a2 .. a2k      -> a2 a1 a4 a3 ..  k in [1,16],  |V|=128
    double           digits of x       -> digits of 2x    k in [2,40],  |V|=10
    interleaved_add  digits of x,y     -> digits of x+y   k in [2,16],  |V|=10
    odd_first        a1..a2k           -> odd then even   k in [1,16],  |V|=128
    repeat_copy      @^N a1..a20       -> a1..a20 N times N in [1,5],   |V|=128
    priority_sort    @^p1 a1 @^p2 a2.. -> ascending by p  k in [2,10],  |V|=128

Arithmetic sequences carry the least significant digit first and are zero
padded; outputs have exactly k+1 digits. Unary counts use the reserved '@'
symbol. The out-of-sample "2x" regime draws sizes from [u+1, 2u] where
[l, u] is the training range.

Every task has an oracle that recomputes the target from the input tokens
alone, written independently of the generator (the generators go through
Python integers for arithmetic; the oracles do schoolbook digit work).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .vocab import specials

REGIMES = ("in_sample", "2x")


@dataclass(frozen=True)
class TaskSpec:
    name: str
    low: int                 # training size range [low, high] for k (or N)
    high: int
    vocab: int               # content symbols
    items: int = 0           # fixed item count for repeat_copy
    max_priority: int = 10   # priority_sort

    def range_for(self, regime):
        if regime == "in_sample":
            return self.low, self.high
        if regime == "2x":
            return self.high + 1, 2 * self.high
        raise ValueError(f"unknown regime {regime!r}")


@dataclass
class TaskInstance:
    inputs: list
    targets: list
    size: int                # the drawn k (or N)


_TABLE = {
    "copy": dict(low=2, high=64, vocab=128),
    "reverse": dict(low=2, high=64, vocab=128),
    "bigram_flip": dict(low=1, high=16, vocab=128),
    "double": dict(low=2, high=40, vocab=10),
    "interleaved_add": dict(low=2, high=16, vocab=10),
    "odd_first": dict(low=1, high=16, vocab=128),
    "repeat_copy": dict(low=1, high=5, vocab=128, items=20),
    "priority_sort": dict(low=2, high=10, vocab=128),
}

TASK_NAMES = tuple(_TABLE)


def task_spec(name, **overrides):
    if name not in _TABLE:
        raise ValueError(f"unknown task {name!r} (choose from {TASK_NAMES})")
    return replace(TaskSpec(name=name, **_TABLE[name]), **overrides)


# ---------------------------------------------------------------------------
# generators


def _gen_one(spec, size, rng):
    name = spec.name
    v = spec.vocab
    at = specials(spec.vocab).unary
    if name == "copy":
        seq = rng.integers(0, v, size=size).tolist()
        return TaskInstance(seq, list(seq), size)
    if name == "reverse":
        seq = rng.integers(0, v, size=size).tolist()
        return TaskInstance(seq, seq[::-1], size)
    if name == "bigram_flip":
        seq = rng.integers(0, v, size=2 * size).tolist()
        out = []
        for i in range(0, 2 * size, 2):
            out += [seq[i + 1], seq[i]]
        return TaskInstance(seq, out, size)
    if name == "double":
        digits = rng.integers(0, 10, size=size).tolist()
        x = int("".join(str(d) for d in reversed(digits)) or "0")
        out = _int_to_digits(2 * x, size + 1)
        return TaskInstance(digits, out, size)
    if name == "interleaved_add":
        xd = rng.integers(0, 10, size=size).tolist()
        yd = rng.integers(0, 10, size=size).tolist()
        seq = []
        for a, b in zip(xd, yd):   # x at odd positions a1,a3,..., y at even
            seq += [a, b]
        x = int("".join(str(d) for d in reversed(xd)) or "0")
        y = int("".join(str(d) for d in reversed(yd)) or "0")
        out = _int_to_digits(x + y, size + 1)
        return TaskInstance(seq, out, size)
    if name == "odd_first":
        seq = rng.integers(0, v, size=2 * size).tolist()
        return TaskInstance(seq, seq[0::2] + seq[1::2], size)
    if name == "repeat_copy":
        items = rng.integers(0, v, size=spec.items).tolist()
        return TaskInstance([at] * size + items, items * size, size)
    if name == "priority_sort":
        items = rng.integers(0, v, size=size).tolist()
        prios = rng.integers(1, spec.max_priority + 1, size=size).tolist()
        seq = []
        for p, item in zip(prios, items):
            seq += [at] * p + [item]
        order = sorted(range(size), key=lambda i: (prios[i], i))  # stable ties
        return TaskInstance(seq, [items[i] for i in order], size)
    raise ValueError(f"unknown task {name!r}")


def _int_to_digits(x, n):
    """Least-significant-first decimal digits, zero padded to length n."""
    out = []
    for _ in range(n):
        out.append(x % 10)
        x //= 10
    return out


def generate(spec, count, regime="in_sample", seed=0, rng=None):
    """Instances with sizes uniform over the regime's range and content
    symbols uniform over the content vocabulary."""
    if count <= 0:
        raise ValueError("count must be positive")
    rng = rng if rng is not None else np.random.default_rng(seed)
    lo, hi = spec.range_for(regime)
    sizes = rng.integers(lo, hi + 1, size=count)
    return [_gen_one(spec, int(s), rng) for s in sizes]


# ---------------------------------------------------------------------------
# independent oracles (recompute the target from the input tokens alone)


def oracle_arithmetic(name, inputs):
    """Schoolbook digit arithmetic for the double / interleaved_add tasks."""
    if any(not (0 <= d <= 9) for d in inputs):
        raise ValueError("arithmetic inputs must be decimal digits")
    if name == "double":
        out, carry = [], 0
        for d in inputs:
            s = 2 * d + carry
            out.append(s % 10)
            carry = s // 10
        out.append(carry)
        return out
    if name == "interleaved_add":
        if len(inputs) % 2 != 0:
            raise ValueError("interleaved_add input length must be even")
        xd = inputs[0::2]
        yd = inputs[1::2]
        out, carry = [], 0
        for a, b in zip(xd, yd):
            s = a + b + carry
            out.append(s % 10)
            carry = s // 10
        out.append(carry)
        return out
    raise ValueError(f"not an arithmetic task: {name!r}")


def oracle_structured(name, inputs, vocab):
    """odd_first, repeat_copy, and priority_sort targets from raw tokens."""
    at = specials(vocab).unary
    if name == "odd_first":
        return list(inputs[0::2]) + list(inputs[1::2])
    if name == "repeat_copy":
        n = 0
        while n < len(inputs) and inputs[n] == at:
            n += 1
        items = list(inputs[n:])
        if n == 0:
            raise ValueError("repeat_copy input lacks a unary count")
        return items * n
    if name == "priority_sort":
        pairs = []
        i = 0
        while i < len(inputs):
            p = 0
            while i < len(inputs) and inputs[i] == at:
                p += 1
                i += 1
            if i >= len(inputs) or p == 0:
                raise ValueError("malformed unary priority encoding")
            pairs.append((p, inputs[i]))
            i += 1
        pairs = sorted(enumerate(pairs), key=lambda e: (e[1][0], e[0]))
        return [item for _, (_, item) in pairs]
    raise ValueError(f"not a structured task: {name!r}")


def oracle(spec, inputs):
    """Target for any task, recomputed from the input tokens."""
    name = spec.name
    if name == "copy":
        return list(inputs)
    if name == "reverse":
        out = []
        for tok in inputs:
            out.insert(0, tok)
        return out
    if name == "bigram_flip":
        out = []
        for i in range(1, len(inputs), 2):
            out += [inputs[i], inputs[i - 1]]
        return out
    if name in ("double", "interleaved_add"):
        return oracle_arithmetic(name, inputs)
    return oracle_structured(name, inputs, spec.vocab)


# ---------------------------------------------------------------------------
# dataset files: one line per instance, "input TAB target", space-separated ids


def write_dataset(path, instances):
    with open(path, "w") as fh:
        for inst in instances:
            fh.write(" ".join(map(str, inst.inputs)))
            fh.write("\t")
            fh.write(" ".join(map(str, inst.targets)))
            fh.write("\n")


def read_dataset(path):
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            left, _, right = line.partition("\t")
            inputs = [int(t) for t in left.split()] if left else []
            targets = [int(t) for t in right.split()] if right else []
            out.append(TaskInstance(inputs, targets, size=0))
    return out
