"""Memory-access traces and low-dimensional PCA projections.

A trace is the sequence of read/write events a model emits while running
one instance: phase, step, head kind, key coordinates, write strength, and
the top-16 read weights. Traces stream to line-delimited JSON so plotting
and tests can consume them incrementally.

Projection uses power iteration with deflation on the covariance of the
traced key coordinates (the key spaces here have at most a handful of
dimensions, so no eigensolver dependency is warranted). Component signs are
fixed so the first projected point has nonnegative coordinates.
"""

from __future__ import annotations

import json

import numpy as np

from . import autodiff as ad
from .models import TraceEvent, decode_cap

POWER_TOL = 1e-10
POWER_MAX_ITERS = 10_000


def trace_run(model, inputs, target_len=None):
    """Run one instance end to end, greedy decoding, collecting all events."""
    events = []
    cap = decode_cap(target_len if target_len is not None else len(inputs))
    with ad.no_grad():
        state = model.encode(np.asarray([inputs], dtype=np.int64), trace=events)
        seqs, truncated = model.decode_greedy(state, cap, trace=events)
    return events, seqs[0], bool(truncated[0])


def write_trace(path, events):
    with open(path, "w") as fh:
        for ev in events:
            fh.write(json.dumps(ev.to_dict()) + "\n")


def read_trace(path):
    events = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                events.append(TraceEvent(**json.loads(line)))
    return events


def trace_keys(events, heads=("read", "write"), phases=("encode", "decode")):
    """Key coordinates of selected events as an (N, d) array."""
    rows = [ev.key for ev in events if ev.head in heads and ev.phase in phases]
    return np.asarray(rows, dtype=np.float64)


# ---------------------------------------------------------------------------
# PCA by power iteration


def _power_iteration(cov, rng, tol=POWER_TOL, max_iters=POWER_MAX_ITERS):
    v = rng.normal(size=cov.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iters):
        w = cov @ v
        norm = np.linalg.norm(w)
        if norm < tol:
            # null direction: any unit vector is an eigenvector
            return 0.0, v
        w /= norm
        if np.linalg.norm(w - v) < tol or np.linalg.norm(w + v) < tol:
            v = w
            break
        v = w
    lam = float(v @ cov @ v)
    return lam, v


def pca_project(points, dim, seed=0):
    """Mean-centered projection onto the top principal components.

    Components come from power iteration with deflation; each component's
    sign is flipped, if needed, so the first point's coordinate along it is
    nonnegative. Returns (projected (N, dim), explained variances (dim,)).
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 2:
        raise ValueError("projection needs at least 2 points")
    if np.allclose(pts, pts[0]):
        raise ValueError("projection needs at least 2 distinct points")
    if not 1 <= dim <= pts.shape[1]:
        raise ValueError(f"target dim {dim} out of range for {pts.shape[1]}-d points")

    centered = pts - pts.mean(axis=0)
    cov = centered.T @ centered / pts.shape[0]
    rng = np.random.default_rng(seed)

    components, variances = [], []
    for _ in range(dim):
        lam, v = _power_iteration(cov, rng)
        components.append(v)
        variances.append(lam)
        cov = cov - lam * np.outer(v, v)

    comp = np.asarray(components)
    proj = centered @ comp.T
    for j in range(dim):
        if proj[0, j] < 0:
            proj[:, j] = -proj[:, j]
            comp[j] = -comp[j]
    return proj, np.asarray(variances)
