"""Weighted key-value memory and its read weighting schemes.

The store holds (key, value, strength) triples, append-only: one triple per
encoder step. Entries are kept stacked, keys (..., T, d), values (..., T, m),
strengths (..., T), with an optional leading batch axis, so reads vectorize
across the batch and the whole structure stays inside the autodiff graph.

Read schemes:

* inverse-square  w_i = s_i / d(q,k_i)^2, normalized (limit one-hot at d=0)
* annealed softmax w_i = s_i exp(-d(q,k_i)^2 / T), normalized
* exponential inner product (random access) w_i = s_i exp(<q,k_i>), normalized

plus the soft-tape kernel shift, left/right neighbor keys by shifted
convolution of the read weights, and weight sharpening w_i^gamma.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor
from .lie_groups import squared_distance

_INV_SQ_EPS = 1e-12


class DegenerateShift(ArithmeticError):
    """Kernel shift pushed all probability mass off the tape."""


class MemoryStore:
    """Append-only store of (key, value, strength) triples."""

    __slots__ = ("keys", "values", "strengths")

    def __init__(self, keys, values, strengths):
        self.keys = keys          # (..., T, d)
        self.values = values      # (..., T, m)
        self.strengths = strengths  # (..., T)

    @classmethod
    def empty(cls, key_dim, width, batch_shape=()):
        return cls(
            ad.zeros(batch_shape + (0, key_dim)),
            ad.zeros(batch_shape + (0, width)),
            ad.zeros(batch_shape + (0,)),
        )

    @classmethod
    def from_entries(cls, entries):
        """Build an unbatched store from [(key, value, strength), ...]."""

        def scalar(s):
            t = as_tensor(s)
            return ad.reshape(t, ()) if t.data.ndim else t

        keys = ad.stack([as_tensor(k) for k, _, _ in entries], axis=0)
        values = ad.stack([as_tensor(v) for _, v, _ in entries], axis=0)
        strengths = ad.stack([scalar(s) for _, _, s in entries], axis=0)
        return cls(keys, values, strengths)

    def __len__(self):
        return self.keys.data.shape[-2]

    @property
    def width(self):
        return self.values.data.shape[-1]

    @property
    def key_dim(self):
        return self.keys.data.shape[-1]


def append_write(store, key, value, strength):
    """New store with (key, value, strength) appended; old entries shared."""
    key, value, strength = as_tensor(key), as_tensor(value), as_tensor(strength)
    s = strength.data
    if ((s < 0) | (s > 1)).any():
        raise ValueError("write strength must lie in [0, 1]")
    return MemoryStore(
        ad.concat([store.keys, ad.expand_dims(key, -2)], axis=-2),
        ad.concat([store.values, ad.expand_dims(value, -2)], axis=-2),
        ad.concat([store.strengths, ad.expand_dims(strength, -1)], axis=-1),
    )


def _require_nonempty(store):
    if len(store) == 0:
        raise ValueError("read weighting on an empty store")


def _normalize_weights(raw):
    total = ad.tsum(raw, axis=-1, keepdims=True)
    return ad.div(raw, total)


def _zero_strength_fallback(d2, strengths):
    """Uniform over minimal-distance entries for rows whose strengths are all
    zero (the weighting formulas are 0/0 there). Returns None if no such row."""
    s = strengths.data
    dead = s.sum(axis=-1) == 0
    if not dead.any():
        return None
    d2v = d2.data
    minmask = (d2v == d2v.min(axis=-1, keepdims=True)).astype(d2v.dtype)
    uniform = minmask / minmask.sum(axis=-1, keepdims=True)
    return dead, uniform


def read_inverse_square(q, store):
    """Strength over squared distance, normalized.

    Exactly at q == k_i the formula's limit is taken: weight mass goes to the
    zero-distance entries (strength-proportionally). Training mode instead
    adds 1e-12 to d^2 so gradients stay finite near the singularity.
    """
    _require_nonempty(store)
    q = as_tensor(q)
    d2 = squared_distance(ad.expand_dims(q, -2), store.keys)  # (..., T)
    s = store.strengths

    fallback = _zero_strength_fallback(d2, s)
    if fallback is not None:
        dead, uniform = fallback
        if dead.all():
            return Tensor(uniform)

    if ad.is_strict():
        zero = d2.data == 0.0
        if zero.any():
            # limit value: renormalize strengths over the zero-distance entries
            mask = Tensor(zero.astype(d2.data.dtype))
            hit_rows = zero.any(axis=-1)
            masked = ad.mul(s, mask)
            w_limit = _normalize_weights(masked)
            if hit_rows.all():
                return w_limit
            d2_safe = ad.add(d2, mask)  # keeps non-hit coordinates untouched
            w_reg = _normalize_weights(ad.div(s, d2_safe))
            sel = Tensor(hit_rows.astype(d2.data.dtype)[..., None])
            return ad.add(ad.mul(w_limit, sel), ad.mul(w_reg, ad.sub(1.0, sel)))
        w = _normalize_weights(ad.div(s, d2))
    else:
        w = _normalize_weights(ad.div(s, ad.add(d2, _INV_SQ_EPS)))

    if fallback is not None:
        dead, uniform = fallback
        sel = Tensor(dead.astype(d2.data.dtype)[..., None])
        w = ad.add(ad.mul(Tensor(uniform), sel), ad.mul(w, ad.sub(1.0, sel)))
    return w


def read_softmax(q, store, temperature):
    """Annealed softmax of squared distances; higher T is more uniform."""
    _require_nonempty(store)
    temperature = as_tensor(temperature)
    if (temperature.data <= 0).any():
        raise ValueError("temperature must be positive")
    q = as_tensor(q)
    d2 = squared_distance(ad.expand_dims(q, -2), store.keys)
    logits = ad.div(ad.neg(d2), temperature)
    shift = logits.data.max(axis=-1, keepdims=True)  # constant, cancels in the ratio
    e = ad.texp(ad.sub(logits, shift))
    return _normalize_weights(ad.mul(store.strengths, e))


def read_ram(q, store):
    """Exponential inner-product weighting of a pointer against the keys."""
    _require_nonempty(store)
    q = as_tensor(q)
    if q.data.shape[-1] != store.key_dim:
        raise ad.ShapeError(
            f"pointer dim {q.data.shape[-1]} != key dim {store.key_dim}"
        )
    scores = ad.tsum(ad.mul(ad.expand_dims(q, -2), store.keys), axis=-1)  # (..., T)
    shift = scores.data.max(axis=-1, keepdims=True)
    e = ad.texp(ad.sub(scores, shift))
    return _normalize_weights(ad.mul(store.strengths, e))


def smooth(weights, store):
    """Linear smoothing: the weight-averaged sum of stored values.

    An empty store (zero-length weights) yields the zero vector of width m.
    """
    w = as_tensor(weights)
    return ad.tsum(ad.mul(ad.expand_dims(w, -1), store.values), axis=-2)


def tape_shift(q, kernel):
    """Soft tape head shift by a length-3 convolution kernel (K-1, K0, K+1).

    q'_j = q_{j-1} K+1 + q_j K0 + q_{j+1} K-1; out-of-range positions read as
    zero. Mass leaked off the tape edges is renormalized away; a raw all-zero
    result (all mass leaked) raises DegenerateShift.
    """
    q = as_tensor(q)
    kernel = as_tensor(kernel)
    n = q.data.shape[-1]
    zero_col = ad.zeros(q.data.shape[:-1] + (1,))
    right = ad.concat([zero_col, q[..., : n - 1]], axis=-1)  # q_{j-1}
    left = ad.concat([q[..., 1:], zero_col], axis=-1)        # q_{j+1}
    k_m1, k_0, k_p1 = kernel[..., 0:1], kernel[..., 1:2], kernel[..., 2:3]
    raw = ad.add(ad.add(ad.mul(right, k_p1), ad.mul(q, k_0)), ad.mul(left, k_m1))
    total = raw.data.sum(axis=-1)
    if (total == 0).any():
        raise DegenerateShift("all probability mass shifted off the tape")
    return _normalize_weights(raw)


def neighbor_keys(weights, store):
    """Left/right neighbor keys by shifted convolution with the read weights:
    k_L = sum_i w_{i+1} k_i and k_R = sum_i w_{i-1} k_i (out of range: 0)."""
    w = as_tensor(weights)
    keys = store.keys
    k_l = ad.tsum(ad.mul(ad.expand_dims(w[..., 1:], -1), keys[..., :-1, :]), axis=-2)
    k_r = ad.tsum(ad.mul(ad.expand_dims(w[..., :-1], -1), keys[..., 1:, :]), axis=-2)
    return k_l, k_r


def sharpen(weights, gamma):
    """Sharpened weights w_i^gamma, renormalized; requires gamma >= 1."""
    gamma = as_tensor(gamma)
    if (gamma.data < 1.0).any():
        raise ValueError("sharpening coefficient must be >= 1")
    w = as_tensor(weights)
    if gamma.data.ndim == 0 or gamma.data.shape[-1] == 1:
        g = gamma
    else:
        g = ad.expand_dims(gamma, -1)
    return _normalize_weights(ad.power(w, g))
