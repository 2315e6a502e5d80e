"""LSTM controller and the output heads that drive memory access.

The controller is a standard (multi-layer) LSTM. Its top hidden state h is
mapped by one linear layer to every control signal a model needs: action
parameters, random-access keys, interpolation gates, the write value and
strength, temperature, kernel, sharpening, and pointers. Each signal gets
the squashing that enforces its range:

* gates and strength: sigmoid
* shift action: u in R^2 scaled by tanh(|u|)/|u| so |a| <= 1
* rotation: L2-normalized axis; angle m*tanh(u) with learnable m when the
  angle bound is on, raw u otherwise
* temperature: softplus + 0.1 floor; sharpening: 1 + softplus
* kernel: 3-way softmax; sphere keys: L2 normalization

Two init schemes are supported: "uniform" (all parameters U[-1,1]) and
"fan_in" (each matrix U(-k,k) with k = fan_in^-1/2). Both set the LSTM
forget-gate bias to 1. Gate biases are nudged to favor relative access at
the start: interpolation gate t at +2, action blend gate r at -2.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

TEMPERATURE_FLOOR = 0.1
T_GATE_BIAS = 2.0
R_GATE_BIAS = -2.0
_SAFE_NORM_EPS = 1e-12


@dataclass
class HeadOutputs:
    """Control signals emitted from the hidden state; unused ones are None."""

    shift: Optional[Tensor] = None            # (..., 2), norm <= 1
    shift_w: Optional[Tensor] = None
    axis: Optional[Tensor] = None             # (..., 3), unit norm
    axis_w: Optional[Tensor] = None
    angle: Optional[Tensor] = None            # (..., 1)
    angle_w: Optional[Tensor] = None
    key: Optional[Tensor] = None              # random-access key (read)
    key_w: Optional[Tensor] = None            # random-access / write key
    gate_t: Optional[Tensor] = None           # (..., 1) in [0,1]
    gate_t_w: Optional[Tensor] = None
    gate_r: Optional[Tensor] = None           # (..., 1) in [0,1]
    gate_r_w: Optional[Tensor] = None
    value: Optional[Tensor] = None            # (..., m)
    strength: Optional[Tensor] = None         # (..., 1) in [0,1]
    temperature: Optional[Tensor] = None      # (..., 1) > 0
    kernel: Optional[Tensor] = None           # (..., 3) on the simplex
    gamma: Optional[Tensor] = None            # (..., 1) >= 1
    pointer: Optional[Tensor] = None          # RAM read pointer
    tape_gate: Optional[Tensor] = None        # (..., 3) softmax over {key,k_L,k_R}


# ---------------------------------------------------------------------------
# initialization


def init_matrix(rng, fan_in, fan_out, scheme):
    if scheme == "uniform":
        return rng.uniform(-1.0, 1.0, size=(fan_in, fan_out))
    if scheme == "fan_in":
        k = fan_in ** -0.5
        return rng.uniform(-k, k, size=(fan_in, fan_out))
    raise ValueError(f"unknown init scheme {scheme!r}")


def init_bias(rng, fan_in, n, scheme):
    if scheme == "uniform":
        return rng.uniform(-1.0, 1.0, size=n)
    if scheme == "fan_in":
        k = fan_in ** -0.5
        return rng.uniform(-k, k, size=n)
    raise ValueError(f"unknown init scheme {scheme!r}")


def init_lstm_params(rng, input_size, cells, scheme):
    """One layer's weights; gate order (input, forget, candidate, output)."""
    wx = init_matrix(rng, input_size, 4 * cells, scheme)
    wh = init_matrix(rng, cells, 4 * cells, scheme)
    b = init_bias(rng, input_size + cells, 4 * cells, scheme)
    b[cells : 2 * cells] = 1.0  # forget gate starts open
    return wx, wh, b


def lstm_step(wx, wh, b, x, c, h):
    """One LSTM step; x (B, in), c/h (B, cells) -> new (c, h)."""
    cells = c.data.shape[-1]
    if x.data.shape[-1] != wx.data.shape[0]:
        raise ad.ShapeError(
            f"lstm input width {x.data.shape[-1]} != expected {wx.data.shape[0]}"
        )
    z = ad.add(ad.add(ad.matmul(x, wx), ad.matmul(h, wh)), b)
    i = ad.sigmoid(z[:, :cells])
    f = ad.sigmoid(z[:, cells : 2 * cells])
    g = ad.tanh(z[:, 2 * cells : 3 * cells])
    o = ad.sigmoid(z[:, 3 * cells :])
    c_new = ad.add(ad.mul(f, c), ad.mul(i, g))
    h_new = ad.mul(o, ad.tanh(c_new))
    return c_new, h_new


# ---------------------------------------------------------------------------
# head layer


def bounded_shift(u):
    """Scale u in R^2 to norm <= 1 via u * tanh(|u|)/|u| (0 at u = 0)."""
    norm = ad.l2_norm(u, keepdims=True, eps=_SAFE_NORM_EPS)
    return ad.mul(u, ad.div(ad.tanh(norm), norm))


def unit_axis(u):
    """L2-normalize with a tiny smoothing so the zero vector cannot divide."""
    norm = ad.l2_norm(u, keepdims=True, eps=_SAFE_NORM_EPS)
    return ad.div(u, norm)


class HeadLayer:
    """Linear map from h to a named, range-squashed set of control signals."""

    def __init__(self, fields):
        # fields: ordered list of (name, width, transform-name)
        self.fields = list(fields)
        self.total = sum(w for _, w, _ in self.fields)

    def init_params(self, rng, cells, scheme):
        w = init_matrix(rng, cells, self.total, scheme)
        b = init_bias(rng, cells, self.total, scheme)
        off = 0
        for name, width, _ in self.fields:
            if name in ("gate_t", "gate_t_w"):
                b[off : off + width] = T_GATE_BIAS
            elif name in ("gate_r", "gate_r_w"):
                b[off : off + width] = R_GATE_BIAS
            off += width
        return w, b

    def __call__(self, w, b, h, angle_scale=None):
        z = ad.add(ad.matmul(h, w), b)
        out = HeadOutputs()
        off = 0
        for name, width, transform in self.fields:
            u = z[:, off : off + width]
            off += width
            if transform == "linear":
                v = u
            elif transform == "sigmoid":
                v = ad.sigmoid(u)
            elif transform == "bounded_shift":
                v = bounded_shift(u)
            elif transform == "unit":
                v = unit_axis(u)
            elif transform == "bounded_angle":
                v = ad.mul(angle_scale, ad.tanh(u))
            elif transform == "temperature":
                v = ad.add(ad.softplus(u), TEMPERATURE_FLOOR)
            elif transform == "gamma":
                v = ad.add(ad.softplus(u), 1.0)
            elif transform == "softmax3":
                v = ad.softmax(u, axis=-1)
            else:
                raise ValueError(f"unknown head transform {transform!r}")
            setattr(out, name, v)
        return out
