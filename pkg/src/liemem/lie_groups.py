"""Key-space manifolds and the group actions that move heads across them.

Keys live either on the plane R^2 or on the unit sphere S^2. Heads are moved
by planar shifts (the additive group R^2) or by axis-angle rotations of the
sphere (Rodrigues' formula). Both actions are isometries of the Euclidean
metric used for reading, and both are differentiable with respect to their
parameters and the key, so they sit inside the recorded graph.

Interpolation helpers implement random-access blending of the head with a
controller-proposed key (straight line, projected back onto the sphere) and
the blend of a candidate action with the previous step's action.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor

PLANE = "plane"
SPHERE = "sphere"

# below this squared norm a pre-projection vector counts as degenerate
_DEGEN_SQ = 1e-18
_NUDGE = 1e-8


class DegenerateInterpolation(ArithmeticError):
    """Straight-line interpolation hit (numerically) the zero vector."""


@dataclass
class Shift:
    """Planar translation by ``vec`` with trailing shape (..., 2)."""

    vec: Tensor

    def __post_init__(self):
        self.vec = as_tensor(self.vec)


@dataclass
class Rotation:
    """Rotation about unit ``axis`` (..., 3) by ``angle`` radians (..., 1)."""

    axis: Tensor
    angle: Tensor

    def __post_init__(self):
        self.axis = as_tensor(self.axis)
        a = as_tensor(self.angle)
        if a.data.ndim == 0:
            a = ad.reshape(a, (1,))
        self.angle = a


def shift(alpha, beta):
    return Shift(Tensor([float(alpha), float(beta)]))


def rotation(axis, angle):
    return Rotation(Tensor(np.asarray(axis, dtype=float)), Tensor([float(angle)]))


def identity(kind, batch_shape=()):
    """Identity element: zero shift, or zero-angle rotation about (1,0,0)."""
    if kind == "shift":
        return Shift(ad.zeros(batch_shape + (2,)))
    axis = np.zeros(batch_shape + (3,))
    axis[..., 0] = 1.0
    return Rotation(Tensor(axis), ad.zeros(batch_shape + (1,)))


def normalize(v):
    """Project onto the unit sphere (L2 normalization over the last axis)."""
    return ad.div(v, ad.l2_norm(v, keepdims=True))


def apply(action, key):
    """Act on a key: componentwise addition, or Rodrigues' rotation
    q cos(theta) + (axis x q) sin(theta) + axis <axis, q> (1 - cos(theta))."""
    key = as_tensor(key)
    if isinstance(action, Shift):
        if key.data.shape[-1] != 2:
            raise ad.ShapeError("shift acts on planar keys (..., 2)")
        return ad.add(key, action.vec)
    if isinstance(action, Rotation):
        if key.data.shape[-1] != 3:
            raise ad.ShapeError("rotation acts on sphere keys (..., 3)")
        axis, theta = action.axis, action.angle
        cos_t = ad.tcos(theta)
        sin_t = ad.tsin(theta)
        term1 = ad.mul(key, cos_t)
        term2 = ad.mul(ad.cross3(axis, key), sin_t)
        proj = ad.dot(axis, key, keepdims=True)
        term3 = ad.mul(ad.mul(axis, proj), ad.sub(1.0, cos_t))
        return ad.add(ad.add(term1, term2), term3)
    raise TypeError(f"not a group action: {action!r}")


def inverse(action):
    """Inverse element: negated shift, or rotation by the negated angle."""
    if isinstance(action, Shift):
        return Shift(ad.neg(action.vec))
    if isinstance(action, Rotation):
        return Rotation(action.axis, ad.neg(action.angle))
    raise TypeError(f"not a group action: {action!r}")


def compose(a, b):
    """Composition for shifts (vector sum); rotations are not composed here."""
    if isinstance(a, Shift) and isinstance(b, Shift):
        return Shift(ad.add(a.vec, b.vec))
    raise TypeError("compose is defined for shifts only")


def distance(a, b):
    """Euclidean distance over the last axis (chordal on the sphere)."""
    return ad.l2_norm(ad.sub(as_tensor(a), as_tensor(b)))


def squared_distance(a, b):
    d = ad.sub(as_tensor(a), as_tensor(b))
    return ad.tsum(ad.mul(d, d), axis=-1)


def _project_or_nudge(vec, along):
    """Sphere projection; degenerate near-zero input raises in check mode and
    is nudged by 1e-8 along ``along`` in training mode."""
    sq = (np.asarray(vec.data) ** 2).sum(axis=-1)
    if (sq < _DEGEN_SQ).any():
        if ad.is_strict():
            raise DegenerateInterpolation("interpolation passed through zero")
        mask = (sq < _DEGEN_SQ).astype(vec.data.dtype)[..., None]
        vec = ad.add(vec, ad.mul(as_tensor(along), _NUDGE * mask))
    return normalize(vec)


def interpolate_keys(t, q, q_tilde, manifold):
    """Blend head q with proposed key q_tilde: t*q + (1-t)*q_tilde,
    projected back onto the sphere for spherical key spaces."""
    t = as_tensor(t)
    q, q_tilde = as_tensor(q), as_tensor(q_tilde)
    line = ad.add(ad.mul(q, t), ad.mul(q_tilde, ad.sub(1.0, t)))
    if manifold == PLANE:
        return line
    if manifold == SPHERE:
        return _project_or_nudge(line, q)
    raise ValueError(f"unknown manifold {manifold!r}")


def interpolate_actions(r, candidate, previous):
    """Blend a candidate action with the previous step's action via gate r.

    Shifts blend componentwise. Rotations blend axis (renormalized) and
    angle separately.
    """
    r = as_tensor(r)
    if isinstance(candidate, Shift) and isinstance(previous, Shift):
        vec = ad.add(ad.mul(candidate.vec, r), ad.mul(previous.vec, ad.sub(1.0, r)))
        return Shift(vec)
    if isinstance(candidate, Rotation) and isinstance(previous, Rotation):
        axis_line = ad.add(ad.mul(candidate.axis, r), ad.mul(previous.axis, ad.sub(1.0, r)))
        axis = _project_or_nudge(axis_line, candidate.axis)
        angle = ad.add(ad.mul(candidate.angle, r), ad.mul(previous.angle, ad.sub(1.0, r)))
        return Rotation(axis, angle)
    raise TypeError("action variants do not match")
