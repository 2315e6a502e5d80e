"""Reverse-mode automatic differentiation over dense numpy arrays.

A Tensor wraps an ndarray and, while grad recording is on, remembers its
parent tensors plus a local backward rule. ``backward()`` on a scalar loss
walks the recorded graph in reverse topological order and accumulates
gradients additively into zero-initialized buffers, so shared parameters
(BPTT) are handled correctly. Forward values are never mutated in place;
replaying the same graph is bit-identical.

Two numeric modes exist:

* training mode (default): float32; ``div`` and ``log`` floor tiny
  denominators/arguments at 1e-12 so long unrolled sequences stay finite.
* check mode (``check_mode()``): float64, no clamping, strict handling of
  degenerate geometry. ``grad_check`` always runs in this mode.

Every op validates that its output is finite and raises NonFiniteError
otherwise; the training loop uses that signal to mark a run as diverged.
"""

from __future__ import annotations

import contextlib

import numpy as np

CLAMP_FLOOR = 1e-12


class NonFiniteError(FloatingPointError):
    """An op produced NaN or Inf."""


class ShapeError(ValueError):
    """Operand shapes do not conform."""


class TapeError(RuntimeError):
    """Misuse of the recorded graph (double backward, non-scalar loss)."""


class _Mode:
    __slots__ = ("dtype", "clamp", "strict")

    def __init__(self, dtype, clamp, strict):
        self.dtype = dtype
        self.clamp = clamp      # floor div/log inputs (training only)
        self.strict = strict    # raise on degenerate geometry instead of nudging


_TRAIN = _Mode(np.float32, True, False)
_CHECK = _Mode(np.float64, False, True)
_mode = _TRAIN
_grad_enabled = True


def mode():
    return _mode


def is_strict():
    return _mode.strict


@contextlib.contextmanager
def check_mode():
    """float64, no clamping, strict degenerate handling."""
    global _mode
    prev = _mode
    _mode = _CHECK
    try:
        yield
    finally:
        _mode = prev


@contextlib.contextmanager
def train_mode():
    global _mode
    prev = _mode
    _mode = _TRAIN
    try:
        yield
    finally:
        _mode = prev


@contextlib.contextmanager
def no_grad():
    """Skip graph recording (inference / numeric difference evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """Dense float array plus an optional recorded op for reverse mode."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_done")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data)
        if arr.dtype != _mode.dtype:
            arr = arr.astype(_mode.dtype)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self._done = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data.reshape(-1)[0])

    def detach(self):
        t = Tensor.__new__(Tensor)
        t.data = self.data
        t.grad = None
        t.requires_grad = False
        t._parents = ()
        t._backward = None
        t._done = False
        return t

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, key):
        return getitem(self, key)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def zeros(shape):
    return Tensor(np.zeros(shape, dtype=_mode.dtype))


def ones(shape):
    return Tensor(np.ones(shape, dtype=_mode.dtype))


def _check_finite(arr, op):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite output of op '{op}'")


def _node(data, op, parents, backward_fn):
    """Wrap an op output; records parents only when grads are wanted."""
    _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._done = False
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g, shape):
    """Sum gradient g down to the given (possibly broadcast) operand shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# primitive ops


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data
    return _node(data, "add", (a, b), lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data - b.data
    return _node(data, "sub", (a, b), lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data
    return _node(
        data,
        "mul",
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)),
    )


def broadcast_scale(a, s):
    """Multiply by a broadcastable scale; alias of mul kept for clarity."""
    return mul(a, s)


def _clamped(d):
    """Sign-preserving floor of tiny magnitudes at CLAMP_FLOOR (training only)."""
    small = np.abs(d) < CLAMP_FLOOR
    if not small.any():
        return d
    out = d.copy()
    out[small] = np.where(d[small] >= 0, CLAMP_FLOOR, -CLAMP_FLOOR)
    return out


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    denom = _clamped(np.asarray(b.data)) if _mode.clamp else b.data
    with np.errstate(divide="ignore", invalid="ignore"):
        data = a.data / denom
    _check_finite(data, "div")
    return _node(
        data,
        "div",
        (a, b),
        lambda g: (
            _unbroadcast(g / denom, a.data.shape),
            _unbroadcast(-g * a.data / (denom * denom), b.data.shape),
        ),
    )


def neg(a):
    a = as_tensor(a)
    return _node(-a.data, "neg", (a,), lambda g: (-g,))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.data.shape} @ {b.data.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        data = a.data @ b.data
    return _node(data, "matmul", (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def concat(tensors, axis=-1):
    ts = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(data, "concat", tuple(ts), back)


def stack(tensors, axis=0):
    ts = [as_tensor(t) for t in tensors]
    data = np.stack([t.data for t in ts], axis=axis)

    def back(g):
        parts = np.split(g, len(ts), axis=axis)
        return tuple(p.squeeze(axis=axis) for p in parts)

    return _node(data, "stack", tuple(ts), back)


def getitem(a, key):
    """Basic (int/slice/tuple) indexing; slices must not repeat elements."""
    a = as_tensor(a)
    data = a.data[key]

    def back(g):
        full = np.zeros_like(a.data)
        full[key] += g
        return (full,)

    return _node(data, "slice", (a,), back)


def reshape(a, shape):
    a = as_tensor(a)
    data = a.data.reshape(shape)
    return _node(data, "reshape", (a,), lambda g: (g.reshape(a.data.shape),))


def expand_dims(a, axis):
    a = as_tensor(a)
    new_shape = list(a.data.shape)
    new_shape.insert(axis if axis >= 0 else len(new_shape) + 1 + axis, 1)
    return reshape(a, tuple(new_shape))


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return _node(np.asarray(data), "sum", (a,), back)


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def power(a, p):
    """Elementwise a**p; p may be a float or a Tensor (e.g. sharpening gamma)."""
    a = as_tensor(a)
    if isinstance(p, Tensor):
        with np.errstate(divide="ignore", invalid="ignore"):
            data = a.data ** p.data
        _check_finite(data, "power")

        def back(g):
            ga = g * p.data * a.data ** (p.data - 1.0)
            # limit x^p*log(x) -> 0 as x -> 0+
            safe = np.where(a.data > 0, a.data, 1.0)
            gp = g * data * np.log(safe)
            return (_unbroadcast(ga, a.data.shape), _unbroadcast(gp, p.data.shape))

        return _node(data, "power", (a, p), back)
    pf = float(p)
    data = a.data ** pf
    return _node(data, "power", (a,), lambda g: (g * pf * a.data ** (pf - 1.0),))


def texp(a):
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        data = np.exp(a.data)
    _check_finite(data, "exp")
    return _node(data, "exp", (a,), lambda g: (g * data,))


def tlog(a):
    a = as_tensor(a)
    arg = a.data
    if _mode.clamp:
        arg = np.maximum(arg, CLAMP_FLOOR)
    with np.errstate(divide="ignore", invalid="ignore"):
        data = np.log(arg)
    _check_finite(data, "log")
    return _node(data, "log", (a,), lambda g: (g / arg,))


def tanh(a):
    a = as_tensor(a)
    data = np.tanh(a.data)
    return _node(data, "tanh", (a,), lambda g: (g * (1.0 - data * data),))


def tcos(a):
    a = as_tensor(a)
    return _node(np.cos(a.data), "cos", (a,), lambda g: (-g * np.sin(a.data),))


def tsin(a):
    a = as_tensor(a)
    return _node(np.sin(a.data), "sin", (a,), lambda g: (g * np.cos(a.data),))


def sigmoid(a):
    a = as_tensor(a)
    x = a.data
    with np.errstate(over="ignore"):
        data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    data = data.astype(x.dtype)
    return _node(data, "sigmoid", (a,), lambda g: (g * data * (1.0 - data),))


def softplus(a):
    a = as_tensor(a)
    data = np.logaddexp(0.0, a.data).astype(a.data.dtype)
    # d/dx log(1+e^x) = sigmoid(x)
    x = a.data
    with np.errstate(over="ignore"):
        sg = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return _node(data, "softplus", (a,), lambda g: (g * sg,))


def softmax(a, axis=-1):
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        return ((g - dot) * data,)

    return _node(data, "softmax", (a,), back)


def dot(a, b, keepdims=False):
    """Inner product over the last axis."""
    return tsum(mul(a, b), axis=-1, keepdims=keepdims)


def l2_norm(a, axis=-1, keepdims=False, eps=0.0):
    """Euclidean norm over ``axis``; eps>0 smooths the gradient at zero."""
    sq = tsum(mul(a, a), axis=axis, keepdims=keepdims)
    if eps:
        sq = add(sq, eps * eps)
    return power(sq, 0.5)


def cross3(a, b):
    """Cross product of 3-vectors along the last axis."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape[-1] != 3 or b.data.shape[-1] != 3:
        raise ShapeError("cross3 expects trailing dimension 3")
    data = np.cross(a.data, b.data)
    return _node(
        data,
        "cross3",
        (a, b),
        lambda g: (
            _unbroadcast(np.cross(b.data, g), a.data.shape),
            _unbroadcast(np.cross(g, a.data), b.data.shape),
        ),
    )


def gather_rows(m, idx):
    """Rows of a 2-D matrix by integer index array (embedding lookup)."""
    m = as_tensor(m)
    idx = np.asarray(idx)
    data = m.data[idx]

    def back(g):
        full = np.zeros_like(m.data)
        np.add.at(full, idx, g)
        return (full,)

    return _node(data, "slice", (m,), back)


def gather_last(a, idx):
    """take_along_axis over the last axis; idx has a single trailing column."""
    a = as_tensor(a)
    idx = np.asarray(idx)
    data = np.take_along_axis(a.data, idx, axis=-1)

    def back(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, idx, g, axis=-1)
        return (full,)

    return _node(data, "slice", (a,), back)


# ---------------------------------------------------------------------------
# backward pass


def _topo_order(root):
    order, visited, stk = [], set(), [(root, False)]
    while stk:
        node, expanded = stk.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stk.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stk.append((p, False))
    return order


def backward(loss):
    """Accumulate d(loss)/d(node) into .grad of every reachable tensor."""
    if loss.data.size != 1:
        raise TapeError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if loss._done:
        raise TapeError("backward called twice on the same loss without reset")
    loss._done = True
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        grads = node._backward(node.grad)
        for p, g in zip(node._parents, grads):
            if g is None or not p.requires_grad:
                continue
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
            p.grad = p.grad + g


def zero_grads(params):
    for p in params.values() if isinstance(params, dict) else params:
        p.grad = None


def grad_of(p):
    """Gradient buffer of a parameter; zeros when unreachable from the loss."""
    return p.grad if p.grad is not None else np.zeros_like(p.data)


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(f, inputs, eps=1e-5, rng=None, max_coords=None):
    """Max relative error between backward() and central differences.

    f maps a list of Tensors to a scalar Tensor; inputs are numpy arrays.
    Always evaluated in 64-bit check mode. With ``max_coords``, a seeded
    random subset of coordinates is probed (used for whole-model checks).
    Error metric per coordinate: |analytic - numeric| / max(1, |analytic|, |numeric|).
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in inputs]
    with check_mode():
        ts = [Tensor(a.copy(), requires_grad=True) for a in arrays]
        out = f(*ts)
        if out.data.size != 1:
            raise TapeError("grad_check target must be scalar")
        backward(out)
        analytic = [grad_of(t) for t in ts]

        coords = [(i, j) for i, a in enumerate(arrays) for j in range(a.size)]
        if max_coords is not None and len(coords) > max_coords:
            rng = rng or np.random.default_rng(0)
            sel = rng.choice(len(coords), size=max_coords, replace=False)
            coords = [coords[int(k)] for k in sel]

        def eval_at(pert_arrays):
            with no_grad():
                val = f(*[Tensor(a) for a in pert_arrays])
            return float(val.data.reshape(-1)[0])

        worst = 0.0
        for i, j in coords:
            orig = arrays[i].flat[j]
            arrays[i].flat[j] = orig + eps
            fp = eval_at(arrays)
            arrays[i].flat[j] = orig - eps
            fm = eval_at(arrays)
            arrays[i].flat[j] = orig
            numeric = (fp - fm) / (2.0 * eps)
            analytic_ij = analytic[i].flat[j]
            rel = abs(analytic_ij - numeric) / max(1.0, abs(analytic_ij), abs(numeric))
            worst = max(worst, rel)
    return worst
