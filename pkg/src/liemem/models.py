"""Encoder-decoder models over external key-value memory.

Five families share one skeleton: an LSTM controller consumes the previous
read vector alongside the current input embedding, emits control heads, and
a memory step computes the new read. The encoder consumes <s> tokens </s>
and appends one memory per step; the decoder is fed a fixed placeholder
symbol (no teacher forcing), only reads, and produces logits over the full
vocabulary until it emits the end-of-output symbol.

Families:

* lantm     planar keys, additive shift actions, inverse-square or softmax reads
* slantm    sphere keys, axis-angle rotations, inverse-square or softmax reads
* ram       exponential inner-product addressing with controller-emitted pointers
* ram_tape  ram plus left/right neighbor keys and optional weight sharpening
* lstm      plain encoder-decoder without external memory

Head updates follow: blend the head with the proposed random-access key via
gate t, optionally blend the candidate action with the previous action via
gate r, then act on the blended key.
"""

from __future__ import annotations

import dataclasses
import io
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from . import controller as ctrl
from . import lie_groups as lg
from . import memory as mem
from .autodiff import Tensor
from .vocab import specials, total_vocab

MODEL_KINDS = ("lantm", "slantm", "ram", "ram_tape", "lstm")
WEIGHTINGS = ("inverse_square", "softmax")

CHECKPOINT_MAGIC = b"liemem-ckpt v1\n"


@dataclass
class ModelConfig:
    kind: str = "lantm"
    vocab: int = 128
    weighting: str = "inverse_square"   # lantm/slantm read scheme
    embed: int = 14
    cells: int = 50
    layers: int = 1
    memory_width: int = 20
    key_dim: int = 2
    angle_bound: bool = True            # slantm only
    action_interpolation: bool = False  # lantm/slantm only
    sharpen: bool = False               # ram_tape only
    fixed_temperature: float = 0.0      # >0 pins softmax T instead of emitting it

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.kind in ("lantm", "slantm") and self.weighting not in WEIGHTINGS:
            raise ValueError(f"unknown weighting {self.weighting!r}")
        if self.kind == "lantm" and self.key_dim != 2:
            raise ValueError("lantm uses planar keys (key_dim 2)")
        if self.kind == "slantm" and self.key_dim != 3:
            raise ValueError("slantm uses sphere keys (key_dim 3)")

    @property
    def manifold(self):
        return lg.SPHERE if self.kind == "slantm" else lg.PLANE

    @property
    def uses_memory(self):
        return self.kind != "lstm"

    @property
    def emits_temperature(self):
        return (
            self.kind in ("lantm", "slantm")
            and self.weighting == "softmax"
            and self.fixed_temperature <= 0
        )


def default_config(kind, vocab, **overrides):
    """Paper-scale defaults: 50-cell single-layer controller with memory
    width 20 and embedding 14 for memory models; 256-cell LSTM baseline."""
    base = dict(kind=kind, vocab=vocab)
    if kind == "lstm":
        base.update(embed=128, cells=256, layers=1, memory_width=0, key_dim=0)
    elif kind == "slantm":
        base.update(key_dim=3)
    elif kind in ("ram", "ram_tape"):
        base.update(key_dim=2)
    base.update(overrides)
    return ModelConfig(**base)


def head_fields(config):
    """Ordered (name, width, transform) layout of the head layer."""
    m = config.memory_width
    kd = config.key_dim
    f = []
    if config.kind == "lantm":
        f += [("shift", 2, "bounded_shift"), ("shift_w", 2, "bounded_shift")]
        f += [("key", 2, "linear"), ("key_w", 2, "linear")]
        f += [("gate_t", 1, "sigmoid"), ("gate_t_w", 1, "sigmoid")]
        if config.action_interpolation:
            f += [("gate_r", 1, "sigmoid"), ("gate_r_w", 1, "sigmoid")]
    elif config.kind == "slantm":
        angle_tf = "bounded_angle" if config.angle_bound else "linear"
        f += [("axis", 3, "unit"), ("angle", 1, angle_tf)]
        f += [("axis_w", 3, "unit"), ("angle_w", 1, angle_tf)]
        f += [("key", 3, "unit"), ("key_w", 3, "unit")]
        f += [("gate_t", 1, "sigmoid"), ("gate_t_w", 1, "sigmoid")]
        if config.action_interpolation:
            f += [("gate_r", 1, "sigmoid"), ("gate_r_w", 1, "sigmoid")]
    elif config.kind == "ram":
        f += [("pointer", kd, "linear"), ("key_w", kd, "linear")]
    elif config.kind == "ram_tape":
        f += [("key", kd, "linear"), ("tape_gate", 3, "softmax3"), ("key_w", kd, "linear")]
        if config.sharpen:
            f += [("gamma", 1, "gamma")]
    if config.uses_memory:
        f += [("value", m, "linear"), ("strength", 1, "sigmoid")]
    if config.emits_temperature:
        f += [("temperature", 1, "temperature")]
    return f


@dataclass
class StepState:
    lstm: list                          # [(c, h)] per layer
    rho: Optional[Tensor]               # last read (B, m)
    store: Optional[mem.MemoryStore]
    q: Optional[Tensor] = None          # read head on the key manifold
    q_w: Optional[Tensor] = None        # write head
    prev_action: object = None
    prev_action_w: object = None
    k_l: Optional[Tensor] = None        # ram_tape neighbor keys
    k_r: Optional[Tensor] = None


@dataclass
class TraceEvent:
    phase: str                          # encode | decode
    step: int
    head: str                           # read | write
    key: list
    strength: Optional[float] = None
    weights: Optional[list] = None      # [[index, weight], ...] top-16
    token: Optional[int] = None

    def to_dict(self):
        return dataclasses.asdict(self)


def _top_weights(w_row, k=16):
    idx = np.argsort(w_row)[::-1][:k]
    return [[int(i), float(w_row[i])] for i in idx]


class Model:
    """A parameterized model instance; parameters are owned by one run."""

    def __init__(self, config, params):
        self.config = config
        self.params = params
        self.head_layer = ctrl.HeadLayer(head_fields(config)) if config.uses_memory else None
        self.sp = specials(config.vocab)
        self.n_out = total_vocab(config.vocab)

    # -- construction --------------------------------------------------------

    @classmethod
    def init(cls, config, seed, scheme="fan_in"):
        rng = np.random.default_rng(seed)
        params = {}
        nv = total_vocab(config.vocab)
        params["embed"] = Tensor(ctrl.init_matrix(rng, nv, config.embed, scheme), requires_grad=True)
        in_width = config.embed + (config.memory_width if config.uses_memory else 0)
        for layer in range(config.layers):
            wx, wh, b = ctrl.init_lstm_params(rng, in_width if layer == 0 else config.cells, config.cells, scheme)
            params[f"lstm{layer}.wx"] = Tensor(wx, requires_grad=True)
            params[f"lstm{layer}.wh"] = Tensor(wh, requires_grad=True)
            params[f"lstm{layer}.b"] = Tensor(b, requires_grad=True)
        if config.uses_memory:
            layer = ctrl.HeadLayer(head_fields(config))
            hw, hb = layer.init_params(rng, config.cells, scheme)
            params["head.w"] = Tensor(hw, requires_grad=True)
            params["head.b"] = Tensor(hb, requires_grad=True)
        if config.kind == "slantm" and config.angle_bound:
            params["angle_scale"] = Tensor(np.array([np.pi / 2]), requires_grad=True)
        # the output layer sees the current read alongside the hidden state,
        # so decode-time reads are directly supervised
        out_in = config.cells + (config.memory_width if config.uses_memory else 0)
        params["out.w"] = Tensor(ctrl.init_matrix(rng, out_in, nv, scheme), requires_grad=True)
        params["out.b"] = Tensor(ctrl.init_bias(rng, out_in, nv, scheme), requires_grad=True)
        return cls(config, params)

    # -- state ----------------------------------------------------------------

    def initial_state(self, batch):
        cfg = self.config
        lstm = [
            (ad.zeros((batch, cfg.cells)), ad.zeros((batch, cfg.cells)))
            for _ in range(cfg.layers)
        ]
        if not cfg.uses_memory:
            return StepState(lstm=lstm, rho=None, store=None)
        state = StepState(
            lstm=lstm,
            rho=ad.zeros((batch, cfg.memory_width)),
            store=mem.MemoryStore.empty(cfg.key_dim, cfg.memory_width, (batch,)),
        )
        if cfg.kind in ("lantm", "slantm"):
            if cfg.manifold == lg.PLANE:
                state.q = ad.zeros((batch, 2))
                state.q_w = ad.zeros((batch, 2))
                kind = "shift"
            else:
                pole = np.zeros((batch, 3))
                pole[:, 2] = 1.0
                state.q = Tensor(pole.copy())
                state.q_w = Tensor(pole.copy())
                kind = "rotation"
            if cfg.action_interpolation:
                state.prev_action = lg.identity(kind, (batch,))
                state.prev_action_w = lg.identity(kind, (batch,))
        elif cfg.kind == "ram_tape":
            state.k_l = ad.zeros((batch, cfg.key_dim))
            state.k_r = ad.zeros((batch, cfg.key_dim))
        return state

    # -- one controller + memory step -----------------------------------------

    def _controller(self, tokens, state):
        """tokens (B,) int -> top hidden state; advances LSTM state in place."""
        x = ad.gather_rows(self.params["embed"], tokens)
        if self.config.uses_memory:
            x = ad.concat([x, state.rho], axis=-1)
        h = x
        new_lstm = []
        for layer in range(self.config.layers):
            c, h_prev = state.lstm[layer]
            c, h = ctrl.lstm_step(
                self.params[f"lstm{layer}.wx"],
                self.params[f"lstm{layer}.wh"],
                self.params[f"lstm{layer}.b"],
                h,
                c,
                h_prev,
            )
            new_lstm.append((c, h))
        state.lstm = new_lstm
        return h

    def _candidate_action(self, heads, write):
        cfg = self.config
        if cfg.kind == "lantm":
            vec = heads.shift_w if write else heads.shift
            return lg.Shift(vec)
        angle = heads.angle_w if write else heads.angle
        axis = heads.axis_w if write else heads.axis
        return lg.Rotation(axis, angle)

    def _move_head(self, heads, state, write):
        """Blend with the random-access key, blend actions, then act."""
        cfg = self.config
        q = state.q_w if write else state.q
        key = heads.key_w if write else heads.key
        t = heads.gate_t_w if write else heads.gate_t
        blended = lg.interpolate_keys(t, q, key, cfg.manifold)
        action = self._candidate_action(heads, write)
        if cfg.action_interpolation:
            prev = state.prev_action_w if write else state.prev_action
            r = heads.gate_r_w if write else heads.gate_r
            action = lg.interpolate_actions(r, action, prev)
            if write:
                state.prev_action_w = action
            else:
                state.prev_action = action
        return lg.apply(action, blended)

    def _read_weights(self, query, state, heads):
        cfg = self.config
        if cfg.kind in ("lantm", "slantm"):
            if cfg.weighting == "inverse_square":
                return mem.read_inverse_square(query, state.store)
            temp = heads.temperature if cfg.emits_temperature else cfg.fixed_temperature
            return mem.read_softmax(query, state.store, temp)
        w = mem.read_ram(query, state.store)
        if cfg.kind == "ram_tape" and cfg.sharpen:
            w = mem.sharpen(w, heads.gamma)
        return w

    def _memory_step(self, h, state, write, trace, phase, step, token_row):
        cfg = self.config
        heads = self.head_layer(
            self.params["head.w"],
            self.params["head.b"],
            h,
            angle_scale=self.params.get("angle_scale"),
        )

        if cfg.kind in ("lantm", "slantm"):
            state.q = self._move_head(heads, state, write=False)
            state.q_w = self._move_head(heads, state, write=True)
            query = state.q
        elif cfg.kind == "ram":
            query = heads.pointer
        else:  # ram_tape: select among proposed key and tape neighbors
            g = heads.tape_gate
            query = ad.add(
                ad.add(ad.mul(heads.key, g[:, 0:1]), ad.mul(state.k_l, g[:, 1:2])),
                ad.mul(state.k_r, g[:, 2:3]),
            )

        weights = None
        if len(state.store) > 0:
            weights = self._read_weights(query, state, heads)
            state.rho = mem.smooth(weights, state.store)
            if cfg.kind == "ram_tape":
                state.k_l, state.k_r = mem.neighbor_keys(weights, state.store)
        else:
            state.rho = ad.zeros(state.rho.data.shape)

        if trace is not None:
            w_row = weights.data[0] if weights is not None else np.zeros(0)
            trace.append(
                TraceEvent(
                    phase=phase,
                    step=step,
                    head="read",
                    key=[float(v) for v in np.asarray(query.data)[0]],
                    weights=_top_weights(w_row),
                    token=token_row,
                )
            )

        if write:
            write_key = state.q_w if cfg.kind in ("lantm", "slantm") else heads.key_w
            state.store = mem.append_write(
                state.store, write_key, heads.value, heads.strength[:, 0]
            )
            if trace is not None:
                trace.append(
                    TraceEvent(
                        phase=phase,
                        step=step,
                        head="write",
                        key=[float(v) for v in np.asarray(write_key.data)[0]],
                        strength=float(heads.strength.data[0, 0]),
                        token=token_row,
                    )
                )

    # -- encoder / decoder ------------------------------------------------------

    def encode(self, tokens, trace=None):
        """tokens (B, L) int array; runs <s> tokens </s>, writing each step."""
        tokens = np.asarray(tokens, dtype=np.int64)
        batch, length = tokens.shape
        state = self.initial_state(batch)
        cols = [np.full(batch, self.sp.bos, dtype=np.int64)]
        cols += [tokens[:, i] for i in range(length)]
        cols.append(np.full(batch, self.sp.eos_in, dtype=np.int64))
        for step, col in enumerate(cols):
            h = self._controller(col, state)
            if self.config.uses_memory:
                self._memory_step(
                    h, state, write=True, trace=trace, phase="encode", step=step,
                    token_row=int(col[0]),
                )
        return state

    def _decode_step(self, state, trace, step, token_row=None):
        batch = state.lstm[0][0].data.shape[0]
        col = np.full(batch, self.sp.go, dtype=np.int64)
        h = self._controller(col, state)
        if self.config.uses_memory:
            self._memory_step(
                h, state, write=False, trace=trace, phase="decode", step=step,
                token_row=token_row,
            )
            h = ad.concat([h, state.rho], axis=-1)
        return ad.add(ad.matmul(h, self.params["out.w"]), self.params["out.b"])

    def decode_train(self, state, n_steps, trace=None):
        """Exactly n_steps decoder steps; logits (B, n_steps, n_out)."""
        logits = []
        for step in range(n_steps):
            logits.append(self._decode_step(state, trace, step))
        return ad.stack(logits, axis=1)

    def decode_greedy(self, state, max_steps, trace=None):
        """Argmax decoding until end-of-output or the step cap.

        Returns (sequences without the end symbol, truncated flags).
        """
        batch = state.lstm[0][0].data.shape[0]
        out = [[] for _ in range(batch)]
        finished = np.zeros(batch, dtype=bool)
        with ad.no_grad():
            for step in range(max_steps):
                logits = self._decode_step(state, trace, step)
                picks = logits.data.argmax(axis=-1)
                if trace is not None and trace:
                    trace[-1].token = int(picks[0])
                for b in range(batch):
                    if finished[b]:
                        continue
                    if picks[b] == self.sp.eos_out:
                        finished[b] = True
                    else:
                        out[b].append(int(picks[b]))
                if finished.all():
                    break
        return out, ~finished

    def forward(self, tokens, n_dec_steps, trace=None):
        """Encode then run the training decoder; logits (B, n_dec_steps, n_out)."""
        state = self.encode(tokens, trace=trace)
        return self.decode_train(state, n_dec_steps, trace=trace)


def decode_cap(target_len):
    """Inference step budget: twice the target length plus ten."""
    return 2 * target_len + 10


# ---------------------------------------------------------------------------
# checkpoint persistence


def save_checkpoint(path, model, meta=None):
    cfg = dataclasses.asdict(model.config)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        for k in sorted(cfg):
            fh.write(f"config.{k}={cfg[k]}\n".encode())
        for k in sorted(meta or {}):
            fh.write(f"meta.{k}={(meta or {})[k]}\n".encode())
        names = sorted(model.params)
        fh.write(f"arrays {len(names)}\n".encode())
        for name in names:
            arr = np.ascontiguousarray(model.params[name].data, dtype="<f4")
            shape = ",".join(str(s) for s in arr.shape)
            fh.write(f"{name} <f4 {shape} {arr.nbytes}\n".encode())
            fh.write(arr.tobytes())


def _coerce(field_type, raw):
    if field_type == bool or field_type == "bool":
        return raw == "True"
    if field_type == int or field_type == "int":
        return int(raw)
    if field_type == float or field_type == "float":
        return float(raw)
    return raw


def load_checkpoint(path):
    """Returns (Model, meta dict); parameter bits match what was saved."""
    with open(path, "rb") as fh:
        blob = fh.read()
    buf = io.BytesIO(blob)
    if buf.readline() != CHECKPOINT_MAGIC:
        raise ValueError(f"{path} is not a checkpoint file")
    cfg_raw, meta = {}, {}
    line = buf.readline().decode()
    while not line.startswith("arrays "):
        key, _, val = line.rstrip("\n").partition("=")
        if key.startswith("config."):
            cfg_raw[key[len("config.") :]] = val
        elif key.startswith("meta."):
            meta[key[len("meta.") :]] = val
        line = buf.readline().decode()
    n_arrays = int(line.split()[1])

    types = {f.name: f.type for f in dataclasses.fields(ModelConfig)}
    cfg = ModelConfig(**{k: _coerce(types[k], v) for k, v in cfg_raw.items()})

    params = {}
    for _ in range(n_arrays):
        name, dtype, shape_s, nbytes = buf.readline().decode().split()
        shape = tuple(int(s) for s in shape_s.split(",") if s)
        raw = buf.read(int(nbytes))
        arr = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
        params[name] = Tensor(arr, requires_grad=True)
    return Model(cfg, params), meta
