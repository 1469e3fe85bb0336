"""Parameter records and single-timestep forward maps for the five cells.

Conventions shared by every cell:

* inputs are row vectors, ``x`` has shape ``(m,)`` or ``(batch, m)``;
* input weights are stored ``m x p`` and hidden weights ``p x p`` so every
  gate pre-activation reads ``x @ W_x + h @ W_h + b``;
* the LSTM family keeps one bias per gate while the GRU keeps the input/hidden
  bias pair per gate, each exactly as the respective cell is usually written.

The nested cells (``mcrm`` and ``nlstm``) feed their inner cell the 2p-vector
``concat(f * c_prev, i * g)``: the forget interaction first, then the input
interaction.  In both, the outer cell state *is* the inner hidden state, so
``CellState.c`` and ``CellState.inner_h`` are the same array.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, is_dataclass, replace
from typing import Iterator

import numpy as np

from mcrmlab.numkit import DTYPE, Rng, concat, sigmoid, tanh

ARCHS = ("rnn", "gru", "lstm", "nlstm", "mcrm")


@dataclass
class RnnParams:
    W_xh: np.ndarray
    W_hh: np.ndarray
    b_h: np.ndarray


@dataclass
class LstmParams:
    W_xi: np.ndarray
    W_xf: np.ndarray
    W_xc: np.ndarray
    W_xo: np.ndarray
    W_hi: np.ndarray
    W_hf: np.ndarray
    W_hc: np.ndarray
    W_ho: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_c: np.ndarray
    b_o: np.ndarray


@dataclass
class GruParams:
    W_ir: np.ndarray
    W_iz: np.ndarray
    W_in: np.ndarray
    W_hr: np.ndarray
    W_hz: np.ndarray
    W_hn: np.ndarray
    b_ir: np.ndarray
    b_iz: np.ndarray
    b_in: np.ndarray
    b_hr: np.ndarray
    b_hz: np.ndarray
    b_hn: np.ndarray


@dataclass
class McrmParams:
    outer: LstmParams
    inner: GruParams  # input width 2p


@dataclass
class NlstmParams:
    outer: LstmParams
    inner: LstmParams  # input width 2p


PARAM_TYPES = {
    "rnn": RnnParams,
    "gru": GruParams,
    "lstm": LstmParams,
    "nlstm": NlstmParams,
    "mcrm": McrmParams,
}


@dataclass
class CellState:
    h: np.ndarray
    c: np.ndarray | None = None
    inner_h: np.ndarray | None = None
    inner_c: np.ndarray | None = None

    def copy(self) -> "CellState":
        if self.c is not None and self.c is self.inner_h:
            c = self.c.copy()
            return CellState(self.h.copy(), c, c, None if self.inner_c is None else self.inner_c.copy())
        return CellState(*(None if v is None else v.copy() for v in (self.h, self.c, self.inner_h, self.inner_c)))


@dataclass
class StepTrace:
    """Everything one step computed: inputs, previous/next state, gates."""

    x: np.ndarray
    prev: CellState
    state: CellState
    values: dict = field(default_factory=dict)
    inner: "StepTrace | None" = None


# -- parameter-record utilities ------------------------------------------------

def named_tensors(params, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
    """Yield ``(dotted_name, array)`` in a fixed declaration order."""
    for f in fields(params):
        value = getattr(params, f.name)
        if is_dataclass(value):
            yield from named_tensors(value, f"{prefix}{f.name}.")
        elif isinstance(value, np.ndarray):
            yield f"{prefix}{f.name}", value


def map_params(fn, params, *others):
    """Rebuild a params record with ``fn`` applied tensor-wise across records."""
    kwargs = {}
    for f in fields(params):
        value = getattr(params, f.name)
        rest = [getattr(o, f.name) for o in others]
        if is_dataclass(value):
            kwargs[f.name] = map_params(fn, value, *rest)
        elif isinstance(value, np.ndarray):
            kwargs[f.name] = fn(value, *rest)
        else:
            kwargs[f.name] = value
    return type(params)(**kwargs)


def zeros_like(params):
    return map_params(np.zeros_like, params)


def flatten(params) -> np.ndarray:
    return np.concatenate([t.reshape(-1) for _, t in named_tensors(params)])


def arch_of(params) -> str:
    for arch, cls in PARAM_TYPES.items():
        if type(params) is cls:
            return arch
    raise ValueError(f"not a cell parameter record: {type(params).__name__}")


def dims_of(params) -> tuple[int, int]:
    """Return ``(m, p)`` for a cell parameter record."""
    if isinstance(params, RnnParams):
        return params.W_xh.shape
    if isinstance(params, (LstmParams,)):
        return params.W_xi.shape
    if isinstance(params, GruParams):
        return params.W_ir.shape
    return params.outer.W_xi.shape


def _check_arch(arch: str) -> None:
    if arch not in ARCHS:
        raise ValueError(f"unknown architecture {arch!r}; expected one of {', '.join(ARCHS)}")


def _shapes(arch: str, m: int, p: int) -> dict:
    if arch == "rnn":
        return {"W_xh": (m, p), "W_hh": (p, p), "b_h": (p,)}
    if arch == "lstm":
        s = {f"W_x{g}": (m, p) for g in "ifco"}
        s.update({f"W_h{g}": (p, p) for g in "ifco"})
        s.update({f"b_{g}": (p,) for g in "ifco"})
        return s
    if arch == "gru":
        s = {f"W_i{g}": (m, p) for g in "rzn"}
        s.update({f"W_h{g}": (p, p) for g in "rzn"})
        s.update({f"b_i{g}": (p,) for g in "rzn"})
        s.update({f"b_h{g}": (p,) for g in "rzn"})
        return s
    raise ValueError(arch)


def _build(cls, shapes: dict, make) -> object:
    return cls(**{f.name: make(shapes[f.name]) for f in fields(cls)})


def _make_params(arch: str, m: int, p: int, make):
    if arch == "mcrm":
        return McrmParams(_build(LstmParams, _shapes("lstm", m, p), make), _build(GruParams, _shapes("gru", 2 * p, p), make))
    if arch == "nlstm":
        return NlstmParams(_build(LstmParams, _shapes("lstm", m, p), make), _build(LstmParams, _shapes("lstm", 2 * p, p), make))
    return _build(PARAM_TYPES[arch], _shapes(arch, m, p), make)


def init_params(arch: str, m: int, p: int, rng: Rng):
    """Uniform(-1/sqrt(p), 1/sqrt(p)) draws for every weight and bias.

    Tensors are filled in declaration order from one stream, so the same seed
    always yields the same record.
    """
    _check_arch(arch)
    if m < 1 or p < 1:
        raise ValueError(f"dimensions must be positive, got m={m}, p={p}")
    bound = 1.0 / math.sqrt(p)
    return _make_params(arch, m, p, lambda shape: rng.uniform(-bound, bound, shape).astype(DTYPE))


def zero_params(arch: str, m: int, p: int):
    _check_arch(arch)
    return _make_params(arch, m, p, lambda shape: np.zeros(shape, dtype=DTYPE))


def count_params(arch: str, m: int, p: int, out: int = 0) -> int:
    """Scalar parameter count of the cell plus a width-``out`` affine readout."""
    _check_arch(arch)
    lstm = 4 * (m * p + p * p + p)
    core = {
        "rnn": m * p + p * p + p,
        "lstm": lstm,
        "gru": 3 * (m * p + p * p + 2 * p),
        "mcrm": lstm + 3 * (2 * p * p + p * p + 2 * p),
        "nlstm": lstm + 4 * (2 * p * p + p * p + p),
    }[arch]
    return core + p * out + out


def zero_state(arch: str, p: int, batch: int | None = None) -> CellState:
    _check_arch(arch)
    shape = (p,) if batch is None else (batch, p)
    h = np.zeros(shape, dtype=DTYPE)
    if arch in ("rnn", "gru"):
        return CellState(h)
    c = np.zeros(shape, dtype=DTYPE)
    if arch == "lstm":
        return CellState(h, c)
    if arch == "mcrm":
        return CellState(h, c, c)
    return CellState(h, c, c, np.zeros(shape, dtype=DTYPE))


# -- forward steps -------------------------------------------------------------

def _check_shapes(name: str, W_x: np.ndarray, x: np.ndarray, *states: np.ndarray) -> None:
    m, p = W_x.shape
    if x.shape[-1] != m:
        raise ValueError(f"{name}: input has width {x.shape[-1]} (shape {x.shape}) but W_x is {m}x{p}")
    for s in states:
        if s is None or s.shape[-1] != p:
            shape = None if s is None else s.shape
            raise ValueError(f"{name}: state shape {shape} does not match hidden width {p}")


def rnn_step(p: RnnParams, x, s: CellState) -> tuple[CellState, StepTrace]:
    x = np.asarray(x, dtype=DTYPE)
    _check_shapes("rnn_step", p.W_xh, x, s.h)
    h = tanh(x @ p.W_xh + s.h @ p.W_hh + p.b_h)
    new = CellState(h)
    return new, StepTrace(x, s, new)


def gru_step(p: GruParams, x, s: CellState) -> tuple[CellState, StepTrace]:
    x = np.asarray(x, dtype=DTYPE)
    h_prev = s.h
    _check_shapes("gru_step", p.W_ir, x, h_prev)
    r = sigmoid(x @ p.W_ir + p.b_ir + h_prev @ p.W_hr + p.b_hr)
    z = sigmoid(x @ p.W_iz + p.b_iz + h_prev @ p.W_hz + p.b_hz)
    hn = h_prev @ p.W_hn + p.b_hn
    n = tanh(x @ p.W_in + p.b_in + r * hn)
    h = (1.0 - z) * h_prev + z * n
    new = CellState(h)
    return new, StepTrace(x, s, new, {"r": r, "z": z, "n": n, "hn": hn})


def _outer_gates(p: LstmParams, x: np.ndarray, h_prev: np.ndarray) -> dict:
    i = sigmoid(x @ p.W_xi + h_prev @ p.W_hi + p.b_i)
    f = sigmoid(x @ p.W_xf + h_prev @ p.W_hf + p.b_f)
    g = tanh(x @ p.W_xc + h_prev @ p.W_hc + p.b_c)
    o = sigmoid(x @ p.W_xo + h_prev @ p.W_ho + p.b_o)
    return {"i": i, "f": f, "g": g, "o": o}


def lstm_step(p: LstmParams, x, s: CellState) -> tuple[CellState, StepTrace]:
    x = np.asarray(x, dtype=DTYPE)
    _check_shapes("lstm_step", p.W_xi, x, s.h, s.c)
    v = _outer_gates(p, x, s.h)
    c = v["f"] * s.c + v["i"] * v["g"]
    tc = tanh(c)
    h = v["o"] * tc
    v["tc"] = tc
    new = CellState(h, c)
    return new, StepTrace(x, s, new, v)


def mcrm_step(p: McrmParams, x, s: CellState) -> tuple[CellState, StepTrace]:
    """LSTM whose cell state is the hidden state of a nested GRU."""
    x = np.asarray(x, dtype=DTYPE)
    _check_shapes("mcrm_step", p.outer.W_xi, x, s.h, s.c)
    v = _outer_gates(p.outer, x, s.h)
    x_inner = concat(v["f"] * s.c, v["i"] * v["g"])
    inner_state, inner_trace = gru_step(p.inner, x_inner, CellState(s.c))
    c = inner_state.h
    tc = tanh(c)
    h = v["o"] * tc
    v["tc"] = tc
    new = CellState(h, c, c)
    return new, StepTrace(x, s, new, v, inner_trace)


def nlstm_step(p: NlstmParams, x, s: CellState) -> tuple[CellState, StepTrace]:
    """LSTM whose cell state is the hidden state of a nested LSTM."""
    x = np.asarray(x, dtype=DTYPE)
    _check_shapes("nlstm_step", p.outer.W_xi, x, s.h, s.c, s.inner_c)
    v = _outer_gates(p.outer, x, s.h)
    x_inner = concat(v["f"] * s.c, v["i"] * v["g"])
    inner_state, inner_trace = lstm_step(p.inner, x_inner, CellState(s.c, s.inner_c))
    c = inner_state.h
    tc = tanh(c)
    h = v["o"] * tc
    v["tc"] = tc
    new = CellState(h, c, c, inner_state.c)
    return new, StepTrace(x, s, new, v, inner_trace)


STEPS = {
    "rnn": rnn_step,
    "gru": gru_step,
    "lstm": lstm_step,
    "nlstm": nlstm_step,
    "mcrm": mcrm_step,
}


def step(arch: str, params, x, s: CellState) -> tuple[CellState, StepTrace]:
    _check_arch(arch)
    return STEPS[arch](params, x, s)


def memory_state(arch: str, s: CellState) -> dict[str, np.ndarray]:
    """The state each architecture treats as its memory, keyed by label."""
    _check_arch(arch)
    if arch in ("rnn", "gru"):
        return {"h": s.h}
    if arch == "lstm":
        return {"c": s.c}
    if arch == "mcrm":
        return {"h_gru": s.inner_h}
    return {"c_outer": s.c, "tanh_c_inner": np.tanh(s.inner_c)}


def with_tensor(params, name: str, value: np.ndarray):
    """Copy of ``params`` with one dotted-name tensor replaced."""
    head, _, rest = name.partition(".")
    if rest:
        return replace(params, **{head: with_tensor(getattr(params, head), rest, value)})
    return replace(params, **{head: value})
