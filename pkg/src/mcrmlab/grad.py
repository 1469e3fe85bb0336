"""Backpropagation through time for every cell, and the finite-difference oracle.

Each cell has a hand-written backward step that consumes the ``StepTrace`` its
forward step produced.  The nested cells route the gradient of the inner
input ``concat(f * c_prev, i * g)`` back into ``f``, ``c_prev``, ``i`` and the
candidate ``g`` by splitting it at column ``p``.

Loss heads (per sequence; the batch loss is the *sum* over sequences):

``mse``
    mean squared error of the final-step readout against ``(B,)`` or
    ``(B, out)`` targets.
``ce``
    cross-entropy at every step against ``(B, T)`` class ids, averaged over T.
``ce_last``
    cross-entropy of the final-step readout against ``(B,)`` class ids.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mcrmlab import cells
from mcrmlab.cells import CellState, StepTrace
from mcrmlab.model import Model, readout, run
from mcrmlab.numkit import DTYPE

LOSSES = ("mse", "ce", "ce_last")


class NonFiniteLossError(FloatingPointError):
    def __init__(self, timestep: int):
        super().__init__(f"non-finite loss: first offending timestep is t={timestep}")
        self.timestep = timestep


@dataclass
class Tape:
    traces: list
    H: np.ndarray
    logits: np.ndarray  # readout at the scored steps
    final_state: CellState


# -- loss heads ----------------------------------------------------------------

def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def loss_head(loss: str, Y: np.ndarray, targets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-sequence losses ``(B,)`` and ``dLoss/dY`` for the summed batch loss.

    ``Y`` is ``(B, T, out)`` for ``ce`` and ``(B, out)`` otherwise.
    """
    if loss == "mse":
        t = np.asarray(targets, dtype=DTYPE).reshape(Y.shape)
        diff = Y - t
        per_seq = (diff ** 2).mean(axis=-1)
        return per_seq, 2.0 * diff / Y.shape[-1]
    if loss in ("ce", "ce_last"):
        ids = np.asarray(targets)
        K = Y.shape[-1]
        if ids.shape != Y.shape[:-1]:
            raise ValueError(f"targets of shape {ids.shape} do not match logits {Y.shape}")
        if ids.size and (ids.min() < 0 or ids.max() >= K):
            raise ValueError(f"target id out of range for {K} classes")
        logp = _log_softmax(Y)
        picked = np.take_along_axis(logp, ids[..., None], axis=-1)[..., 0]
        probs = np.exp(logp)
        dY = probs
        np.put_along_axis(dY, ids[..., None], np.take_along_axis(probs, ids[..., None], axis=-1) - 1.0, axis=-1)
        if loss == "ce":
            T = Y.shape[1]
            return -picked.mean(axis=1), dY / T
        return -picked, dY
    raise ValueError(f"unknown loss {loss!r}; expected one of {', '.join(LOSSES)}")


def forward_loss(model: Model, inputs, targets, loss: str, state: CellState | None = None) -> tuple[float, Tape, np.ndarray]:
    H, traces, final = run(model, inputs, state)
    Y = readout(model, H if loss == "ce" else H[:, -1])
    per_seq, dY = loss_head(loss, Y, targets)
    total = float(per_seq.sum())
    if not np.isfinite(total):
        raise NonFiniteLossError(_first_bad_step(H, Y, loss))
    return total, Tape(traces, H, Y, final), dY


def _first_bad_step(H: np.ndarray, Y: np.ndarray, loss: str) -> int:
    bad = ~np.isfinite(H).all(axis=(0, 2))
    if loss == "ce":
        bad |= ~np.isfinite(Y).all(axis=(0, 2))
    hits = np.flatnonzero(bad)
    return int(hits[0]) if hits.size else H.shape[1] - 1


# -- per-cell backward steps ---------------------------------------------------
#
# Weight gradients are not formed step by step.  Each step hands its input rows
# and pre-activation gradients to a ``_Collector``; after the time loop one
# matmul per gate group produces the weight and bias gradients.  The recurrent
# back-projection uses the gate matrices stacked side by side.

# input side and hidden side of each cell kind: (weights, biases), gate order
GATE_GROUPS = {
    "rnn": {"x": (("W_xh",), ("b_h",)), "h": (("W_hh",), ())},
    "gru": {"x": (("W_ir", "W_iz", "W_in"), ("b_ir", "b_iz", "b_in")),
            "h": (("W_hr", "W_hz", "W_hn"), ("b_hr", "b_hz", "b_hn"))},
    "lstm": {"x": (("W_xi", "W_xf", "W_xc", "W_xo"), ("b_i", "b_f", "b_c", "b_o")),
             "h": (("W_hi", "W_hf", "W_hc", "W_ho"), ())},
}


class _Collector:
    def __init__(self, params, kind: str):
        self.kind = kind
        self.stacked_T = {side: np.hstack([getattr(params, n) for n in names]).T
                          for side, (names, _) in GATE_GROUPS[kind].items()}
        self.rows = {"x": [], "h": []}
        self.deltas = {"x": [], "h": []}

    def add(self, side: str, rows: np.ndarray, delta: np.ndarray) -> np.ndarray:
        """Record one step and return the gradient w.r.t. ``rows``."""
        self.rows[side].append(rows)
        self.deltas[side].append(delta)
        return delta @ self.stacked_T[side]

    def finish(self, g) -> None:
        for side, (wnames, bnames) in GATE_GROUPS[self.kind].items():
            D = np.concatenate(self.deltas[side])
            G = np.concatenate(self.rows[side]).T @ D
            w = G.shape[1] // len(wnames)
            for k, name in enumerate(wnames):
                getattr(g, name)[...] += G[:, k * w:(k + 1) * w]
            if bnames:
                b = D.sum(axis=0)
                for k, name in enumerate(bnames):
                    getattr(g, name)[...] += b[k * w:(k + 1) * w]


def _collectors(arch: str, p) -> list:
    if arch == "mcrm":
        return [_Collector(p.outer, "lstm"), _Collector(p.inner, "gru")]
    if arch == "nlstm":
        return [_Collector(p.outer, "lstm"), _Collector(p.inner, "lstm")]
    return [_Collector(p, arch)]


def _outer_backward(col: _Collector, tr: StepTrace, di, df, dg, do):
    """Shared LSTM gate backward; returns ``(dx, dh_prev)``."""
    v = tr.values
    da = np.concatenate([di * v["i"] * (1.0 - v["i"]),
                         df * v["f"] * (1.0 - v["f"]),
                         dg * (1.0 - v["g"] ** 2),
                         do * v["o"] * (1.0 - v["o"])], axis=1)
    return col.add("x", tr.x, da), col.add("h", tr.prev.h, da)


def rnn_backward(cols, tr: StepTrace, d: CellState):
    da = d.h * (1.0 - tr.state.h ** 2)
    return cols[0].add("x", tr.x, da), CellState(cols[0].add("h", tr.prev.h, da))


def gru_backward(cols, tr: StepTrace, d: CellState):
    v = tr.values
    h_prev = tr.prev.h
    r, z, n, hn = v["r"], v["z"], v["n"], v["hn"]
    dh = d.h
    dz = dh * (n - h_prev)
    dn = dh * z
    da_n = dn * (1.0 - n ** 2)
    dhn = da_n * r
    da_r = da_n * hn * r * (1.0 - r)
    da_z = dz * z * (1.0 - z)
    dx = cols[0].add("x", tr.x, np.concatenate([da_r, da_z, da_n], axis=1))
    dh_prev = dh * (1.0 - z) + cols[0].add("h", h_prev, np.concatenate([da_r, da_z, dhn], axis=1))
    return dx, CellState(dh_prev)


def lstm_backward(cols, tr: StepTrace, d: CellState):
    v = tr.values
    tc = v["tc"]
    dc = d.c + d.h * v["o"] * (1.0 - tc ** 2)
    do = d.h * tc
    di = dc * v["g"]
    df = dc * tr.prev.c
    dg = dc * v["i"]
    dx, dh_prev = _outer_backward(cols[0], tr, di, df, dg, do)
    return dx, CellState(dh_prev, dc * v["f"])


def _nested_backward(cols, tr: StepTrace, d: CellState, inner_backward, d_inner: CellState):
    """Common tail of the two nested cells once the inner gradient is known."""
    v = tr.values
    width = tr.prev.c.shape[-1]
    dx_inner, d_inner_prev = inner_backward(cols[1:], tr.inner, d_inner)
    d_fc = dx_inner[:, :width]
    d_ig = dx_inner[:, width:]
    df = d_fc * tr.prev.c
    di = d_ig * v["g"]
    dg = d_ig * v["i"]
    do = d.h * v["tc"]
    dx, dh_prev = _outer_backward(cols[0], tr, di, df, dg, do)
    dc_prev = d_inner_prev.h + d_fc * v["f"]
    return dx, dh_prev, dc_prev, d_inner_prev


def mcrm_backward(cols, tr: StepTrace, d: CellState):
    tc = tr.values["tc"]
    dc = d.c + d.h * tr.values["o"] * (1.0 - tc ** 2)
    dx, dh_prev, dc_prev, _ = _nested_backward(cols, tr, d, gru_backward, CellState(dc))
    return dx, CellState(dh_prev, dc_prev, dc_prev)


def nlstm_backward(cols, tr: StepTrace, d: CellState):
    tc = tr.values["tc"]
    dc = d.c + d.h * tr.values["o"] * (1.0 - tc ** 2)
    dx, dh_prev, dc_prev, d_inner_prev = _nested_backward(cols, tr, d, lstm_backward, CellState(dc, d.inner_c))
    return dx, CellState(dh_prev, dc_prev, dc_prev, d_inner_prev.c)


BACKWARDS = {
    "rnn": rnn_backward,
    "gru": gru_backward,
    "lstm": lstm_backward,
    "nlstm": nlstm_backward,
    "mcrm": mcrm_backward,
}


# -- sequence level ------------------------------------------------------------

def backward(model: Model, tape: Tape, dY: np.ndarray, loss: str, inputs) -> Model:
    """Gradients of the summed batch loss for every tensor of ``model``."""
    arch = model.arch
    grads = cells.zeros_like(model)
    H = tape.H
    B, T, p = H.shape
    if loss == "ce":
        grads.W_out += H.reshape(-1, p).T @ dY.reshape(-1, dY.shape[-1])
        grads.b_out += dY.sum(axis=(0, 1))
        dH = dY @ model.W_out.T
    else:
        grads.W_out += H[:, -1].T @ dY
        grads.b_out += dY.sum(axis=0)
        dH = np.zeros_like(H)
        dH[:, -1] = dY @ model.W_out.T
    back = BACKWARDS[arch]
    d = cells.zero_state(arch, p, B)
    ids = None if model.E is None else np.asarray(inputs)
    cols = _collectors(arch, model.cell)
    for t in range(T - 1, -1, -1):
        d.h = d.h + dH[:, t]
        dx, d = back(cols, tape.traces[t], d)
        if ids is not None:
            np.add.at(grads.E, ids[:, t], dx)
    if arch in ("mcrm", "nlstm"):
        cols[0].finish(grads.cell.outer)
        cols[1].finish(grads.cell.inner)
    else:
        cols[0].finish(grads.cell)
    return grads


def backprop_sequence(model: Model, inputs, targets, loss: str, arch: str | None = None,
                      state: CellState | None = None) -> tuple[float, Model, CellState]:
    """Summed batch loss, its exact gradient, and the final recurrent state.

    Gradients come back as a ``Model`` record whose tensors mirror ``model``.
    ``state`` seeds the recurrence (language-model windows); no gradient flows
    into it.
    """
    if arch is not None and arch != model.arch:
        raise ValueError(f"arch {arch!r} does not match the parameter record ({model.arch!r})")
    total, tape, dY = forward_loss(model, inputs, targets, loss, state)
    return total, backward(model, tape, dY, loss, inputs), tape.final_state


def sequence_loss(model: Model, inputs, targets, loss: str, state: CellState | None = None) -> float:
    H, _, _ = run(model, inputs, state)
    Y = readout(model, H if loss == "ce" else H[:, -1])
    return float(loss_head(loss, Y, targets)[0].sum())


def finite_diff_grad(model: Model, inputs, targets, loss: str, arch: str | None = None, eps: float = 1e-5,
                     loss_fn=None) -> Model:
    """Central differences ``(L(θ+ε) - L(θ-ε)) / 2ε`` for every scalar parameter.

    ``loss_fn(model) -> float`` overrides the sequence loss, which lets the
    oracle be checked on toy objectives.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    if loss_fn is None:
        def loss_fn(m):
            return sequence_loss(m, inputs, targets, loss)
    work = model.copy()
    grads = cells.zeros_like(work)
    for (_, theta), (_, gt) in zip(cells.named_tensors(work), cells.named_tensors(grads)):
        flat = theta.reshape(-1)
        out = gt.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            up = loss_fn(work)
            flat[k] = orig - eps
            down = loss_fn(work)
            flat[k] = orig
            out[k] = (up - down) / (2.0 * eps)
    return grads


def relative_error(analytic: Model, numeric: Model) -> dict[str, float]:
    """Per-tensor ``max|g_bp - g_fd| / (max|g_fd| + 1e-8)``."""
    errors = {}
    for (name, a), (_, n) in zip(cells.named_tensors(analytic), cells.named_tensors(numeric)):
        errors[name] = float(np.abs(a - n).max() / (np.abs(n).max() + 1e-8))
    return errors


def global_relative_error(analytic: Model, numeric: Model) -> float:
    """``max|g_bp - g_fd| / (max|g_fd| + 1e-8)`` over every scalar of every tensor.

    One normaliser for the whole gradient set, so a tensor whose true gradient
    is ~1e-6 does not turn finite-difference roundoff into a large ratio.
    """
    a = cells.flatten(analytic)
    n = cells.flatten(numeric)
    return float(np.abs(a - n).max() / (np.abs(n).max() + 1e-8))
