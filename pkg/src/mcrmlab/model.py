"""A cell plus its affine readout (and, for token tasks, an embedding table)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from mcrmlab import cells
from mcrmlab.cells import CellState, StepTrace
from mcrmlab.numkit import DTYPE, Rng


@dataclass
class Model:
    cell: object
    W_out: np.ndarray  # p x out
    b_out: np.ndarray
    E: np.ndarray | None = None  # vocab x m, only when inputs are token ids

    @property
    def arch(self) -> str:
        return cells.arch_of(self.cell)

    @property
    def input_dim(self) -> int:
        return cells.dims_of(self.cell)[0]

    @property
    def hidden(self) -> int:
        return cells.dims_of(self.cell)[1]

    @property
    def out_dim(self) -> int:
        return self.W_out.shape[1]

    @property
    def vocab(self) -> int | None:
        return None if self.E is None else self.E.shape[0]

    def n_params(self) -> int:
        return sum(t.size for _, t in cells.named_tensors(self))

    def copy(self) -> "Model":
        return cells.map_params(np.copy, self)


def init_model(arch: str, m: int, p: int, out: int, rng: Rng, vocab: int | None = None) -> Model:
    """Cell, readout, then embedding, all uniform(-1/sqrt(p), 1/sqrt(p)).

    The embedding table uses the same bound so every tensor in the run shares
    one initialisation scheme.
    """
    cell = cells.init_params(arch, m, p, rng)
    bound = 1.0 / math.sqrt(p)
    W_out = rng.uniform(-bound, bound, (p, out)).astype(DTYPE)
    b_out = rng.uniform(-bound, bound, (out,)).astype(DTYPE)
    E = None if vocab is None else rng.uniform(-bound, bound, (vocab, m)).astype(DTYPE)
    return Model(cell, W_out, b_out, E)


def model_param_count(arch: str, m: int, p: int, out: int, vocab: int | None = None) -> int:
    return cells.count_params(arch, m, p, out) + (0 if vocab is None else vocab * m)


def embed(model: Model, inputs: np.ndarray) -> np.ndarray:
    """Token ids ``(B, T)`` -> ``(B, T, m)``; float inputs pass through."""
    if model.E is None:
        x = np.asarray(inputs, dtype=DTYPE)
        if x.ndim != 3:
            raise ValueError(f"expected inputs of shape (batch, T, m), got {x.shape}")
        return x
    ids = np.asarray(inputs)
    if ids.ndim != 2 or not np.issubdtype(ids.dtype, np.integer):
        raise ValueError(f"a model with an embedding table takes integer ids (batch, T), got {ids.dtype} {ids.shape}")
    return model.E[ids]


def run(model: Model, inputs: np.ndarray, state: CellState | None = None) -> tuple[np.ndarray, list[StepTrace], CellState]:
    """Unroll the cell over a batch.

    Returns the stacked hidden states ``(B, T, p)``, the per-step traces and
    the final state.  ``state`` defaults to zeros.
    """
    x = embed(model, inputs)
    B, T, _ = x.shape
    arch = model.arch
    if state is None:
        state = cells.zero_state(arch, model.hidden, B)
    fn = cells.STEPS[arch]
    traces = []
    H = np.empty((B, T, model.hidden), dtype=DTYPE)
    for t in range(T):
        state, tr = fn(model.cell, x[:, t], state)
        traces.append(tr)
        H[:, t] = state.h
    return H, traces, state


def readout(model: Model, H: np.ndarray) -> np.ndarray:
    return H @ model.W_out + model.b_out
