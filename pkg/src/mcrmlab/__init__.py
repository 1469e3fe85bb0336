"""Recurrent-cell laboratory: MCRM (a GRU nested as an LSTM's cell state)
next to RNN, GRU, LSTM and nested-LSTM baselines, with hand-written BPTT."""

from mcrmlab.cells import ARCHS, CellState, count_params, init_params, step
from mcrmlab.model import Model, init_model

__all__ = [
    "ARCHS",
    "CellState",
    "Model",
    "count_params",
    "init_model",
    "init_params",
    "step",
]

__version__ = "0.1.0"
