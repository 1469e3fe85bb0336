"""SGD, RMSprop and Adam over parameter records, plus global-norm clipping.

All updates are functional: they return fresh records and never touch the
arrays they were given.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from mcrmlab.cells import map_params, named_tensors, zeros_like

OPTIMIZERS = ("sgd", "rmsprop", "adam")

RMSPROP_DECAY = 0.99
ADAM_BETAS = (0.9, 0.999)
EPS = 1e-8


@dataclass
class OptState:
    kind: str
    step: int = 0
    m: object = None  # first moment (adam)
    v: object = None  # second moment (rmsprop, adam)


def init_state(kind: str, params) -> OptState:
    if kind not in OPTIMIZERS:
        raise ValueError(f"unknown optimizer {kind!r}; expected one of {', '.join(OPTIMIZERS)}")
    if kind == "sgd":
        return OptState(kind)
    if kind == "rmsprop":
        return OptState(kind, v=zeros_like(params))
    return OptState(kind, m=zeros_like(params), v=zeros_like(params))


def global_norm(grads) -> float:
    return math.sqrt(sum(float(np.dot(g.ravel(), g.ravel())) for _, g in named_tensors(grads)))


def clip_global_norm(grads, max_norm: float):
    """Scale every gradient by ``max_norm / norm`` when the joint norm exceeds it."""
    if max_norm <= 0:
        raise ValueError(f"max_norm must be positive, got {max_norm}")
    norm = global_norm(grads)
    if norm <= max_norm:
        return grads, norm
    scale = max_norm / norm
    return map_params(lambda g: g * scale, grads), norm


def sgd_step(params, grads, lr: float):
    return map_params(lambda p, g: p - lr * g, params, grads)


def rmsprop_step(params, grads, state: OptState, lr: float, decay: float = RMSPROP_DECAY, eps: float = EPS):
    v = map_params(lambda v, g: decay * v + (1.0 - decay) * g * g, state.v, grads)
    new = map_params(lambda p, g, v: p - lr * g / (np.sqrt(v) + eps), params, grads, v)
    return new, OptState(state.kind, state.step + 1, None, v)


def adam_step(params, grads, state: OptState, lr: float, beta1: float = ADAM_BETAS[0],
              beta2: float = ADAM_BETAS[1], eps: float = EPS):
    t = state.step + 1
    m = map_params(lambda m, g: beta1 * m + (1.0 - beta1) * g, state.m, grads)
    v = map_params(lambda v, g: beta2 * v + (1.0 - beta2) * g * g, state.v, grads)
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    new = map_params(lambda p, m, v: p - lr * (m / c1) / (np.sqrt(v / c2) + eps), params, m, v)
    return new, OptState(state.kind, t, m, v)


def apply(params, grads, state: OptState, lr: float):
    """Dispatch on ``state.kind``; returns ``(params, state)``."""
    if state.kind == "sgd":
        return sgd_step(params, grads, lr), OptState("sgd", state.step + 1)
    if state.kind == "rmsprop":
        return rmsprop_step(params, grads, state, lr)
    if state.kind == "adam":
        return adam_step(params, grads, state, lr)
    raise ValueError(f"unknown optimizer {state.kind!r}")
