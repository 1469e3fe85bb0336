"""Evaluation metrics.  Cross-entropy is kept in nats; ``bpc`` and ``ppl`` are
derived from it only when reporting."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

METRICS = ("mse", "ce", "bpc", "ppl", "acc")


@dataclass(frozen=True)
class EvalReport:
    metric: str
    value: float
    count: int
    split: str

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")
        if not math.isfinite(self.value):
            raise ValueError(f"{self.metric} on {self.split} is not finite: {self.value}")
        if self.count <= 0:
            raise ValueError("an evaluation needs at least one sample")


def mse(pred, target) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64).reshape(pred.shape)
    return float(np.mean((pred - target) ** 2))


def cross_entropy(logits, targets) -> float:
    """Mean of ``-log softmax(logits)[target]`` over every position.

    ``logits`` has the class axis last; ``targets`` holds ids with the
    remaining shape.
    """
    z = np.asarray(logits, dtype=np.float64)
    ids = np.asarray(targets)
    K = z.shape[-1]
    if ids.shape != z.shape[:-1]:
        raise ValueError(f"targets of shape {ids.shape} do not match logits {z.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= K):
        raise ValueError(f"target id {int(ids.max())} out of range for {K} classes")
    zmax = z.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z - zmax).sum(axis=-1)) + zmax[..., 0]
    picked = np.take_along_axis(z, ids[..., None], axis=-1)[..., 0]
    return float(np.mean(lse - picked))


def bpc(ce_nats: float) -> float:
    return ce_nats / math.log(2.0)


def ppl(ce_nats: float) -> float:
    return math.exp(ce_nats)


def accuracy(logits, labels) -> float:
    """Fraction of rows whose argmax equals the label; ties go to the lowest index."""
    z = np.asarray(logits)
    labels = np.asarray(labels)
    # np.argmax returns the first maximal index
    return float(np.mean(np.argmax(z, axis=-1) == labels))
