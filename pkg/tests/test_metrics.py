import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mcrmlab import metrics
from mcrmlab.metrics import EvalReport


def test_mse():
    assert metrics.mse([1, 2], [1, 2]) == 0.0
    assert metrics.mse([0], [2]) == 4.0
    rng = np.random.default_rng(0)
    a, b = rng.uniform(-3, 3, (2, 50))
    loop = sum((x - y) ** 2 for x, y in zip(a.tolist(), b.tolist())) / 50
    assert abs(metrics.mse(a, b) - loop) <= 1e-12


def test_cross_entropy_examples():
    assert metrics.cross_entropy(np.zeros(8), 3) == pytest.approx(math.log(8), abs=1e-15)
    z = np.zeros(5)
    z[2] = 20.0
    assert metrics.cross_entropy(z, 2) < 1e-8
    with pytest.raises(ValueError):
        metrics.cross_entropy(np.zeros(4), 4)


def naive_ce_hp(row, target):
    """High-precision unstabilised CE using exact rationals for the sum."""
    exps = [Fraction(math.exp(v)) for v in row]
    return -(math.log(math.exp(row[target])) - math.log(float(sum(exps))))


def test_cross_entropy_vs_naive_oracle():
    rng = np.random.default_rng(1)
    z = rng.uniform(-5, 5, (40, 7))
    t = rng.integers(0, 7, 40)
    oracle = sum(naive_ce_hp(r.tolist(), int(k)) for r, k in zip(z, t)) / 40
    assert abs(metrics.cross_entropy(z, t) - oracle) <= 1e-10


def test_cross_entropy_stable_for_large_logits():
    z = np.array([[1000.0, 0.0], [0.0, 1000.0]])
    assert metrics.cross_entropy(z, np.array([0, 1])) == 0.0
    assert metrics.cross_entropy(z, np.array([1, 1])) == pytest.approx(500.0)


@given(st.lists(st.floats(-30, 30), min_size=2, max_size=10), st.data())
def test_cross_entropy_nonnegative(row, data):
    k = data.draw(st.integers(0, len(row) - 1))
    assert metrics.cross_entropy(np.array(row), k) >= 0.0


def test_bpc_ppl():
    assert metrics.bpc(math.log(2)) == 1.0
    assert metrics.bpc(0.0) == 0.0
    assert metrics.bpc(math.log(256)) == 8.0
    assert metrics.ppl(0.0) == 1.0
    for K in (2, 10, 10_000):
        assert metrics.ppl(math.log(K)) == pytest.approx(K, rel=1e-14)


@given(st.floats(0, 20), st.floats(0, 20))
def test_transforms_preserve_ordering(a, b):
    if a < b:
        assert metrics.bpc(a) < metrics.bpc(b)
        assert metrics.ppl(a) <= metrics.ppl(b)


def test_accuracy():
    assert metrics.accuracy(np.eye(4), np.arange(4)) == 1.0
    assert metrics.accuracy(np.zeros((5, 3)), np.zeros(5, dtype=int)) == 1.0
    rng = np.random.default_rng(2)
    z = rng.integers(0, 3, (200, 4)).astype(float)  # plenty of ties
    y = rng.integers(0, 4, 200)
    hits = 0
    for row, label in zip(z.tolist(), y.tolist()):
        best = 0
        for k in range(1, len(row)):
            if row[k] > row[best]:
                best = k
        hits += best == label
    assert metrics.accuracy(z, y) == hits / 200


def test_eval_report_validation():
    r = EvalReport("bpc", 1.5, 10, "valid")
    assert r.metric == "bpc"
    with pytest.raises(ValueError):
        EvalReport("bleu", 1.0, 1, "test")
    with pytest.raises(ValueError):
        EvalReport("ce", float("nan"), 1, "test")
    with pytest.raises(ValueError):
        EvalReport("ce", 1.0, 0, "test")
