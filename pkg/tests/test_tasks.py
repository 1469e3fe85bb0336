import csv
import math
import struct

import numpy as np
import pytest

from mcrmlab import tasks
from mcrmlab.numkit import Rng


# -- adding -------------------------------------------------------------------------

def test_adding_contract():
    tb = tasks.gen_adding(Rng(0), 30, 500)
    assert tb.inputs.shape == (500, 30, 2)
    marks = tb.inputs[..., 1]
    assert (marks.sum(axis=1) == 2).all()
    assert set(np.unique(marks)) <= {0.0, 1.0}
    first = marks[:, :15].argmax(axis=1)
    second = 15 + marks[:, 15:].argmax(axis=1)
    rows = np.arange(500)
    expect = tb.inputs[rows, first, 0] + tb.inputs[rows, second, 0]
    assert tb.targets.tobytes() == expect.tobytes()
    assert (tb.targets >= 0).all() and (tb.targets < 2).all()


def test_adding_short_and_odd_lengths():
    tb = tasks.gen_adding(Rng(1), 2, 50)
    assert (tb.inputs[..., 1] == 1).all()
    tb = tasks.gen_adding(Rng(1), 3, 50)
    assert (tb.inputs[..., 1].sum(axis=1) == 2).all()
    with pytest.raises(ValueError):
        tasks.gen_adding(Rng(1), 1, 4)


def test_adding_mean_baseline():
    tb = tasks.gen_adding(Rng(2), 10, 100_000)
    assert abs(np.mean((tb.targets - 1.0) ** 2) - tasks.ADDING_BASELINE_MSE) < 0.01
    assert tasks.ADDING_BASELINE_MSE == pytest.approx(0.1667, abs=1e-4)


# -- copy ---------------------------------------------------------------------------

def test_copy_contract():
    T = 50
    tb = tasks.gen_copy(Rng(3), T, 400)
    sym = tb.meta["symbols"]
    assert sym.shape == tb.targets.shape == (400, T + 20)
    assert tb.inputs.shape == (400, T + 20, 10)
    assert (tb.inputs.sum(axis=-1) == 1).all()
    assert (tb.inputs.argmax(axis=-1) == sym).all()
    assert ((sym[:, :10] >= 1) & (sym[:, :10] <= 8)).all()
    assert ((sym == 9).sum(axis=1) == 1).all()
    assert (sym[:, 10 + T - 1] == 9).all()
    assert (tb.targets[:, -10:] == sym[:, :10]).all()
    assert (tb.targets[:, :-10] == 0).all()
    assert sym.min() >= 0 and sym.max() <= 9


def test_copy_baseline():
    assert tasks.copy_baseline_ce(50) == pytest.approx(10 * math.log(8) / 70)
    assert tasks.copy_baseline_ce(50) == pytest.approx(0.297, abs=5e-4)


def test_generators_deterministic():
    for gen in (tasks.gen_adding, tasks.gen_copy):
        a, b = gen(Rng(9), 12, 7), gen(Rng(9), 12, 7)
        assert a.inputs.tobytes() == b.inputs.tobytes()
        assert a.targets.tobytes() == b.targets.tobytes()


def test_one_hot():
    out = tasks.one_hot([[0, 3], [2, 1]], 4)
    assert out.shape == (2, 2, 4)
    assert (out.sum(axis=-1) == 1).all()
    assert out[0, 1, 3] == 1


# -- IDX ----------------------------------------------------------------------------

def idx_pair(tmp_path, images, labels):
    ip, lp = tmp_path / "img.idx", tmp_path / "lbl.idx"
    tasks.write_idx_images(ip, images)
    tasks.write_idx_labels(lp, labels)
    return ip, lp


def test_idx_roundtrip(tmp_path):
    images = np.arange(2 * 3 * 4, dtype=np.uint8).reshape(2, 3, 4) * 10
    ip, lp = idx_pair(tmp_path, images, [7, 2])
    seq, labels = tasks.load_idx_images(ip, lp)
    assert seq.shape == (2, 12, 1)
    assert seq.reshape(-1).tolist() == [v / 255 for v in images.reshape(-1).tolist()]
    assert labels.tolist() == [7, 2]
    assert seq.min() >= 0 and seq.max() <= 1


def test_idx_flattening_order(tmp_path):
    img = np.zeros((1, 28, 28), dtype=np.uint8)
    img[0, 3, 17] = 255
    seq, _ = tasks.load_idx_images(*idx_pair(tmp_path, img, [0]))
    assert np.flatnonzero(seq[0, :, 0]).tolist() == [28 * 3 + 17]


def test_idx_hand_built_bytes(tmp_path):
    ip, lp = tmp_path / "i", tmp_path / "l"
    ip.write_bytes(struct.pack(">IIII", 0x803, 1, 1, 2) + bytes([0, 255]))
    lp.write_bytes(struct.pack(">II", 0x801, 1) + bytes([4]))
    seq, labels = tasks.load_idx_images(ip, lp)
    assert seq[0, :, 0].tolist() == [0.0, 1.0]
    assert labels.tolist() == [4]


def test_idx_errors(tmp_path):
    images = np.zeros((2, 2, 2), dtype=np.uint8)
    ip, lp = idx_pair(tmp_path, images, [1, 2])
    bad = tmp_path / "bad"
    bad.write_bytes(struct.pack(">IIII", 0x801, 2, 2, 2) + bytes(8))
    with pytest.raises(tasks.BadMagicError):
        tasks.load_idx_images(bad, lp)
    short = tmp_path / "short"
    short.write_bytes(ip.read_bytes()[:-1])
    with pytest.raises(tasks.TruncatedFileError):
        tasks.load_idx_images(short, lp)
    lp3 = tmp_path / "three_labels"
    lp3.write_bytes(struct.pack(">II", 0x801, 3) + bytes([1, 2, 3]))
    with pytest.raises(tasks.CountMismatchError):
        tasks.load_idx_images(ip, lp3)
    with pytest.raises(tasks.DataError):
        tasks.load_idx_images(tmp_path / "missing", lp)
    # distinct error types
    assert len({tasks.BadMagicError, tasks.TruncatedFileError, tasks.CountMismatchError}) == 3


def test_synthetic_digits_fixture():
    images, labels = tasks.synthetic_digits(Rng(0), 20)
    assert images.shape == (20, 28, 28) and images.dtype == np.uint8
    for img, k in zip(images, labels):
        assert img.mean(axis=1).argmax() // 2 == k


# -- corpora -----------------------------------------------------------------------

def write3(tmp_path, train, valid, test):
    paths = []
    for name, text in (("train.txt", train), ("valid.txt", valid), ("test.txt", test)):
        (tmp_path / name).write_text(text, encoding="utf-8")
        paths.append(tmp_path / name)
    return paths


def test_char_corpus(tmp_path):
    c = tasks.load_text_corpus(*write3(tmp_path, "abab", "ab", "ba"), "character")
    assert c.size == 2
    assert c.train.tolist() == [0, 1, 0, 1]
    s = "baab ab"
    c2 = tasks.load_text_corpus(*write3(tmp_path, s, "a", "b"), "character")
    assert c2.decode(c2.encode(s)) == s
    assert (c2.train < c2.size).all()


def test_word_corpus(tmp_path):
    c = tasks.load_text_corpus(*write3(tmp_path, "a b c a", "a d", "c"), "word")
    assert c.vocab == ["a", "b", "c", "<unk>"]
    assert c.train.tolist() == [0, 1, 2, 0]
    assert c.valid.tolist() == [0, 3]


def test_empty_train_rejected(tmp_path):
    with pytest.raises(tasks.DataError):
        tasks.load_text_corpus(*write3(tmp_path, "  \n", "a", "b"))


def test_split_text():
    a, b, c = tasks.split_text("x" * 1000)
    assert (len(a), len(b), len(c)) == (900, 50, 50)


def test_batchify_fixture():
    windows = list(tasks.batchify(np.arange(10), 2, 2))
    streams = tasks.lm_streams(np.arange(10), 2)
    assert streams.tolist() == [[0, 1, 2, 3, 4], [5, 6, 7, 8, 9]]
    x, y = windows[0]
    assert x.tolist() == [[0, 1], [5, 6]]
    assert y.tolist() == [[1, 2], [6, 7]]
    assert len(windows) == tasks.n_windows(10, 2, 2) == 2


def test_batchify_properties():
    tokens = np.arange(103)
    consumed = []
    for x, y in tasks.batchify(tokens, 4, 7):
        assert (y[:, :-1] == x[:, 1:]).all()
        consumed.append(x)
    streams = tasks.lm_streams(tokens, 4)
    assert streams.size == 4 * (103 // 4)
    joined = np.concatenate(consumed, axis=1)
    assert (joined == streams[:, :-1]).all()
    with pytest.raises(tasks.DataError):
        list(tasks.batchify(np.arange(5), 2, 2))


def test_batch_to_csv(tmp_path):
    tb = tasks.gen_adding(Rng(0), 4, 2)
    out = tmp_path / "b.csv"
    tasks.batch_to_csv(tb, out)
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["sequence", "t", "x0", "x1", "target"]
    assert len(rows) == 1 + 2 * 4
    assert float(rows[4][-1]) == tb.targets[0]
    assert rows[1][-1] == ""
