"""Benchmark data: adding problem, copy memory, sequential images, text corpora.

Synthetic generators draw everything from the ``Rng`` they are handed, so a
seed pins every batch.  Categorical inputs are one-hot encoded; text corpora
are kept as integer ids and embedded by the model.
"""

from __future__ import annotations

import csv
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from mcrmlab.numkit import DTYPE, Rng

COPY_SYMBOLS = 10
COPY_BLANK = 0
COPY_DELIMITER = 9
COPY_VALUES = 10  # how many digits are memorised
UNK = "<unk>"

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DataError(ValueError):
    """Input data is missing, malformed or too small."""


class BadMagicError(DataError):
    pass


class TruncatedFileError(DataError):
    pass


class CountMismatchError(DataError):
    pass


@dataclass
class TaskBatch:
    inputs: np.ndarray  # (batch, T, m)
    targets: np.ndarray
    task: str
    T: int
    meta: dict = field(default_factory=dict)

    @property
    def batch(self) -> int:
        return self.inputs.shape[0]


def one_hot(ids, depth: int) -> np.ndarray:
    ids = np.asarray(ids)
    out = np.zeros(ids.shape + (depth,), dtype=DTYPE)
    np.put_along_axis(out, ids[..., None], 1.0, axis=-1)
    return out


# -- adding problem -------------------------------------------------------------

def gen_adding(rng: Rng, T: int, batch: int) -> TaskBatch:
    """Two-channel sequences: uniform values and a 0/1 marker channel.

    One marker falls uniformly in ``[0, T//2)`` and the other in
    ``[T//2, T)``; the target is the sum of the two marked values.
    """
    if T < 2:
        raise ValueError(f"the adding problem needs T >= 2, got {T}")
    values = rng.uniform(0.0, 1.0, (batch, T))
    half = T // 2
    first = rng.integers(0, half, batch)
    second = rng.integers(half, T, batch)
    markers = np.zeros((batch, T), dtype=DTYPE)
    rows = np.arange(batch)
    markers[rows, first] = 1.0
    markers[rows, second] = 1.0
    inputs = np.stack([values, markers], axis=-1)
    targets = values[rows, first] + values[rows, second]
    return TaskBatch(inputs, targets, "adding", T, {"markers": np.stack([first, second], axis=1)})


# -- copy memory ------------------------------------------------------------------

def gen_copy(rng: Rng, T: int, batch: int) -> TaskBatch:
    """Recall ten digits after a gap; total length ``T + 20``.

    Layout: ten digits from {1..8}, ``T - 1`` blanks, one delimiter (9), then
    ten blank recall slots.  Targets are blank except the last ten positions,
    which repeat the leading digits.
    """
    if T < 1:
        raise ValueError(f"the copy task needs T >= 1, got {T}")
    length = T + 2 * COPY_VALUES
    digits = rng.integers(1, 9, (batch, COPY_VALUES))
    symbols = np.full((batch, length), COPY_BLANK, dtype=np.int64)
    symbols[:, :COPY_VALUES] = digits
    symbols[:, COPY_VALUES + T - 1] = COPY_DELIMITER
    targets = np.full((batch, length), COPY_BLANK, dtype=np.int64)
    targets[:, -COPY_VALUES:] = digits
    return TaskBatch(one_hot(symbols, COPY_SYMBOLS), targets, "copy", length, {"symbols": symbols})


def copy_baseline_ce(T: int) -> float:
    """Per-step CE of a memoryless predictor: certain blanks, uniform over 8 at recall."""
    return COPY_VALUES * float(np.log(8.0)) / (T + 2 * COPY_VALUES)


ADDING_BASELINE_MSE = 1.0 / 6.0  # Var(U + U') for predicting the constant 1


# -- sequential images ------------------------------------------------------------

def _read(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except FileNotFoundError as exc:
        raise DataError(f"missing data file: {path}") from exc


def _idx_payload(raw: bytes, path, magic: int, ndim: int) -> tuple[tuple[int, ...], bytes]:
    if len(raw) < 4:
        raise TruncatedFileError(f"{path}: file too short for an IDX header")
    found = struct.unpack(">I", raw[:4])[0]
    if found != magic:
        raise BadMagicError(f"{path}: bad magic number 0x{found:08x}, expected 0x{magic:08x}")
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise TruncatedFileError(f"{path}: truncated IDX dimension header")
    dims = struct.unpack(">" + "I" * ndim, raw[4:head])
    need = int(np.prod(dims))
    body = raw[head:]
    if len(body) < need:
        raise TruncatedFileError(f"{path}: expected {need} data bytes, found {len(body)}")
    return dims, body[:need]


def load_idx_images(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    """IDX image/label pair -> ``(N, rows*cols, 1)`` intensities in [0, 1] and labels.

    Pixel ``(r, c)`` lands at sequence index ``r * cols + c``.
    """
    dims, body = _idx_payload(_read(images_path), images_path, IDX_IMAGES_MAGIC, 3)
    n, rows, cols = dims
    images = np.frombuffer(body, dtype=np.uint8).reshape(n, rows * cols, 1).astype(DTYPE) / 255.0
    (n_labels,), lbody = _idx_payload(_read(labels_path), labels_path, IDX_LABELS_MAGIC, 1)
    if n_labels != n:
        raise CountMismatchError(f"{n} images but {n_labels} labels")
    labels = np.frombuffer(lbody, dtype=np.uint8).astype(np.int64)
    if labels.size and labels.max() > 9:
        raise DataError(f"{labels_path}: label {labels.max()} outside 0..9")
    return images, labels


def write_idx_images(path, images: np.ndarray) -> None:
    """``images`` is ``(N, rows, cols)`` uint8."""
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    Path(path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols) + images.tobytes())


def write_idx_labels(path, labels) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    Path(path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, labels.size) + labels.tobytes())


def synthetic_digits(rng: Rng, n: int, side: int = 28) -> tuple[np.ndarray, np.ndarray]:
    """Stand-in image set: class ``k`` is a bright bar on row band ``k``, plus noise.

    Good enough to exercise the loader and training path without MNIST.
    """
    labels = rng.integers(0, 10, n)
    images = rng.uniform(0.0, 40.0, (n, side, side))
    band = max(side // 10, 1)
    for idx, k in enumerate(labels):
        r0 = int(k) * band
        images[idx, r0:r0 + band, :] += 200.0
    return np.clip(images, 0, 255).astype(np.uint8), labels.astype(np.uint8)


def image_batch(images: np.ndarray, labels: np.ndarray, index: np.ndarray) -> TaskBatch:
    return TaskBatch(images[index], labels[index], "mnist", images.shape[1])


# -- text corpora -----------------------------------------------------------------

@dataclass
class CorpusSplit:
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    vocab: list
    granularity: str

    def __post_init__(self):
        self.index = {s: i for i, s in enumerate(self.vocab)}

    @property
    def size(self) -> int:
        return len(self.vocab)

    def split(self, name: str) -> np.ndarray:
        if name not in ("train", "valid", "test"):
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)

    def encode(self, text: str) -> np.ndarray:
        if self.granularity == "character":
            symbols = list(text)
        else:
            symbols = text.split()
        unk = self.index.get(UNK)
        ids = []
        for s in symbols:
            if s in self.index:
                ids.append(self.index[s])
            elif unk is not None:
                ids.append(unk)
            else:
                raise DataError(f"symbol {s!r} is not in the vocabulary")
        return np.asarray(ids, dtype=np.int64)

    def decode(self, ids) -> str:
        joiner = "" if self.granularity == "character" else " "
        return joiner.join(self.vocab[int(i)] for i in ids)


def _read_text(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise DataError(f"missing corpus file: {path}") from exc


def load_text_corpus(train_path, valid_path, test_path, granularity: str = "character") -> CorpusSplit:
    """Read three UTF-8 files into id sequences over one vocabulary.

    Characters: every character seen in any split, ordered by code point.
    Words: whitespace tokens of the train split ordered by descending count
    then lexicographically, followed by ``<unk>`` for unseen valid/test words.
    """
    if granularity not in ("character", "word"):
        raise ValueError(f"granularity must be 'character' or 'word', got {granularity!r}")
    texts = [_read_text(p) for p in (train_path, valid_path, test_path)]
    if not texts[0].strip():
        raise DataError(f"training corpus {train_path} is empty")
    if granularity == "character":
        vocab = sorted(set("".join(texts)))
    else:
        counts = Counter(texts[0].split())
        vocab = sorted(counts, key=lambda w: (-counts[w], w)) + [UNK]
    corpus = CorpusSplit(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, np.int64), vocab, granularity)
    corpus.train, corpus.valid, corpus.test = (corpus.encode(t) for t in texts)
    return corpus


def split_text(text: str, fractions=(0.9, 0.05, 0.05)) -> tuple[str, str, str]:
    """Contiguous train/valid/test cut of one document."""
    n = len(text)
    a = int(n * fractions[0])
    b = a + int(n * fractions[1])
    return text[:a], text[a:b], text[b:]


def lm_streams(tokens, batch: int) -> np.ndarray:
    """Cut ``tokens`` into ``batch`` contiguous rows, dropping the remainder."""
    tokens = np.asarray(tokens, dtype=np.int64)
    per = len(tokens) // batch
    return tokens[: per * batch].reshape(batch, per)


def batchify(tokens, batch: int, bptt: int) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield ``(inputs, targets)`` windows of width ``bptt`` over parallel streams.

    Targets are inputs shifted by one token.  The final window may be shorter.
    The recurrent state is meant to carry from one window to the next.
    """
    if len(tokens) < batch * (bptt + 1):
        raise DataError(f"corpus of {len(tokens)} tokens is too short for batch={batch}, bptt={bptt}")
    streams = lm_streams(tokens, batch)
    per = streams.shape[1]
    for start in range(0, per - 1, bptt):
        width = min(bptt, per - 1 - start)
        yield streams[:, start:start + width], streams[:, start + 1:start + 1 + width]


def n_windows(tokens_len: int, batch: int, bptt: int) -> int:
    per = tokens_len // batch
    return len(range(0, per - 1, bptt))


# -- export ------------------------------------------------------------------------

def batch_to_csv(tb: TaskBatch, path) -> None:
    """One row per (sequence, timestep): input features then the step's target."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        m = tb.inputs.shape[-1]
        w.writerow(["sequence", "t"] + [f"x{k}" for k in range(m)] + ["target"])
        per_step = tb.targets.ndim == 2
        for b in range(tb.batch):
            for t in range(tb.inputs.shape[1]):
                if per_step:
                    target = tb.targets[b, t]
                else:
                    target = tb.targets[b] if t == tb.inputs.shape[1] - 1 else ""
                w.writerow([b, t] + [repr(float(v)) for v in tb.inputs[b, t]] + [target if target == "" else repr(target.item())])
