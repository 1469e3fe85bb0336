"""Training runs: configuration, data sources, the optimisation loop,
evaluation, checkpoint/resume, learning curves and memory-state export."""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from mcrmlab import cells, checkpoint, grad, metrics, optim, tasks
from mcrmlab.cells import CellState
from mcrmlab.model import Model, embed, init_model, model_param_count, readout, run
from mcrmlab.numkit import Rng

log = logging.getLogger(__name__)

TASKS = ("adding", "copy", "mnist", "char", "word")
TASK_LOSS = {"adding": "mse", "copy": "ce", "mnist": "ce_last", "char": "ce", "word": "ce"}
TASK_METRIC = {"adding": "mse", "copy": "ce", "mnist": "acc", "char": "bpc", "word": "ppl"}
TRAIN_METRIC = {"adding": "mse", "copy": "ce", "mnist": "ce", "char": "bpc", "word": "ppl"}
REPORT_SPLIT = {"adding": "test", "copy": "test", "mnist": "test", "char": "valid", "word": "valid"}
HIGHER_IS_BETTER = {"acc"}

# Per-task hidden widths and optimiser settings.  The seq-MNIST widths for
# nlstm/mcrm are (97, 108): that is the assignment under which all five
# models land on the same ~152K parameter budget.
REFERENCE_ROWS = {
    "adding": {"widths": {"rnn": 308, "gru": 177, "lstm": 153, "nlstm": 77, "mcrm": 85},
               "optimizer": "adam", "lr": 1e-3, "clip": 0.5,
               "overrides": {"nlstm": {"lr": 0.01, "clip": 0.1}}},
    "mnist": {"widths": {"rnn": 384, "gru": 222, "lstm": 192, "nlstm": 97, "mcrm": 108},
              "optimizer": "rmsprop", "lr": 1e-3, "clip": 1.0,
              "overrides": {"nlstm": {"clip": 0.25}, "lstm": {"lr": 1e-4}}},
    "copy": {"widths": {"rnn": 1800, "gru": 1050, "lstm": 900, "nlstm": 448, "mcrm": 500},
             "optimizer": "rmsprop", "lr": 5e-4, "clip": 1.0,
             "overrides": {"nlstm": {"lr": 1e-4, "clip": 0.25}}},
    "word": {"widths": {"rnn": 125, "gru": 119, "lstm": 117, "nlstm": 100, "mcrm": 109},
             "optimizer": "sgd", "lr": 30.0, "clip": 0.35, "overrides": {}},
    "char": {"widths": {"rnn": 2900, "gru": 1680, "lstm": 1050, "nlstm": 920, "mcrm": 1000},
             "optimizer": "adam", "lr": 1e-3, "clip": 0.15, "overrides": {}},
}
REFERENCE_SIZE = {"adding": 95_000, "mnist": 152_000, "copy": 3_300_000, "word": 1_300_000, "char": 17_100_000}
TASK_DEFAULTS = {
    "adding": {"seq_len": 200, "batch": 32},
    "copy": {"seq_len": 1000, "batch": 32},
    "mnist": {"batch": 64},
    "char": {"batch": 32, "bptt": 150},
    "word": {"batch": 20, "bptt": 35},
}
SYNTHETIC_EVAL_EVERY = 100

# Rng.spawn keys; each stream is derived from the seed alone.
INIT_KEY, DATA_KEY, POOL_KEY, TEST_KEY, VALID_KEY, TRAIN_EVAL_KEY = range(6)

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
CORPUS_FILES = ("train.txt", "valid.txt", "test.txt")


class ConfigError(ValueError):
    pass


class DivergenceError(FloatingPointError):
    def __init__(self, iteration: int, detail: str, checkpoint_path: Path | None):
        super().__init__(f"training diverged at iteration {iteration}: {detail}")
        self.iteration = iteration
        self.checkpoint_path = checkpoint_path


@dataclass
class TrainConfig:
    task: str = "adding"
    arch: str = "mcrm"
    hidden: int | None = None
    optimizer: str | None = None
    lr: float | None = None
    clip: float | None = None
    seed: int = 0
    iters: int = 10_000
    batch: int | None = None
    seq_len: int | None = None  # synthetic tasks: T
    bptt: int | None = None  # corpora: window width
    embed: int | None = None  # corpora: embedding width (defaults to hidden)
    eval_every: int | None = None
    eval_size: int = 1000
    train_pool: int = 0  # >0: train on a fixed pool of synthetic sequences
    checkpoint_every: int = 0
    data_dir: str | None = None
    out_dir: str = "runs/default"
    wall_clock: bool = False

    def resolved(self) -> "TrainConfig":
        """Fill every unset field from the task's defaults and validate."""
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; expected one of {', '.join(TASKS)}")
        if self.arch not in cells.ARCHS:
            raise ConfigError(f"unknown architecture {self.arch!r}; expected one of {', '.join(cells.ARCHS)}")
        row = REFERENCE_ROWS[self.task]
        arch_over = row["overrides"].get(self.arch, {})
        cfg = dataclasses.replace(self)
        if cfg.hidden is None:
            cfg.hidden = row["widths"][self.arch]
        if cfg.optimizer is None:
            cfg.optimizer = row["optimizer"]
        if cfg.lr is None:
            cfg.lr = arch_over.get("lr", row["lr"])
        if cfg.clip is None:
            cfg.clip = arch_over.get("clip", row["clip"])
        for key, value in TASK_DEFAULTS[self.task].items():
            if getattr(cfg, key) is None:
                setattr(cfg, key, value)
        if cfg.task in ("char", "word") and cfg.embed is None:
            cfg.embed = cfg.hidden
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.optimizer not in optim.OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        positive = {"hidden": self.hidden, "lr": self.lr, "clip": self.clip, "iters": self.iters,
                    "batch": self.batch, "eval_size": self.eval_size}
        if self.task in ("adding", "copy"):
            positive["seq_len"] = self.seq_len
        if self.task in ("char", "word"):
            positive["bptt"] = self.bptt
            positive["embed"] = self.embed
        for key, value in positive.items():
            if value is None or not value > 0:
                raise ConfigError(f"{key} must be positive, got {value}")
        if self.task == "adding" and self.seq_len < 2:
            raise ConfigError("the adding problem needs seq_len >= 2")
        for key in ("eval_every", "train_pool", "checkpoint_every"):
            value = getattr(self, key)
            if value is not None and value < 0:
                raise ConfigError(f"{key} must be non-negative, got {value}")
        if self.task in ("mnist", "char", "word") and not self.data_dir:
            raise ConfigError(f"task {self.task!r} needs --data-dir")

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def parity_warning(cfg: TrainConfig, vocab: int | None = None) -> str | None:
    """Message when an overridden width drifts >5% from the task's reference size."""
    if cfg.hidden == REFERENCE_ROWS[cfg.task]["widths"][cfg.arch] or cfg.task not in ("adding", "copy", "mnist"):
        return None
    m, out = task_dims(cfg, vocab)
    size = model_param_count(cfg.arch, m, cfg.hidden, out)
    ref = REFERENCE_SIZE[cfg.task]
    if abs(size - ref) / ref > 0.05:
        return (f"{cfg.arch} with hidden={cfg.hidden} has {size} parameters, "
                f"{100 * (size - ref) / ref:+.1f}% off the {ref} reference for {cfg.task}")
    return None


def task_dims(cfg: TrainConfig, vocab: int | None = None) -> tuple[int, int]:
    """(input width m, readout width) for a task."""
    if cfg.task == "adding":
        return 2, 1
    if cfg.task == "copy":
        return tasks.COPY_SYMBOLS, tasks.COPY_SYMBOLS
    if cfg.task == "mnist":
        return 1, 10
    if vocab is None:
        raise ValueError("corpus tasks need the vocabulary size")
    return cfg.embed, vocab


# -- data sources ------------------------------------------------------------------

class SyntheticSource:
    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.gen = tasks.gen_adding if cfg.task == "adding" else tasks.gen_copy
        self.rng = Rng(cfg.seed).spawn(DATA_KEY)
        self.pool = self.gen(Rng(cfg.seed).spawn(POOL_KEY), cfg.seq_len, cfg.train_pool) if cfg.train_pool else None
        self._eval = {}
        self.vocab = None

    def next_batch(self):
        if self.pool is None:
            b = self.gen(self.rng, self.cfg.seq_len, self.cfg.batch)
            return b.inputs, b.targets, False
        idx = self.rng.integers(0, self.pool.batch, self.cfg.batch)
        return self.pool.inputs[idx], self.pool.targets[idx], False

    def eval_set(self, split: str) -> tasks.TaskBatch:
        if split == "train" and self.pool is not None:
            return self.pool
        if split not in self._eval:
            key = {"test": TEST_KEY, "valid": VALID_KEY, "train": TRAIN_EVAL_KEY}[split]
            self._eval[split] = self.gen(Rng(self.cfg.seed).spawn(key), self.cfg.seq_len, self.cfg.eval_size)
        return self._eval[split]

    def get_state(self) -> dict:
        return {"rng": self.rng.get_state()}

    def set_state(self, state: dict) -> None:
        self.rng.set_state(state["rng"])


class ImageSource:
    VALID_FRACTION = 0.1

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        root = Path(cfg.data_dir)
        images, labels = tasks.load_idx_images(*(root / f for f in MNIST_FILES["train"]))
        n_valid = int(len(labels) * self.VALID_FRACTION)
        cut = len(labels) - n_valid
        self.splits = {"train": (images[:cut], labels[:cut]), "valid": (images[cut:], labels[cut:]),
                       "test": tasks.load_idx_images(*(root / f for f in MNIST_FILES["test"]))}
        if cut == 0:
            raise tasks.DataError("no training images after the validation cut")
        self.rng = Rng(cfg.seed).spawn(DATA_KEY)
        self.vocab = None

    def next_batch(self):
        images, labels = self.splits["train"]
        idx = self.rng.integers(0, len(labels), self.cfg.batch)
        return images[idx], labels[idx], False

    def get_state(self) -> dict:
        return {"rng": self.rng.get_state()}

    def set_state(self, state: dict) -> None:
        self.rng.set_state(state["rng"])


class CorpusSource:
    EVAL_BATCH = 10

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        root = Path(cfg.data_dir)
        granularity = "character" if cfg.task == "char" else "word"
        self.corpus = tasks.load_text_corpus(*(root / f for f in CORPUS_FILES), granularity=granularity)
        self.vocab = self.corpus.size
        self.windows = list(tasks.batchify(self.corpus.train, cfg.batch, cfg.bptt))
        self.position = 0

    @property
    def epoch_len(self) -> int:
        return len(self.windows)

    def next_batch(self):
        """Next training window; the flag is True when the recurrent carry must reset."""
        reset = self.position == 0
        inputs, targets = self.windows[self.position]
        self.position = (self.position + 1) % len(self.windows)
        return inputs, targets, reset

    def get_state(self) -> dict:
        return {"position": self.position}

    def set_state(self, state: dict) -> None:
        self.position = int(state["position"])


def make_source(cfg: TrainConfig):
    if cfg.task in ("adding", "copy"):
        return SyntheticSource(cfg)
    if cfg.task == "mnist":
        return ImageSource(cfg)
    return CorpusSource(cfg)


# -- the run -----------------------------------------------------------------------

def _state_tensors(prefix: str, s: CellState | None) -> dict:
    if s is None:
        return {}
    out = {}
    for key in ("h", "c", "inner_h", "inner_c"):
        value = getattr(s, key)
        if value is not None:
            out[f"{prefix}.{key}"] = value
    return out


def _state_from_tensors(prefix: str, tensors: dict) -> CellState | None:
    if f"{prefix}.h" not in tensors:
        return None
    c = tensors.get(f"{prefix}.c")
    inner_h = tensors.get(f"{prefix}.inner_h")
    if c is not None and inner_h is not None and np.array_equal(c, inner_h):
        inner_h = c
    return CellState(tensors[f"{prefix}.h"], c, inner_h, tensors.get(f"{prefix}.inner_c"))


def _record_tensors(prefix: str, record) -> dict:
    return {f"{prefix}.{name}": t for name, t in cells.named_tensors(record)}


def _fill_record(prefix: str, record, tensors: dict):
    def take(name):
        key = f"{prefix}.{name}"
        if key not in tensors:
            raise checkpoint.CheckpointError(f"checkpoint lacks tensor {key}")
        return tensors[key]
    names = [n for n, _ in cells.named_tensors(record)]
    filled = record
    for name in names:
        value = take(name)
        current = dict(cells.named_tensors(filled))[name]
        if value.shape != current.shape:
            raise checkpoint.CheckpointError(f"tensor {prefix}.{name} has shape {value.shape}, expected {current.shape}")
        filled = cells.with_tensor(filled, name, value)
    return filled


class Run:
    """One training run; owns its model, optimiser state and data stream."""

    def __init__(self, config: TrainConfig):
        self.cfg = config.resolved()
        self.source = make_source(self.cfg)
        self.m, self.out = task_dims(self.cfg, self.source.vocab)
        vocab = self.source.vocab if self.cfg.task in ("char", "word") else None
        self.model: Model = init_model(self.cfg.arch, self.m, self.cfg.hidden, self.out,
                                       Rng(self.cfg.seed).spawn(INIT_KEY), vocab)
        self.opt = optim.init_state(self.cfg.optimizer, self.model)
        self.loss = TASK_LOSS[self.cfg.task]
        self.iteration = 0
        self.curve: list[list] = []
        self.best: float | None = None
        self.running = [0.0, 0]  # summed per-batch mean loss, batches
        self.carry: CellState | None = None
        self._t0 = time.perf_counter()
        self.out_dir = Path(self.cfg.out_dir)

    @property
    def eval_every(self) -> int:
        if self.cfg.eval_every:
            return self.cfg.eval_every
        if isinstance(self.source, CorpusSource):
            return self.source.epoch_len
        return SYNTHETIC_EVAL_EVERY

    # -- one optimisation step ----------------------------------------------------

    def step(self) -> float:
        inputs, targets, reset = self.source.next_batch()
        if reset:
            self.carry = None
        batch = inputs.shape[0]
        try:
            total, grads, final = grad.backprop_sequence(self.model, inputs, targets, self.loss, state=self.carry)
        except grad.NonFiniteLossError as exc:
            self._diverged(str(exc))
        grads = cells.map_params(lambda g: g / batch, grads)
        grads, _ = optim.clip_global_norm(grads, self.cfg.clip)
        new_model, new_opt = optim.apply(self.model, grads, self.opt, self.cfg.lr)
        if not all(np.isfinite(t).all() for _, t in cells.named_tensors(new_model)):
            self._diverged("parameters became non-finite")
        self.model, self.opt = new_model, new_opt
        if isinstance(self.source, CorpusSource):
            self.carry = final
        self.iteration += 1
        mean_loss = total / batch
        self.running[0] += mean_loss
        self.running[1] += 1
        return mean_loss

    def _diverged(self, detail: str):
        path = self.save(self.out_dir / "diverged.ckpt")
        raise DivergenceError(self.iteration + 1, detail, path)

    # -- evaluation ----------------------------------------------------------------

    def evaluate(self, split: str | None = None) -> metrics.EvalReport:
        """Score the current parameters; never modifies the run."""
        split = split or REPORT_SPLIT[self.cfg.task]
        if split not in ("train", "valid", "test"):
            raise ValueError(f"unknown split {split!r}")
        metric = TASK_METRIC[self.cfg.task]
        if isinstance(self.source, SyntheticSource):
            data = self.source.eval_set(split)
            H, _, _ = run(self.model, data.inputs)
            if self.cfg.task == "adding":
                value = metrics.mse(readout(self.model, H[:, -1])[:, 0], data.targets)
            else:
                value = metrics.cross_entropy(readout(self.model, H), data.targets)
            return metrics.EvalReport(metric, value, data.batch, split)
        if isinstance(self.source, ImageSource):
            images, labels = self.source.splits[split]
            logits = np.concatenate([readout(self.model, run(self.model, images[k:k + 500])[0][:, -1])
                                     for k in range(0, len(labels), 500)])
            return metrics.EvalReport(metric, metrics.accuracy(logits, labels), len(labels), split)
        ce, count = self._corpus_ce(split)
        value = metrics.bpc(ce) if metric == "bpc" else metrics.ppl(ce)
        return metrics.EvalReport(metric, value, count, split)

    def _corpus_ce(self, split: str) -> tuple[float, int]:
        """Token-averaged CE with the state carried across windows of one split."""
        tokens = self.source.corpus.split(split)
        bptt = self.cfg.bptt
        batch = max(1, min(CorpusSource.EVAL_BATCH, len(tokens) // (bptt + 1)))
        state = None
        total = 0.0
        count = 0
        for inputs, targets in tasks.batchify(tokens, batch, bptt):
            H, _, state = run(self.model, inputs, state)
            total += metrics.cross_entropy(readout(self.model, H), targets) * targets.size
            count += targets.size
        return total / count, count

    def _train_metric(self, mean_loss: float) -> float:
        kind = TRAIN_METRIC[self.cfg.task]
        if kind == "bpc":
            return metrics.bpc(mean_loss)
        if kind == "ppl":
            return metrics.ppl(mean_loss)
        return mean_loss

    def record(self) -> metrics.EvalReport:
        seconds = round(time.perf_counter() - self._t0, 3) if self.cfg.wall_clock else ""
        if self.running[1]:
            value = self._train_metric(self.running[0] / self.running[1])
            self.curve.append([self.iteration, "train", TRAIN_METRIC[self.cfg.task], value, seconds])
            self.running = [0.0, 0]
        report = self.evaluate()
        self.curve.append([self.iteration, report.split, report.metric, report.value, seconds])
        if self.best is None:
            self.best = report.value
        elif report.metric in HIGHER_IS_BETTER:
            self.best = max(self.best, report.value)
        else:
            self.best = min(self.best, report.value)
        return report

    # -- driving loop --------------------------------------------------------------

    def train(self, plots: bool = False) -> metrics.EvalReport:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        if self.iteration == 0:
            warning = parity_warning(self.cfg, self.source.vocab)
            if warning:
                log.warning(warning)
        report = None
        while self.iteration < self.cfg.iters:
            self.step()
            if self.iteration % self.eval_every == 0:
                report = self.record()
                self.write_curves()
                log.info("iter %d %s %s=%.6g", self.iteration, report.split, report.metric, report.value)
            if self.cfg.checkpoint_every and self.iteration % self.cfg.checkpoint_every == 0:
                self.save(self.out_dir / "checkpoint.ckpt")
        if report is None or self.curve[-1][0] != self.iteration:
            report = self.record()
        self.write_curves()
        self.save(self.out_dir / "checkpoint.ckpt")
        if plots:
            from mcrmlab import plotting
            plotting.plot_curves(self.curve, self.out_dir / "curves.png", title=f"{self.cfg.arch} on {self.cfg.task}")
        return report

    def write_curves(self) -> Path:
        path = self.out_dir / "curves.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["iteration", "split", "metric", "value", "seconds"])
            for it, split, metric, value, seconds in self.curve:
                writer.writerow([it, split, metric, repr(float(value)), seconds])
        return path

    # -- checkpoints ----------------------------------------------------------------

    def save(self, path) -> Path:
        meta = {
            "config": self.cfg.as_dict(),
            "iteration": self.iteration,
            "best": self.best,
            "curve": self.curve,
            "running": self.running,
            "source": self.source.get_state(),
            "optimizer": {"kind": self.opt.kind, "step": self.opt.step},
            "vocab": self.source.vocab,
        }
        tensors = _record_tensors("model", self.model)
        if self.opt.m is not None:
            tensors.update(_record_tensors("opt.m", self.opt.m))
        if self.opt.v is not None:
            tensors.update(_record_tensors("opt.v", self.opt.v))
        tensors.update(_state_tensors("carry", self.carry))
        return checkpoint.save(path, meta, tensors)

    @classmethod
    def from_checkpoint(cls, path, **overrides) -> "Run":
        """Rebuild a run exactly where it was saved; ``overrides`` may extend
        ``iters`` or move ``out_dir``."""
        meta, tensors = checkpoint.load(path)
        allowed = {"iters", "out_dir", "data_dir", "wall_clock", "checkpoint_every"}
        bad = set(overrides) - allowed
        if bad:
            raise ConfigError(f"cannot override {sorted(bad)} when resuming")
        fields = {f.name for f in dataclasses.fields(TrainConfig)}
        saved = {k: v for k, v in meta["config"].items() if k in fields}
        saved.update({k: v for k, v in overrides.items() if v is not None})
        new = cls(TrainConfig(**saved))
        if new.source.vocab != meta["vocab"]:
            raise checkpoint.CheckpointError("corpus vocabulary differs from the one the checkpoint was trained on")
        new.model = _fill_record("model", new.model, tensors)
        opt = optim.init_state(meta["optimizer"]["kind"], new.model)
        opt.step = meta["optimizer"]["step"]
        if opt.m is not None:
            opt.m = _fill_record("opt.m", opt.m, tensors)
        if opt.v is not None:
            opt.v = _fill_record("opt.v", opt.v, tensors)
        new.opt = opt
        new.iteration = meta["iteration"]
        new.best = meta["best"]
        new.curve = [list(p) for p in meta["curve"]]
        new.running = list(meta["running"])
        new.source.set_state(meta["source"])
        new.carry = _state_from_tensors("carry", tensors)
        return new


def run_training(config: TrainConfig, resume_from=None, plots: bool = False) -> metrics.EvalReport:
    """Train to ``config.iters`` (resuming if asked); writes curves and a checkpoint."""
    if resume_from is not None:
        r = Run.from_checkpoint(resume_from, iters=config.iters, out_dir=config.out_dir)
    else:
        r = Run(config)
    return r.train(plots=plots)


def run_seeds(config: TrainConfig, seeds, plots: bool = False) -> tuple[list, float, Path]:
    """Sequential replicas, one sub-directory per seed, plus a mean summary."""
    base = Path(config.out_dir)
    reports = []
    for seed in seeds:
        cfg = dataclasses.replace(config, seed=int(seed), out_dir=str(base / f"seed_{seed}"))
        reports.append((int(seed), run_training(cfg, plots=plots)))
    mean = float(np.mean([r.value for _, r in reports]))
    base.mkdir(parents=True, exist_ok=True)
    path = base / "summary.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["seed", "split", "metric", "value"])
        for seed, r in reports:
            writer.writerow([seed, r.split, r.metric, repr(r.value)])
        writer.writerow(["mean", reports[0][1].split, reports[0][1].metric, repr(mean)])
    return reports, mean, path


def evaluate(checkpoint_path, split: str | None = None, data_dir: str | None = None) -> metrics.EvalReport:
    """Load a checkpoint and score it on ``split`` without touching the file."""
    r = Run.from_checkpoint(checkpoint_path, data_dir=data_dir)
    return r.evaluate(split)


# -- memory-state heat maps ------------------------------------------------------------

def memory_grids(model: Model, inputs) -> dict[str, np.ndarray]:
    """Run one sequence and stack each memory state as a ``p x T`` grid."""
    arch = model.arch
    x = embed(model, np.asarray(inputs)[None])
    state = cells.zero_state(arch, model.hidden, 1)
    cols: dict[str, list] = {}
    for t in range(x.shape[1]):
        state, _ = cells.step(arch, model.cell, x[:, t], state)
        for label, value in cells.memory_state(arch, state).items():
            cols.setdefault(label, []).append(value[0])
    return {label: np.stack(v, axis=1) for label, v in cols.items()}


def neuron_scores(grid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-neuron ``(long_term, short_term)`` scores for a ``p x T`` grid.

    Short-term score: mean absolute step-to-step change.  Long-term score:
    mean magnitude minus that volatility, so steady non-zero neurons rank
    first and flickering ones last.
    """
    grid = np.asarray(grid, dtype=np.float64)
    if grid.shape[1] > 1:
        short = np.abs(np.diff(grid, axis=1)).mean(axis=1)
    else:
        short = np.zeros(grid.shape[0])
    long = np.abs(grid).mean(axis=1) - short
    return long, short


def _rank(scores: np.ndarray) -> np.ndarray:
    order = np.argsort(-scores, kind="stable")
    ranks = np.empty_like(order)
    ranks[order] = np.arange(1, len(order) + 1)
    return ranks


def write_grid(path, grid: np.ndarray, arch: str, state: str) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        fh.write(f"# arch={arch} state={state} neurons={grid.shape[0]} steps={grid.shape[1]}\n")
        writer = csv.writer(fh, lineterminator="\n")
        for row in grid:
            writer.writerow([repr(float(v)) for v in row])
    return path


def read_grid(path) -> tuple[dict, np.ndarray]:
    with open(path) as fh:
        header = fh.readline().lstrip("#").split()
        meta = dict(item.split("=", 1) for item in header)
        grid = np.array([[float(v) for v in row] for row in csv.reader(fh)])
    return meta, grid


def export_heatmap(model: Model, inputs, out_path, symbols=None, plots: bool = False) -> list[Path]:
    """Write one grid CSV per memory state plus a neurons-of-interest ranking.

    Single-state cells write ``out_path`` itself; the nested LSTM writes
    ``<stem>_<state>.csv`` for each of its two states.  The ranking goes to
    ``<stem>_neurons.csv``.
    """
    arch = model.arch
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    grids = memory_grids(model, inputs)
    written = []
    rows = []
    for label, grid in grids.items():
        path = out_path if len(grids) == 1 else out_path.with_name(f"{out_path.stem}_{label}{out_path.suffix or '.csv'}")
        written.append(write_grid(path, grid, arch, label))
        long, short = neuron_scores(grid)
        long_rank, short_rank = _rank(long), _rank(short)
        for k in range(grid.shape[0]):
            rows.append([label, k, repr(float(long[k])), repr(float(short[k])), int(long_rank[k]), int(short_rank[k])])
        if plots:
            from mcrmlab import plotting
            written.append(plotting.plot_heatmap(grid, path.with_suffix(".png"), symbols=symbols,
                                                 title=f"{arch} {label}"))
    ranking = out_path.with_name(f"{out_path.stem}_neurons.csv")
    with open(ranking, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["state", "neuron", "long_term", "short_term", "long_rank", "short_rank"])
        writer.writerows(rows)
    written.append(ranking)
    return written


def heatmap_inputs(r: Run, text: str | None = None, length: int | None = None):
    """Turn user text (corpora, copy digits) or a seeded sample into one input sequence.

    Returns ``(inputs, symbols)`` where ``symbols`` labels the time axis.
    """
    cfg = r.cfg
    if cfg.task in ("char", "word"):
        if text is None:
            tokens = r.source.corpus.valid[: length or 100]
        else:
            tokens = r.source.corpus.encode(text)
        if len(tokens) == 0:
            raise ValueError("heat-map sequence is empty")
        return tokens, [r.source.corpus.vocab[int(t)] for t in tokens]
    if cfg.task == "copy" and text is not None:
        symbols = np.array([int(ch) for ch in text if ch.isdigit()])
        if symbols.size == 0:
            raise ValueError("heat-map sequence is empty")
        return tasks.one_hot(symbols, tasks.COPY_SYMBOLS), [str(s) for s in symbols]
    if cfg.task == "mnist":
        images, _ = r.source.splits["test"]
        return images[0], None
    sample = r.source.eval_set("test")
    x = sample.inputs[0]
    if cfg.task == "copy":
        return x, [str(int(s)) for s in sample.meta["symbols"][0]]
    return x, None


def count_table(task: str) -> list[dict]:
    """Parameter counts at the task's reference widths for every architecture."""
    if task not in ("adding", "copy", "mnist"):
        raise ConfigError(f"reference widths are only checkable for adding, copy and mnist, not {task!r}")
    cfg = TrainConfig(task=task, data_dir="-")
    m, out = task_dims(cfg)
    ref = REFERENCE_SIZE[task]
    rows = []
    for arch in cells.ARCHS:
        p = REFERENCE_ROWS[task]["widths"][arch]
        n = cells.count_params(arch, m, p, out)
        rows.append({"task": task, "arch": arch, "hidden": p, "params": n, "reference": ref,
                     "deviation": (n - ref) / ref})
    return rows


def width_for_budget(arch: str, m: int, out: int, budget: int, vocab: int | None = None) -> int:
    """Hidden width whose total parameter count is closest to ``budget``."""
    best, best_gap = 1, math.inf
    p = 1
    while True:
        n = model_param_count(arch, m, p, out, vocab)
        gap = abs(n - budget)
        if gap < best_gap:
            best, best_gap = p, gap
        if n > budget:
            return best
        p += 1
