"""Small fixtures shared by several test modules."""

import numpy as np

from mcrmlab import cells, tasks
from mcrmlab.harness import Run, TrainConfig
from mcrmlab.model import init_model
from mcrmlab.numkit import Rng

M, P, T, B, K = 3, 4, 5, 2, 3


def grad_instance(arch, loss, seed, m=M, p=P, T_=T, batch=B):
    """Random model, real-valued inputs and matching targets for a loss head."""
    rng = Rng(seed)
    out = 1 if loss == "mse" else K
    model = init_model(arch, m, p, out, rng)
    x = rng.uniform(-1.0, 1.0, (batch, T_, m))
    if loss == "mse":
        y = rng.uniform(-1.0, 1.0, (batch, 1))
    elif loss == "ce":
        y = rng.integers(0, K, (batch, T_))
    else:
        y = rng.integers(0, K, (batch,))
    return model, x, y


def flat(record):
    return np.asarray(cells.flatten(record))


def memoryless_copy_run(out_dir, T=50):
    """RNN with two latch neurons: blank until one step after the delimiter, then uniform over 1..8."""
    r = Run(TrainConfig(task="copy", arch="rnn", hidden=2, seq_len=T, eval_size=1000, out_dir=str(out_dir)))
    c = r.model.cell
    for t in (c.W_xh, c.W_hh, c.b_h, r.model.W_out, r.model.b_out):
        t[...] = 0.0
    c.W_xh[tasks.COPY_DELIMITER, 0] = 40.0  # neuron 0 switches on at the delimiter ...
    c.W_hh[0, 0] = 20.0  # ... and holds
    c.b_h[0] = -10.0
    c.W_hh[0, 1] = 20.0  # neuron 1 follows neuron 0 one step late
    c.b_h[1] = -10.0
    r.model.W_out[1, tasks.COPY_BLANK] = -15.0
    r.model.b_out[tasks.COPY_DELIMITER] = -30.0
    return r


def engineered_gru(tmp_path):
    """Neuron 0 sits at tanh(2) throughout; neuron 1 flips sign with the input symbol."""
    r = Run(TrainConfig(task="copy", arch="gru", hidden=2, seq_len=5, out_dir=str(tmp_path)))
    c = r.model.cell
    for _, t in cells.named_tensors(c):
        t[...] = 0.0
    c.b_iz[:] = 20.0  # update gate open: h_t = n_t
    c.b_in[0] = 2.0
    c.W_in[1, 1] = 3.0
    c.W_in[2, 1] = -3.0
    return r.save(tmp_path / "engineered.ckpt")
