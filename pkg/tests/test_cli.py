import csv
import io
import subprocess
import sys

import numpy as np

from mcrmlab import cli, harness, tasks


def run_cli(args, capsys):
    code = cli.main([str(a) for a in args])
    out, err = capsys.readouterr()
    return code, out, err


def test_train_prints_csv(tmp_path, capsys):
    code, out, _ = run_cli(["train", "--task", "adding", "--arch", "gru", "--hidden", "4", "--seq-len", "6",
                            "--iters", "20", "--batch", "2", "--eval-size", "20", "--out-dir", tmp_path,
                            "--no-plots"], capsys)
    assert code == 0
    rows = list(csv.reader(io.StringIO(out)))
    assert rows[0] == ["iteration", "split", "metric", "value"]
    assert rows[1][:3] == ["20", "test", "mse"]
    assert (tmp_path / "curves.csv").exists() and not (tmp_path / "curves.png").exists()


def test_train_writes_plot_by_default(tmp_path, capsys):
    code, _, _ = run_cli(["train", "--task", "adding", "--hidden", "3", "--seq-len", "4", "--iters", "5",
                          "--batch", "2", "--eval-size", "10", "--out-dir", tmp_path], capsys)
    assert code == 0
    assert (tmp_path / "curves.png").read_bytes()[:4] == b"\x89PNG"


def test_config_file_and_flag_override(tmp_path, capsys):
    conf = tmp_path / "run.conf"
    conf.write_text("# small run\ntask = adding\narch = lstm\nhidden = 5\nseq_len = 6\niters = 10\n"
                    "batch = 2\neval_size = 10\nlr = 0.5\n")
    code, _, _ = run_cli(["train", "--config", conf, "--lr", "0.01", "--out-dir", tmp_path / "r", "--no-plots"],
                         capsys)
    assert code == 0
    r = harness.Run.from_checkpoint(tmp_path / "r" / "checkpoint.ckpt")
    assert (r.cfg.arch, r.cfg.hidden, r.cfg.lr) == ("lstm", 5, 0.01)


def test_seeds_summary(tmp_path, capsys):
    code, out, _ = run_cli(["train", "--task", "adding", "--hidden", "3", "--seq-len", "4", "--iters", "5",
                            "--batch", "2", "--eval-size", "10", "--seeds", "3,4", "--out-dir", tmp_path,
                            "--no-plots"], capsys)
    assert code == 0
    rows = list(csv.reader(io.StringIO(out)))
    assert [r[0] for r in rows] == ["seed", "3", "4", "mean"]
    assert (tmp_path / "summary.csv").exists()


def test_resume_flag(tmp_path, capsys):
    base = ["train", "--task", "adding", "--hidden", "3", "--seq-len", "4", "--batch", "2", "--eval-size", "10",
            "--eval-every", "5", "--no-plots"]
    assert run_cli(base + ["--iters", "10", "--out-dir", tmp_path / "full"], capsys)[0] == 0
    assert run_cli(base + ["--iters", "5", "--out-dir", tmp_path / "half"], capsys)[0] == 0
    code, out, _ = run_cli(["train", "--resume", tmp_path / "half" / "checkpoint.ckpt", "--iters", "10",
                            "--out-dir", tmp_path / "more", "--no-plots"], capsys)
    assert code == 0
    assert (tmp_path / "full" / "curves.csv").read_bytes() == (tmp_path / "more" / "curves.csv").read_bytes()


def test_eval_command(tmp_path, capsys):
    run_cli(["train", "--task", "copy", "--hidden", "4", "--seq-len", "3", "--iters", "2", "--batch", "2",
             "--eval-size", "10", "--out-dir", tmp_path, "--no-plots"], capsys)
    code, out, _ = run_cli(["eval", "--checkpoint", tmp_path / "checkpoint.ckpt", "--split", "valid"], capsys)
    assert code == 0
    rows = list(csv.reader(io.StringIO(out)))
    assert rows[0] == ["split", "metric", "value", "count"]
    assert rows[1][:2] == ["valid", "ce"] and rows[1][3] == "10"


def test_count_params_command(capsys):
    code, out, _ = run_cli(["count-params", "--task", "adding"], capsys)
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert {r["arch"] for r in rows} == {"rnn", "gru", "lstm", "nlstm", "mcrm"}
    assert all(abs(float(r["deviation"])) <= 0.03 for r in rows)
    code, out, _ = run_cli(["count-params", "--arch", "rnn", "--input-dim", "2", "--hidden", "308"], capsys)
    assert out.splitlines()[1] == "rnn,2,308,0,95788"


def test_gen_data(tmp_path, capsys):
    out = tmp_path / "copy.csv"
    code, _, _ = run_cli(["gen-data", "--task", "copy", "--seq-len", "5", "--count", "3", "--out", out], capsys)
    assert code == 0
    rows = list(csv.reader(open(out)))
    assert len(rows) == 1 + 3 * 25
    assert rows[0][:3] == ["sequence", "t", "x0"]
    code, _, _ = run_cli(["gen-data", "--task", "mnist", "--count", "10", "--out-dir", tmp_path / "idx"], capsys)
    images, labels = tasks.load_idx_images(tmp_path / "idx" / harness.MNIST_FILES["train"][0],
                                           tmp_path / "idx" / harness.MNIST_FILES["train"][1])
    assert images.shape == (10, 784, 1)


# -- exit codes ------------------------------------------------------------------------

def test_exit_config_error(tmp_path, capsys):
    code, _, err = run_cli(["train", "--hidden", "0", "--out-dir", tmp_path], capsys)
    assert code == cli.EXIT_CONFIG == 2
    assert "hidden" in err
    conf = tmp_path / "bad.conf"
    conf.write_text("colour = blue\n")
    assert run_cli(["train", "--config", conf], capsys)[0] == 2
    assert run_cli(["train", "--config", tmp_path / "missing.conf"], capsys)[0] == 2
    assert run_cli(["train", "--task", "mnist"], capsys)[0] == 2


def test_exit_data_error(tmp_path, capsys):
    code, _, err = run_cli(["train", "--task", "mnist", "--data-dir", tmp_path / "none"], capsys)
    assert code == cli.EXIT_DATA == 3
    (tmp_path / "junk.ckpt").write_bytes(b"not a checkpoint")
    assert run_cli(["eval", "--checkpoint", tmp_path / "junk.ckpt"], capsys)[0] == 3


def test_exit_divergence(tmp_path, capsys, monkeypatch):
    original = harness.SyntheticSource.next_batch

    def poisoned(self):
        x, y, reset = original(self)
        return np.full_like(x, np.nan), y, reset

    monkeypatch.setattr(harness.SyntheticSource, "next_batch", poisoned)
    code, _, err = run_cli(["train", "--task", "adding", "--hidden", "3", "--seq-len", "4", "--iters", "5",
                            "--out-dir", tmp_path, "--no-plots"], capsys)
    assert code == cli.EXIT_DIVERGED == 4
    assert "diverged" in err and (tmp_path / "diverged.ckpt").exists()


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "mcrmlab.cli", "count-params", "--task", "mnist"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert proc.stdout.startswith("task,arch,hidden,params,reference,deviation")
    bad = subprocess.run([sys.executable, "-m", "mcrmlab.cli", "train", "--arch", "transformer"],
                         capture_output=True, text=True, check=False)
    assert bad.returncode == 2
