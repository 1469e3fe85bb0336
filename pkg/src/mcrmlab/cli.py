"""Command-line entry point.

    mcrmlab train --task adding --arch mcrm --seq-len 50 --hidden 32 --iters 5000
    mcrmlab eval --checkpoint runs/default/checkpoint.ckpt --split test
    mcrmlab heatmap --checkpoint runs/default/checkpoint.ckpt --out heat.csv
    mcrmlab count-params --task adding
    mcrmlab gen-data --task copy --seq-len 50 --count 4 --out copy.csv

Exit codes: 0 success, 2 configuration error, 3 data/checkpoint error,
4 numerical divergence.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from pathlib import Path

from mcrmlab import cells, harness, tasks
from mcrmlab.checkpoint import CheckpointError
from mcrmlab.model import model_param_count
from mcrmlab.numkit import Rng

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4

_FIELD_TYPES = {
    "hidden": int, "lr": float, "clip": float, "seed": int, "iters": int, "batch": int,
    "seq_len": int, "bptt": int, "embed": int, "eval_every": int, "eval_size": int,
    "train_pool": int, "checkpoint_every": int,
}


def read_config_file(path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    try:
        lines = Path(path).read_text().splitlines()
    except FileNotFoundError as exc:
        raise harness.ConfigError(f"config file not found: {path}") from exc
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise harness.ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def _coerce(key: str, value):
    if key == "wall_clock":
        return str(value).lower() in ("1", "true", "yes", "on")
    kind = _FIELD_TYPES.get(key)
    if kind is None:
        return value
    try:
        return kind(value)
    except ValueError as exc:
        raise harness.ConfigError(f"{key}: cannot parse {value!r} as {kind.__name__}") from exc


def build_config(args) -> tuple[harness.TrainConfig, list[int] | None]:
    fields = {f.name for f in dataclasses.fields(harness.TrainConfig)}
    merged = {}
    seeds = None
    if args.config:
        for key, value in read_config_file(args.config).items():
            if key == "seeds":
                seeds = [int(s) for s in value.split(",") if s.strip()]
            elif key not in fields:
                raise harness.ConfigError(f"unknown config key {key!r}")
            else:
                merged[key] = _coerce(key, value)
    for key in fields:
        value = getattr(args, key, None)
        if value is not None and value is not False:
            merged[key] = value
    if args.seeds:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    return harness.TrainConfig(**merged), seeds


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value file; flags override it")
    p.add_argument("--task", choices=harness.TASKS)
    p.add_argument("--arch", choices=cells.ARCHS)
    p.add_argument("--hidden", type=int)
    p.add_argument("--optimizer", choices=("sgd", "rmsprop", "adam"))
    p.add_argument("--lr", type=float)
    p.add_argument("--clip", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--seeds", help="comma-separated seeds run one after another")
    p.add_argument("--iters", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--seq-len", dest="seq_len", type=int, help="T for the synthetic tasks")
    p.add_argument("--bptt", type=int, help="window width for language modelling")
    p.add_argument("--embed", type=int)
    p.add_argument("--eval-every", dest="eval_every", type=int)
    p.add_argument("--eval-size", dest="eval_size", type=int)
    p.add_argument("--train-pool", dest="train_pool", type=int)
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    p.add_argument("--data-dir", dest="data_dir")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--wall-clock", dest="wall_clock", action="store_true", help="fill the seconds column")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--no-plots", dest="plots", action="store_false")


def cmd_train(args) -> int:
    config, seeds = build_config(args)
    w = csv.writer(sys.stdout, lineterminator="\n")
    if seeds:
        reports, mean, path = harness.run_seeds(config, seeds, plots=args.plots)
        w.writerow(["seed", "split", "metric", "value"])
        for seed, r in reports:
            w.writerow([seed, r.split, r.metric, repr(r.value)])
        w.writerow(["mean", reports[0][1].split, reports[0][1].metric, repr(mean)])
        return EXIT_OK
    if args.resume:
        r = harness.Run.from_checkpoint(args.resume, iters=config.iters if args.iters else None,
                                        out_dir=args.out_dir, data_dir=args.data_dir)
    else:
        r = harness.Run(config)
    report = r.train(plots=args.plots)
    w.writerow(["iteration", "split", "metric", "value"])
    w.writerow([r.iteration, report.split, report.metric, repr(report.value)])
    return EXIT_OK


def cmd_eval(args) -> int:
    r = harness.Run.from_checkpoint(args.checkpoint, data_dir=args.data_dir)
    report = r.evaluate(args.split)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["split", "metric", "value", "count"])
    w.writerow([report.split, report.metric, repr(report.value), report.count])
    return EXIT_OK


def cmd_heatmap(args) -> int:
    r = harness.Run.from_checkpoint(args.checkpoint, data_dir=args.data_dir)
    inputs, symbols = harness.heatmap_inputs(r, args.text, args.length)
    paths = harness.export_heatmap(r.model, inputs, args.out, symbols=symbols, plots=args.plots)
    for p in paths:
        print(p)
    return EXIT_OK


def cmd_count_params(args) -> int:
    w = csv.writer(sys.stdout, lineterminator="\n")
    if args.arch:
        if args.hidden is None:
            raise harness.ConfigError("--arch needs --hidden")
        n = model_param_count(args.arch, args.input_dim, args.hidden, args.output_dim, args.vocab)
        w.writerow(["arch", "input_dim", "hidden", "output_dim", "params"])
        w.writerow([args.arch, args.input_dim, args.hidden, args.output_dim, n])
        return EXIT_OK
    w.writerow(["task", "arch", "hidden", "params", "reference", "deviation"])
    for task in ([args.task] if args.task else ["adding", "mnist", "copy"]):
        for row in harness.count_table(task):
            w.writerow([row["task"], row["arch"], row["hidden"], row["params"], row["reference"], f"{row['deviation']:+.4f}"])
    return EXIT_OK


def cmd_gen_data(args) -> int:
    rng = Rng(args.seed)
    if args.task == "mnist":
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for split, n in (("train", args.count), ("test", max(args.count // 5, 1))):
            images, labels = tasks.synthetic_digits(rng.spawn(0 if split == "train" else 1), n)
            img_name, lbl_name = harness.MNIST_FILES[split]
            tasks.write_idx_images(out / img_name, images)
            tasks.write_idx_labels(out / lbl_name, labels)
            print(out / img_name)
            print(out / lbl_name)
        return EXIT_OK
    gen = tasks.gen_adding if args.task == "adding" else tasks.gen_copy
    batch = gen(rng, args.seq_len, args.count)
    tasks.batch_to_csv(batch, args.out)
    print(args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mcrmlab", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one model (or one per --seeds entry)")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "valid", "test"))
    p.add_argument("--data-dir", dest="data_dir")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("heatmap", help="export memory-state grids and a neuron ranking")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--text", help="input text (corpora) or digit string (copy task)")
    p.add_argument("--length", type=int, help="tokens taken from the validation split when --text is absent")
    p.add_argument("--out", default="heatmap.csv")
    p.add_argument("--data-dir", dest="data_dir")
    p.add_argument("--no-plots", dest="plots", action="store_false")
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("count-params", help="parameter counts at the reference widths, or for one cell")
    p.add_argument("--task", choices=("adding", "mnist", "copy"))
    p.add_argument("--arch", choices=cells.ARCHS)
    p.add_argument("--hidden", type=int)
    p.add_argument("--input-dim", dest="input_dim", type=int, default=1)
    p.add_argument("--output-dim", dest="output_dim", type=int, default=0)
    p.add_argument("--vocab", type=int)
    p.set_defaults(func=cmd_count_params)

    p = sub.add_parser("gen-data", help="export synthetic batches as CSV or write IDX image fixtures")
    p.add_argument("--task", choices=("adding", "copy", "mnist"), required=True)
    p.add_argument("--seq-len", dest="seq_len", type=int, default=50)
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="batch.csv")
    p.add_argument("--out-dir", dest="out_dir", default="data/mnist")
    p.set_defaults(func=cmd_gen_data)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except harness.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (tasks.DataError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except harness.DivergenceError as exc:
        where = f"; last finite state saved to {exc.checkpoint_path}" if exc.checkpoint_path else ""
        print(f"diverged: {exc}{where}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
