"""Command-line entry point: ``sgdsa {train,multi-seed,evaluate,gradcheck}``.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, nn
from .data import Dataset, Minibatch, load_csv, load_idx, split, standardize
from .harness import (
    TRAIN_METRIC_NOTE,
    TrainingConfig,
    evaluate,
    multi_seed,
    save_best,
    summary_row,
    write_metrics_csv,
    write_summary_csv,
)
from .optim import DEFAULT_LR_SET, DEFAULT_SCHEDULE, LearningRateSet
from .rng import new_master, substream

OUTPUT_ROOT_ENV = "SGDSA_OUTPUT_ROOT"

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _floats(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    return values


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _schedule(text: str) -> list[tuple[int, float]]:
    try:
        pairs = [p.split(":") for p in text.split(",") if p.strip()]
        return [(int(span), float(rate)) for span, rate in pairs]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected SPAN:RATE,... got {text!r}")


def _add_data_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("dataset")
    g.add_argument("--csv", type=Path, help="headed CSV file")
    g.add_argument("--label-column", default="label")
    g.add_argument("--idx-images", type=Path)
    g.add_argument("--idx-labels", type=Path)
    g.add_argument("--standardize", action="store_true",
                   help="zero-mean unit-variance features, statistics from the train split")
    g.add_argument("--val-fraction", type=float, default=0.2)
    g.add_argument("--split-seed", type=int, default=0,
                   help="seed of the train/validation split, shared by all training seeds")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--optimizer", choices=("sgd", "sgd-sa", "ssa"), default="sgd-sa")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=512)
    p.add_argument("--t0", type=float, default=None, help="initial temperature (default 1)")
    p.add_argument("--alpha", type=float, default=None,
                   help="cooling factor in (0,1) (default 0.8; 0.97 for ssa)")
    p.add_argument("--lr-set", type=_floats, default=None,
                   help="candidate learning rates for sgd-sa (default: 14 rates 0.9..0.05)")
    p.add_argument("--schedule", type=_schedule, default=None,
                   help="sgd schedule SPAN:RATE,... (default 30:0.1,40:0.01,30:0.001)")
    p.add_argument("--epsilon", type=float, default=None, help="ssa step scale (default 0.01)")
    p.add_argument("--cooling-per", choices=("epoch", "iteration"), default="epoch")
    p.add_argument("--hidden", type=_ints, default=[32, 16], help="hidden layer widths")
    p.add_argument("--activation", choices=("relu", "tanh"), default="relu")
    p.add_argument("--out", type=Path, default=None,
                   help=f"output directory (default ${OUTPUT_ROOT_ENV} or ./runs)")
    _add_data_flags(p)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sgdsa", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train one network")
    p.add_argument("--seed", type=int, default=0)
    _add_train_flags(p)

    p = sub.add_parser("multi-seed", help="repeat training over several seeds")
    p.add_argument("--seeds", type=_ints, default=list(range(10)))
    p.add_argument("--workers", type=int, default=1)
    _add_train_flags(p)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--on", choices=("val", "train", "all"), default="val")
    _add_data_flags(p)

    p = sub.add_parser("gradcheck", help="compare backprop with finite differences")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--coords", type=int, default=20)
    return parser


def _config_from_args(args, seed: int) -> TrainingConfig:
    opt = args.optimizer.replace("-", "_")
    conflicts = {
        "--lr-set": (args.lr_set is not None, ("sgd_sa",)),
        "--schedule": (args.schedule is not None, ("sgd",)),
        "--epsilon": (args.epsilon is not None, ("ssa",)),
        "--t0": (args.t0 is not None, ("sgd_sa", "ssa")),
        "--alpha": (args.alpha is not None, ("sgd_sa", "ssa")),
    }
    for flag, (given, allowed) in conflicts.items():
        if given and opt not in allowed:
            raise UsageError(f"{flag} conflicts with --optimizer {args.optimizer}")
    if args.alpha is not None and not 0.0 < args.alpha < 1.0:
        raise UsageError(f"--alpha must lie in the open interval (0,1), got {args.alpha}")
    if args.t0 is not None and not args.t0 > 0:
        raise UsageError(f"--t0 must be positive, got {args.t0}")
    if args.lr_set is not None and not args.lr_set:
        raise UsageError("--lr-set is empty")
    if args.epochs < 1 or args.batch_size < 1:
        raise UsageError("--epochs and --batch-size must be positive")
    try:
        return TrainingConfig(
            optimizer=opt,
            epochs=args.epochs,
            batch_size=args.batch_size,
            seed=seed,
            t0=1.0 if args.t0 is None else args.t0,
            alpha=args.alpha,
            lr_set=LearningRateSet(tuple(args.lr_set or DEFAULT_LR_SET)),
            schedule=tuple(args.schedule or DEFAULT_SCHEDULE),
            epsilon=0.01 if args.epsilon is None else args.epsilon,
            val_fraction=args.val_fraction,
            cooling_per=args.cooling_per,
            hidden=tuple(args.hidden),
            activation=args.activation,
        )
    except ValueError as e:
        raise UsageError(str(e)) from None


def _load_dataset(args) -> Dataset:
    if args.csv is not None and (args.idx_images or args.idx_labels):
        raise UsageError("--csv conflicts with --idx-images/--idx-labels")
    if args.csv is not None:
        if not args.csv.exists():
            raise UsageError(f"dataset not found: {args.csv}")
        return load_csv(args.csv, args.label_column)
    if args.idx_images and args.idx_labels:
        for path in (args.idx_images, args.idx_labels):
            if not path.exists():
                raise UsageError(f"dataset not found: {path}")
        return load_idx(args.idx_images, args.idx_labels)
    raise UsageError("a dataset is required: --csv PATH or --idx-images PATH --idx-labels PATH")


def _prepare(args) -> tuple[Dataset, Dataset]:
    if not 0.0 < args.val_fraction < 1.0:
        raise UsageError(f"--val-fraction must lie in (0,1), got {args.val_fraction}")
    full = _load_dataset(args)
    train_set, val_set = split(full, args.val_fraction, substream(new_master(args.split_seed), "shuffle"))
    if args.standardize:
        train_set, val_set = standardize(train_set, val_set)
    return train_set, val_set


def _out_dir(args) -> Path:
    out = args.out or Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _metadata(args, config: TrainingConfig) -> dict:
    return {
        "version": __version__,
        "command": args.command,
        "config": config.to_dict(),
        "config_digest": config.digest(),
        "dataset": {
            "csv": str(args.csv) if args.csv else None,
            "idx_images": str(args.idx_images) if args.idx_images else None,
            "idx_labels": str(args.idx_labels) if args.idx_labels else None,
            "label_column": args.label_column,
            "standardize": args.standardize,
            "split_seed": args.split_seed,
            "val_fraction": args.val_fraction,
        },
        "train_metrics": TRAIN_METRIC_NOTE,
    }


def _write_run(out: Path, run, config: TrainingConfig, args) -> None:
    write_metrics_csv(out / "metrics.csv", run.result.log, config.lr_set)
    save_best(out / "best.ckpt", run.result)
    meta = _metadata(args, config)
    meta["steps_attempted"] = run.result.steps_attempted
    meta["steps_accepted"] = run.result.steps_accepted
    (out / "run-metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _print_summary(run) -> None:
    seed, final_loss, final_acc, best_acc, best_epoch = summary_row(run.seed, run.result)
    print(f"seed={seed} final_val_loss={final_loss} final_val_accuracy={final_acc} "
          f"best_val_accuracy={best_acc} best_epoch={best_epoch}")


def _cmd_train(args) -> int:
    config = _config_from_args(args, args.seed)
    train_set, val_set = _prepare(args)
    out = _out_dir(args)
    (run,) = multi_seed(config, [args.seed], train_set, val_set)
    if run.error:
        print(f"error: {run.error}", file=sys.stderr)
        return EXIT_RUNTIME
    _write_run(out, run, config, args)
    write_summary_csv(out / "summary.csv", [run])
    _print_summary(run)
    return EXIT_OK


def _cmd_multi_seed(args) -> int:
    if not args.seeds:
        raise UsageError("--seeds is empty")
    config = _config_from_args(args, args.seeds[0])
    train_set, val_set = _prepare(args)
    out = _out_dir(args)
    runs = multi_seed(config, args.seeds, train_set, val_set, workers=args.workers)
    failed = 0
    for run in runs:
        if run.error:
            failed += 1
            print(f"seed={run.seed} error: {run.error}", file=sys.stderr)
            continue
        seed_dir = out / f"seed-{run.seed}"
        seed_dir.mkdir(exist_ok=True)
        _write_run(seed_dir, run, TrainingConfig(**{**config.__dict__, "seed": run.seed}), args)
        _print_summary(run)
    write_summary_csv(out / "summary.csv", runs)
    return EXIT_RUNTIME if failed else EXIT_OK


def _cmd_evaluate(args) -> int:
    if not args.checkpoint.exists():
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    spec, w, _ = nn.load_checkpoint(args.checkpoint)
    train_set, val_set = _prepare(args)
    target = {"val": val_set, "train": train_set}.get(args.on)
    if target is None:
        target = Dataset(
            np.vstack([train_set.features, val_set.features]),
            np.concatenate([train_set.labels, val_set.labels]),
            train_set.class_count,
        )
    loss, acc = evaluate(spec, w, target)
    print(f"loss={loss!r} accuracy={acc!r} samples={len(target)}")
    return EXIT_OK


def gradcheck(seed: int, coords: int = 20, step: float = 1e-5) -> float:
    """Max relative error of backprop against central differences on a random net."""
    master = new_master(seed)
    rng = substream(master, "init")
    spec = nn.NetworkSpec((7, 9, 6, 4), "tanh")
    w = nn.init_weights(spec, rng)
    w += 0.1 * rng.normal(w.shape)
    batch = Minibatch(rng.normal((5, 7)), np.array([rng.choice(4) for _ in range(5)]))
    _, grad = nn.loss_and_gradient(spec, w, batch)
    picks = substream(master, "shuffle").shuffle(spec.n_params)[:coords]
    worst = 0.0
    for i in picks:
        e = np.zeros_like(w)
        e[i] = step
        fd = (spec.loss(w + e, batch) - spec.loss(w - e, batch)) / (2 * step)
        worst = max(worst, abs(fd - grad[i]) / max(abs(fd), abs(grad[i]), 1e-8))
    return worst


def _cmd_gradcheck(args) -> int:
    err = gradcheck(args.seed, args.coords)
    print(f"max relative gradient error: {err:.3e}")
    return EXIT_OK if err < 1e-4 else EXIT_RUNTIME


COMMANDS = {
    "train": _cmd_train,
    "multi-seed": _cmd_multi_seed,
    "evaluate": _cmd_evaluate,
    "gradcheck": _cmd_gradcheck,
}


def parse_and_run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(parse_and_run())
