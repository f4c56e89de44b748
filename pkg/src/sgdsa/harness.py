"""Epoch loop, validation, best-checkpoint tracking and metrics files."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .anneal import CoolingState, cool
from .data import Dataset, minibatches
from .nn import NetworkSpec
from .optim import (
    DEFAULT_SCHEDULE,
    LearningRateSet,
    scheduled_lr,
    sgd_step,
    sgdsa_step,
    ssa_step,
)
from .rng import new_master, substream

log = logging.getLogger(__name__)

OPTIMIZERS = ("sgd", "sgd_sa", "ssa")

METRICS_COLUMNS = (
    "epoch", "train_loss", "train_acc", "val_loss", "val_acc", "temperature",
    "mean_accept_prob", "n_improving", "n_accepted_worsening", "n_rejected",
)
SUMMARY_COLUMNS = ("seed", "final_val_loss", "final_val_accuracy", "best_val_accuracy", "best_epoch")

# recorded in run metadata so the curve semantics are unambiguous
TRAIN_METRIC_NOTE = (
    "train_loss/train_acc are sample-weighted means over the epoch's minibatches, "
    "measured on the weights before each step"
)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainingConfig:
    optimizer: str = "sgd_sa"
    epochs: int = 100
    batch_size: int = 512
    seed: int = 0
    t0: float = 1.0
    alpha: float | None = None  # 0.8, or 0.97 for ssa
    lr_set: LearningRateSet = field(default_factory=LearningRateSet)
    schedule: tuple[tuple[int, float], ...] = DEFAULT_SCHEDULE
    epsilon: float = 0.01
    val_fraction: float = 0.2
    cooling_per: str = "epoch"
    hidden: tuple[int, ...] = (32, 16)
    activation: str = "relu"

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.alpha is None:
            object.__setattr__(self, "alpha", 0.97 if self.optimizer == "ssa" else 0.8)
        if self.epochs < 1:
            raise ValueError("epochs must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.cooling_per not in ("epoch", "iteration"):
            raise ValueError(f"cooling_per must be 'epoch' or 'iteration', got {self.cooling_per!r}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in (0, 1)")
        if self.optimizer != "sgd":
            CoolingState(self.t0, self.alpha)  # validates t0 and alpha
        if self.optimizer == "sgd" and sum(span for span, _ in self.schedule) < self.epochs:
            raise ValueError(f"schedule covers fewer than {self.epochs} epochs")
        if self.optimizer == "ssa" and self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "schedule", tuple((int(s), float(r)) for s, r in self.schedule))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lr_set"] = list(self.lr_set.rates)
        d["schedule"] = [list(p) for p in self.schedule]
        d["hidden"] = list(self.hidden)
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def network_spec(self, n_inputs: int, n_classes: int) -> NetworkSpec:
        return NetworkSpec((n_inputs, *self.hidden, n_classes), self.activation)


@dataclass(frozen=True)
class MetricsRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_accuracy: float
    temperature: float
    mean_accept_prob_clipped: float
    accepted_worsening_moves: int
    rejected_moves: int
    improving_moves: int
    eta_histogram: tuple[int, ...]
    # diagnostic, not written to metrics.csv; None when no move worsened
    mean_worsening_accept_prob: float | None = None


@dataclass(frozen=True)
class Checkpoint:
    spec: NetworkSpec
    weights: np.ndarray
    epoch: int
    val_accuracy: float
    val_loss: float
    config_digest: str


@dataclass
class TrainResult:
    best: Checkpoint
    log: list[MetricsRecord]
    final_weights: np.ndarray
    accept_trace: np.ndarray  # one bool per sgd_sa/ssa step
    steps_attempted: int
    steps_accepted: int

    def __iter__(self):
        # allows ``best, log = train(...)``
        return iter((self.best, self.log))


def evaluate(spec: NetworkSpec, w: np.ndarray, d: Dataset, batch_size: int = 1024) -> tuple[float, float]:
    """Sample-weighted mean loss and accuracy over ``d``."""
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    if len(d) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    total_loss = 0.0
    total_correct = 0.0
    for start in range(0, len(d), batch_size):
        x = d.features[start:start + batch_size]
        y = d.labels[start:start + batch_size]
        logits = nn.forward(spec, w, x)
        total_loss += nn.loss(logits, y) * len(y)
        total_correct += nn.accuracy(logits, y) * len(y)
    return total_loss / len(d), total_correct / len(d)


def train(config: TrainingConfig, train_set: Dataset, val_set: Dataset) -> TrainResult:
    if train_set.n_features != val_set.n_features:
        raise ValueError("train and validation sets differ in feature count")
    if train_set.class_count != val_set.class_count:
        raise ValueError("train and validation sets differ in class count")
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("train and validation sets must be non-empty")

    spec = config.network_spec(train_set.n_features, train_set.class_count)
    master = new_master(config.seed)
    rng_init = substream(master, "init")
    rng_shuffle = substream(master, "shuffle")
    rng_lr = substream(master, "lr_pick")
    rng_acc = substream(master, "accept")
    rng_dir = substream(master, "ssa_direction")

    w = nn.init_weights(spec, rng_init)
    cooling = CoolingState(config.t0, config.alpha)
    lr_set = config.lr_set
    digest = config.digest()

    records: list[MetricsRecord] = []
    trace: list[bool] = []
    best: Checkpoint | None = None

    for epoch in range(1, config.epochs + 1):
        loss_sum = correct_sum = prob_sum = worse_prob_sum = 0.0
        seen = improving = accepted_worse = rejected = 0
        hist = [0] * len(lr_set)
        temperature_in_epoch = cooling.current

        for batch in minibatches(train_set, config.batch_size, epoch, rng_shuffle):
            try:
                n = len(batch)
                logits = nn.forward(spec, w, batch.inputs)
                correct_sum += nn.accuracy(logits, batch.targets) * n
                if config.optimizer == "sgd":
                    loss_before, grad = spec.loss_and_gradient(w, batch)
                    w = sgd_step(w, grad, scheduled_lr(epoch, config.schedule))
                    loss_sum += loss_before * n
                    prob_sum += 1.0
                    seen += n
                    continue
                if config.optimizer == "sgd_sa":
                    w, out = sgdsa_step(spec, w, batch, lr_set, cooling, rng_lr, rng_acc)
                    hist[out.eta_index] += 1
                else:
                    w, out = ssa_step(spec, w, batch, config.epsilon, cooling, rng_dir, rng_acc)
            except Exception as e:
                raise TrainingError(f"epoch {epoch}, batch {batch.batch_index}: {e}") from e

            loss_sum += out.loss_before * n
            seen += n
            d = out.decision
            prob_sum += d.probability
            trace.append(d.accepted)
            if d.worsening <= 0:
                improving += 1
            else:
                worse_prob_sum += d.probability
                if d.accepted:
                    accepted_worse += 1
                else:
                    rejected += 1
            if config.cooling_per == "iteration":
                cooling = cool(cooling)

        n_batches = math.ceil(len(train_set) / config.batch_size)
        if config.optimizer != "sgd" and config.cooling_per == "epoch":
            cooling = cool(cooling)
        val_loss, val_acc = evaluate(spec, w, val_set)
        rec = MetricsRecord(
            epoch=epoch,
            train_loss=loss_sum / seen,
            train_accuracy=correct_sum / seen,
            val_loss=val_loss,
            val_accuracy=val_acc,
            temperature=math.nan if config.optimizer == "sgd" else cooling.current,
            mean_accept_prob_clipped=prob_sum / n_batches,
            accepted_worsening_moves=accepted_worse,
            rejected_moves=rejected,
            improving_moves=improving,
            eta_histogram=tuple(hist),
            mean_worsening_accept_prob=(worse_prob_sum / (accepted_worse + rejected)
                                        if accepted_worse + rejected else None),
        )
        records.append(rec)
        log.debug("epoch %d train_loss=%.4f val_acc=%.4f T=%g", epoch, rec.train_loss, val_acc,
                  temperature_in_epoch)
        if best is None or val_acc > best.val_accuracy:
            best = Checkpoint(spec, w.copy(), epoch, val_acc, val_loss, digest)

    trace_arr = np.array(trace, dtype=bool)
    return TrainResult(
        best=best,
        log=records,
        final_weights=w,
        accept_trace=trace_arr,
        steps_attempted=int(trace_arr.size),
        steps_accepted=int(trace_arr.sum()),
    )


@dataclass
class SeedRun:
    seed: int
    result: TrainResult | None
    error: str | None = None


def _run_seed(args) -> SeedRun:
    config, seed, train_set, val_set = args
    cfg = TrainingConfig(**{**_config_fields(config), "seed": seed})
    try:
        return SeedRun(seed, train(cfg, train_set, val_set))
    except Exception as e:  # one failing seed must not sink the others
        return SeedRun(seed, None, f"{type(e).__name__}: {e}")


def _config_fields(config: TrainingConfig) -> dict:
    return {f: getattr(config, f) for f in config.__dataclass_fields__}


def multi_seed(config: TrainingConfig, seeds, train_set: Dataset, val_set: Dataset,
               workers: int = 1) -> list[SeedRun]:
    """Independent runs that differ only in seed, returned in ``seeds`` order."""
    seeds = list(seeds)
    if not seeds:
        raise ValueError("seed list is empty")
    jobs = [(config, s, train_set, val_set) for s in seeds]
    if workers <= 1:
        return [_run_seed(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_seed, jobs))


def _fmt(x) -> str:
    if isinstance(x, float):
        return "" if math.isnan(x) else repr(x)
    return str(x)


def write_metrics_csv(path, records: list[MetricsRecord], lr_set: LearningRateSet) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow([*METRICS_COLUMNS, *(f"eta_{r!r}" for r in lr_set.rates)])
        for r in records:
            w.writerow([_fmt(v) for v in (
                r.epoch, r.train_loss, r.train_accuracy, r.val_loss, r.val_accuracy,
                r.temperature, r.mean_accept_prob_clipped, r.improving_moves,
                r.accepted_worsening_moves, r.rejected_moves, *r.eta_histogram,
            )])


def summary_row(seed: int, result: TrainResult) -> list[str]:
    last = result.log[-1]
    return [_fmt(v) for v in (seed, last.val_loss, last.val_accuracy,
                              result.best.val_accuracy, result.best.epoch)]


def write_summary_csv(path, runs: list[SeedRun]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for run in runs:
            if run.result is not None:
                w.writerow(summary_row(run.seed, run.result))


def save_best(path, result: TrainResult) -> None:
    b = result.best
    nn.save_checkpoint(path, b.spec, b.weights, {
        "epoch": b.epoch,
        "val_accuracy": b.val_accuracy,
        "val_loss": b.val_loss,
        "config_digest": b.config_digest,
    })
