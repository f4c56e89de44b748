"""Per-minibatch update rules: scheduled SGD, SGD with annealed acceptance, and SSA.

``sgdsa_step`` and ``ssa_step`` take any objective exposing
``loss(w, batch) -> float`` and, for ``sgdsa_step``,
``loss_and_gradient(w, batch) -> (float, ndarray)``. A ``NetworkSpec`` is one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .anneal import AcceptanceDecision, CoolingState, decide
from .rng import RngState

DEFAULT_LR_SET = (0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1, 0.09, 0.08, 0.07, 0.06, 0.05)
DEFAULT_SCHEDULE = ((30, 0.1), (40, 0.01), (30, 0.001))


@dataclass(frozen=True)
class LearningRateSet:
    rates: tuple[float, ...] = DEFAULT_LR_SET

    def __post_init__(self):
        rates = tuple(float(r) for r in self.rates)
        if not rates:
            raise ValueError("learning-rate set is empty")
        if any(not r > 0 for r in rates):
            raise ValueError(f"learning rates must be positive, got {rates}")
        if len(set(rates)) != len(rates):
            raise ValueError(f"duplicate learning rates in {rates}")
        object.__setattr__(self, "rates", rates)

    def __len__(self) -> int:
        return len(self.rates)

    def __getitem__(self, i: int) -> float:
        return self.rates[i]


@dataclass(frozen=True)
class StepOutcome:
    eta_used: float
    loss_before: float
    loss_after: float
    decision: AcceptanceDecision
    weights_changed: bool
    eta_index: int = -1


def sgd_step(w: np.ndarray, grad: np.ndarray, eta: float) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if w.shape != grad.shape:
        raise ValueError(f"weights {w.shape} and gradient {grad.shape} differ in shape")
    if not eta > 0:
        raise ValueError(f"learning rate must be positive, got {eta}")
    return w - eta * grad


def scheduled_lr(epoch: int, schedule: Sequence[tuple[int, float]] = DEFAULT_SCHEDULE) -> float:
    """Rate in force at 1-based ``epoch`` for a list of (epoch span, rate) pairs."""
    if epoch < 1:
        raise ValueError(f"epochs are 1-based, got {epoch}")
    end = 0
    for span, rate in schedule:
        end += span
        if epoch <= end:
            return rate
    raise ValueError(f"epoch {epoch} is beyond the schedule's {end} epochs")


def sgdsa_step(objective, w, batch, lr_set: LearningRateSet, cooling: CoolingState,
               rng_lr: RngState, rng_acc: RngState) -> tuple[np.ndarray, StepOutcome]:
    loss_before, grad = objective.loss_and_gradient(w, batch)
    k = rng_lr.choice(len(lr_set))
    eta = lr_set[k]
    w_new = sgd_step(w, grad, eta)
    loss_after = objective.loss(w_new, batch)
    decision = decide(loss_after - loss_before, cooling, rng_acc)
    outcome = StepOutcome(eta, loss_before, loss_after, decision, decision.accepted, k)
    return (w_new if decision.accepted else w), outcome


def ssa_step(objective, w, batch, epsilon: float, cooling: CoolingState,
             rng_dir: RngState, rng_acc: RngState) -> tuple[np.ndarray, StepOutcome]:
    """Derivative-free move: try w -/+ epsilon * d for a Gaussian d, keep the better one."""
    if epsilon < 0:
        raise ValueError(f"epsilon must be non-negative, got {epsilon}")
    w = np.asarray(w, dtype=np.float64)
    loss_before = objective.loss(w, batch)
    step = epsilon * rng_dir.normal(w.shape)
    w_minus = w - step
    w_plus = w + step
    loss_minus = objective.loss(w_minus, batch)
    loss_plus = objective.loss(w_plus, batch)
    if loss_minus <= loss_plus:
        w_new, loss_after = w_minus, loss_minus
    else:
        w_new, loss_after = w_plus, loss_plus
    decision = decide(loss_after - loss_before, cooling, rng_acc)
    outcome = StepOutcome(epsilon, loss_before, loss_after, decision, decision.accepted)
    return (w_new if decision.accepted else w), outcome
