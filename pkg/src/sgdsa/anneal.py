"""Metropolis acceptance and geometric cooling."""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass

from .rng import RngState

_TINY = sys.float_info.min


@dataclass
class CoolingState:
    t0: float
    alpha: float
    current: float = None
    epochs_cooled: int = 0

    def __post_init__(self):
        if not self.t0 > 0 or not math.isfinite(self.t0):
            raise ValueError(f"initial temperature must be positive, got {self.t0}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"cooling factor must lie in (0, 1), got {self.alpha}")
        if self.current is None:
            self.current = float(self.t0)


@dataclass(frozen=True)
class AcceptanceDecision:
    worsening: float
    raw_probability: float
    probability: float  # clipped to 1
    draw: float
    accepted: bool


def _raw_probability(worsening: float, temperature: float) -> float:
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    if not math.isfinite(worsening):
        raise ValueError(f"worsening must be finite, got {worsening}")
    x = -worsening / temperature
    if x > 709.0:
        return math.inf
    p = math.exp(x)
    return p if p >= _TINY else 0.0


def acceptance_probability(worsening: float, temperature: float) -> float:
    """exp(-worsening / T), or 1 for non-positive worsening."""
    p = _raw_probability(worsening, temperature)
    return 1.0 if worsening <= 0 else p


def decide(worsening: float, cooling: CoolingState, rng: RngState) -> AcceptanceDecision:
    raw = _raw_probability(worsening, cooling.current)
    # one draw per call, even for improving moves
    draw = rng.uniform01()
    accepted = worsening <= 0 or draw < raw
    return AcceptanceDecision(
        worsening=float(worsening),
        raw_probability=raw,
        probability=min(raw, 1.0),
        draw=draw,
        accepted=bool(accepted),
    )


def cool(cooling: CoolingState) -> CoolingState:
    return CoolingState(
        t0=cooling.t0,
        alpha=cooling.alpha,
        # the smallest subnormal keeps T positive on very long runs
        current=max(cooling.current * cooling.alpha, math.ulp(0.0)),
        epochs_cooled=cooling.epochs_cooled + 1,
    )
