"""Seeded random streams, one per kind of stochastic decision.

Every stream is a numpy ``Generator`` over the PCG64 bit generator, seeded
by ``SeedSequence(entropy=master_seed, spawn_key=path)``. The path starts
with the purpose code below and may be extended with further integers (the
minibatch shuffle folds in the epoch number). Derivation never reads from
the parent stream, so drawing from one purpose cannot shift another.

Purpose codes are frozen::

    init=1  shuffle=2  lr_pick=3  accept=4  ssa_direction=5

Draw primitives map to numpy as follows, which is enough to reproduce the
streams bit-exactly elsewhere: ``uniform01`` is ``Generator.random()``
(``(next_uint64 >> 11) * 2**-53``), ``choice`` is ``Generator.integers(n)``,
``shuffle`` is ``Generator.permutation(n)`` and ``normal`` is
``Generator.standard_normal(size)``.
"""

from __future__ import annotations

import numpy as np

PURPOSES = {
    "init": 1,
    "shuffle": 2,
    "lr_pick": 3,
    "accept": 4,
    "ssa_direction": 5,
}


class RngState:
    """A single-owner random stream; draws advance it in place."""

    def __init__(self, seed: int, path: tuple[int, ...] = (), purpose: str | None = None):
        seed = int(seed)
        if seed < 0:
            raise ValueError(f"seed must be non-negative, got {seed}")
        self.seed = seed
        self.path = tuple(int(p) for p in path)
        self.purpose = purpose
        self.draws = 0
        ss = np.random.SeedSequence(entropy=seed, spawn_key=self.path)
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def __repr__(self) -> str:
        return f"RngState(seed={self.seed}, path={self.path}, draws={self.draws})"

    def fold(self, index: int) -> RngState:
        """Child stream keyed by ``index``; does not consume draws from self."""
        if index < 0:
            raise ValueError("fold index must be non-negative")
        return RngState(self.seed, self.path + (index,), self.purpose)

    def uniform01(self) -> float:
        self.draws += 1
        return float(self._gen.random())

    def choice(self, n: int) -> int:
        if n < 1:
            raise ValueError("empty choice set")
        self.draws += 1
        return int(self._gen.integers(n))

    def shuffle(self, n: int) -> np.ndarray:
        if n < 0:
            raise ValueError("shuffle length must be non-negative")
        self.draws += 1
        return self._gen.permutation(n)

    def normal(self, size) -> np.ndarray:
        self.draws += 1
        return self._gen.standard_normal(size)


def new_master(seed: int) -> RngState:
    return RngState(seed)


def substream(master: RngState, purpose: str) -> RngState:
    try:
        code = PURPOSES[purpose]
    except KeyError:
        raise ValueError(
            f"unknown purpose {purpose!r}; expected one of {sorted(PURPOSES)}"
        ) from None
    return RngState(master.seed, master.path + (code,), purpose)


def uniform01(state: RngState) -> float:
    return state.uniform01()


def choice(state: RngState, n: int) -> int:
    return state.choice(n)


def shuffle(state: RngState, n: int) -> np.ndarray:
    return state.shuffle(n)
