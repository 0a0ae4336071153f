"""Streams of gossip matrices consumed by the consensus and optimization loops.

A source owns a stack of candidate matrices (``stack``, shape ``(K, n, n)``)
and hands out indices into it, one per communication round.  The Markov chain
in :mod:`tvgossip.markov` and the deterministic sequences below share this
duck-typed interface:

``draw(count)``
    advance ``count`` rounds and return the stack indices used, in order;
``skip(count)``
    advance ``count`` rounds without reporting them.
"""

from __future__ import annotations

from typing import Protocol, Sequence

import numpy as np


class GossipSource(Protocol):
    stack: np.ndarray

    def draw(self, count: int) -> np.ndarray: ...

    def skip(self, count: int) -> None: ...


class StaticSource:
    """The same matrix every round."""

    def __init__(self, w: np.ndarray):
        w = np.asarray(w, dtype=float)
        self.stack = w[None, :, :]
        self.rounds = 0

    @property
    def n(self) -> int:
        return self.stack.shape[1]

    def draw(self, count: int) -> np.ndarray:
        self.rounds += count
        return np.zeros(count, dtype=np.int64)

    def skip(self, count: int) -> None:
        self.rounds += count


class PeriodicSource:
    """Cycle through a fixed list of matrices; round ``r`` uses ``matrices[r % P]``."""

    def __init__(self, matrices: Sequence[np.ndarray], start: int = 0):
        self.stack = np.asarray(matrices, dtype=float)
        self.rounds = int(start)

    @property
    def n(self) -> int:
        return self.stack.shape[1]

    @property
    def period(self) -> int:
        return self.stack.shape[0]

    def draw(self, count: int) -> np.ndarray:
        idx = (self.rounds % self.period + np.arange(count, dtype=np.int64)) % self.period
        self.rounds += count
        return idx

    def skip(self, count: int) -> None:
        self.rounds += count
