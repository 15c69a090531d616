"""Adaptive moving-average batch size (AMABS) controller and batch sampling."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .model import Batch


@dataclass(frozen=True)
class AmabsConfig:
    """Controller parameters.

    window : number of past objective values in the weighted moving average
    threshold : relative improvement below which an iteration counts as a
        lack of progress
    count : consecutive lack-of-progress iterations that trigger growth
    factor : batch expansion factor
    initial_batch : first batch size (clamped to the dataset size)
    """

    window: int = 10
    threshold: float = 0.01
    count: int = 2
    factor: float = 2.0
    initial_batch: int = 1000

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if not self.threshold > 0:
            raise ValueError("threshold must be positive")
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if not self.factor > 1:
            raise ValueError("factor must exceed 1")
        if self.initial_batch < 1:
            raise ValueError("initial_batch must be >= 1")


def wma(history, window: int, k: Optional[int] = None) -> float:
    """Weighted moving average of the last ``min(k, window)`` values.

    Weights decay linearly, the newest value weighing most. ``k`` is the
    number of values seen so far and defaults to ``len(history)``.
    """
    if k is None:
        k = len(history)
    if k < 1 or len(history) < 1:
        raise ValueError("wma needs at least one value")
    m = min(k, window, len(history))
    recent = np.asarray(history[len(history) - m:], dtype=float)
    weights = np.arange(1, m + 1, dtype=float)
    return float(weights @ recent / weights.sum())


def improvement(wma_prev: float, wma_curr: float) -> float:
    """Relative improvement between consecutive moving averages."""
    if wma_prev == 0:
        raise ZeroDivisionError("previous moving average is zero")
    return (wma_prev - wma_curr) / wma_prev


def next_batch_size(current: int, factor: float, n_max: int) -> int:
    grown = max(int(math.floor(factor * current)), current + 1)
    return min(grown, n_max)


@dataclass
class AmabsState:
    """Controller state owned by one optimization run."""

    config: AmabsConfig
    n_max: int
    history: List[float] = field(default_factory=list)
    counter: int = 0
    batch_size: int = 0
    previous_wma: Optional[float] = None
    last_improvement: Optional[float] = None

    def __post_init__(self):
        if self.n_max < 1:
            raise ValueError("n_max must be >= 1")
        if self.batch_size == 0:
            self.batch_size = min(self.config.initial_batch, self.n_max)

    def step(self, value: float) -> int:
        """Record the objective at the current iterate; return the next batch size."""
        cfg = self.config
        self.history.append(float(value))
        k = len(self.history) - 1
        current = wma(self.history, cfg.window, k + 1)
        if k > 0:
            self.last_improvement = improvement(self.previous_wma, current)
            if self.last_improvement < cfg.threshold:
                self.counter += 1
            else:
                self.counter = 0
            if self.counter == cfg.count:
                self.counter = 0
                self.batch_size = next_batch_size(self.batch_size, cfg.factor, self.n_max)
        self.previous_wma = current
        return self.batch_size

    def promote(self):
        """Jump to the full dataset (used to verify convergence)."""
        self.batch_size = self.n_max
        self.counter = 0


def sample_batch(n: int, n_prime: int, rng: np.random.Generator) -> Batch:
    """Draw ``n_prime`` distinct rows uniformly without replacement.

    The full index set is returned without consuming randomness when
    ``n_prime == n``. Indices are sorted (the set is what matters).
    """
    if not 1 <= n_prime <= n:
        raise ValueError(f"batch size {n_prime} outside [1, {n}]")
    if n_prime == n:
        return Batch.full(n)
    idx = rng.choice(n, size=n_prime, replace=False, shuffle=False)
    idx.sort()
    return Batch(idx, n)
