"""Shared bits for the two trainers: loss bookkeeping and divergence warning."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np


class DivergenceWarning(UserWarning):
    pass


@dataclass
class TrainingResult:
    losses: np.ndarray
    config: dict
    diverged: bool


class LossMonitor:
    """Records per-iteration losses and flags divergence.

    Divergence = the 100-iteration moving average exceeding its initial
    value after the first 10% of iterations. The warning fires once.
    """

    WINDOW = 100

    def __init__(self, iters: int, label: str):
        self.losses = np.empty(iters)
        self._iters = iters
        self._label = label
        self._baseline = None
        self.diverged = False

    def record(self, it: int, loss: float):
        self.losses[it] = loss
        done = it + 1
        if done == min(self.WINDOW, self._iters):
            self._baseline = self.losses[:done].mean()
        if (not self.diverged and self._baseline is not None
                and done >= max(self.WINDOW, self._iters // 10)
                and self.losses[max(0, done - self.WINDOW): done].mean() > self._baseline):
            self.diverged = True
            warnings.warn(
                f"{self._label}: loss moving average exceeds its initial value "
                f"({self._baseline:.4g}) at iteration {done}", DivergenceWarning)
