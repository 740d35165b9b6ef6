"""Shared training-loop plumbing: minibatching, early stopping, NaN guard."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor


class TrainingError(RuntimeError):
    """Raised when optimization degenerates (non-finite loss)."""


def batch_indices(n: int, batch_size: int | None, rng: np.random.Generator):
    """Yield minibatch index arrays; full-batch mode (batch_size None or >= n)
    keeps natural order and consumes no rng draws."""
    if batch_size is None or batch_size >= n:
        yield np.arange(n)
        return
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start:start + batch_size]


def check_finite(loss_value: float, context: str) -> float:
    if not np.isfinite(loss_value):
        raise TrainingError(f"non-finite loss ({loss_value}) during {context}")
    return float(loss_value)


class EarlyStopper:
    """Track validation loss; snapshot and restore the best parameters."""

    def __init__(self, params: list[Tensor], patience: int):
        self.params = params
        self.patience = patience
        self.best = np.inf
        self.best_epoch = -1
        self.stale = 0
        self._snap = [p.values.copy() for p in params]

    def update(self, val_loss: float, epoch: int) -> bool:
        """Record one epoch's validation loss; True means stop now."""
        if val_loss < self.best:
            self.best = val_loss
            self.best_epoch = epoch
            self.stale = 0
            self._snap = [p.values.copy() for p in self.params]
            return False
        self.stale += 1
        return self.stale >= self.patience

    def restore(self) -> None:
        for p, s in zip(self.params, self._snap):
            p.values[...] = s
