"""Systematic resampling."""

from __future__ import annotations

import numpy as np

__all__ = ["DegenerateFilterError", "systematic_indices", "copy_counts"]


class DegenerateFilterError(RuntimeError):
    """Every particle received zero weight."""

    def __init__(self, step=None, message="all particle weights are zero"):
        self.step = step
        super().__init__(message if step is None else f"{message} at step {step}")


def systematic_indices(weights, rng, n: int | None = None) -> np.ndarray:
    """Indices of ``n`` (default ``len(weights)``) systematic draws.

    A single uniform offset ``u`` places the draws at ``(u + k) / n``; the
    copy count of particle ``i`` differs from ``n * w_i / sum(w)`` by less
    than one.
    """
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("weights must be a non-empty vector")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and non-negative")
    total = w.sum()
    if total <= 0:
        raise DegenerateFilterError()
    n = w.size if n is None else n
    cum = np.cumsum(w / total)
    cum[-1] = 1.0
    points = (rng.random() + np.arange(n)) / n
    return np.searchsorted(cum, points, side="right")


def copy_counts(weights, rng, n: int | None = None) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    return np.bincount(systematic_indices(w, rng, n), minlength=w.size)
