"""Input validation helpers shared by the estimator and the CLI."""

from __future__ import annotations

import numpy as np

__all__ = ["check_loss_sample"]


def check_loss_sample(X) -> np.ndarray:
    """Coerce X to a 1-D float array of finite nonnegative losses."""
    arr = np.asarray(X, dtype=float)
    if arr.ndim == 2 and arr.shape[1] == 1:
        arr = arr[:, 0]
    if arr.ndim != 1:
        raise ValueError("loss sample must be one-dimensional")
    if arr.size < 2:
        raise ValueError("loss sample needs at least two observations")
    if not np.all(np.isfinite(arr)):
        raise ValueError("loss sample must be finite")
    if np.any(arr < 0):
        raise ValueError("loss sample must be nonnegative")
    return arr
