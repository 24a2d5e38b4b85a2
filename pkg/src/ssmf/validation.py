"""Small input-validation helpers shared across the package."""
from __future__ import annotations

import numpy as np


def check_positive(value, name: str):
    if value <= 0:
        raise ValueError(f"{name} must be positive, got {value!r}")
    return value


def check_at_least(value, minimum, name: str):
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value!r}")
    return value


def as_frame_stack(X, name: str = "X") -> np.ndarray:
    """Coerce input to a (T, m, n) float array of nonnegative frames.

    Accepts a 3-d array-like or a sequence of 2-d matrices with a common
    shape. A single 2-d matrix is treated as a stream of length one.
    """
    a = np.asarray(X, dtype=np.float64)
    if a.ndim == 2:
        a = a[None, :, :]
    if a.ndim != 3:
        raise ValueError(
            f"{name} must be a (T, m, n) stack of matrices, got ndim={a.ndim}"
        )
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    if a.size and float(a.min()) < 0.0:
        raise ValueError(f"{name} must be elementwise nonnegative")
    return a
