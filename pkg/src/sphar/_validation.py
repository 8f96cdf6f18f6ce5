"""Small input-validation helpers shared across the package."""

from __future__ import annotations

import numpy as np


def check_positive_int(name: str, value) -> int:
    if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value < 1:
        raise ValueError(f"{name} must be a positive integer; got {value!r}")
    return int(value)


def check_nonnegative_int(name: str, value) -> int:
    if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value < 0:
        raise ValueError(f"{name} must be a nonnegative integer; got {value!r}")
    return int(value)


def check_interval(name: str, value, low: float, high: float) -> None:
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    if np.any(arr < low) or np.any(arr > high):
        raise ValueError(f"{name} must lie in [{low}, {high}]")


def as_float_array(name: str, value, ndim: int = 1) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional; got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


def check_locations(locations) -> np.ndarray:
    """Evaluation points for CLT statistics: distinct, strictly inside (-1, 1)."""
    z = as_float_array("locations", locations)
    if np.any(z <= -1.0) or np.any(z >= 1.0):
        raise ValueError("locations must lie strictly inside (-1, 1)")
    if np.unique(z).size != z.size:
        raise ValueError("locations must be pairwise distinct")
    return z
