"""Input validation helpers shared by the estimators and planners."""
from __future__ import annotations

import numpy as np


class NotFittedError(ValueError, AttributeError):
    """Raised when a predictor is used before ``fit``."""


def check_grid(a, *, name="grid", dtype=np.float64, ndim=2) -> np.ndarray:
    arr = np.asarray(a, dtype=dtype)
    if arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_same_shape(a: np.ndarray, b: np.ndarray, what="arrays") -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch between {what}: {a.shape} vs {b.shape}")


def check_is_fitted(estimator, attr="model_") -> None:
    if getattr(estimator, attr, None) is None:
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted yet; call fit() first"
        )


def check_probability(value: float, name: str, *, open_low=False, high=1.0) -> float:
    value = float(value)
    ok = (value > 0.0 if open_low else value >= 0.0) and value <= high
    if not ok:
        raise ValueError(f"{name}={value} outside its valid range")
    return value
