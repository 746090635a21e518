"""Input validation helpers shared across the package."""

import numpy as np


def check_finite(arr, name="array"):
    arr = np.asarray(arr)
    if arr.size and not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_waveform_samples(samples, name="samples"):
    """Validate a 1-D, non-empty, finite sample array and return it as float64."""
    arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{name} must be non-empty")
    check_finite(arr, name)
    return arr


def check_same_shape(a, b, name_a="first", name_b="second"):
    if tuple(np.shape(a)) != tuple(np.shape(b)):
        raise ValueError(
            f"shape mismatch: {name_a} has {tuple(np.shape(a))}, "
            f"{name_b} has {tuple(np.shape(b))}"
        )


def check_in_range(value, lo, hi, name, inclusive="both"):
    ok = {
        "both": lo <= value <= hi,
        "left": lo <= value < hi,
        "right": lo < value <= hi,
        "neither": lo < value < hi,
    }[inclusive]
    if not ok:
        brackets = {"both": "[]", "left": "[)", "right": "(]", "neither": "()"}[inclusive]
        raise ValueError(
            f"{name} must lie in {brackets[0]}{lo}, {hi}{brackets[1]}, got {value}"
        )
    return value


def check_positive(value, name):
    if not value > 0:
        raise ValueError(f"{name} must be > 0, got {value}")
    return value
