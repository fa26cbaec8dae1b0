"""Input checks shared by the field-valued functions and transformers."""
from __future__ import annotations

import numpy as np


def check_field(values, n: int | None = None, *, dtype=float, allow_batch: bool = True) -> np.ndarray:
    """Return ``values`` as an array of square periodic samples.

    The last two axes are the grid; leading axes (if ``allow_batch``) index
    independent samples.  Rejects non-finite entries and non-square or
    wrongly sized grids.
    """
    arr = np.asarray(values, dtype=dtype)
    if arr.ndim < 2 or (arr.ndim > 2 and not allow_batch):
        raise ValueError(f"expected a 2-d field, got shape {arr.shape}")
    if arr.shape[-1] != arr.shape[-2]:
        raise ValueError(f"field must be sampled on a square grid, got shape {arr.shape}")
    if n is not None and arr.shape[-1] != n:
        raise ValueError(f"field has {arr.shape[-1]} points per side, expected {n}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("field contains non-finite values")
    return arr


def check_positive(name: str, value: float) -> float:
    value = float(value)
    if not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be positive, got {value}")
    return value
