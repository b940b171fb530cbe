"""Input validation helpers shared by the estimator wrappers and the CLI."""
from __future__ import annotations

import numpy as np

from .exceptions import DimensionMismatch, PreconditionViolated


def check_grid_field(a, grid, name: str = "field") -> np.ndarray:
    """Return ``a`` as a finite flat float array of the grid's size."""
    arr = np.asarray(a, dtype=float)
    if arr.size != grid.size:
        raise DimensionMismatch(f"{name} has {arr.size} values, grid needs {grid.size}", name=name)
    arr = arr.ravel()
    if not np.all(np.isfinite(arr)):
        raise PreconditionViolated(f"{name} contains non-finite values", name=name)
    return arr


def check_positive(value, name: str, strict: bool = True) -> float:
    v = float(value)
    if not np.isfinite(v) or (v <= 0 if strict else v < 0):
        raise PreconditionViolated(f"{name} must be {'positive' if strict else 'nonnegative'}", name=name, value=v)
    return v


def check_points(x, dim: int, name: str = "points") -> np.ndarray:
    """Coerce to shape (N, dim)."""
    arr = np.asarray(x, dtype=float)
    if dim == 1 and arr.ndim == 1:
        arr = arr[:, None]
    arr = np.atleast_2d(arr)
    if arr.shape[-1] != dim:
        raise DimensionMismatch(f"{name} must have {dim} columns", name=name, shape=list(arr.shape))
    return arr
