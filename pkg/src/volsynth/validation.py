"""Input validation helpers shared by the functional API and the estimators."""

import numpy as np

from .errors import DimensionMismatch, InvalidRange


def check_grid(grid, channels=None, name="volume", finite=True):
    """Return ``grid`` as a float ``(C, D, H, W)`` array, raising on bad input."""
    arr = np.asarray(grid)
    if arr.ndim != 4:
        raise DimensionMismatch(f"{name} must have shape (C, D, H, W), got {arr.shape}")
    if channels is not None and arr.shape[0] != channels:
        raise DimensionMismatch(f"{name} must have {channels} channels, got {arr.shape[0]}")
    if min(arr.shape) < 1:
        raise DimensionMismatch(f"{name} has an empty axis: {arr.shape}")
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    if finite and not np.all(np.isfinite(arr)):
        raise InvalidRange(f"{name} contains non-finite values")
    return arr


def check_rgba(vol, name="volume"):
    """Validate an RGBA volume; opacity must lie in [0, 1]."""
    arr = check_grid(vol, channels=4, name=name)
    a = arr[3]
    if a.size and (a.min() < 0.0 or a.max() > 1.0):
        raise InvalidRange(f"{name} opacity outside [0, 1]")
    return arr


def check_image(img, name="image"):
    arr = np.asarray(img)
    if arr.ndim != 3:
        raise DimensionMismatch(f"{name} must have shape (H, W, C), got {arr.shape}")
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    return arr


def check_same_shape(a, b):
    if a.shape != b.shape:
        raise DimensionMismatch(f"shape mismatch: {a.shape} vs {b.shape}")


def check_dims(dims):
    dims = tuple(int(x) for x in dims)
    if len(dims) != 3 or min(dims) < 1:
        raise ValueError(f"dims must be three positive integers, got {dims}")
    return dims
