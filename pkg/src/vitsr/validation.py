"""Input validation helpers shared by the estimator API."""

import numpy as np

from .errors import DataError, DimensionError, ValidationError


def as_float_image(x, name: str = "X") -> np.ndarray:
    """One 2D image as float64; NaN/inf rejected."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be a 2D image, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite values")
    return arr


def as_image_stack(X, name: str = "X") -> np.ndarray:
    """List of images or 3D array -> [n, H, W] float64 stack."""
    if isinstance(X, np.ndarray) and X.ndim == 2:
        X = X[None]
    try:
        arr = np.asarray([np.asarray(img, dtype=np.float64) for img in X])
    except ValueError:
        raise DimensionError(f"{name} images must share extents") from None
    if arr.ndim != 3 or arr.shape[0] == 0:
        raise DimensionError(
            f"{name} must be a non-empty stack of 2D images, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite values")
    return arr


def require_extent(img: np.ndarray, extent: int, name: str = "X"):
    if img.shape != (extent, extent):
        raise DimensionError(
            f"{name} must be {extent}x{extent} for this configuration, "
            f"got {img.shape}")


def as_int_labels(y, n_classes: int, n_samples: int, name: str = "y") -> np.ndarray:
    arr = np.asarray(y)
    if arr.shape != (n_samples,):
        raise DimensionError(
            f"{name} must have one label per image ({n_samples}), got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        rounded = np.rint(arr)
        if not np.array_equal(rounded, arr):
            raise ValidationError(f"{name} must hold integer class labels")
        arr = rounded.astype(int)
    if arr.min() < 0 or arr.max() >= n_classes:
        raise ValidationError(
            f"{name} labels must lie in [0, {n_classes}), got "
            f"[{arr.min()}, {arr.max()}]")
    return arr.astype(int)
