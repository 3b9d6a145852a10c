"""Input validation helpers used across the package."""

import numpy as np
from sklearn.utils import check_array

from .errors import DataError, ShapeError


def check_feature_map(fmap, name="feature map"):
    """Return ``fmap`` as a C-contiguous float64 array of shape (rows, cols, channels).

    2-D inputs are promoted to a single channel.
    """
    arr = np.asarray(fmap, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ShapeError(f"{name} must be 3-D (rows, cols, channels), got ndim={arr.ndim}")
    if min(arr.shape) < 1:
        raise ShapeError(f"{name} has an empty dimension: {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite values")
    return np.ascontiguousarray(arr)


def check_label_map(labels, shape=None, name="label map"):
    arr = np.asarray(labels)
    if arr.ndim != 2 or min(arr.shape) < 1:
        raise ShapeError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.mod(arr, 1) == 0):
            raise DataError(f"{name} must hold integer labels")
        arr = arr.astype(np.int64)
    if np.any(arr < 0):
        raise DataError(f"{name} holds negative labels")
    if shape is not None and arr.shape != tuple(shape[:2]):
        raise ShapeError(f"{name} shape {arr.shape} does not match image {tuple(shape[:2])}")
    return arr.astype(np.int64, copy=False)


def check_matrix(X, n_features=None, name="X", min_samples=1):
    """2-D finite float64 matrix; optionally check the column count."""
    try:
        X = check_array(X, dtype=np.float64, ensure_min_samples=min_samples,
                        input_name=name)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    if n_features is not None and X.shape[1] != n_features:
        raise ShapeError(f"{name} has {X.shape[1]} columns, expected {n_features}")
    return X


def check_labels(y, n_samples=None, allow_zero=False):
    y = np.asarray(y)
    if y.ndim != 1:
        raise ShapeError("labels must be 1-D")
    if n_samples is not None and y.shape[0] != n_samples:
        raise ShapeError(f"got {y.shape[0]} labels for {n_samples} samples")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.mod(y, 1) == 0):
            raise DataError("labels must be integers")
    y = y.astype(np.int64)
    if np.any(y < 0) or (not allow_zero and np.any(y == 0)):
        raise DataError("labels must be positive class ids (0 is reserved for background)")
    return y
