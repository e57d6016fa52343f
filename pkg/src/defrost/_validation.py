"""Input checks shared by the public API."""

import numbers

import numpy as np
from sklearn.utils import check_array, check_X_y


def check_features(X, *, min_samples=1, name="X"):
    X = check_array(X, dtype=np.float64, ensure_min_samples=min_samples, input_name=name)
    return np.ascontiguousarray(X)


def check_labelled(X, y, *, min_samples=1):
    X, y = check_X_y(X, y, dtype=np.float64, ensure_min_samples=min_samples)
    y = np.asarray(y)
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise ValueError("class labels must be integers")
        y = y.astype(np.int64)
    if np.any(y < 0):
        raise ValueError("class labels must be non-negative")
    return np.ascontiguousarray(X), y.astype(np.int64)


def check_positive_int(value, name, minimum=1):
    if not isinstance(value, numbers.Integral) or value < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def check_same_rows(A, B):
    if A.shape[0] != B.shape[0]:
        raise ValueError(f"representations are not aligned: {A.shape[0]} vs {B.shape[0]} rows")
