"""Input checks shared by the estimator and the CLI."""

from __future__ import annotations

import numbers

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import EmptyInputError, RegadError
from .geometry import PointCloud


def check_cloud(x, name="cloud") -> PointCloud:
    """Coerce ``x`` (PointCloud or (n, 3) array-like) into a validated PointCloud."""
    if isinstance(x, PointCloud):
        if len(x) == 0:
            raise EmptyInputError(f"{name} is empty")
        return x
    try:
        arr = check_array(x, dtype=np.float64, ensure_all_finite=True, ensure_min_samples=1)
    except ValueError as exc:
        raise RegadError(f"{name}: {exc}") from None
    if arr.shape[1] != 3:
        raise RegadError(f"{name} must have 3 columns, got {arr.shape[1]}")
    return PointCloud(arr)


def check_cloud_list(xs, name="X", min_len=1) -> list:
    # a single cloud is accepted in place of a list
    if isinstance(xs, PointCloud) or (isinstance(xs, np.ndarray) and xs.ndim == 2):
        xs = [xs]
    xs = list(xs)
    if len(xs) < min_len:
        raise EmptyInputError(f"{name} needs at least {min_len} cloud(s)")
    return [check_cloud(x, f"{name}[{i}]") for i, x in enumerate(xs)]


def check_int(value, name, minimum=None, maximum=None) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise RegadError(f"{name} must be an integer, got {value!r}")
    value = int(value)
    if minimum is not None and value < minimum:
        raise RegadError(f"{name} must be >= {minimum}, got {value}")
    if maximum is not None and value > maximum:
        raise RegadError(f"{name} must be <= {maximum}, got {value}")
    return value


def check_fraction(value, name, low_open=True) -> float:
    value = float(value)
    ok = (0 < value <= 1) if low_open else (0 <= value <= 1)
    if not ok:
        raise RegadError(f"{name} must lie in {'(0' if low_open else '[0'}, 1], got {value}")
    return value
