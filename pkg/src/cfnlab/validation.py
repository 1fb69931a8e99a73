"""Input checks for the estimator facade."""

from __future__ import annotations

import numpy as np
from sklearn.exceptions import NotFittedError

from .errors import ValidationError


def as_id_stream(X, name: str = "X") -> np.ndarray:
    """Coerce X to a 1-d int64 token-id stream or fail loudly."""
    arr = np.asarray(X)
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be a 1-d token-id sequence, "
                              f"got shape {arr.shape}")
    if arr.size == 0:
        raise ValidationError(f"{name} is empty")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.issubdtype(arr.dtype, np.floating) or \
                not np.all(arr == np.floor(arr)):
            raise ValidationError(f"{name} must contain integer token ids")
    out = arr.astype(np.int64)
    if out.min() < 0:
        raise ValidationError(f"{name} contains negative token ids")
    return out


def ensure_fitted(estimator, attr: str = "stack_") -> None:
    if not hasattr(estimator, attr):
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted yet; call fit first")
