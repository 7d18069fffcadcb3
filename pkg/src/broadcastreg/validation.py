"""Input validation helpers shared by the estimator and the CLI."""

from __future__ import annotations

import numpy as np


def as_sample_tensors(X, dims: tuple[int, ...] | None = None) -> np.ndarray:
    """Coerce covariates to shape ``(n, *dims)``.

    Accepts a stack of tensors directly, or a 2-D matrix whose rows are
    samples flattened in canonical (first index fastest) order when ``dims``
    is supplied.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim < 2:
        raise ValueError("covariates must be at least 2-D: (n_samples, ...)")
    if dims is None:
        return X
    dims = tuple(int(p) for p in dims)
    if X.shape[1:] == dims:
        return X
    size = int(np.prod(dims))
    if X.ndim == 2 and X.shape[1] == size:
        rows_last_fastest = X.reshape((X.shape[0], *dims[::-1]))
        return rows_last_fastest.transpose((0, *range(len(dims), 0, -1)))
    raise ValueError(
        f"covariate shape {X.shape} is compatible with neither (n, *{dims}) "
        f"nor flattened rows of length {size}"
    )


def check_responses(y, n_samples: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.shape[0] != n_samples:
        raise ValueError(f"got {y.shape[0]} responses for {n_samples} samples")
    if not np.all(np.isfinite(y)):
        raise ValueError("responses must be finite")
    return y


def check_unit_interval(X: np.ndarray, clamp: bool = False) -> np.ndarray:
    if not np.all(np.isfinite(X)):
        raise ValueError("covariate entries must be finite")
    if clamp:
        return np.clip(X, 0.0, 1.0)
    if X.size and (X.min() < 0.0 or X.max() > 1.0):
        raise ValueError(
            "covariate entries must lie in [0, 1]; rescale them first "
            "(see the ingest command) or enable clamping for prediction"
        )
    return X
