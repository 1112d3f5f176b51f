"""Observation container for the regression model ``y = <x, theta> + eps``."""

from dataclasses import dataclass

import numpy as np

from .exceptions import InvariantError


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Observations ``Z_i = (y_i, x_i)``.

    ``X`` has one row per observation; both arrays are stored read-only.
    """

    y: np.ndarray
    X: np.ndarray

    def __post_init__(self):
        y = np.array(self.y, dtype=float).reshape(-1)
        X = np.array(self.X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise InvariantError(f"X must be (n, dim) matching y; got {X.shape} and {y.shape}")
        if X.shape[1] < 1:
            raise InvariantError("dim must be >= 1")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(X))):
            raise InvariantError("observations must be finite")
        y.setflags(write=False)
        X.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)

    @property
    def dim(self):
        return self.X.shape[1]

    @property
    def n(self):
        return self.X.shape[0]

    def __len__(self):
        return self.X.shape[0]

    def residuals(self, theta):
        return self.y - self.X @ np.asarray(theta, dtype=float)

    def __iter__(self):
        return zip(self.y, self.X)
