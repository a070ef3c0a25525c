import numpy as np
import pytest


class GaussianLevels:
    """Analytic joint energy: level t is a centered Gaussian with its own
    width, plus an additive offset controlling the label weights."""

    def __init__(self, stds, offsets=None):
        self.stds = np.asarray(stds, dtype=np.float64)
        self.offsets = (
            np.zeros_like(self.stds) if offsets is None else np.asarray(offsets, float)
        )
        self.input_dim = 1

    @property
    def T(self):
        return self.stds.size - 1

    def energy_batch(self, X, t):
        X = np.atleast_2d(X)
        s = self.stds[t]
        return 0.5 * (X[:, 0] / s) ** 2 + self.offsets[t]

    def grad_x_batch(self, X, t):
        X = np.atleast_2d(X)
        s = self.stds[t]
        if np.ndim(s):
            return X / (s**2)[:, None]
        return X / s**2

    def energy_grad_x_batch(self, X, t):
        return self.energy_batch(X, t), self.grad_x_batch(X, t)

    def energy_all_times(self, X):
        X = np.atleast_2d(X)
        return np.stack(
            [self.energy_batch(X, t) for t in range(self.T + 1)], axis=1
        )


class QuadraticEnergy:
    """U = ||x||^2 / (2 s^2), any dimension, single level."""

    T = 0

    def __init__(self, dim=1, s=1.0):
        self.input_dim = dim
        self.s = s

    def energy_batch(self, X, t=0):
        X = np.atleast_2d(X)
        return 0.5 * (X**2).sum(axis=1) / self.s**2

    def grad_x_batch(self, X, t=0):
        return np.atleast_2d(X) / self.s**2

    def energy_grad_x_batch(self, X, t=0):
        return self.energy_batch(X, t), self.grad_x_batch(X, t)

    def energy_all_times(self, X):
        return self.energy_batch(X)[:, None]


class FlatEnergy:
    """Constant potential; gradient identically zero."""

    T = 0

    def __init__(self, dim=1, value=0.0):
        self.input_dim = dim
        self.value = value

    def energy_batch(self, X, t=0):
        return np.full(np.atleast_2d(X).shape[0], self.value)

    def grad_x_batch(self, X, t=0):
        return np.zeros_like(np.atleast_2d(X))

    def energy_grad_x_batch(self, X, t=0):
        return self.energy_batch(X, t), self.grad_x_batch(X, t)

    def energy_all_times(self, X):
        return self.energy_batch(X)[:, None]


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
