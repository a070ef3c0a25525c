"""Forward-noising schedules built by cumulative-sum construction.

The per-step noise scale grows arithmetically: delta_1..delta_T are
equally spaced, and the schedule is fixed by sqrt(1 - alpha_t) equalling
the running sum of the deltas.  All derived quantities are precomputed
and immutable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class DiffusionSchedule:
    """Noise schedule: alphas (T,), bar_alphas (T+1,) with bar_alpha_0 = 1."""

    T: int
    deltas: np.ndarray
    alphas: np.ndarray
    bar_alphas: np.ndarray
    sqrt_bar_alphas: np.ndarray = field(init=False)
    sqrt_one_minus_bar_alphas: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if self.alphas.shape != (self.T,) or self.deltas.shape != (self.T,):
            raise ValueError("alphas and deltas must have length T")
        if self.bar_alphas.shape != (self.T + 1,) or self.bar_alphas[0] != 1.0:
            raise ValueError("bar_alphas must have length T+1 and start at 1")
        if np.any(self.alphas <= 0.0) or np.any(self.alphas >= 1.0):
            raise ValueError("every alpha_t must lie in (0, 1)")
        if np.any(np.diff(self.bar_alphas) >= 0.0):
            raise ValueError("bar_alphas must be strictly decreasing")
        object.__setattr__(self, "sqrt_bar_alphas", np.sqrt(self.bar_alphas))
        object.__setattr__(
            self, "sqrt_one_minus_bar_alphas", np.sqrt(1.0 - self.bar_alphas)
        )

    def to_dict(self) -> dict:
        return {
            "T": self.T,
            "deltas": self.deltas.tolist(),
            "alphas": self.alphas.tolist(),
            "bar_alphas": self.bar_alphas.tolist(),
        }


def build_cumsum_schedule(T: int, delta_first: float, delta_last: float) -> DiffusionSchedule:
    """Build the schedule with sqrt(1 - alpha_t) = sum_{i<=t} delta_i.

    The deltas interpolate arithmetically from delta_first to delta_last
    (T=1 uses delta_first alone).  Fails if the cumulative sum reaches 1,
    which would push alpha_t out of (0, 1).
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if not (0.0 < delta_first <= delta_last):
        raise ValueError("need 0 < delta_first <= delta_last")
    deltas = np.linspace(delta_first, delta_last, T) if T > 1 else np.array([delta_first])
    csum = np.cumsum(deltas)
    if csum[-1] >= 1.0:
        raise ValueError(
            f"cumulative noise scale reaches {csum[-1]:.4f} >= 1; shrink the deltas or T"
        )
    alphas = 1.0 - csum**2
    bar_alphas = np.concatenate([[1.0], np.cumprod(alphas)])
    return DiffusionSchedule(T=T, deltas=deltas, alphas=alphas, bar_alphas=bar_alphas)


def forward_diffuse(
    z: np.ndarray, t, schedule: DiffusionSchedule, rng: np.random.Generator
) -> np.ndarray:
    """Draw z^(t) ~ N(sqrt(bar_alpha_t) z, (1 - bar_alpha_t) I).

    `z` may be a single point (d,) or a batch (B, d); `t` a label or a
    per-row label array.  t=0 returns z exactly (the noise draw is still
    consumed, keeping generator streams aligned across mixed-t batches).
    """
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("non-finite input point")
    t_arr = np.asarray(t, dtype=np.int64)
    if np.any((t_arr < 0) | (t_arr > schedule.T)):
        raise ValueError(f"time label out of range 0..{schedule.T}")
    eps = rng.standard_normal(z.shape)
    scale = schedule.sqrt_bar_alphas[t_arr]
    noise = schedule.sqrt_one_minus_bar_alphas[t_arr]
    if z.ndim == 2 and t_arr.ndim == 1:
        scale = scale[:, None]
        noise = noise[:, None]
    return scale * z + noise * eps
