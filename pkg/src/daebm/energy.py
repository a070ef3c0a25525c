"""Energy-function models with exact analytic gradients.

Two families are provided: a 1D ReLU-spline energy with a quadratic
prior term, and a joint MLP energy over (x, t) with sinusoidal time
conditioning.  Both expose the same evaluation surface:

* ``energy(x, t)`` / ``energy_batch(X, t)`` -- scalar potential values,
* ``grad_x`` / ``grad_x_batch`` / ``energy_grad_x_batch`` -- input gradients,
* ``grad_theta`` / ``mean_energy_grad_theta`` -- parameter gradients,
* ``energy_all_times(X)`` -- values at every time label (joint models).

Gradients are hand-written reverse accumulation over the fixed layer
structure, so they can be pinned against finite differences exactly.
Models are immutable during evaluation; parameter mutation goes through
``set_param_values`` or in-place updates of ``params.values`` only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

CHECKPOINT_FORMAT_VERSION = 1


class ParamVector:
    """Flat float64 parameter store with named group slices.

    The layout (group name -> index range) is fixed at construction;
    values are mutated in place so that views held by a model stay valid.
    Mutations must bump `version` so models can invalidate caches; the
    training module's optimizer and `set_values` do this.
    """

    def __init__(self, groups: list[tuple[str, int]]):
        offset = 0
        layout: dict[str, slice] = {}
        for name, length in groups:
            if name in layout:
                raise ValueError(f"duplicate parameter group {name!r}")
            if length < 0:
                raise ValueError(f"negative length for group {name!r}")
            layout[name] = slice(offset, offset + length)
            offset += length
        self.layout = layout
        self.values = np.zeros(offset, dtype=np.float64)
        self.version = 0

    def __len__(self) -> int:
        return self.values.size

    def view(self, name: str) -> np.ndarray:
        return self.values[self.layout[name]]

    def bump_version(self) -> None:
        self.version += 1

    def set_values(self, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=np.float64)
        if values.shape != self.values.shape:
            raise ValueError(
                f"parameter length mismatch: got {values.size}, expected {self.values.size}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("parameter values must be finite")
        self.values[:] = values
        self.version += 1

    def copy_values(self) -> np.ndarray:
        return self.values.copy()


def time_embed(t: int, dim: int) -> np.ndarray:
    """Sinusoidal positional embedding of a time index.

    Interleaves sin/cos at geometrically spaced frequencies; dim must be
    even.  Deterministic in t, squared norm equals dim/2.
    """
    if dim % 2 != 0 or dim <= 0:
        raise ValueError(f"embedding dim must be a positive even integer, got {dim}")
    if t < 0:
        raise ValueError(f"time index must be non-negative, got {t}")
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    ang = t * freqs
    out = np.empty(dim, dtype=np.float64)
    out[0::2] = np.sin(ang)
    out[1::2] = np.cos(ang)
    return out


def _silu(z: np.ndarray) -> np.ndarray:
    return z * expit(z)


def _softplus_from_sigmoid(z: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Softplus from an already-computed sigmoid, stable for all z.

    Equals max(z, 0) + log1p(exp(-|z|)) up to rounding; above the cutoff
    the sigmoid saturates to 1 and softplus(z) = z to double precision.
    """
    out = np.negative(s)
    with np.errstate(divide="ignore"):
        np.log1p(out, out=out)
    np.negative(out, out=out)
    big = z > 30.0
    if big.any():
        out[big] = z[big]
    return out


def _row_weights(weights, n: int) -> np.ndarray:
    """Normalized averaging weights; uniform 1/n when not given."""
    if weights is None:
        return np.full(n, 1.0 / n)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (n,) or np.any(w < 0) or w.sum() <= 0:
        raise ValueError("weights must be non-negative with positive sum, one per row")
    return w / w.sum()


def _as_batch(x, dim: int) -> np.ndarray:
    X = np.asarray(x, dtype=np.float64)
    if X.ndim == 0:
        X = X.reshape(1, 1)
    elif X.ndim == 1:
        # a flat array is a batch of scalars in 1D, a single point otherwise
        X = X.reshape(-1, 1) if dim == 1 else X.reshape(1, -1)
    if X.ndim != 2 or X.shape[1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite input point")
    return X


class ReluSplineEnergy1D:
    """1D energy  U(x) = (prior_scale * x)^2 + sum_j w_j (x - knot_j)_+ .

    The quadratic prior keeps exp(-U) integrable whatever the weights.
    The ReLU subgradient at a kink is taken as 0 (left derivative).
    """

    kind = "relu_spline_1d"

    def __init__(self, knots, prior_scale: float = 0.1):
        knots = np.asarray(knots, dtype=np.float64)
        if knots.ndim != 1 or knots.size == 0:
            raise ValueError("knots must be a non-empty 1D sequence")
        if np.any(np.diff(knots) <= 0):
            raise ValueError("knots must be strictly increasing")
        self.knots = knots
        self.prior_scale = float(prior_scale)
        self.params = ParamVector([("weights", knots.size)])
        self._w = self.params.view("weights")

    @property
    def T(self) -> int:
        return 0

    @property
    def input_dim(self) -> int:
        return 1

    def set_param_values(self, values: np.ndarray) -> None:
        self.params.set_values(values)

    def _check_t(self, t) -> None:
        if np.any(np.asarray(t) != 0):
            raise ValueError("1D spline energy has a single time level t=0")

    def _features(self, x1: np.ndarray) -> np.ndarray:
        return np.maximum(x1[:, None] - self.knots[None, :], 0.0)

    def energy_batch(self, X, t=0) -> np.ndarray:
        self._check_t(t)
        x1 = _as_batch(X, 1)[:, 0]
        return (self.prior_scale * x1) ** 2 + self._features(x1) @ self._w

    def energy_grad_x_batch(self, X, t=0) -> tuple[np.ndarray, np.ndarray]:
        self._check_t(t)
        x1 = _as_batch(X, 1)[:, 0]
        feats = self._features(x1)
        u = (self.prior_scale * x1) ** 2 + feats @ self._w
        active = x1[:, None] > self.knots[None, :]
        g = 2.0 * self.prior_scale**2 * x1 + active @ self._w
        return u, g[:, None]

    def grad_x_batch(self, X, t=0) -> np.ndarray:
        return self.energy_grad_x_batch(X, t)[1]

    def energy_all_times(self, X) -> np.ndarray:
        return self.energy_batch(X)[:, None]

    def mean_energy_grad_theta(self, X, t=0, weights=None) -> tuple[float, np.ndarray]:
        self._check_t(t)
        x1 = _as_batch(X, 1)[:, 0]
        feats = self._features(x1)
        u = (self.prior_scale * x1) ** 2 + feats @ self._w
        r = _row_weights(weights, x1.size)
        return float(r @ u), feats.T @ r

    # single-point conveniences
    def energy(self, x, t: int = 0) -> float:
        return float(self.energy_batch(np.atleast_1d(x)[None, :1], t)[0])

    def grad_x(self, x, t: int = 0) -> np.ndarray:
        return self.grad_x_batch(np.atleast_1d(x)[None, :1], t)[0]

    def grad_theta(self, x, t: int = 0) -> np.ndarray:
        return self.mean_energy_grad_theta(np.atleast_1d(x)[None, :1], t)[1]

    def meta(self) -> dict:
        return {
            "kind": self.kind,
            "knots": self.knots.tolist(),
            "prior_scale": self.prior_scale,
        }


@dataclass(frozen=True)
class _MlpLayout:
    layer_sizes: tuple[int, ...]
    activation: str
    T: int
    time_embed_dim: int


class MlpJointEnergy:
    """Joint scalar energy U(x, t): an MLP in x with per-layer time shifts.

    Each hidden pre-activation receives a learned dense projection of the
    SiLU-transformed sinusoidal embedding of t.  With time_embed_dim=0
    the model is a plain MLP energy in x (used for T=0 baselines).
    """

    kind = "mlp_joint"

    def __init__(
        self,
        layer_sizes,
        activation: str = "softplus",
        T: int = 0,
        time_embed_dim: int = 0,
        rng: np.random.Generator | None = None,
    ):
        layer_sizes = tuple(int(s) for s in layer_sizes)
        if len(layer_sizes) < 2 or layer_sizes[-1] != 1:
            raise ValueError("layer_sizes must end in an output width of 1")
        if activation not in ("relu", "softplus"):
            raise ValueError(f"unknown activation {activation!r}")
        if T < 0:
            raise ValueError("T must be non-negative")
        if time_embed_dim < 0 or time_embed_dim % 2 != 0:
            raise ValueError("time_embed_dim must be an even non-negative integer")
        self._layout = _MlpLayout(layer_sizes, activation, int(T), int(time_embed_dim))

        groups: list[tuple[str, int]] = []
        hidden = layer_sizes[1:-1]
        prev = layer_sizes[0]
        for i, width in enumerate(hidden):
            groups.append((f"w{i}", width * prev))
            groups.append((f"b{i}", width))
            if time_embed_dim > 0:
                groups.append((f"v{i}", width * time_embed_dim))
            prev = width
        groups.append(("w_out", prev))
        groups.append(("b_out", 1))
        self.params = ParamVector(groups)

        self._hidden = hidden
        self._W = []
        self._b = []
        self._V = []
        prev = layer_sizes[0]
        for i, width in enumerate(hidden):
            self._W.append(self.params.view(f"w{i}").reshape(width, prev))
            self._b.append(self.params.view(f"b{i}"))
            if time_embed_dim > 0:
                self._V.append(self.params.view(f"v{i}").reshape(width, time_embed_dim))
            prev = width
        self._w_out = self.params.view("w_out")
        self._b_out = self.params.view("b_out")

        if time_embed_dim > 0:
            emb = np.stack([time_embed(t, time_embed_dim) for t in range(T + 1)])
            self._emb = _silu(emb)  # (T+1, time_embed_dim)
        else:
            self._emb = np.zeros((T + 1, 0))
        self._shift_version = -1
        self._shift_tables: list[np.ndarray] = []

        if rng is not None:
            self._kaiming_init(rng)

    @property
    def T(self) -> int:
        return self._layout.T

    @property
    def input_dim(self) -> int:
        return self._layout.layer_sizes[0]

    @property
    def activation(self) -> str:
        return self._layout.activation

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return self._layout.layer_sizes

    @property
    def time_embed_dim(self) -> int:
        return self._layout.time_embed_dim

    def _kaiming_init(self, rng: np.random.Generator) -> None:
        # fan-in scaled normal weights, zero biases
        for W in self._W:
            W[:] = rng.standard_normal(W.shape) * np.sqrt(2.0 / W.shape[1])
        for V in self._V:
            V[:] = rng.standard_normal(V.shape) * np.sqrt(2.0 / V.shape[1])
        self._w_out[:] = rng.standard_normal(self._w_out.shape) * np.sqrt(2.0 / self._w_out.size)
        self.params.bump_version()

    def set_param_values(self, values: np.ndarray) -> None:
        self.params.set_values(values)

    def _check_t(self, t) -> np.ndarray:
        t_arr = np.asarray(t, dtype=np.int64)
        if np.any((t_arr < 0) | (t_arr > self.T)):
            raise ValueError(f"time label out of range 0..{self.T}")
        return t_arr

    def _layer_shifts(self) -> list[np.ndarray]:
        """Per-layer (T+1, width) tables of the projected time embedding.

        Recomputed lazily when the parameter version changes; the tables
        turn the per-sample embedding projection into a row gather.
        """
        if self.params.version != self._shift_version:
            self._shift_tables = [self._emb @ V.T for V in self._V]
            self._shift_version = self.params.version
        return self._shift_tables

    def _forward(self, X: np.ndarray, t_arr, keep: bool):
        """t_arr is a per-row label array or a scalar label (broadcast)."""
        shifts = self._layer_shifts() if self._V else None
        relu = self._layout.activation == "relu"
        A = X
        As = [A] if keep else None
        Ds = [] if keep else None  # activation derivatives
        for i, W in enumerate(self._W):
            Z = A @ W.T + self._b[i]
            if shifts is not None:
                Z += shifts[i][t_arr]
            if relu:
                A = np.maximum(Z, 0.0)
                if keep:
                    Ds.append((Z > 0.0).astype(np.float64))
            else:
                S = expit(Z)
                A = _softplus_from_sigmoid(Z, S)
                if keep:
                    Ds.append(S)
            if keep:
                As.append(A)
        u = A @ self._w_out + self._b_out[0]
        return u, As, Ds

    def energy_batch(self, X, t) -> np.ndarray:
        X = _as_batch(X, self.input_dim)
        t_arr = self._check_t(t)
        if t_arr.ndim and t_arr.shape != (X.shape[0],):
            raise ValueError("per-row time labels must match the batch size")
        return self._forward(X, t_arr, keep=False)[0]

    def energy_grad_x_batch(self, X, t) -> tuple[np.ndarray, np.ndarray]:
        X = _as_batch(X, self.input_dim)
        t_arr = self._check_t(t)
        u, As, Ds = self._forward(X, t_arr, keep=True)
        delta = np.broadcast_to(self._w_out, (X.shape[0], self._w_out.size))
        for i in range(len(self._W) - 1, -1, -1):
            delta = (delta * Ds[i]) @ self._W[i]
        return u, delta

    def grad_x_batch(self, X, t) -> np.ndarray:
        return self.energy_grad_x_batch(X, t)[1]

    def energy_all_times(self, X) -> np.ndarray:
        X = _as_batch(X, self.input_dim)
        cols = [self._forward(X, t, keep=False)[0] for t in range(self.T + 1)]
        return np.stack(cols, axis=1)

    def mean_energy_grad_theta(self, X, t, weights=None) -> tuple[float, np.ndarray]:
        """Batch-averaged energy and parameter gradient (optionally weighted)."""
        X = _as_batch(X, self.input_dim)
        B = X.shape[0]
        t_arr = np.broadcast_to(self._check_t(t), (B,))
        u, As, Ds = self._forward(X, t_arr, keep=True)
        emb = self._emb[t_arr] if self._V else None
        r = _row_weights(weights, B)

        grad = np.zeros_like(self.params.values)
        layout = self.params.layout
        grad[layout["w_out"]] = r @ As[-1]
        grad[layout["b_out"]] = 1.0
        # seed the backward pass with the averaging weights folded in
        delta = self._w_out[None, :] * r[:, None]
        for i in range(len(self._W) - 1, -1, -1):
            dz = delta * Ds[i]
            grad[layout[f"w{i}"]] = (dz.T @ As[i]).ravel()
            grad[layout[f"b{i}"]] = dz.sum(axis=0)
            if self._V:
                grad[layout[f"v{i}"]] = (dz.T @ emb).ravel()
            delta = dz @ self._W[i]
        return float(r @ u), grad

    # single-point conveniences
    def energy(self, x, t: int) -> float:
        return float(self.energy_batch(np.atleast_1d(x)[None, :], t)[0])

    def grad_x(self, x, t: int) -> np.ndarray:
        return self.grad_x_batch(np.atleast_1d(x)[None, :], t)[0]

    def grad_theta(self, x, t: int) -> np.ndarray:
        return self.mean_energy_grad_theta(np.atleast_1d(x)[None, :], t)[1]

    def meta(self) -> dict:
        return {
            "kind": self.kind,
            "layer_sizes": list(self._layout.layer_sizes),
            "activation": self._layout.activation,
            "T": self._layout.T,
            "time_embed_dim": self._layout.time_embed_dim,
        }


def build_model(spec: dict, rng: np.random.Generator | None = None):
    """Construct a model from its checkpoint/config description."""
    kind = spec.get("kind")
    if kind == ReluSplineEnergy1D.kind:
        return ReluSplineEnergy1D(spec["knots"], spec.get("prior_scale", 0.1))
    if kind == MlpJointEnergy.kind:
        return MlpJointEnergy(
            spec["layer_sizes"],
            activation=spec.get("activation", "softplus"),
            T=spec.get("T", 0),
            time_embed_dim=spec.get("time_embed_dim", 0),
            rng=rng,
        )
    raise ValueError(f"unknown model kind {kind!r}")


def save_model(path, model) -> None:
    """Write a self-describing checkpoint (meta JSON + flat float64 params)."""
    meta = dict(model.meta())
    meta["format_version"] = CHECKPOINT_FORMAT_VERSION
    np.savez(path, meta=np.frombuffer(json.dumps(meta).encode("utf8"), dtype=np.uint8),
             params=model.params.values)


def load_model(path):
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode("utf8"))
        params = np.asarray(data["params"], dtype=np.float64)
    version = meta.pop("format_version", None)
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format version {version}")
    model = build_model(meta)
    model.set_param_values(params)
    return model
