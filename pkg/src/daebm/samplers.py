"""MCMC transition kernels for (x, t) chains.

The composite transition alternates a Markov move and a global jump:
L Metropolis-adjusted Langevin steps at the current time label with the
label's own step size, then an exact multinomial redraw of the label
from the conditional over labels given the new configuration.  During
warm-up the Markov move runs unadjusted (no accept/reject).

All kernels operate on batches of chains; the single-chain functions are
thin wrappers over a batch of one.  Models are read-only here.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class SamplingError(RuntimeError):
    """Numerical failure inside a kernel, with a diagnostic payload."""

    def __init__(self, message: str, payload: dict | None = None):
        super().__init__(message)
        self.payload = payload or {}


class PostSamplingTimeout(RuntimeError):
    """Transition budget exhausted before enough time-0 visits."""

    def __init__(self, message: str, summary: dict):
        super().__init__(message)
        self.summary = summary


@dataclass
class ChainState:
    """One chain: configuration x and time label t."""

    x: np.ndarray
    t: int = 0

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        if not np.all(np.isfinite(self.x)):
            raise ValueError("non-finite chain configuration")


@dataclass
class StepSizes:
    """Per-label Langevin step sizes, indexed by t in 0..T."""

    sigma: np.ndarray

    def __post_init__(self):
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        if self.sigma.ndim != 1 or self.sigma.size == 0:
            raise ValueError("sigma must be a non-empty 1D array")
        if not np.all(np.isfinite(self.sigma)) or np.any(self.sigma <= 0.0):
            raise ValueError("step sizes must be positive and finite")

    def copy(self) -> "StepSizes":
        return StepSizes(self.sigma.copy())


@dataclass
class AcceptanceStats:
    """Per-label proposal/accept counts over an iteration window."""

    proposals: np.ndarray
    accepts: np.ndarray
    window: tuple[int, int] = (0, 0)

    @classmethod
    def zeros(cls, n_levels: int, window=(0, 0)) -> "AcceptanceStats":
        return cls(
            proposals=np.zeros(n_levels, dtype=np.int64),
            accepts=np.zeros(n_levels, dtype=np.int64),
            window=window,
        )

    def add(self, other: "AcceptanceStats") -> None:
        self.proposals += other.proposals
        self.accepts += other.accepts
        self.window = (min(self.window[0], other.window[0]),
                       max(self.window[1], other.window[1]))

    def rates(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return np.where(self.proposals > 0, self.accepts / self.proposals, np.nan)


def _energy_grad(model, X, t):
    if hasattr(model, "energy_grad_x_batch"):
        return model.energy_grad_x_batch(X, t)
    return model.energy_batch(X, t), model.grad_x_batch(X, t)


def langevin_kernel(model, X, t, sigma, rng, grad=None):
    """One unadjusted Langevin update for every chain in the batch.

    Returns (X1, grad1) with grad1 the gradient at the new points, so a
    multi-step loop evaluates the model once per step.
    """
    if grad is None:
        grad = model.grad_x_batch(X, t)
    t_arr = np.broadcast_to(np.asarray(t, dtype=np.int64), (X.shape[0],))
    sig_arr = np.broadcast_to(np.asarray(sigma, dtype=np.float64), (X.shape[0],))
    if not np.all(np.isfinite(grad)):
        bad = int(np.flatnonzero(~np.isfinite(grad).all(axis=1))[0])
        raise SamplingError(
            "non-finite energy gradient in Langevin update",
            payload={"x": X[bad].tolist(), "t": int(t_arr[bad]), "sigma": float(sig_arr[bad])},
        )
    sig = sig_arr[:, None]
    eps = rng.standard_normal(X.shape)
    X1 = X - 0.5 * sig**2 * grad + sig * eps
    grad1 = model.grad_x_batch(X1, t)
    return X1, grad1


def mala_kernel(model, X, t, sigma, rng, energy=None, grad=None):
    """One MALA update for every chain in the batch.

    Proposals with non-finite energy or reverse drift are rejected rather
    than raised: early-training energies may overflow and the chain must
    survive.  Returns (X1, energy1, grad1, accepted_mask).
    """
    if energy is None or grad is None:
        energy, grad = _energy_grad(model, X, t)
    sig = np.atleast_1d(np.asarray(sigma, dtype=np.float64))
    sig2 = sig**2
    eps = rng.standard_normal(X.shape)
    Xp = X - 0.5 * sig2[:, None] * grad + sig[:, None] * eps
    bad = ~np.isfinite(Xp).all(axis=1)
    Xp_eval = np.where(bad[:, None], X, Xp)  # keep the model's input finite
    with np.errstate(over="ignore", invalid="ignore"):
        energy_p, grad_p = _energy_grad(model, Xp_eval, t)
        # forward residual is sigma * eps by construction
        h0 = energy + 0.5 * (eps**2).sum(axis=1)
        r_bwd = X - Xp_eval + 0.5 * sig2[:, None] * grad_p
        h1 = energy_p + (r_bwd**2).sum(axis=1) / (2.0 * sig2)
        h1 = np.where(bad, np.inf, h1)
        log_r = h0 - h1
    u = rng.random(X.shape[0])
    with np.errstate(divide="ignore", invalid="ignore"):
        accept = np.isfinite(h1) & (np.log(u) < log_r)
    acc = accept[:, None]
    X1 = np.where(acc, Xp_eval, X)
    energy1 = np.where(accept, energy_p, energy)
    grad1 = np.where(acc, grad_p, grad)
    return X1, energy1, grad1, accept


def langevin_step(model, state: ChainState, sigma: float, rng) -> ChainState:
    """Single-chain unadjusted Langevin step at fixed t."""
    X1, _ = langevin_kernel(
        model, state.x[None, :], np.array([state.t]), np.array([sigma]), rng
    )
    return ChainState(x=X1[0], t=state.t)


def mala_step(model, state: ChainState, sigma: float, rng) -> tuple[ChainState, bool]:
    """Single-chain MALA step at fixed t; returns (new state, accepted)."""
    X1, _, _, accept = mala_kernel(
        model, state.x[None, :], np.array([state.t]), np.array([sigma]), rng
    )
    return ChainState(x=X1[0], t=state.t), bool(accept[0])


def jump_probabilities(model, X) -> np.ndarray:
    """Conditional label probabilities softmax(-U(x, .)) per row."""
    E = model.energy_all_times(X)
    E = np.where(np.isfinite(E), E, np.inf)
    if np.any(np.all(~np.isfinite(-E), axis=1)):
        raise SamplingError("all label energies non-finite at a configuration")
    logits = -E
    logits = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    return p


def global_jump_batch(model, X, rng) -> np.ndarray:
    """Exact label redraw for every chain, independent of the old label.

    A single-label model is a no-op and consumes no random numbers.
    """
    n_levels = getattr(model, "T", 0) + 1
    if n_levels == 1:
        return np.zeros(X.shape[0], dtype=np.int64)
    p = jump_probabilities(model, X)
    u = rng.random(X.shape[0])
    cum = np.cumsum(p, axis=1)
    return (u[:, None] > cum[:, :-1]).sum(axis=1).astype(np.int64)


def global_jump(model, x, rng) -> int:
    return int(global_jump_batch(model, np.atleast_1d(x)[None, :], rng)[0])


def mgms_transition_batch(
    model, X, t, L: int, steps: StepSizes, rng, adjust: bool = True
):
    """Markov move (L steps at fixed labels) then global jump, batched.

    Returns (X1, t1, stats, chain_accepts) where stats counts L proposals
    per chain at its move label.  With adjust=False the move is
    unadjusted Langevin and, by convention, every proposal counts as
    accepted.
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    t = np.asarray(t, dtype=np.int64)
    sigma = steps.sigma[t]
    stats = AcceptanceStats.zeros(steps.sigma.size)
    np.add.at(stats.proposals, t, L)
    n_acc = np.full(X.shape[0], L, dtype=np.int64)
    if adjust:
        energy, grad = _energy_grad(model, X, t)
        n_acc[:] = 0
        for _ in range(L):
            X, energy, grad, accept = mala_kernel(
                model, X, t, sigma, rng, energy=energy, grad=grad
            )
            n_acc += accept
        np.add.at(stats.accepts, t, n_acc)
    else:
        grad = None
        for _ in range(L):
            X, grad = langevin_kernel(model, X, t, sigma, rng, grad=grad)
        stats.accepts[:] = stats.proposals
    t1 = global_jump_batch(model, X, rng)
    return X, t1, stats, n_acc


def mgms_transition(
    model, state: ChainState, L: int, steps: StepSizes, rng, adjust: bool = True
) -> tuple[ChainState, AcceptanceStats]:
    X1, t1, stats, _ = mgms_transition_batch(
        model, state.x[None, :], np.array([state.t]), L, steps, rng, adjust=adjust
    )
    return ChainState(x=X1[0], t=int(t1[0])), stats


def adapt_step_sizes(
    stats: AcceptanceStats,
    steps: StepSizes,
    tau: float,
    low: float = 0.6,
    high: float = 0.8,
) -> StepSizes:
    """Push per-label acceptance rates into [low, high].

    Below the band sigma_t shrinks by 1/(1+2 tau); above it grows by
    (1+tau).  The asymmetry keeps the reachable set of step sizes dense.
    Labels with no proposals are left untouched.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    rates = stats.rates()
    sigma = steps.sigma.copy()
    seen = stats.proposals > 0
    sigma[seen & (rates < low)] /= 1.0 + 2.0 * tau
    sigma[seen & (rates > high)] *= 1.0 + tau
    return StepSizes(sigma)


def post_training_sample(
    model,
    steps: StepSizes,
    L: int,
    M: int,
    rng,
    max_transitions: int = 100_000,
) -> tuple[np.ndarray, int]:
    """Generate one configuration from noise by repeated transitions.

    Starts at (eps, T) with eps ~ N(0, I) and runs composite transitions
    until the label has been 0 at M transition boundaries; returns the
    configuration observed at the M-th time-0 visit and the number of
    transitions consumed.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    state = ChainState(x=rng.standard_normal(model.input_dim), t=model.T)
    visits = 0
    for k in range(1, max_transitions + 1):
        state, _ = mgms_transition(model, state, L, steps, rng, adjust=True)
        if state.t == 0:
            visits += 1
            if visits == M:
                return state.x.copy(), k
    raise PostSamplingTimeout(
        f"no {M} time-0 visits within {max_transitions} transitions",
        summary={
            "visits": visits,
            "transitions": max_transitions,
            "last_t": int(state.t),
            "last_x_norm": float(np.linalg.norm(state.x)),
        },
    )


@dataclass
class PostSamplingResult:
    """Batched post-training sampling outcome."""

    samples: np.ndarray
    transitions_used: np.ndarray
    unfinished: int
    total_transitions: int = 0
    extras: dict = field(default_factory=dict)


def post_training_sample_batch(
    model,
    steps: StepSizes,
    L: int,
    M: int,
    count: int,
    rng,
    max_transitions: int = 100_000,
) -> PostSamplingResult:
    """Run `count` chains from (noise, T); snapshot each at its M-th time-0 visit.

    All chains advance together for at most max_transitions composite
    transitions; chains that never reach M visits are dropped and counted
    in `unfinished`.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    if max_transitions < 1:
        raise ValueError("max_transitions must be >= 1")
    X = rng.standard_normal((count, model.input_dim))
    t = np.full(count, model.T, dtype=np.int64)
    visits = np.zeros(count, dtype=np.int64)
    done_at = np.zeros(count, dtype=np.int64)
    snap = np.full_like(X, np.nan)
    active = np.arange(count)
    k = 0
    for k in range(1, max_transitions + 1):
        Xa, ta, _, _ = mgms_transition_batch(
            model, X[active], t[active], L, steps, rng, adjust=True
        )
        X[active] = Xa
        t[active] = ta
        at0 = active[ta == 0]
        visits[at0] += 1
        newly = at0[visits[at0] == M]
        snap[newly] = X[newly]
        done_at[newly] = k
        active = active[done_at[active] == 0]
        if active.size == 0:
            break
    finished = done_at > 0
    return PostSamplingResult(
        samples=snap[finished],
        transitions_used=done_at[finished],
        unfinished=int((~finished).sum()),
        total_transitions=int(k),
    )
