"""Persistent stochastic-approximation training loops.

Three trainers share one update rule (gradient ascent on the difference
of parameter gradients at real and synthetic points):

* ``ebm_sa_iteration``   -- single-level EBMs with persistent, data,
  noise, or hybrid chain initialization,
* ``daebm_iteration``    -- the joint (x, t) model trained on forward-
  diffused data with composite Markov-move/global-jump sampling,
* ``drl_iteration``      -- the recovery-likelihood baseline, whose
  parameter gradient is bit-identical to contrastive divergence on the
  bivariate pair model (``bivariate_cd_gradient``).

Every stochastic stage draws from a named per-iteration stream derived
from the master seed (see ``rngs``), so serial runs are bit-reproducible
and checkpoints resume exactly.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .diffusion import DiffusionSchedule, build_cumsum_schedule, forward_diffuse
from .energy import build_model, ParamVector
from .rngs import stream_rng
from .samplers import (
    AcceptanceStats,
    StepSizes,
    adapt_step_sizes,
    langevin_kernel,
    mala_kernel,
    mgms_transition_batch,
)

logger = logging.getLogger(__name__)

METHODS = ("daebm", "ebm-persistent", "ebm-cd", "ebm-noise", "ebm-hybrid", "drl")

TRAINING_CHECKPOINT_VERSION = 1


class NumericalError(RuntimeError):
    """Training aborted on a non-finite quantity."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass
class ReplayBuffer:
    """Fixed-capacity store of chain states, index-stable by contract."""

    x: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        if self.x.ndim != 2 or self.t.shape != (self.x.shape[0],):
            raise ValueError("buffer needs x of shape (capacity, d) and t of shape (capacity,)")

    @property
    def capacity(self) -> int:
        return self.x.shape[0]

    @classmethod
    def from_uniform_box(cls, capacity: int, low, high, rng) -> "ReplayBuffer":
        low = np.atleast_1d(np.asarray(low, dtype=np.float64))
        x = rng.uniform(low, np.atleast_1d(high), size=(capacity, low.size))
        return cls(x=x, t=np.zeros(capacity, dtype=np.int64))

    @classmethod
    def from_terminal_noise(cls, capacity: int, dim: int, T: int, rng) -> "ReplayBuffer":
        return cls(
            x=rng.standard_normal((capacity, dim)),
            t=np.full(capacity, T, dtype=np.int64),
        )

    def sample_slots(self, n: int, rng) -> np.ndarray:
        if n > self.capacity:
            raise ValueError("batch larger than buffer capacity")
        return rng.choice(self.capacity, size=n, replace=False)

    def read(self, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self.x[idx].copy(), self.t[idx].copy()

    def write(self, idx: np.ndarray, x: np.ndarray, t=None) -> None:
        self.x[idx] = x
        if t is not None:
            self.t[idx] = t

    def label_occupancy(self, n_levels: int) -> np.ndarray:
        return np.bincount(self.t, minlength=n_levels) / self.capacity


@dataclass(frozen=True)
class InitScheme:
    """Negative-phase chain initialization rule."""

    kind: str  # persistent | data | noise | hybrid
    noise_rate: float = 0.05

    def __post_init__(self):
        if self.kind not in ("persistent", "data", "noise", "hybrid"):
            raise ValueError(f"unknown init scheme {self.kind!r}")
        if not (0.0 <= self.noise_rate <= 1.0):
            raise ValueError("noise_rate must lie in [0, 1]")


@dataclass(frozen=True)
class LrSchedule:
    """Linear warmup to `base`, then stepwise decay at each milestone."""

    base: float
    warmup: int = 0
    milestones: tuple[int, ...] = ()
    decay: float = 1.0

    def __post_init__(self):
        if self.base <= 0 or self.decay <= 0:
            raise ValueError("learning rates and decay must be positive")
        if self.warmup < 0:
            raise ValueError("warmup must be non-negative")
        if any(b <= a for a, b in zip(self.milestones, self.milestones[1:])):
            raise ValueError("milestones must be strictly increasing")


def lr_at(schedule: LrSchedule, iteration: int) -> float:
    if iteration < 0:
        raise ValueError("iteration must be non-negative")
    lr = schedule.base
    if schedule.warmup > 0 and iteration < schedule.warmup:
        lr *= iteration / schedule.warmup
    for m in schedule.milestones:
        if iteration >= m:
            lr *= schedule.decay
    return lr


@dataclass
class OptimizerState:
    """SGD or Adam moment state, applied in the ascent direction."""

    kind: str
    beta1: float = 0.0
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    step_count: int = 0

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.kind!r}")


def optimizer_step(opt: OptimizerState, params: ParamVector, ascent_grad: np.ndarray, lr: float) -> ParamVector:
    """Apply one ascent update in place and return the parameter vector."""
    g = np.asarray(ascent_grad, dtype=np.float64)
    if g.shape != params.values.shape:
        raise ValueError("gradient shape does not match parameters")
    if opt.kind == "sgd":
        params.values += lr * g
        params.bump_version()
        return params
    if opt.m is None:
        opt.m = np.zeros_like(params.values)
        opt.v = np.zeros_like(params.values)
    opt.step_count += 1
    opt.m = opt.beta1 * opt.m + (1.0 - opt.beta1) * g
    opt.v = opt.beta2 * opt.v + (1.0 - opt.beta2) * g**2
    m_hat = opt.m / (1.0 - opt.beta1**opt.step_count)
    v_hat = opt.v / (1.0 - opt.beta2**opt.step_count)
    params.values += lr * m_hat / (np.sqrt(v_hat) + opt.eps)
    params.bump_version()
    return params


@dataclass
class IterationStats:
    pos_energy: float
    neg_energy: float
    accept_stats: AcceptanceStats | None = None
    chain_x: np.ndarray | None = None
    chain_t: np.ndarray | None = None
    chain_accepts: np.ndarray | None = None
    chain_slots: np.ndarray | None = None


def _check_finite_update(grad: np.ndarray, context: str, **extra) -> None:
    if not np.all(np.isfinite(grad)):
        raise NumericalError(
            f"non-finite parameter update in {context}",
            diagnostics={"context": context, **extra},
        )


def _advance_level0(model, X, L, sigma, rng, sampler):
    """L sampling steps at the single time level; returns (X, accept_frac)."""
    t = np.zeros(X.shape[0], dtype=np.int64)
    sig = np.full(X.shape[0], float(sigma))
    if sampler == "langevin":
        grad = None
        for _ in range(L):
            X, grad = langevin_kernel(model, X, t, sig, rng, grad=grad)
        return X, 1.0
    energy, grad = model.energy_grad_x_batch(X, t)
    n_acc = 0
    for _ in range(L):
        X, energy, grad, accept = mala_kernel(model, X, t, sig, rng, energy=energy, grad=grad)
        n_acc += int(accept.sum())
    return X, n_acc / (L * X.shape[0])


def ebm_sa_iteration(
    model,
    batch: np.ndarray,
    buffer: ReplayBuffer | None,
    scheme: InitScheme,
    L: int,
    sigma: float,
    optimizer: OptimizerState,
    lr: float,
    rngs: dict,
    sampler: str = "mala",
) -> IterationStats:
    """One stochastic-approximation iteration for a single-level EBM.

    Synthetic chains start according to the scheme, advance L steps, are
    written back to their buffer slots for persistent/hybrid schemes, and
    the parameters move along the averaged energy-gradient difference.
    """
    B = batch.shape[0]
    if scheme.kind in ("persistent", "hybrid"):
        if buffer is None:
            raise ValueError(f"{scheme.kind} initialization requires a replay buffer")
        slots = buffer.sample_slots(B, rngs["slots"])
        X, _ = buffer.read(slots)
        if scheme.kind == "hybrid":
            flags = rngs["flags"].random(B) < scheme.noise_rate
            n_new = int(flags.sum())
            if n_new:
                X[flags] = rngs["init"].standard_normal((n_new, X.shape[1]))
    elif scheme.kind == "data":
        slots = None
        X = batch.copy()
    else:  # noise
        slots = None
        X = rngs["init"].standard_normal(batch.shape)

    X, accept_frac = _advance_level0(model, X, L, sigma, rngs["mcmc"], sampler)
    if slots is not None:
        buffer.write(slots, X)

    pos_e, gpos = model.mean_energy_grad_theta(batch, 0)
    neg_e, gneg = model.mean_energy_grad_theta(X, 0)
    g = gneg - gpos
    _check_finite_update(g, "ebm_sa_iteration", pos_energy=pos_e, neg_energy=neg_e)
    optimizer_step(optimizer, model.params, g, lr)

    stats = AcceptanceStats.zeros(1)
    stats.proposals[0] = L * B
    stats.accepts[0] = int(round(accept_frac * L * B))
    return IterationStats(pos_energy=pos_e, neg_energy=neg_e, accept_stats=stats)


def daebm_iteration(
    model,
    batch: np.ndarray,
    schedule: DiffusionSchedule,
    buffer: ReplayBuffer,
    L: int,
    steps: StepSizes,
    optimizer: OptimizerState,
    lr: float,
    rngs: dict,
    adjust: bool = True,
) -> IterationStats:
    """One persistent training iteration of the joint (x, t) model.

    Positive phase: each real point is pushed to a uniformly drawn time
    level by the forward process.  Negative phase: buffer chains advance
    by one composite transition and are written back in place.
    """
    B = batch.shape[0]
    t_pos = rngs["diffuse"].integers(0, schedule.T + 1, size=B)
    x_pos = forward_diffuse(batch, t_pos, schedule, rngs["diffuse"])

    slots = buffer.sample_slots(B, rngs["slots"])
    x_neg, t_neg = buffer.read(slots)
    x_neg, t_neg, accept_stats, chain_acc = mgms_transition_batch(
        model, x_neg, t_neg, L, steps, rngs["mcmc"], adjust=adjust
    )
    buffer.write(slots, x_neg, t_neg)

    pos_e, gpos = model.mean_energy_grad_theta(x_pos, t_pos)
    neg_e, gneg = model.mean_energy_grad_theta(x_neg, t_neg)
    g = gneg - gpos
    _check_finite_update(g, "daebm_iteration", pos_energy=pos_e, neg_energy=neg_e)
    optimizer_step(optimizer, model.params, g, lr)
    return IterationStats(
        pos_energy=pos_e,
        neg_energy=neg_e,
        accept_stats=accept_stats,
        chain_x=x_neg,
        chain_t=t_neg,
        chain_accepts=chain_acc,
        chain_slots=slots,
    )


def sequential_diffusion_pairs(
    batch: np.ndarray, t_arr: np.ndarray, schedule: DiffusionSchedule, rng
) -> tuple[np.ndarray, np.ndarray]:
    """Noise each point step by step; keep its levels (t-1, t)."""
    z = np.asarray(batch, dtype=np.float64).copy()
    x_prev = np.empty_like(z)
    x_curr = np.empty_like(z)
    t_max = int(t_arr.max())
    for level in range(1, t_max + 1):
        z_before = z
        eps = rng.standard_normal(z.shape)
        alpha = schedule.alphas[level - 1]
        z = np.sqrt(alpha) * z + np.sqrt(1.0 - alpha) * eps
        hit = t_arr == level
        if np.any(hit):
            x_prev[hit] = z_before[hit]
            x_curr[hit] = z[hit]
    return x_prev, x_curr


def drl_step_sizes(schedule: DiffusionSchedule, b: float, c=1.0) -> np.ndarray:
    """Per-target-level step sizes sigma_t = b c_t sqrt(1 - alpha_{t+1}^2)."""
    c_arr = np.broadcast_to(np.asarray(c, dtype=np.float64), (schedule.T,))
    return b * c_arr * np.sqrt(1.0 - schedule.alphas**2)


def conditional_langevin(
    model,
    x_cond: np.ndarray,
    t_arr: np.ndarray,
    schedule: DiffusionSchedule,
    L: int,
    sigmas: np.ndarray,
    rng,
) -> np.ndarray:
    """L scaled Langevin steps toward level t-1 given the level-t point.

    The update follows the released-code variant in which the energy term
    enters scaled by sigma^2 (so its drift is -grad U / 2) while the
    conditional-prior term keeps the sigma^2/2 factor.  Chains start at
    the conditioning point x_cond.
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    t_target = t_arr - 1
    sig = sigmas[t_target][:, None]
    alpha = schedule.alphas[t_target][:, None]
    sqrt_alpha = np.sqrt(alpha)
    x = x_cond.copy()
    for _ in range(L):
        grad = model.grad_x_batch(x, t_target)
        prior = (x_cond - sqrt_alpha * x) / (1.0 - alpha)
        x = x - 0.5 * sig**2 * (grad / sig**2 + prior) + sig * rng.standard_normal(x.shape)
    if not np.all(np.isfinite(x)):
        raise NumericalError("non-finite synthetic point in conditional Langevin")
    return x


def drl_gradient(
    model,
    x_prev: np.ndarray,
    x_curr: np.ndarray,
    t_arr: np.ndarray,
    schedule: DiffusionSchedule,
    L: int,
    sigmas: np.ndarray,
    rng,
    time_weights=None,
) -> tuple[np.ndarray, float, float]:
    """Recovery-likelihood ascent gradient for a batch of (t-1, t) pairs."""
    x_syn = conditional_langevin(model, x_curr, t_arr, schedule, L, sigmas, rng)
    w = None if time_weights is None else np.asarray(time_weights)[t_arr - 1]
    pos_e, gpos = model.mean_energy_grad_theta(x_prev, t_arr - 1, weights=w)
    neg_e, gneg = model.mean_energy_grad_theta(x_syn, t_arr - 1, weights=w)
    return gneg - gpos, pos_e, neg_e


def bivariate_cd_gradient(
    model,
    x_prev: np.ndarray,
    x_curr: np.ndarray,
    t_arr: np.ndarray,
    schedule: DiffusionSchedule,
    L: int,
    sigmas: np.ndarray,
    rng,
    draw_partner: bool = True,
) -> np.ndarray:
    """Contrastive-divergence gradient of the pair model over (t-1, t).

    The pair chain is one Gibbs sweep: the level-(t-1) block moves by the
    same conditional Langevin kernel, then the level-t block is redrawn
    from the forward kernel.  The second block never enters the gradient,
    which is why this coincides with the recovery-likelihood update.
    """
    x_syn = conditional_langevin(model, x_curr, t_arr, schedule, L, sigmas, rng)
    pos_e, gpos = model.mean_energy_grad_theta(x_prev, t_arr - 1)
    neg_e, gneg = model.mean_energy_grad_theta(x_syn, t_arr - 1)
    g = gneg - gpos
    if draw_partner:
        alpha = schedule.alphas[t_arr - 1][:, None]
        np.sqrt(alpha) * x_syn + np.sqrt(1.0 - alpha) * rng.standard_normal(x_syn.shape)
    return g


def drl_iteration(
    model,
    batch: np.ndarray,
    schedule: DiffusionSchedule,
    L: int,
    sigmas: np.ndarray,
    optimizer: OptimizerState,
    lr: float,
    rngs: dict,
    noise_init_top: bool = False,
    time_weights=None,
) -> IterationStats:
    """One recovery-likelihood iteration over a random level per sample.

    With noise_init_top the samples that landed on the terminal level are
    trained as a noise-initialized single-level EBM at level T-1 instead
    of through the conditional (a released-code variant, default off).
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    B = batch.shape[0]
    t_arr = rngs["diffuse"].integers(1, schedule.T + 1, size=B)
    x_prev, x_curr = sequential_diffusion_pairs(batch, t_arr, schedule, rngs["diffuse"])

    top = t_arr == schedule.T if noise_init_top else np.zeros(B, dtype=bool)
    rest = ~top
    g = np.zeros_like(model.params.values)
    pos_parts, neg_parts = [], []
    if np.any(rest):
        g_rest, pos_e, neg_e = drl_gradient(
            model, x_prev[rest], x_curr[rest], t_arr[rest], schedule, L,
            sigmas, rngs["mcmc"], time_weights,
        )
        g += (int(rest.sum()) / B) * g_rest
        pos_parts.append((int(rest.sum()), pos_e))
        neg_parts.append((int(rest.sum()), neg_e))
    if np.any(top):
        n_top = int(top.sum())
        level = np.full(n_top, schedule.T - 1, dtype=np.int64)
        x_syn = rngs["init"].standard_normal((n_top, batch.shape[1]))
        sig = np.full(n_top, sigmas[schedule.T - 1])
        grad = None
        for _ in range(L):
            x_syn, grad = langevin_kernel(model, x_syn, level, sig, rngs["mcmc"], grad=grad)
        pos_e, gpos = model.mean_energy_grad_theta(x_prev[top], level)
        neg_e, gneg = model.mean_energy_grad_theta(x_syn, level)
        g += (n_top / B) * (gneg - gpos)
        pos_parts.append((n_top, pos_e))
        neg_parts.append((n_top, neg_e))

    pos_e = sum(n * e for n, e in pos_parts) / B
    neg_e = sum(n * e for n, e in neg_parts) / B
    _check_finite_update(g, "drl_iteration", pos_energy=pos_e, neg_energy=neg_e)
    optimizer_step(optimizer, model.params, g, lr)
    return IterationStats(pos_energy=pos_e, neg_energy=neg_e)


def drl_sequential_sample(
    model,
    schedule: DiffusionSchedule,
    L: int,
    sigmas: np.ndarray,
    count: int,
    rng,
) -> np.ndarray:
    """Backward pass of the recovery-likelihood baseline from pure noise.

    Iterates the conditional Langevin kernel down the ladder, seeding
    each level with the final draw of the level above.
    """
    x = rng.standard_normal((count, model.input_dim))
    for level in range(schedule.T, 0, -1):
        t_arr = np.full(count, level, dtype=np.int64)
        x = conditional_langevin(model, x, t_arr, schedule, L, sigmas, rng)
    return x


# ----------------------------------------------------------------------
# configuration and the training loop
# ----------------------------------------------------------------------

_CONFIG_KEYS = {
    "method", "model", "schedule", "iterations", "batch_size", "langevin_steps",
    "lr", "optimizer", "seed", "buffer_capacity", "sampler", "step_size",
    "step_size_init", "noise_rate", "adapt_every", "adapt_tau", "accept_low",
    "accept_high", "drl_b", "drl_c", "drl_noise_init_top", "drl_time_weights",
    "checkpoint_every",
}


@dataclass(frozen=True)
class TrainConfig:
    """Validated training configuration (one experiment arm)."""

    method: str
    model: dict
    iterations: int
    batch_size: int
    langevin_steps: int
    lr: LrSchedule
    seed: int
    optimizer: dict = field(default_factory=lambda: {"kind": "sgd"})
    buffer_capacity: int = 0
    schedule: dict | None = None
    sampler: str = "mala"
    step_size: float = 0.1
    step_size_init: dict = field(default_factory=lambda: {"b": 0.1})
    noise_rate: float = 0.05
    adapt_every: int = 100
    adapt_tau: float = 0.1
    accept_low: float = 0.6
    accept_high: float = 0.8
    drl_b: float = 0.02
    drl_c: float = 1.0
    drl_noise_init_top: bool = False
    drl_time_weights: tuple | None = None
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.iterations < 1 or self.batch_size < 1 or self.langevin_steps < 1:
            raise ValueError("iterations, batch_size and langevin_steps must be >= 1")
        if self.sampler not in ("mala", "langevin"):
            raise ValueError("sampler must be 'mala' or 'langevin'")
        if any(m >= self.iterations for m in self.lr.milestones):
            raise ValueError("lr milestones must fall inside the iteration count")
        if self.method in ("daebm", "drl") and self.schedule is None:
            raise ValueError(f"{self.method} requires a diffusion schedule")
        if self.method in ("daebm", "ebm-persistent", "ebm-hybrid"):
            if self.buffer_capacity < self.batch_size:
                raise ValueError("buffer capacity must be at least the batch size")
        if self.step_size <= 0 or self.adapt_tau <= 0:
            raise ValueError("step sizes and adapt_tau must be positive")
        if not (0 < self.accept_low < self.accept_high < 1):
            raise ValueError("need 0 < accept_low < accept_high < 1")

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        unknown = set(raw) - _CONFIG_KEYS
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        missing = {"method", "model", "iterations", "batch_size", "langevin_steps",
                   "lr", "seed"} - set(raw)
        if missing:
            raise ValueError(f"missing config keys: {sorted(missing)}")
        raw = dict(raw)
        lr_raw = dict(raw.pop("lr"))
        lr = LrSchedule(
            base=lr_raw.pop("base"),
            warmup=lr_raw.pop("warmup", 0),
            milestones=tuple(lr_raw.pop("milestones", ())),
            decay=lr_raw.pop("decay", 1.0),
        )
        if lr_raw:
            raise ValueError(f"unknown lr keys: {sorted(lr_raw)}")
        if "drl_time_weights" in raw and raw["drl_time_weights"] is not None:
            raw["drl_time_weights"] = tuple(raw["drl_time_weights"])
        return cls(lr=lr, **raw)

    def to_dict(self) -> dict:
        out = {
            k: getattr(self, k)
            for k in _CONFIG_KEYS
            if k not in ("lr",)
        }
        out["lr"] = {
            "base": self.lr.base,
            "warmup": self.lr.warmup,
            "milestones": list(self.lr.milestones),
            "decay": self.lr.decay,
        }
        if out.get("drl_time_weights") is not None:
            out["drl_time_weights"] = list(out["drl_time_weights"])
        return out

    def build_schedule(self) -> DiffusionSchedule | None:
        if self.schedule is None:
            return None
        sched = build_cumsum_schedule(
            self.schedule["T"], self.schedule["delta_first"], self.schedule["delta_last"]
        )
        if sched.bar_alphas[-1] >= 0.01:
            logger.warning(
                "terminal bar_alpha %.4f >= 0.01; the terminal level is far from pure noise",
                sched.bar_alphas[-1],
            )
        return sched


def initial_step_sizes(schedule: DiffusionSchedule, spec: dict) -> StepSizes:
    """Per-label starting step sizes, explicit or scaled by noise level.

    The scaled form is sigma_t = b sqrt(1 - alpha_t^2) for t >= 1 and
    sigma_0 = b sqrt(1 - alpha_1^2).
    """
    if "values" in spec:
        return StepSizes(np.asarray(spec["values"], dtype=np.float64))
    b = float(spec.get("b", 0.1))
    sigma = np.empty(schedule.T + 1)
    sigma[1:] = b * np.sqrt(1.0 - schedule.alphas**2)
    sigma[0] = b * np.sqrt(1.0 - schedule.alphas[0] ** 2)
    return StepSizes(sigma)


_SCHEME_BY_METHOD = {
    "ebm-persistent": "persistent",
    "ebm-cd": "data",
    "ebm-noise": "noise",
    "ebm-hybrid": "hybrid",
}


@dataclass
class TrainResult:
    model: object
    config: TrainConfig
    history: list[dict]
    buffer: ReplayBuffer | None = None
    step_sizes: StepSizes | None = None
    schedule: DiffusionSchedule | None = None
    optimizer: OptimizerState | None = None
    final_iteration: int = 0


def _iteration_rngs(seed: int, iteration: int) -> dict:
    return {
        name: stream_rng(seed, name, iteration)
        for name in ("data", "diffuse", "slots", "flags", "init", "mcmc")
    }


def _log_row(iteration, lr, stats: IterationStats, buffer, n_levels) -> dict:
    row = {
        "iteration": iteration,
        "lr": lr,
        "pos_energy": stats.pos_energy,
        "neg_energy": stats.neg_energy,
    }
    rates = stats.accept_stats.rates() if stats.accept_stats is not None else None
    for k in range(n_levels):
        val = rates[k] if rates is not None and k < rates.size else np.nan
        row[f"accept_rate_t{k}"] = float(val) if np.isfinite(val) else ""
    if buffer is not None:
        occ = buffer.label_occupancy(n_levels)
        for k in range(n_levels):
            row[f"buffer_frac_t{k}"] = float(occ[k])
    return row


def write_train_log(path, history: list[dict]) -> None:
    import csv

    if not history:
        return
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(history[0].keys()))
        writer.writeheader()
        writer.writerows(history)


def save_training_checkpoint(path, result: TrainResult) -> None:
    """Full state for bit-exact resume (generator state is implicit in
    the master seed plus the iteration counter)."""
    payload = {
        "version": np.array(TRAINING_CHECKPOINT_VERSION),
        "iteration": np.array(result.final_iteration),
        "config": np.frombuffer(
            json.dumps(result.config.to_dict()).encode("utf8"), dtype=np.uint8
        ),
        "model_meta": np.frombuffer(
            json.dumps(result.model.meta()).encode("utf8"), dtype=np.uint8
        ),
        "params": result.model.params.values,
    }
    opt = result.optimizer
    if opt is not None:
        payload["opt_state"] = np.frombuffer(
            json.dumps({"kind": opt.kind, "beta1": opt.beta1, "beta2": opt.beta2,
                        "eps": opt.eps, "step_count": opt.step_count}).encode("utf8"),
            dtype=np.uint8,
        )
        payload["opt_m"] = opt.m if opt.m is not None else np.zeros(0)
        payload["opt_v"] = opt.v if opt.v is not None else np.zeros(0)
    if result.buffer is not None:
        payload["buffer_x"] = result.buffer.x
        payload["buffer_t"] = result.buffer.t
    if result.step_sizes is not None:
        payload["step_sizes"] = result.step_sizes.sigma
    np.savez(path, **payload)


def load_training_checkpoint(path) -> TrainResult:
    with np.load(path) as data:
        version = int(data["version"])
        if version != TRAINING_CHECKPOINT_VERSION:
            raise ValueError(f"unsupported training checkpoint version {version}")
        config = TrainConfig.from_dict(json.loads(bytes(data["config"]).decode("utf8")))
        model = build_model(json.loads(bytes(data["model_meta"]).decode("utf8")))
        model.set_param_values(np.asarray(data["params"]))
        optimizer = None
        if "opt_state" in data:
            meta = json.loads(bytes(data["opt_state"]).decode("utf8"))
            optimizer = OptimizerState(
                kind=meta["kind"], beta1=meta["beta1"], beta2=meta["beta2"], eps=meta["eps"]
            )
            optimizer.step_count = meta["step_count"]
            if data["opt_m"].size:
                optimizer.m = np.asarray(data["opt_m"])
                optimizer.v = np.asarray(data["opt_v"])
        buffer = None
        if "buffer_x" in data:
            buffer = ReplayBuffer(
                x=np.asarray(data["buffer_x"]), t=np.asarray(data["buffer_t"])
            )
        sizes = StepSizes(np.asarray(data["step_sizes"])) if "step_sizes" in data else None
        return TrainResult(
            model=model,
            config=config,
            history=[],
            buffer=buffer,
            step_sizes=sizes,
            schedule=config.build_schedule(),
            optimizer=optimizer,
            final_iteration=int(data["iteration"]),
        )


def train(
    config: TrainConfig,
    points: np.ndarray,
    outdir=None,
    resume_from: TrainResult | None = None,
    trajectory_path=None,
) -> TrainResult:
    """Run the configured trainer over a dataset.

    Mutable state (parameters, buffer, step sizes) has a single writer:
    this loop.  Sampling inside an iteration sees a frozen model.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if points.shape[0] < config.batch_size:
        raise ValueError("dataset smaller than the batch size")
    if np.all(np.ptp(points, axis=0) == 0.0):
        raise ValueError("degenerate dataset: zero variance in every coordinate")
    n, dim = points.shape
    seed = config.seed
    schedule = config.build_schedule()

    if resume_from is not None:
        model = resume_from.model
        buffer = resume_from.buffer
        sizes = resume_from.step_sizes
        optimizer = resume_from.optimizer
        start = resume_from.final_iteration
        history: list[dict] = []
    else:
        model = build_model(config.model, rng=stream_rng(seed, "model_init"))
        if model.input_dim != dim:
            raise ValueError("model input dimension does not match the data")
        opt_spec = dict(config.optimizer)
        optimizer = OptimizerState(
            kind=opt_spec.get("kind", "sgd"),
            beta1=opt_spec.get("beta1", 0.0),
            beta2=opt_spec.get("beta2", 0.999),
            eps=opt_spec.get("eps", 1e-8),
        )
        history = []
        start = 0
        buffer = None
        sizes = None
        if config.method == "daebm":
            if model.T != schedule.T:
                raise ValueError("model and schedule disagree on T")
            buffer = ReplayBuffer.from_terminal_noise(
                config.buffer_capacity, dim, schedule.T, stream_rng(seed, "buffer_init")
            )
            sizes = initial_step_sizes(schedule, config.step_size_init)
        elif config.method in ("ebm-persistent", "ebm-hybrid"):
            lo, hi = points.min(axis=0), points.max(axis=0)
            buffer = ReplayBuffer.from_uniform_box(
                config.buffer_capacity, lo, hi, stream_rng(seed, "buffer_init")
            )

    n_levels = (schedule.T + 1) if (schedule is not None and config.method == "daebm") else 1
    drl_sigmas = (
        drl_step_sizes(schedule, config.drl_b, config.drl_c)
        if config.method == "drl"
        else None
    )
    scheme = (
        InitScheme(_SCHEME_BY_METHOD[config.method], config.noise_rate)
        if config.method in _SCHEME_BY_METHOD
        else None
    )

    window = AcceptanceStats.zeros(n_levels, window=(start, start))
    window_iters = 0
    traj_fh = open(trajectory_path, "w") if trajectory_path else None
    if traj_fh:
        traj_fh.write("chain_id,iteration,t,accepted,energy\n")
    try:
        for it in range(start, config.iterations):
            rngs = _iteration_rngs(seed, it)
            batch = points[rngs["data"].choice(n, size=config.batch_size, replace=False)]
            if np.all(np.ptp(batch, axis=0) == 0.0):
                raise ValueError("degenerate batch: zero variance in every coordinate")
            lr = lr_at(config.lr, it)
            adjust = it >= config.lr.warmup

            if config.method == "daebm":
                stats = daebm_iteration(
                    model, batch, schedule, buffer, config.langevin_steps, sizes,
                    optimizer, lr, rngs, adjust=adjust,
                )
                if adjust:
                    window.add(stats.accept_stats)
                    window.window = (window.window[0], it)
                    window_iters += 1
                    if window_iters >= config.adapt_every:
                        sizes = adapt_step_sizes(
                            window, sizes, config.adapt_tau,
                            low=config.accept_low, high=config.accept_high,
                        )
                        window = AcceptanceStats.zeros(n_levels, window=(it + 1, it + 1))
                        window_iters = 0
                if traj_fh:
                    energies = model.energy_batch(stats.chain_x, stats.chain_t)
                    for cid, tt, acc, en in zip(
                        stats.chain_slots, stats.chain_t, stats.chain_accepts, energies
                    ):
                        traj_fh.write(f"{cid},{it},{tt},{acc},{en:.6g}\n")
            elif config.method == "drl":
                stats = drl_iteration(
                    model, batch, schedule, config.langevin_steps, drl_sigmas,
                    optimizer, lr, rngs,
                    noise_init_top=config.drl_noise_init_top,
                    time_weights=config.drl_time_weights,
                )
            else:
                stats = ebm_sa_iteration(
                    model, batch, buffer, scheme, config.langevin_steps,
                    config.step_size, optimizer, lr, rngs, sampler=config.sampler,
                )

            history.append(_log_row(it, lr, stats, buffer, n_levels))
            if (
                outdir is not None
                and config.checkpoint_every
                and (it + 1) % config.checkpoint_every == 0
            ):
                snap = TrainResult(
                    model=model, config=config, history=[], buffer=buffer,
                    step_sizes=sizes, schedule=schedule, optimizer=optimizer,
                    final_iteration=it + 1,
                )
                save_training_checkpoint(
                    f"{outdir}/checkpoint_{it + 1:06d}.npz", snap
                )
    finally:
        if traj_fh:
            traj_fh.close()

    result = TrainResult(
        model=model, config=config, history=history, buffer=buffer,
        step_sizes=sizes, schedule=schedule, optimizer=optimizer,
        final_iteration=config.iterations,
    )
    if outdir is not None:
        write_train_log(f"{outdir}/train_log.csv", history)
    return result
