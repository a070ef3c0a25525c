"""Two-component enhanced-sampling algorithms and local-energy diagnostics.

Given a pair of energies (U0, U1) with unknown normalizers (Z0, Z1), the
module provides:

* ``sis_resample``    -- importance sampling with p1 as the design density,
* ``mis_transition``  -- MALA on the pooled energy -log(e^-U0 + e^-U1),
* ``mgms2_transition``-- labeled-mixture Gibbs: MALA on U_s, then an exact
  label redraw,
* ``sams_run``        -- stochastic-approximation offsets driving the label
  occupancy to 1/2, whose offset difference estimates log(Z1/Z0),
* ``build_local_energy`` / ``check_mixture_invariance`` -- piecewise
  energies with arbitrary per-region offsets, and a diagnostic showing
  that locally mixing kernels cannot tell the offsets apart.

Energy callables are vectorized: ``u(X) -> (B,)`` and ``grad(X) -> (B, d)``
for ``X`` of shape ``(B, d)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .metrics import ks_statistic
from .samplers import mala_kernel

logger = logging.getLogger(__name__)

EXTERIOR_ENERGY = 1e12  # finite stand-in for +inf outside all regions


@dataclass
class LabeledState:
    """Configuration x paired with a binary component label s."""

    x: np.ndarray
    s: int

    def __post_init__(self):
        self.x = np.atleast_1d(np.asarray(self.x, dtype=np.float64))
        if self.s not in (0, 1):
            raise ValueError("label s must be 0 or 1")
        if not np.all(np.isfinite(self.x)):
            raise ValueError("non-finite configuration")


@dataclass
class TwoComponentSpec:
    """Energies, gradients and step sizes for a two-component problem."""

    u0: callable
    grad_u0: callable
    u1: callable
    grad_u1: callable
    sigma0: float = 0.5
    sigma1: float = 0.5

    def component(self, s: int):
        return (self.u0, self.grad_u0, self.sigma0) if s == 0 else (self.u1, self.grad_u1, self.sigma1)


@dataclass
class ZetaState:
    """Additive energy offsets; only zeta1 - zeta0 is identified."""

    zeta0: float = 0.0
    zeta1: float = 0.0
    gamma: float = 0.0


class _CallableEnergy:
    """Adapter exposing vectorized (u, grad) callables through the model surface."""

    T = 0

    def __init__(self, u, grad, dim: int = 1):
        self._u = u
        self._grad = grad
        self.input_dim = dim
        self.offset = 0.0  # mutable additive shift (used by SAMS)

    def energy_batch(self, X, t=0):
        return np.asarray(self._u(np.atleast_2d(X)), dtype=np.float64) + self.offset

    def grad_x_batch(self, X, t=0):
        return np.asarray(self._grad(np.atleast_2d(X)), dtype=np.float64)

    def energy_grad_x_batch(self, X, t=0):
        return self.energy_batch(X, t), self.grad_x_batch(X, t)


_T0 = np.zeros(1, dtype=np.int64)


def _mala_move(target: _CallableEnergy, x: np.ndarray, sigma: float, rng):
    X1, _, _, accept = mala_kernel(target, x[None, :], _T0, np.array([sigma]), rng)
    return X1[0], bool(accept[0])


def component_probability(
    spec: TwoComponentSpec, x, zeta0: float = 0.0, zeta1: float = 0.0
) -> float:
    """v(x) = P(s = 0 | x) for the (optionally shifted) energies.

    Invariant to adding a common constant to both energies.
    """
    X = np.atleast_1d(np.asarray(x, dtype=np.float64))[None, :]
    a0 = -(float(spec.u0(X)[0]) + zeta0)
    a1 = -(float(spec.u1(X)[0]) + zeta1)
    m = max(a0, a1)
    e0 = np.exp(a0 - m)
    return float(e0 / (e0 + np.exp(a1 - m)))


@dataclass
class SisResult:
    sample: np.ndarray
    weights: np.ndarray
    effective_sample_size: float
    degenerate: bool


def sis_resample(
    spec: TwoComponentSpec,
    n: int,
    k: int,
    rng,
    burn_in: int = 1_000,
    n_chains: int = 50,
    init_scale: float = 1.0,
) -> SisResult:
    """Draw from p0 by importance resampling a p1 sample.

    Runs parallel MALA chains targeting U1, computes self-normalized
    weights proportional to exp(-U0 + U1), and resamples k points with
    replacement.  Weight degeneracy (ESS below 10) is reported in the
    diagnostics, not raised.
    """
    if not (n >= k >= 1):
        raise ValueError("need n >= k >= 1")
    target = _CallableEnergy(spec.u1, spec.grad_u1, dim=1)
    per = -(-n // n_chains)  # ceil
    X = init_scale * rng.standard_normal((n_chains, 1))
    t0 = np.zeros(n_chains, dtype=np.int64)
    sig = np.full(n_chains, spec.sigma1)
    energy, grad = target.energy_grad_x_batch(X, t0)
    for _ in range(burn_in):
        X, energy, grad, _ = mala_kernel(target, X, t0, sig, rng, energy=energy, grad=grad)
    draws = np.empty((per, n_chains))
    for i in range(per):
        X, energy, grad, _ = mala_kernel(target, X, t0, sig, rng, energy=energy, grad=grad)
        draws[i] = X[:, 0]
    xs = draws.reshape(-1, 1)[:n]

    log_w = -spec.u0(xs) + spec.u1(xs)
    log_w -= log_w.max()
    w = np.exp(log_w)
    w /= w.sum()
    ess = float(1.0 / np.sum(w**2))
    degenerate = ess < 10.0
    if degenerate:
        logger.warning("SIS weight degeneracy: effective sample size %.2f < 10", ess)
    idx = rng.choice(n, size=k, replace=True, p=w)
    return SisResult(sample=xs[idx, 0], weights=w, effective_sample_size=ess, degenerate=degenerate)


def pooled_energy(spec: TwoComponentSpec):
    """Vectorized energy/gradient of the mixture design density of MIS."""

    def u(X):
        return -np.logaddexp(-spec.u0(X), -spec.u1(X))

    def grad(X):
        d = spec.u1(X) - spec.u0(X)
        v = 1.0 / (1.0 + np.exp(-d))  # P(s=0 | x)
        return v[:, None] * spec.grad_u0(X) + (1.0 - v)[:, None] * spec.grad_u1(X)

    return u, grad


def mis_transition(
    spec: TwoComponentSpec, x: np.ndarray, rng, sigma: float | None = None
) -> tuple[np.ndarray, int]:
    """One MALA step on the pooled energy, then a label draw with v(x).

    The pooled kernel has to use a single step size for both components;
    it defaults to their average.
    """
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    u, grad = pooled_energy(spec)
    if not np.isfinite(u(x[None, :])[0]):
        raise ValueError("pooled mixture energy non-finite at the current point")
    target = _CallableEnergy(u, grad, dim=x.size)
    x1, _ = _mala_move(target, x, sigma if sigma is not None else 0.5 * (spec.sigma0 + spec.sigma1), rng)
    s1 = 0 if rng.random() < component_probability(spec, x1) else 1
    return x1, s1


def mgms2_transition(spec: TwoComponentSpec, state: LabeledState, rng) -> LabeledState:
    """Markov move on the labeled component, then an exact label redraw."""
    u, g, sigma = spec.component(state.s)
    x1, _ = _mala_move(_CallableEnergy(u, g, dim=state.x.size), state.x, sigma, rng)
    s1 = 0 if rng.random() < component_probability(spec, x1) else 1
    return LabeledState(x=x1, s=s1)


def default_gamma_schedule(gamma0: float = 1.0, t0: float = 10.0):
    """Robbins-Monro decay gamma_i = min(gamma0, t0 / i)."""

    def gamma(i: int) -> float:
        return min(gamma0, t0 / i)

    return gamma


@dataclass
class SamsResult:
    delta_hat: float
    zeta_trace: np.ndarray
    label_counts: np.ndarray
    final_state: LabeledState


def sams_run(
    spec: TwoComponentSpec,
    iterations: int,
    rng,
    gamma_schedule=None,
    init: LabeledState | None = None,
    trace_every: int = 100,
) -> SamsResult:
    """Self-adjusted mixture sampling for the log-normalizer difference.

    Alternates (i) a MALA move on the shifted energy U_s + zeta_s,
    (ii) a label redraw with the shifted v, and (iii) the offset update
    zeta_j += gamma_i (1{s = j} - 1/2), after which zeta0 is pinned back
    to 0 (only the difference is identified).  The returned estimate
    zeta1 - zeta0 converges to log(Z1/Z0), the offset that equalizes the
    two label occupancies.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    gamma_schedule = gamma_schedule or default_gamma_schedule()
    state = init or LabeledState(x=np.zeros(1), s=0)
    targets = (
        _CallableEnergy(spec.u0, spec.grad_u0, dim=state.x.size),
        _CallableEnergy(spec.u1, spec.grad_u1, dim=state.x.size),
    )
    z0, z1 = 0.0, 0.0
    trace = []
    counts = np.zeros(2, dtype=np.int64)
    for i in range(1, iterations + 1):
        target = targets[state.s]
        target.offset = z0 if state.s == 0 else z1
        x1, _ = _mala_move(target, state.x, spec.component(state.s)[2], rng)
        v = component_probability(spec, x1, z0, z1)
        s1 = 0 if rng.random() < v else 1
        state = LabeledState(x=x1, s=s1)
        counts[s1] += 1
        g = gamma_schedule(i)
        z0 += g * ((1.0 if s1 == 0 else 0.0) - 0.5)
        z1 += g * ((1.0 if s1 == 1 else 0.0) - 0.5)
        z1 -= z0  # pin zeta0 = 0 after each update
        z0 = 0.0
        if abs(z1) > 100.0:
            raise RuntimeError(
                f"diverging offsets at iteration {i}: zeta1={z1:.2f}; trace tail={trace[-5:]}"
            )
        if i % trace_every == 0:
            trace.append((i, z0, z1))
    return SamsResult(
        delta_hat=z1 - z0,
        zeta_trace=np.array(trace),
        label_counts=counts,
        final_state=state,
    )


@dataclass(frozen=True)
class Region:
    """Axis-aligned closed box."""

    low: tuple[float, ...]
    high: tuple[float, ...]

    def __post_init__(self):
        if len(self.low) != len(self.high) or any(
            l >= h for l, h in zip(self.low, self.high)
        ):
            raise ValueError("region must have low < high per axis")

    def contains(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        return np.all((X >= np.asarray(self.low)) & (X <= np.asarray(self.high)), axis=1)

    def overlaps(self, other: "Region") -> bool:
        return all(
            l1 <= h2 and l2 <= h1
            for l1, h1, l2, h2 in zip(self.low, self.high, other.low, other.high)
        )


class LocalEnergy:
    """Piecewise energy: U_j(x) + c_j on region B_j, a large sentinel outside.

    Offsets shift values only; gradients inside each region are those of
    the underlying component, and the exterior is flat, so any proposal
    leaving the union of regions is rejected by MALA.
    """

    T = 0

    def __init__(self, components: list[tuple]):
        if not components:
            raise ValueError("need at least one component")
        regions = [c[2] for c in components]
        for i in range(len(regions)):
            for j in range(i + 1, len(regions)):
                if regions[i].overlaps(regions[j]):
                    raise ValueError(f"regions {i} and {j} overlap")
        self.components = components
        self.input_dim = len(regions[0].low)

    def energy_batch(self, X, t=0):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        out = np.full(X.shape[0], EXTERIOR_ENERGY)
        for u, _, region, offset in self.components:
            m = region.contains(X)
            if np.any(m):
                out[m] = u(X[m]) + offset
        return out

    def grad_x_batch(self, X, t=0):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        out = np.zeros_like(X)
        for _, g, region, _ in self.components:
            m = region.contains(X)
            if np.any(m):
                out[m] = g(X[m])
        return out

    def energy_grad_x_batch(self, X, t=0):
        return self.energy_batch(X, t), self.grad_x_batch(X, t)

    def energy(self, x, t=0) -> float:
        return float(self.energy_batch(np.atleast_1d(x)[None, :], t)[0])

    def grad_x(self, x, t=0) -> np.ndarray:
        return self.grad_x_batch(np.atleast_1d(x)[None, :], t)[0]


def build_local_energy(components: list[tuple]) -> LocalEnergy:
    """Combine (energy, grad, region, offset) pieces into one energy.

    Regions must be pairwise disjoint; offsets are arbitrary constants.
    Callables are vectorized over point batches.
    """
    return LocalEnergy(components)


@dataclass
class GaussianMixture1D:
    """Reference mixture used by the invariance diagnostic."""

    means: tuple[float, ...]
    stds: tuple[float, ...]
    weights: tuple[float, ...]

    def sample(self, n: int, rng) -> np.ndarray:
        comp = rng.choice(len(self.weights), size=n, p=np.asarray(self.weights))
        mu = np.asarray(self.means)[comp]
        sd = np.asarray(self.stds)[comp]
        return (mu + sd * rng.standard_normal(n))[:, None]

    def pdf(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        out = np.zeros_like(x)
        for w, m, s in zip(self.weights, self.means, self.stds):
            out += w * np.exp(-0.5 * ((x - m) / s) ** 2) / (s * np.sqrt(2 * np.pi))
        return out


def _region_conditional_cdf(mixture: GaussianMixture1D, region: Region, n_grid: int = 4001):
    lo, hi = region.low[0], region.high[0]
    grid = np.linspace(lo, hi, n_grid)
    dens = mixture.pdf(grid)
    cum = cumulative_trapezoid(dens, grid, initial=0.0)
    cum /= cum[-1]

    def cdf(x):
        return np.interp(x, grid, cum)

    return cdf


@dataclass
class InvarianceReport:
    """Diagnostic output of the mixture-invariance check."""

    n_chains: int
    n_steps: int
    cross_region_transitions: int
    exited_all_regions: int
    region_ks: list[float]
    initial_occupancy: list[float]
    final_occupancy: list[float]
    max_occupancy_drift: float
    occupancy_series: list[list[float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "n_chains": self.n_chains,
            "n_steps": self.n_steps,
            "cross_region_transitions": self.cross_region_transitions,
            "exited_all_regions": self.exited_all_regions,
            "region_ks": self.region_ks,
            "initial_occupancy": self.initial_occupancy,
            "final_occupancy": self.final_occupancy,
            "max_occupancy_drift": self.max_occupancy_drift,
            "occupancy_series": self.occupancy_series,
        }


def check_mixture_invariance(
    local_energy: LocalEnergy,
    mixture: GaussianMixture1D,
    n_chains: int,
    n_steps: int,
    sigma: float,
    rng,
    series_every: int = 0,
) -> InvarianceReport:
    """Run MALA under a local energy from stationary starts and report.

    Counts cross-region transitions, compares each region's pooled final
    states against the mixture's region conditional (KS), and tracks the
    occupancy drift relative to the initial empirical fractions.
    """
    regions = [c[2] for c in local_energy.components]
    X = mixture.sample(n_chains, rng)

    def region_index(X):
        idx = np.full(X.shape[0], -1, dtype=np.int64)
        for j, r in enumerate(regions):
            idx[r.contains(X)] = j
        return idx

    idx = region_index(X)
    init_occ = [float(np.mean(idx == j)) for j in range(len(regions))]
    series_steps = series_every if series_every > 0 else max(1, n_steps // 20)
    series = []

    t0 = np.zeros(n_chains, dtype=np.int64)
    sig = np.full(n_chains, sigma)
    energy, grad = local_energy.energy_grad_x_batch(X, t0)
    crossings = 0
    for step in range(1, n_steps + 1):
        X, energy, grad, _ = mala_kernel(local_energy, X, t0, sig, rng, energy=energy, grad=grad)
        new_idx = region_index(X)
        crossings += int(np.sum((new_idx != idx) & (idx >= 0) & (new_idx >= 0)))
        idx = new_idx
        if step % series_steps == 0:
            series.append([float(np.mean(idx == j)) for j in range(len(regions))])

    final_occ = [float(np.mean(idx == j)) for j in range(len(regions))]
    drift = max(abs(a - b) for a, b in zip(init_occ, final_occ))
    ks = []
    for j, r in enumerate(regions):
        pts = X[idx == j, 0]
        if pts.size == 0:
            ks.append(float("nan"))
            continue
        ks.append(ks_statistic(pts, _region_conditional_cdf(mixture, r)))
    return InvarianceReport(
        n_chains=n_chains,
        n_steps=n_steps,
        cross_region_transitions=crossings,
        exited_all_regions=int(np.sum(idx < 0)),
        region_ks=ks,
        initial_occupancy=init_occ,
        final_occupancy=final_occ,
        max_occupancy_drift=drift,
        occupancy_series=series,
    )
