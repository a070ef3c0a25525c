"""Quadrature normalization oracles, ranking metrics, and distance tests.

Quadrature is plain trapezoid on a rectangular grid (1D/2D only), which
is enough to pin normalizing constants and region masses for the desk
experiments.  AUROC uses the tie-corrected Mann-Whitney statistic and
AUC-PR the step-interpolated average-precision rule, so both can be
checked exactly against brute-force enumeration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp
from scipy.stats import rankdata


class GridCoverageError(ValueError):
    """Raised when probability mass leaks to the quadrature boundary."""


@dataclass(frozen=True)
class QuadratureGrid:
    """Trapezoid grid over a rectangle; 1 or 2 dimensions."""

    lows: tuple[float, ...]
    highs: tuple[float, ...]
    ns: tuple[int, ...]

    def __post_init__(self):
        if not (1 <= len(self.lows) <= 2) or not (
            len(self.lows) == len(self.highs) == len(self.ns)
        ):
            raise ValueError("grid must be 1D or 2D with matching bounds")
        if any(h <= l for l, h in zip(self.lows, self.highs)):
            raise ValueError("upper bounds must exceed lower bounds")
        if any(n < 3 for n in self.ns):
            raise ValueError("need at least 3 nodes per dimension")

    @property
    def dim(self) -> int:
        return len(self.lows)

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(l, h, n) for l, h, n in zip(self.lows, self.highs, self.ns)]

    def nodes(self) -> np.ndarray:
        axes = self.axes()
        if self.dim == 1:
            return axes[0][:, None]
        g0, g1 = np.meshgrid(axes[0], axes[1], indexing="ij")
        return np.column_stack([g0.ravel(), g1.ravel()])

    def log_weights(self) -> np.ndarray:
        parts = []
        for l, h, n in zip(self.lows, self.highs, self.ns):
            w = np.full(n, (h - l) / (n - 1))
            w[0] *= 0.5
            w[-1] *= 0.5
            parts.append(w)
        if self.dim == 1:
            return np.log(parts[0])
        return np.log(np.outer(parts[0], parts[1]).ravel())

    def boundary_mask(self) -> np.ndarray:
        masks = []
        for n in self.ns:
            m = np.zeros(n, dtype=bool)
            m[0] = m[-1] = True
            masks.append(m)
        if self.dim == 1:
            return masks[0]
        return (masks[0][:, None] | masks[1][None, :]).ravel()


def grid_for_data(points: np.ndarray, pad: float, n: int) -> QuadratureGrid:
    """Grid covering the data range plus `pad` on each side."""
    points = np.atleast_2d(points)
    lows = tuple(points.min(axis=0) - pad)
    highs = tuple(points.max(axis=0) + pad)
    return QuadratureGrid(lows, highs, (n,) * points.shape[1])


def _energies_on(energy, nodes: np.ndarray, t) -> np.ndarray:
    if hasattr(energy, "energy_batch"):
        return energy.energy_batch(nodes, t)
    return np.asarray(energy(nodes), dtype=np.float64)


def log_partition(energy, t, grid: QuadratureGrid, boundary_tol: float = 1e-6) -> float:
    """log of the trapezoid estimate of the normalizing integral of exp(-U).

    Fails when more than `boundary_tol` of the mass sits on the outermost
    grid layer, which means the grid does not cover the support.
    """
    E = _energies_on(energy, grid.nodes(), t)
    logw = grid.log_weights()
    total = logsumexp(-E + logw)
    edge = logsumexp((-E + logw)[grid.boundary_mask()])
    if edge - total > np.log(boundary_tol):
        raise GridCoverageError(
            f"boundary mass fraction {np.exp(edge - total):.2e} exceeds {boundary_tol:.0e}"
        )
    return float(total)


def region_log_mass(energy, t, grid: QuadratureGrid, region) -> float:
    """log integral of exp(-U) over an axis-aligned box of the grid."""
    nodes = grid.nodes()
    lo, hi = np.atleast_1d(region[0]), np.atleast_1d(region[1])
    mask = np.all((nodes >= lo) & (nodes <= hi), axis=1)
    if not np.any(mask):
        raise ValueError("region contains no grid nodes")
    E = _energies_on(energy, nodes[mask], t)
    return float(logsumexp(-E + grid.log_weights()[mask]))


def energy_gap(energy, grid: QuadratureGrid, region1, region2, t=0) -> float:
    """Difference of local free energies between two disjoint boxes.

    Returns (-log mass(B2)) - (-log mass(B1)) = log(mass(B1) / mass(B2)),
    invariant to constant shifts of the energy.
    """
    lm1 = region_log_mass(energy, t, grid, region1)
    lm2 = region_log_mass(energy, t, grid, region2)
    total = log_partition(energy, t, grid)
    if min(lm1, lm2) - total < np.log(1e-12):
        raise ValueError("near-zero probability mass in a region")
    return lm1 - lm2


@dataclass(frozen=True)
class ScoreSet:
    """InD/OOD score arrays under the higher-is-InD convention."""

    ind_scores: np.ndarray
    ood_scores: np.ndarray

    def __post_init__(self):
        for name in ("ind_scores", "ood_scores"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.ndim != 1 or arr.size == 0:
                raise ValueError(f"{name} must be a non-empty 1D array")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
            object.__setattr__(self, name, arr)


def auroc(scores: ScoreSet) -> float:
    """P(random InD score > random OOD score), ties counting one half."""
    n_i = scores.ind_scores.size
    n_o = scores.ood_scores.size
    ranks = rankdata(np.concatenate([scores.ind_scores, scores.ood_scores]))
    u = ranks[:n_i].sum() - n_i * (n_i + 1) / 2.0
    return float(u / (n_i * n_o))


def auc_pr(scores: ScoreSet, positive: str = "ind") -> float:
    """Average precision with threshold-grouped ties (step interpolation)."""
    if positive == "ind":
        pos, neg = scores.ind_scores, scores.ood_scores
        flip = 1.0
    elif positive == "ood":
        pos, neg = scores.ood_scores, scores.ind_scores
        flip = -1.0
    else:
        raise ValueError("positive must be 'ind' or 'ood'")
    s = flip * np.concatenate([pos, neg])
    y = np.concatenate([np.ones(pos.size), np.zeros(neg.size)])
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]

    ap = 0.0
    tp = fp = 0
    prev_recall = 0.0
    i = 0
    n = s.size
    while i < n:
        j = i
        while j < n and s[j] == s[i]:
            j += 1
        tp += int(y[i:j].sum())
        fp += (j - i) - int(y[i:j].sum())
        recall = tp / pos.size
        precision = tp / (tp + fp)
        ap += (recall - prev_recall) * precision
        prev_recall = recall
        i = j
    return float(ap)


def ks_statistic(sample, cdf) -> float:
    """Sup-norm distance between the empirical CDF and a reference CDF."""
    xs = np.sort(np.asarray(sample, dtype=np.float64))
    if xs.size == 0:
        raise ValueError("sample must be non-empty")
    F = np.asarray(cdf(xs), dtype=np.float64)
    n = xs.size
    upper = np.arange(1, n + 1) / n - F
    lower = F - np.arange(0, n) / n
    return float(max(upper.max(), lower.max()))


def score_histograms(scores: ScoreSet, bins: int = 50) -> dict:
    """Shared-bin histograms of both score sets for the metrics report."""
    lo = min(scores.ind_scores.min(), scores.ood_scores.min())
    hi = max(scores.ind_scores.max(), scores.ood_scores.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, bins + 1)
    ind_counts, _ = np.histogram(scores.ind_scores, bins=edges)
    ood_counts, _ = np.histogram(scores.ood_scores, bins=edges)
    return {
        "bin_edges": edges.tolist(),
        "ind_counts": ind_counts.tolist(),
        "ood_counts": ood_counts.tolist(),
    }


def metrics_report(scores: ScoreSet, bins: int = 50) -> dict:
    """AUROC plus AUC-PR under both positive-class conventions."""
    return {
        "score_convention": "higher score means more in-distribution; "
        "scores are unnormalized log-densities",
        "auroc": auroc(scores),
        "auc_pr_ind_positive": auc_pr(scores, "ind"),
        "auc_pr_ood_positive": auc_pr(scores, "ood"),
        "n_ind": int(scores.ind_scores.size),
        "n_ood": int(scores.ood_scores.size),
        "histograms": score_histograms(scores, bins=bins),
    }
