"""Data generators, end-to-end experiment runners, and artifact emission.

Two desk-scale studies are wired up: a 1D two-mode Gaussian mixture with
a 3:1 weight split, and the four concentric rings in 2D.  Runners train
a configured method, then produce long-run samples (chains started from
held-out data), post-training samples (chains started from noise), an
energy-curve slice, and a metrics report, all written under one output
directory:

    config.json, train_log.csv, energy_curves.csv, buffer.csv,
    longrun.csv, post.csv, metrics.json, plots/*.svg
"""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "daebm"  # deterministic SVG ids
import matplotlib.pyplot as plt

from .metrics import ScoreSet, metrics_report
from .rngs import stream_rng
from .samplers import StepSizes, langevin_kernel, mala_kernel, post_training_sample_batch
from .training import TrainConfig, TrainResult, train

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Dataset:
    """Point cloud plus the recipe that regenerates it bit-exactly."""

    points: np.ndarray
    descriptor: dict

    def __post_init__(self):
        if not np.all(np.isfinite(self.points)):
            raise ValueError("dataset contains non-finite points")


def gen_1d_mixture(seed: int, n_left: int = 750, n_right: int = 250) -> Dataset:
    """Two narrow modes at -2 and 2 with a 3:1 weight split."""
    rng = np.random.default_rng(seed)
    left = -2.0 + 0.1 * rng.standard_normal(n_left)
    right = 2.0 + 0.1 * rng.standard_normal(n_right)
    pts = np.concatenate([left, right])[:, None]
    return Dataset(
        points=pts,
        descriptor={
            "generator": "1d_mixture",
            "n_left": n_left,
            "n_right": n_right,
            "seed": seed,
        },
    )


RING_RADII = (1.0, 2.0, 3.0, 4.0)
RING_STD = 0.01


def gen_four_rings(n: int, seed: int) -> Dataset:
    """Four concentric rings, equal ring probability, radial std 0.01.

    Radii follow a one-sided truncated normal on (0, inf), drawn by
    rejection from the untruncated normal (acceptance is essentially 1
    at these mean/std ratios).
    """
    if n < 4:
        raise ValueError("need at least 4 points")
    rng = np.random.default_rng(seed)
    ring = rng.integers(0, 4, size=n)
    mu = np.asarray(RING_RADII)[ring]
    r = mu + RING_STD * rng.standard_normal(n)
    bad = r <= 0.0
    while np.any(bad):
        r[bad] = mu[bad] + RING_STD * rng.standard_normal(int(bad.sum()))
        bad = r <= 0.0
    phi = rng.uniform(0.0, 2.0 * np.pi, size=n)
    pts = np.column_stack([r * np.cos(phi), r * np.sin(phi)])
    return Dataset(
        points=pts,
        descriptor={"generator": "four_rings", "n": n, "seed": seed},
    )


def regenerate(descriptor: dict) -> Dataset:
    """Rebuild a dataset from its descriptor, bit-exactly."""
    kind = descriptor.get("generator")
    if kind == "1d_mixture":
        return gen_1d_mixture(
            descriptor["seed"], descriptor["n_left"], descriptor["n_right"]
        )
    if kind == "four_rings":
        return gen_four_rings(descriptor["n"], descriptor["seed"])
    raise ValueError(f"unknown dataset generator {kind!r}")


def ring_radius_errors(points: np.ndarray) -> np.ndarray:
    """Distance of each 2D point's radius to the nearest ring mean."""
    r = np.linalg.norm(points, axis=1)
    return np.min(np.abs(r[:, None] - np.asarray(RING_RADII)[None, :]), axis=1)


def run_longrun(
    model,
    start: np.ndarray,
    steps: int,
    sigma: float,
    rng,
    adjust: bool = True,
    t: int = 0,
) -> np.ndarray:
    """Advance parallel chains at a fixed time label from given starts.

    Uses MALA by default; `adjust=False` runs unadjusted Langevin.  With
    steps=0 the start points are returned unchanged.
    """
    X = np.array(start, dtype=np.float64, copy=True)
    if steps == 0:
        return X
    sig = np.full(X.shape[0], float(sigma))
    if not adjust:
        grad = None
        for _ in range(steps):
            X, grad = langevin_kernel(model, X, t, sig, rng, grad=grad)
        return X
    energy, grad = model.energy_grad_x_batch(X, t)
    for _ in range(steps):
        X, energy, grad, _ = mala_kernel(model, X, t, sig, rng, energy=energy, grad=grad)
        if not np.all(np.isfinite(X)):
            raise RuntimeError("non-finite long-run state")
    return X


def run_post(model, step_sizes: StepSizes, L: int, M: int, count: int, rng,
             max_transitions: int = 250):
    """Post-training sampling for `count` chains; see samplers for details."""
    result = post_training_sample_batch(
        model, step_sizes, L, M, count, rng, max_transitions=max_transitions
    )
    if result.unfinished:
        logger.warning(
            "%d of %d post-training chains missed %d time-0 visits within %d transitions",
            result.unfinished, count, M, max_transitions,
        )
    return result


def energy_curve_table(model, lo: float, hi: float, n: int = 401) -> dict:
    """Energy slice per time level, each column anchored to minimum 0.

    1D models are sliced over x in [lo, hi]; 2D models along the vertical
    line x1 = 0 with x2 in [lo, hi].
    """
    grid = np.linspace(lo, hi, n)
    if model.input_dim == 1:
        X = grid[:, None]
    else:
        X = np.column_stack([np.zeros(n), grid])
    cols = {}
    for t in range(model.T + 1):
        u = model.energy_batch(X, t)
        cols[f"u_t{t}"] = u - u.min()
    return {"x": grid, **cols}


def local_minima_positions(x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Positions of strict discrete local minima of a sampled curve."""
    inner = (u[1:-1] < u[:-2]) & (u[1:-1] <= u[2:])
    return x[1:-1][inner]


# ----------------------------------------------------------------------
# experiment orchestration
# ----------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    """Top-level run description: dataset, trainer arm, and sampling load."""

    experiment: str  # onedim | fourring
    train: TrainConfig
    data: dict
    longrun_steps: int = 10_000
    longrun_chains: int = 1_000
    longrun_sigma: float | None = None
    post_count: int = 1_000
    post_M: int = 10
    post_max_transitions: int = 250
    post_steps: int = 10_000  # plain-EBM post sampling (Langevin from noise)
    curve_range: tuple[float, float] = (-4.0, 4.0)
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "experiment": self.experiment,
            "train": self.train.to_dict(),
            "data": dict(self.data),
            "longrun_steps": self.longrun_steps,
            "longrun_chains": self.longrun_chains,
            "longrun_sigma": self.longrun_sigma,
            "post_count": self.post_count,
            "post_M": self.post_M,
            "post_max_transitions": self.post_max_transitions,
            "post_steps": self.post_steps,
            "curve_range": list(self.curve_range),
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        raw = dict(raw)
        version = raw.pop("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ValueError(f"unsupported config schema version {version}")
        allowed = {
            "experiment", "train", "data", "longrun_steps", "longrun_chains",
            "longrun_sigma", "post_count", "post_M", "post_max_transitions",
            "post_steps", "curve_range",
        }
        unknown = set(raw) - allowed
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "train" not in raw or "experiment" not in raw or "data" not in raw:
            raise ValueError("config must provide experiment, train, and data sections")
        train_cfg = TrainConfig.from_dict(raw.pop("train"))
        if "curve_range" in raw:
            raw["curve_range"] = tuple(raw["curve_range"])
        return cls(train=train_cfg, **raw)


@dataclass
class RunArtifacts:
    """Paths of everything a finished run wrote."""

    outdir: str
    config: str
    train_log: str
    energy_curves: str
    buffer: str
    longrun: str
    post: str
    metrics: str
    plots: list[str] = field(default_factory=list)
    checkpoint: str = ""

    def to_dict(self) -> dict:
        return self.__dict__.copy()


def _write_csv(path, header: list[str], rows: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(np.atleast_2d(rows).tolist())


def _point_header(dim: int) -> list[str]:
    return [f"x{i}" for i in range(dim)]


@dataclass
class RunResult:
    config: ExperimentConfig
    dataset: Dataset
    train_result: TrainResult
    longrun: np.ndarray
    post: np.ndarray
    post_transitions: np.ndarray | None = None
    metrics: dict = field(default_factory=dict)


def make_dataset(config: ExperimentConfig) -> Dataset:
    return regenerate(config.data)


def run_experiment(config: ExperimentConfig, outdir: str | None = None) -> RunResult:
    """Train one arm and generate its sample sets and reports."""
    dataset = make_dataset(config)
    seed = config.train.seed
    if outdir is not None:
        os.makedirs(outdir, exist_ok=True)
    result = train(config.train, dataset.points, outdir=outdir)
    model = result.model

    # long-run chains start from a fresh draw of the data distribution
    start_desc = dict(config.data)
    start_desc["seed"] = seed + 7919
    if "n" in start_desc:
        start_desc["n"] = max(config.longrun_chains, 4)
    starts = regenerate(start_desc).points
    idx = stream_rng(seed, "longrun_start").choice(
        starts.shape[0], size=min(config.longrun_chains, starts.shape[0]), replace=False
    )
    sigma_lr = config.longrun_sigma
    if sigma_lr is None:
        sigma_lr = (
            float(result.step_sizes.sigma[0])
            if result.step_sizes is not None
            else config.train.step_size
        )
    longrun = run_longrun(
        model, starts[idx], config.longrun_steps, sigma_lr,
        stream_rng(seed, "longrun"), adjust=True, t=0,
    )

    post_transitions = None
    if config.train.method == "daebm":
        post_res = run_post(
            model, result.step_sizes, config.train.langevin_steps,
            config.post_M, config.post_count, stream_rng(seed, "post"),
            max_transitions=config.post_max_transitions,
        )
        post = post_res.samples
        post_transitions = post_res.transitions_used
    else:
        # plain models: fixed-label Langevin/MALA from pure noise
        noise = stream_rng(seed, "post_init").standard_normal(
            (config.post_count, model.input_dim)
        )
        post = run_longrun(
            model, noise, config.post_steps, sigma_lr,
            stream_rng(seed, "post"), adjust=config.train.sampler == "mala", t=0,
        )

    run = RunResult(
        config=config, dataset=dataset, train_result=result,
        longrun=longrun, post=post, post_transitions=post_transitions,
    )
    run.metrics = summary_metrics(run)
    return run


def summary_metrics(run: RunResult) -> dict:
    """Quick scalar diagnostics of the sample sets."""
    out = {"method": run.config.train.method}
    if run.dataset.points.shape[1] == 1:
        out["longrun_left_fraction"] = float(np.mean(run.longrun[:, 0] < 0.0))
        out["post_left_fraction"] = float(np.mean(run.post[:, 0] < 0.0))
        buffer = run.train_result.buffer
        if buffer is not None:
            sel = buffer.t == 0 if run.config.train.method == "daebm" else slice(None)
            vals = buffer.x[sel, 0]
            out["buffer_left_fraction"] = (
                float(np.mean(vals < 0.0)) if vals.size else float("nan")
            )
    else:
        err_long = ring_radius_errors(run.longrun)
        out["longrun_on_ring_015"] = float(np.mean(err_long <= 0.15))
        if run.post.shape[0]:
            r = np.linalg.norm(run.post, axis=1)
            err_post = ring_radius_errors(run.post)
            out["post_on_ring_015"] = float(np.mean(err_post <= 0.15))
            nearest = np.argmin(
                np.abs(r[:, None] - np.asarray(RING_RADII)[None, :]), axis=1
            )
            out["post_ring_fractions"] = [
                float(np.mean(nearest == k)) for k in range(4)
            ]
    return out


def emit_artifacts(run: RunResult, outdir: str) -> RunArtifacts:
    """Write every artifact of a finished run; emission is deterministic."""
    os.makedirs(outdir, exist_ok=True)
    plots_dir = os.path.join(outdir, "plots")
    os.makedirs(plots_dir, exist_ok=True)
    dim = run.dataset.points.shape[1]

    config_path = os.path.join(outdir, "config.json")
    echo = run.config.to_dict()
    echo["stream_seeds"] = {
        "master_seed": run.config.train.seed,
        "streams": "per-purpose streams derived as crc32(label) with the "
        "iteration counter; see daebm.rngs.stream_rng",
    }
    echo["metrics_summary"] = run.metrics
    with open(config_path, "w") as fh:
        json.dump(echo, fh, indent=2, sort_keys=True)

    train_log = os.path.join(outdir, "train_log.csv")
    if not os.path.exists(train_log):
        from .training import write_train_log

        write_train_log(train_log, run.train_result.history)

    lo, hi = run.config.curve_range
    table = energy_curve_table(run.train_result.model, lo, hi)
    curves_path = os.path.join(outdir, "energy_curves.csv")
    header = list(table.keys())
    _write_csv(curves_path, header, np.column_stack([table[k] for k in header]))

    buffer_path = os.path.join(outdir, "buffer.csv")
    buffer = run.train_result.buffer
    if buffer is not None:
        rows = np.column_stack([buffer.x, buffer.t])
        _write_csv(buffer_path, _point_header(dim) + ["t"], rows)
    else:
        _write_csv(buffer_path, _point_header(dim) + ["t"], np.empty((0, dim + 1)))

    longrun_path = os.path.join(outdir, "longrun.csv")
    _write_csv(longrun_path, _point_header(dim), run.longrun)
    post_path = os.path.join(outdir, "post.csv")
    _write_csv(post_path, _point_header(dim), run.post)

    metrics_path = os.path.join(outdir, "metrics.json")
    with open(metrics_path, "w") as fh:
        json.dump(run.metrics, fh, indent=2, sort_keys=True)

    plots = _emit_plots(run, table, plots_dir)

    from .energy import save_model

    checkpoint = os.path.join(outdir, "model.npz")
    save_model(checkpoint, run.train_result.model)

    return RunArtifacts(
        outdir=outdir,
        config=config_path,
        train_log=train_log,
        energy_curves=curves_path,
        buffer=buffer_path,
        longrun=longrun_path,
        post=post_path,
        metrics=metrics_path,
        plots=plots,
        checkpoint=checkpoint,
    )


def _save_svg(fig, path: str) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _emit_plots(run: RunResult, curve_table: dict, plots_dir: str) -> list[str]:
    paths = []
    x = curve_table["x"]
    fig, ax = plt.subplots(figsize=(6, 4))
    for key, col in curve_table.items():
        if key == "x":
            continue
        ax.plot(x, col, label=key, linewidth=1.0)
    ax.set_xlabel("x" if run.dataset.points.shape[1] == 1 else "x2 (slice x1 = 0)")
    ax.set_ylabel("energy (min anchored to 0)")
    ax.legend(fontsize=7)
    p = os.path.join(plots_dir, "energy_curves.svg")
    _save_svg(fig, p)
    paths.append(p)

    if run.dataset.points.shape[1] == 1:
        fig, axes = plt.subplots(1, 3, figsize=(10, 3), sharex=True)
        bins = np.linspace(-4, 4, 81)
        for ax, (name, pts) in zip(
            axes,
            [
                ("data", run.dataset.points[:, 0]),
                ("long-run", run.longrun[:, 0]),
                ("post", run.post[:, 0]),
            ],
        ):
            ax.hist(pts, bins=bins, density=True)
            ax.set_title(name, fontsize=9)
        p = os.path.join(plots_dir, "samples_hist.svg")
        _save_svg(fig, p)
        paths.append(p)
    else:
        fig, axes = plt.subplots(1, 3, figsize=(10, 3.4))
        theta = np.linspace(0, 2 * np.pi, 200)
        for ax, (name, pts) in zip(
            axes,
            [
                ("data", run.dataset.points[:2000]),
                ("long-run", run.longrun),
                ("post", run.post),
            ],
        ):
            for radius in RING_RADII:
                ax.plot(radius * np.cos(theta), radius * np.sin(theta),
                        color="0.85", linewidth=0.7, zorder=0)
            if pts.shape[0]:
                ax.scatter(pts[:, 0], pts[:, 1], s=1.5, alpha=0.5, zorder=1)
            ax.set_aspect("equal")
            ax.set_xlim(-5, 5)
            ax.set_ylim(-5, 5)
            ax.set_title(name, fontsize=9)
        p = os.path.join(plots_dir, "samples_scatter.svg")
        _save_svg(fig, p)
        paths.append(p)
    return paths


def score_points(model, points: np.ndarray) -> np.ndarray:
    """Unnormalized log-density score at the original-data level."""
    return -model.energy_batch(points, 0)


def ood_report(model, ind_points: np.ndarray, ood_points: np.ndarray) -> dict:
    scores = ScoreSet(
        ind_scores=score_points(model, ind_points),
        ood_scores=score_points(model, ood_points),
    )
    return metrics_report(scores)
