"""Ready-made experiment configurations.

Desk-scale presets are sized to finish on a laptop-class machine while
keeping the qualitative behavior of the full-scale settings; the
paper-scale variants of the four-ring study are available behind
``scale="paper"``.
"""

from __future__ import annotations

import numpy as np

from .experiments import ExperimentConfig
from .training import TrainConfig

SPLINE_KNOTS = [round(-4.0 + 0.1 * i, 1) for i in range(81)]

FOURRING_SCHEDULE = {"T": 6, "delta_first": 0.01, "delta_last": 0.3}


def onedim_spline_config(method: str = "ebm-persistent", seed: int = 0) -> ExperimentConfig:
    """1D two-mode mixture with the ReLU-spline energy.

    Persistent training with MALA, step size 0.1, 10 sampling steps per
    iteration, a 1000-slot buffer, and learning rate 0.2 decaying by 0.2
    at iterations 600/800/1000 over 1200 iterations.
    """
    if method not in ("ebm-persistent", "ebm-cd", "ebm-noise", "ebm-hybrid"):
        raise ValueError(f"unsupported 1D spline method {method!r}")
    train = TrainConfig.from_dict(
        {
            "method": method,
            "model": {"kind": "relu_spline_1d", "knots": SPLINE_KNOTS, "prior_scale": 0.1},
            "iterations": 1200,
            "batch_size": 100,
            "langevin_steps": 10,
            "step_size": 0.1,
            "sampler": "mala",
            "buffer_capacity": 1000,
            "optimizer": {"kind": "sgd"},
            "lr": {"base": 0.2, "milestones": [600, 800, 1000], "decay": 0.2},
            "seed": seed,
        }
    )
    return ExperimentConfig(
        experiment="onedim",
        train=train,
        data={"generator": "1d_mixture", "n_left": 750, "n_right": 250, "seed": seed},
        longrun_steps=10_000,
        longrun_chains=1000,
        post_count=1000,
        post_steps=10_000,
        curve_range=(-4.0, 4.0),
    )


def onedim_daebm_config(seed: int = 0) -> ExperimentConfig:
    """1D mixture with the joint model and composite sampling."""
    train = TrainConfig.from_dict(
        {
            "method": "daebm",
            "model": {
                "kind": "mlp_joint",
                "layer_sizes": [1, 64, 64, 64, 1],
                "activation": "softplus",
                "T": 6,
                "time_embed_dim": 32,
            },
            "schedule": FOURRING_SCHEDULE,
            "iterations": 4200,
            "batch_size": 128,
            "langevin_steps": 10,
            "step_size_init": {"b": 0.1},
            "buffer_capacity": 1000,
            "optimizer": {"kind": "adam", "beta1": 0.0, "beta2": 0.999},
            "lr": {
                "base": 2e-3,
                "warmup": 200,
                "milestones": [2940, 3360, 3780],
                "decay": 0.2,
            },
            "adapt_every": 100,
            "adapt_tau": 0.1,
            "seed": seed,
        }
    )
    return ExperimentConfig(
        experiment="onedim",
        train=train,
        data={"generator": "1d_mixture", "n_left": 750, "n_right": 250, "seed": seed},
        longrun_steps=10_000,
        longrun_chains=1000,
        post_count=1000,
        post_M=10,
        post_max_transitions=250,
        curve_range=(-4.0, 4.0),
    )


def onedim_drl_config(seed: int = 0) -> ExperimentConfig:
    """1D mixture trained by the recovery-likelihood baseline."""
    train = TrainConfig.from_dict(
        {
            "method": "drl",
            "model": {
                "kind": "mlp_joint",
                "layer_sizes": [1, 64, 64, 64, 1],
                "activation": "softplus",
                "T": 6,
                "time_embed_dim": 32,
            },
            "schedule": FOURRING_SCHEDULE,
            "iterations": 4000,
            "batch_size": 128,
            "langevin_steps": 15,
            "drl_b": 0.1,
            "optimizer": {"kind": "adam", "beta1": 0.9, "beta2": 0.999},
            "lr": {
                "base": 2e-3,
                "warmup": 200,
                "milestones": [2800, 3200, 3600],
                "decay": 0.2,
            },
            "seed": seed,
        }
    )
    return ExperimentConfig(
        experiment="onedim",
        train=train,
        data={"generator": "1d_mixture", "n_left": 750, "n_right": 250, "seed": seed},
        longrun_steps=10_000,
        longrun_chains=1000,
        post_count=1000,
        curve_range=(-4.0, 4.0),
    )


def fourring_config(
    method: str = "daebm", seed: int = 0, scale: str = "desk"
) -> ExperimentConfig:
    """Four-ring study; desk scale shrinks data, epochs, and chain counts."""
    if scale == "desk":
        n, epochs, chains = 10_000, 100, 2_000
        langevin_steps = 20
    elif scale == "paper":
        n, epochs, chains = 50_000, 200, 10_000
        langevin_steps = 40
    else:
        raise ValueError("scale must be 'desk' or 'paper'")
    batch = 200
    iterations = epochs * (n // batch)
    milestones = [int(iterations * f) for f in (0.7, 0.8, 0.9)]
    mlp = {
        "kind": "mlp_joint",
        "layer_sizes": [2, 128, 128, 128, 1],
        "activation": "softplus" if method in ("daebm", "drl") else "relu",
        "T": 6 if method in ("daebm", "drl") else 0,
        "time_embed_dim": 64 if method in ("daebm", "drl") else 0,
    }
    raw = {
        "method": method,
        "model": mlp,
        "iterations": iterations,
        "batch_size": batch,
        "langevin_steps": langevin_steps,
        "optimizer": {"kind": "adam", "beta1": 0.0, "beta2": 0.999},
        "lr": {
            "base": 5e-4,
            "warmup": max(1, iterations // 20),
            "milestones": milestones,
            "decay": 0.1,
        },
        "seed": seed,
    }
    if method == "daebm":
        raw.update(
            schedule=FOURRING_SCHEDULE,
            step_size_init={"b": 0.1},
            buffer_capacity=n,
            adapt_every=100,
            adapt_tau=0.1,
        )
    elif method == "drl":
        raw.update(
            schedule=FOURRING_SCHEDULE,
            drl_b=0.02,
            optimizer={"kind": "adam", "beta1": 0.9, "beta2": 0.999},
        )
    else:
        raw.update(step_size=0.005, sampler="langevin")
        if method in ("ebm-persistent", "ebm-hybrid"):
            raw.update(buffer_capacity=n)
        if method == "ebm-noise":
            raw.update(langevin_steps=langevin_steps * 4)
    train = TrainConfig.from_dict(raw)
    return ExperimentConfig(
        experiment="fourring",
        train=train,
        data={"generator": "four_rings", "n": n, "seed": seed},
        longrun_steps=10_000,
        longrun_chains=chains,
        post_count=chains,
        post_M=10,
        post_max_transitions=250,
        post_steps=10_000,
        curve_range=(-5.0, 5.0),
    )


PRESETS = {
    "onedim-ebm-persistent": lambda seed, scale: onedim_spline_config("ebm-persistent", seed),
    "onedim-ebm-cd": lambda seed, scale: onedim_spline_config("ebm-cd", seed),
    "onedim-ebm-noise": lambda seed, scale: onedim_spline_config("ebm-noise", seed),
    "onedim-ebm-hybrid": lambda seed, scale: onedim_spline_config("ebm-hybrid", seed),
    "onedim-daebm": lambda seed, scale: onedim_daebm_config(seed),
    "onedim-drl": lambda seed, scale: onedim_drl_config(seed),
    "fourring-daebm": lambda seed, scale: fourring_config("daebm", seed, scale),
    "fourring-drl": lambda seed, scale: fourring_config("drl", seed, scale),
    "fourring-ebm-persistent": lambda seed, scale: fourring_config("ebm-persistent", seed, scale),
    "fourring-ebm-cd": lambda seed, scale: fourring_config("ebm-cd", seed, scale),
    "fourring-ebm-noise": lambda seed, scale: fourring_config("ebm-noise", seed, scale),
    "fourring-ebm-hybrid": lambda seed, scale: fourring_config("ebm-hybrid", seed, scale),
}


def preset(name: str, seed: int = 0, scale: str = "desk") -> ExperimentConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; available: {sorted(PRESETS)}")
    return PRESETS[name](seed, scale)
