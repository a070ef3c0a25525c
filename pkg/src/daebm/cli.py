"""Command-line front end.

Subcommands: train, sample, diag, ood, gen-data.  A JSON config file is
the canonical run description (see presets for ready-made ones); flags
override individual fields.  Every command echoes its fully resolved
config before acting.

Exit codes: 0 success, 1 check failure, 2 usage or config error,
3 numerical abort.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_NUMERICAL = 3


class UsageError(Exception):
    pass


def _outdir(args) -> str:
    out = args.out or os.environ.get("DAEBM_OUT") or "daebm_out"
    os.makedirs(out, exist_ok=True)
    return out


def _limit_threads(n: int | None):
    """Cap BLAS thread pools; --threads 1 gives bit-exact reruns."""
    if n is None:
        return None
    try:
        from threadpoolctl import threadpool_limits

        return threadpool_limits(limits=n)
    except ImportError:  # pragma: no cover
        os.environ["OMP_NUM_THREADS"] = str(n)
        os.environ["OPENBLAS_NUM_THREADS"] = str(n)
        return None


def _load_experiment_config(args):
    from .experiments import ExperimentConfig
    from .presets import preset

    if getattr(args, "config", None):
        if not os.path.exists(args.config):
            raise UsageError(f"config file not found: {args.config}")
        with open(args.config) as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as e:
                raise UsageError(f"config is not valid JSON: {e}") from e
        try:
            cfg = ExperimentConfig.from_dict(raw)
        except (ValueError, KeyError, TypeError) as e:
            raise UsageError(f"invalid config: {e}") from e
    elif getattr(args, "preset", None):
        try:
            cfg = preset(args.preset, seed=args.seed or 0, scale=args.scale)
        except ValueError as e:
            raise UsageError(str(e)) from e
    else:
        raise UsageError("provide --config FILE or --preset NAME")

    overrides = {}
    if getattr(args, "method", None):
        raw = cfg.to_dict()
        raw["train"]["method"] = args.method
        try:
            cfg = ExperimentConfig.from_dict(raw)
        except ValueError as e:
            raise UsageError(f"invalid method override: {e}") from e
        overrides["method"] = args.method
    if getattr(args, "seed", None) is not None:
        raw = cfg.to_dict()
        raw["train"]["seed"] = args.seed
        if "seed" in raw["data"]:
            raw["data"]["seed"] = args.seed
        cfg = ExperimentConfig.from_dict(raw)
        overrides["seed"] = args.seed
    return cfg


def _echo(obj: dict) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def cmd_train(args) -> int:
    from .experiments import emit_artifacts, run_experiment
    from .training import NumericalError

    cfg = _load_experiment_config(args)
    out = _outdir(args)
    _echo(cfg.to_dict())
    try:
        run = run_experiment(cfg, outdir=out)
    except NumericalError as e:
        diag_path = os.path.join(out, "numerical_abort.json")
        with open(diag_path, "w") as fh:
            json.dump({"error": str(e), "diagnostics": e.diagnostics}, fh, indent=2)
        print(f"numerical abort; diagnostics at {diag_path}", file=sys.stderr)
        return EXIT_NUMERICAL
    artifacts = emit_artifacts(run, out)
    _echo({"artifacts": artifacts.to_dict(), "metrics": run.metrics})
    return EXIT_OK


def cmd_sample(args) -> int:
    import numpy as np

    from .energy import load_model
    from .experiments import run_longrun, run_post
    from .rngs import stream_rng
    from .samplers import StepSizes

    if not os.path.exists(args.checkpoint):
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    try:
        model = load_model(args.checkpoint)
    except (ValueError, KeyError) as e:
        raise UsageError(f"cannot load checkpoint: {e}") from e

    out = _outdir(args)
    rng = stream_rng(args.seed or 0, f"cli_sample_{args.mode}")
    _echo({
        "mode": args.mode, "checkpoint": args.checkpoint, "count": args.count,
        "steps": args.steps, "M": args.M, "sigma": args.sigma, "seed": args.seed or 0,
    })
    if args.mode == "longrun":
        if args.start and os.path.exists(args.start):
            start = np.loadtxt(args.start, delimiter=",", skiprows=1, ndmin=2)
            if start.shape[1] != model.input_dim:
                raise UsageError("start points do not match the model dimension")
            start = start[: args.count]
        else:
            start = rng.standard_normal((args.count, model.input_dim))
        samples = run_longrun(model, start, args.steps, args.sigma, rng)
    else:  # post
        if model.T == 0:
            samples = run_longrun(
                model, rng.standard_normal((args.count, model.input_dim)),
                args.steps, args.sigma, rng,
            )
        else:
            sizes = StepSizes(np.full(model.T + 1, args.sigma))
            if args.step_sizes:
                sizes = StepSizes(np.asarray(json.loads(args.step_sizes), dtype=float))
            res = run_post(model, sizes, args.L, args.M, args.count, rng,
                           max_transitions=args.max_transitions)
            samples = res.samples

    path = os.path.join(out, f"{args.mode}_samples.csv")
    header = ",".join(f"x{i}" for i in range(model.input_dim))
    np.savetxt(path, np.atleast_2d(samples), delimiter=",", header=header, comments="")
    _echo({"written": path, "n_samples": int(np.atleast_2d(samples).shape[0])})
    return EXIT_OK


def cmd_diag(args) -> int:
    import numpy as np

    out = _outdir(args)
    rng_seed = args.seed or 0
    _echo({"kind": args.kind, "seed": rng_seed})
    if args.kind == "gradcheck":
        report = _diag_gradcheck(rng_seed)
    elif args.kind == "sams":
        report = _diag_sams(rng_seed, args.case)
    elif args.kind == "invariance":
        report = _diag_invariance(rng_seed)
    else:  # pragma: no cover - argparse restricts choices
        raise UsageError(f"unknown diagnostic {args.kind!r}")

    path = os.path.join(out, f"diag_{args.kind}.json")
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    _echo(report)
    if not report["passed"]:
        print("diagnostic checks failed:", file=sys.stderr)
        for item in report["failures"]:
            print(f"  - {item}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    return EXIT_OK


def _diag_gradcheck(seed: int, n_probes: int = 100) -> dict:
    import numpy as np

    from .energy import MlpJointEnergy, ReluSplineEnergy1D

    rng = np.random.default_rng(seed)
    failures = []

    def fd_theta(model, x, t, h=1e-5):
        base = model.params.copy_values()
        out = np.empty_like(base)
        for i in range(base.size):
            pp = base.copy()
            pp[i] += h
            model.set_param_values(pp)
            up = model.energy(x, t)
            pp[i] -= 2 * h
            model.set_param_values(pp)
            um = model.energy(x, t)
            out[i] = (up - um) / (2 * h)
        model.set_param_values(base)
        return out

    def rel_err(a, b):
        return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-6)))

    mlp = MlpJointEnergy([2, 16, 16, 16, 1], activation="softplus", T=3,
                         time_embed_dim=8, rng=rng)
    worst_x = worst_t = 0.0
    for _ in range(n_probes):
        x = rng.standard_normal(2)
        t = int(rng.integers(0, 4))
        g = mlp.grad_x(x, t)
        h = 1e-5
        fd = np.array([
            (mlp.energy(x + h * e, t) - mlp.energy(x - h * e, t)) / (2 * h)
            for e in np.eye(2)
        ])
        worst_x = max(worst_x, rel_err(g, fd))
    for _ in range(5):
        x = rng.standard_normal(2)
        t = int(rng.integers(0, 4))
        worst_t = max(worst_t, rel_err(mlp.grad_theta(x, t), fd_theta(mlp, x, t)))

    spline = ReluSplineEnergy1D(np.linspace(-2, 2, 9))
    spline.set_param_values(rng.standard_normal(9))
    worst_s = 0.0
    for _ in range(n_probes):
        x = rng.uniform(-3, 3, size=1)
        if np.min(np.abs(x[0] - spline.knots)) < 1e-3:
            continue
        worst_s = max(worst_s, rel_err(spline.grad_theta(x), fd_theta(spline, x, 0)))

    if worst_x > 1e-5:
        failures = [f"mlp grad_x relative error {worst_x:.2e} > 1e-5"]
    if worst_t > 1e-4:
        failures.append(f"mlp grad_theta relative error {worst_t:.2e} > 1e-4")
    if worst_s > 1e-6:
        failures.append(f"spline grad_theta relative error {worst_s:.2e} > 1e-6")
    return {
        "kind": "gradcheck",
        "mlp_grad_x_rel_err": worst_x,
        "mlp_grad_theta_rel_err": worst_t,
        "spline_grad_theta_rel_err": worst_s,
        "failures": failures,
        "passed": not failures,
    }


_SAMS_CASES = {
    # u0, u1 as (a, mean) with u(x) = (x - mean)^2 / (2 a^2); truth log(Z1/Z0) = log(a1/a0)
    "symmetric": ((1.0, 0.0), (1.0, 0.0)),
    "gaussian-shifted": ((1.0, 0.0), (1.0, 1.0)),
    "gaussian-halfvar": ((1.0, 0.0), (2.0, 0.0)),
}


def _diag_sams(seed: int, case: str) -> dict:
    import numpy as np

    from .mixture import TwoComponentSpec, sams_run
    from .rngs import stream_rng

    if case not in _SAMS_CASES:
        raise UsageError(f"unknown SAMS case {case!r}; choose from {sorted(_SAMS_CASES)}")
    (a0, m0), (a1, m1) = _SAMS_CASES[case]
    spec = TwoComponentSpec(
        u0=lambda X: (X[:, 0] - m0) ** 2 / (2 * a0**2),
        grad_u0=lambda X: (X - m0) / a0**2,
        u1=lambda X: (X[:, 0] - m1) ** 2 / (2 * a1**2),
        grad_u1=lambda X: (X - m1) / a1**2,
        sigma0=0.5 * a0,
        sigma1=0.5 * a1,
    )
    truth = float(np.log(a1 / a0))
    res = sams_run(spec, iterations=100_000, rng=stream_rng(seed, "diag_sams"))
    err = abs(res.delta_hat - truth)
    failures = [] if err < 0.05 else [
        f"sams estimate {res.delta_hat:.4f} misses truth {truth:.4f} by {err:.4f} >= 0.05"
    ]
    return {
        "kind": "sams",
        "case": case,
        "estimate": res.delta_hat,
        "truth": truth,
        "abs_error": err,
        "label_counts": res.label_counts.tolist(),
        "failures": failures,
        "passed": not failures,
    }


def _diag_invariance(seed: int) -> dict:
    import numpy as np

    from .mixture import (
        GaussianMixture1D,
        Region,
        build_local_energy,
        check_mixture_invariance,
    )
    from .rngs import stream_rng

    mixture = GaussianMixture1D(means=(-2.0, 2.0), stds=(0.1, 0.1), weights=(0.75, 0.25))

    def piece(mean):
        return (
            lambda X, m=mean: (X[:, 0] - m) ** 2 / (2 * 0.1**2),
            lambda X, m=mean: (X - m) / 0.1**2,
        )

    u_l, g_l = piece(-2.0)
    u_r, g_r = piece(2.0)
    local = build_local_energy([
        (u_l, g_l, Region((-2.6,), (-1.4,)), 0.0),
        (u_r, g_r, Region((1.4,), (2.6,)), 5.0),
    ])
    report = check_mixture_invariance(
        local, mixture, n_chains=4000, n_steps=2000, sigma=0.1,
        rng=stream_rng(seed, "diag_invariance"),
    )
    failures = []
    if report.cross_region_transitions != 0:
        failures.append(
            f"{report.cross_region_transitions} cross-region transitions (expected 0)"
        )
    if max(report.region_ks) >= 0.02:
        failures.append(f"region KS {max(report.region_ks):.4f} >= 0.02")
    out = report.to_dict()
    out.update({"kind": "invariance", "failures": failures, "passed": not failures})
    return out


def cmd_ood(args) -> int:
    import numpy as np

    from .energy import load_model
    from .experiments import ood_report

    if not os.path.exists(args.checkpoint):
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    model = load_model(args.checkpoint)

    def load_points(path, name):
        if not os.path.exists(path):
            raise UsageError(f"{name} file not found: {path}")
        pts = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if pts.size == 0:
            raise UsageError(f"{name} file is empty")
        if pts.shape[1] != model.input_dim:
            raise UsageError(
                f"{name} dimension {pts.shape[1]} does not match model {model.input_dim}"
            )
        return pts

    ind = load_points(args.ind, "InD")
    ood = load_points(args.ood, "OOD")
    _echo({"checkpoint": args.checkpoint, "n_ind": ind.shape[0], "n_ood": ood.shape[0]})
    report = ood_report(model, ind, ood)
    out = _outdir(args)
    path = os.path.join(out, "metrics.json")
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    _echo({"written": path, "auroc": report["auroc"],
           "auc_pr_ind_positive": report["auc_pr_ind_positive"],
           "auc_pr_ood_positive": report["auc_pr_ood_positive"]})
    return EXIT_OK


def cmd_gen_data(args) -> int:
    import numpy as np

    from .experiments import gen_1d_mixture, gen_four_rings

    out = _outdir(args)
    if args.dataset == "onedim":
        ds = gen_1d_mixture(args.seed or 0)
    else:
        ds = gen_four_rings(args.n, args.seed or 0)
    _echo(ds.descriptor)
    path = os.path.join(out, f"{args.dataset}_data.csv")
    header = ",".join(f"x{i}" for i in range(ds.points.shape[1]))
    np.savetxt(path, ds.points, delimiter=",", header=header, comments="")
    _echo({"written": path, "n": int(ds.points.shape[0])})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="daebm",
        description="Diffusion-assisted EBM training, sampling, and diagnostics",
    )
    parser.add_argument("--threads", type=int, default=None,
                        help="cap BLAS threads (1 = bit-exact reruns)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and emit run artifacts")
    p.add_argument("--config", help="experiment config JSON")
    p.add_argument("--preset", help="named preset (see daebm.presets)")
    p.add_argument("--method", choices=("daebm", "ebm-persistent", "ebm-cd",
                                        "ebm-noise", "ebm-hybrid", "drl"))
    p.add_argument("--seed", type=int)
    p.add_argument("--scale", choices=("desk", "paper"), default="desk")
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="sample from a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mode", required=True, choices=("longrun", "post"))
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--steps", type=int, default=10_000)
    p.add_argument("--L", type=int, default=20)
    p.add_argument("--M", type=int, default=50)
    p.add_argument("--max-transitions", type=int, default=2_000)
    p.add_argument("--sigma", type=float, default=0.01)
    p.add_argument("--step-sizes", help="JSON array of per-level step sizes")
    p.add_argument("--start", help="CSV of starting points (longrun)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("diag", help="run a self-check and write its report")
    p.add_argument("kind", choices=("gradcheck", "invariance", "sams"))
    p.add_argument("--case", default="gaussian-halfvar")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_diag)

    p = sub.add_parser("ood", help="score InD vs OOD points with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--ind", required=True)
    p.add_argument("--ood", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_ood)

    p = sub.add_parser("gen-data", help="write a dataset CSV")
    p.add_argument("dataset", choices=("onedim", "fourring"))
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen_data)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK
    limiter = _limit_threads(args.threads)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    finally:
        if limiter is not None:
            limiter.unregister()


if __name__ == "__main__":
    sys.exit(main())
