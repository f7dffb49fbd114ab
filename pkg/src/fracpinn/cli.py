"""Command-line interface: solve, march, converge, and self-check commands."""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from .kernels import check_kernel_properties
from .mesh import MeshSpec, build_graded_mesh
from .metrics import Report, convergence_study, error_inf, error_l2, eval_grid, resolve_gamma
from .optimize import TrainConfig, train_inverse, train_marching, train_stagewise
from .problems import REGISTRY, make_problem
from .soe import SoeConstructionError, build_soe, build_soe_for_mesh


def _parse_config_file(path: str) -> dict:
    """Flat key = value lines; bracketed section headers are ignored."""
    values: dict = {}
    with open(path) as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line or line.startswith("["):
                continue
            if "=" not in line:
                raise ValueError(f"malformed config line: {raw.rstrip()}")
            key, val = (part.strip() for part in line.split("=", 1))
            values[key.replace("-", "_")] = val
    return values


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fracpinn",
        description="Forward/inverse solvers for nonlinear time-fractional PDEs "
        "on graded meshes with fast history compression.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, problem_arg=True):
        if problem_arg:
            p.add_argument("problem", choices=sorted(REGISTRY))
        p.add_argument("--alpha", type=float, default=None)
        p.add_argument("--gamma", default="2/alpha")
        p.add_argument("--levels", default="8")
        p.add_argument("--eps-soe", type=float, default=1e-8)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--config", default=None, help="key = value config file")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--report", choices=["json", "csv"], default="json")
        p.add_argument("--tol", type=float, default=1e-10)
        p.add_argument("--max-iters", type=int, default=2000)
        p.add_argument("--lr", type=float, default=1e-3)
        p.add_argument("--activation", choices=["sigmoid", "swish", "selu", "relu", "tanh", "xtanh"], default="swish")
        p.add_argument("--scale-n", type=float, default=3.0)
        p.add_argument("--mode", choices=["hard", "soft"], default=None)
        p.add_argument("--widths", default=None, help="comma-separated hidden widths")
        return p

    add_common(sub.add_parser("solve-forward", help="stage-wise residual training"))
    add_common(sub.add_parser("solve-inverse", help="joint parameter/state recovery"))
    add_common(sub.add_parser("march", help="level-by-level residual enforcement"))
    conv = add_common(sub.add_parser("converge", help="temporal convergence study"))
    conv.add_argument("--method", choices=["direct-scheme", "fast-scheme", "marching", "stagewise"],
                      default="marching")
    soe_p = add_common(sub.add_parser("soe-check", help="build and verify a kernel compression"), problem_arg=False)
    soe_p.add_argument("--dt-cutoff", type=float, default=1e-4)
    soe_p.add_argument("--horizon", type=float, default=1.0)
    add_common(sub.add_parser("kernel-check", help="verify kernel bound predicates"), problem_arg=False)
    bench = add_common(sub.add_parser("activations-bench", help="compare adaptive activations"))
    bench.add_argument("--runs", type=int, default=1)
    return parser


def _apply_config_defaults(args, argv):
    if args.config:
        file_vals = _parse_config_file(args.config)
        for key, val in file_vals.items():
            if not hasattr(args, key):
                continue
            # explicit command-line flags win over the config file
            if f"--{key.replace('_', '-')}" in argv or key in ("problem",):
                continue
            current = getattr(args, key)
            if current is not None:
                setattr(args, key, type(current)(val))
            else:
                for cast in (int, float, str):
                    try:
                        setattr(args, key, cast(val))
                        break
                    except ValueError:
                        continue
    if args.seed is None:
        args.seed = int(os.environ.get("FRACPINN_SEED", "0"))
    return args


def _train_config(args, alpha) -> TrainConfig:
    widths = None
    if args.widths:
        hidden = tuple(int(w) for w in str(args.widths).split(","))
        widths = (0,) + hidden + (1,)  # input width fixed up by the runner
    return TrainConfig(
        seed=args.seed,
        m_stage=args.max_iters,
        m_step=args.max_iters,
        eps_tol=args.tol,
        lr=args.lr,
        eps_soe=args.eps_soe,
        widths=widths,
        activation=args.activation,
        scale_n=args.scale_n,
    )


def _resolve_widths(config: TrainConfig, dim: int) -> TrainConfig:
    if config.widths and config.widths[0] == 0:
        config.widths = (dim + 1,) + config.widths[1:]
    return config


def _emit(report: Report, args) -> None:
    text = report.to_json() if args.report == "json" else report.to_csv()
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        suffix = "json" if args.report == "json" else "csv"
        path = os.path.join(args.out, f"report.{suffix}")
        with open(path, "w") as fh:
            fh.write(text + ("\n" if not text.endswith("\n") else ""))
        print(path)
    else:
        print(text)


def _emit_trace_csv(rows, header, args, name) -> None:
    if not args.out:
        return
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, name)
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(f"{v:.17g}" if isinstance(v, float) else str(v) for v in row) + "\n")


def _problem_and_mesh(args):
    kwargs = {}
    if args.alpha is not None:
        kwargs["alpha"] = args.alpha
    problem = make_problem(args.problem, **kwargs)
    if args.mode:
        problem.mode = args.mode
    K = int(str(args.levels).split(",")[0])
    gamma = resolve_gamma(args.gamma, problem.alpha)
    mesh = build_graded_mesh(MeshSpec(problem.horizon, K, gamma, problem.alpha))
    return problem, mesh, gamma


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        args = _apply_config_defaults(args, argv)
        return _dispatch(args)
    except SoeConstructionError as exc:
        print(json.dumps({"error": str(exc), "measured_error": exc.measured_error}), file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure -> machine-readable error
        print(json.dumps({"error": str(exc), "type": type(exc).__name__}), file=sys.stderr)
        return 1


def _dispatch(args) -> int:
    if args.command == "soe-check":
        alpha = args.alpha if args.alpha is not None else 0.5
        soe = build_soe(alpha, args.eps_soe, args.dt_cutoff, args.horizon)
        print(json.dumps(soe.certificate(), indent=2))
        return 0

    if args.command == "kernel-check":
        alpha = args.alpha if args.alpha is not None else 0.5
        K = int(str(args.levels).split(",")[0])
        gamma = resolve_gamma(args.gamma, alpha)
        mesh = build_graded_mesh(MeshSpec(1.0, K, gamma, alpha))
        result = check_kernel_properties(mesh, alpha)
        print(json.dumps({k: (bool(v) if k == "ok" else float(v)) for k, v in result.items()}, indent=2))
        return 0 if result["ok"] else 1

    if args.command == "converge":
        problem = make_problem(args.problem, **({"alpha": args.alpha} if args.alpha is not None else {}))
        k_list = [int(v) for v in str(args.levels).split(",")]
        config = _resolve_widths(_train_config(args, problem.alpha), problem.dim)
        report = convergence_study(problem, args.method, k_list, args.gamma, config)
        _emit(report, args)
        return 0

    problem, mesh, gamma = _problem_and_mesh(args)
    config = _resolve_widths(_train_config(args, problem.alpha), problem.dim)
    soe = build_soe_for_mesh(mesh, problem.alpha, config.eps_soe)
    started = time.perf_counter()

    if args.command == "march":
        from .metrics import marching_errors

        e_inf, e_2, result = marching_errors(problem, mesh, soe, config)
        report = Report(
            problem=problem.name, method="marching",
            config={"gamma": gamma, "levels": mesh.levels, "lr": config.lr,
                    "eps_soe": config.eps_soe, "alpha": problem.alpha},
            levels=[mesh.levels], e_inf=[e_inf], e_2=[e_2],
            soe_certificates=[soe.certificate()],
            timings=[time.perf_counter() - started], seed=args.seed,
        )
        _emit(report, args)
        _emit_trace_csv(result.trace, ["level", "iterations", "loss"], args, "march_trace.csv")
        return 0

    if args.command == "solve-forward":
        from .metrics import stagewise_errors

        e_inf, e_2, result = stagewise_errors(problem, mesh, soe, config)
        report = Report(
            problem=problem.name, method="stagewise",
            config={"gamma": gamma, "levels": mesh.levels, "lr": config.lr,
                    "eps_soe": config.eps_soe, "alpha": problem.alpha,
                    "activation": config.activation, "scale_n": config.scale_n},
            levels=[mesh.levels], e_inf=[e_inf], e_2=[e_2],
            soe_certificates=[soe.certificate()],
            timings=[time.perf_counter() - started], seed=args.seed,
        )
        _emit(report, args)
        _emit_trace_csv(result.trace, ["stage", "iterations", "loss"], args, "stage_trace.csv")
        return 0

    if args.command == "solve-inverse":
        from .metrics import stagewise_errors

        e_inf, e_2, result = stagewise_errors(problem, mesh, soe, config, inverse=True)
        report = Report(
            problem=problem.name, method="inverse",
            config={"gamma": gamma, "levels": mesh.levels, "lr": config.lr,
                    "eps_soe": config.eps_soe, "alpha": problem.alpha},
            levels=[mesh.levels], e_inf=[e_inf], e_2=[e_2],
            estimates=result.estimates,
            soe_certificates=[soe.certificate()],
            timings=[time.perf_counter() - started], seed=args.seed,
        )
        _emit(report, args)
        _emit_trace_csv(result.trace, ["stage", "iterations", "loss"], args, "inverse_trace.csv")
        return 0

    if args.command == "activations-bench":
        from .autodiff import grad_params
        from .constraints import build_assembly, default_collocation, forward_loss
        from .optimize import adam_step, init_adam, make_trial

        colloc = default_collocation(problem, mesh, config.n_interior_axis, seed=args.seed)
        assembly = build_assembly(problem, mesh, soe, colloc)
        rows = []
        for kind in ("sigmoid", "swish", "relu", "tanh", "selu", "xtanh"):
            cfg = _resolve_widths(_train_config(args, problem.alpha), problem.dim)
            cfg.activation = kind
            trial = make_trial(problem, cfg)
            leaves = trial.net.params()
            state = init_adam(leaves, cfg.lr)
            final = float("nan")
            for _ in range(cfg.m_stage):
                loss = forward_loss(trial, assembly)
                final = float(loss.value)
                adam_step(state, leaves, grad_params(loss, leaves))
            rows.append((kind, cfg.m_stage, final))
            print(f"{kind}: final loss {final:.6e}")
        _emit_trace_csv(rows, ["activation", "iterations", "loss"], args, "activations.csv")
        return 0

    raise ValueError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
