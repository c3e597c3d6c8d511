"""Command line entry point: ``lshawkes <subcommand> ...``.

Exit status is 0 on success, 1 on a usage error and 2 when the requested
computation fails.  Components are 1-based on the command line and in files.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .estimate import EstimatorConfig, fit_local, fit_stationary
from .events import load_events, save_events
from .harness import ExperimentConfig, run_experiment, validate_pipeline
from .model import load_model
from .moments import moment_table, save_moment_table
from .simulate import RngStream, simulate_cluster, simulate_thinning
from .splines import SplineBasis, project_truth

__all__ = ["main", "build_parser"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _write_json(obj, path) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _cmd_simulate(args) -> None:
    model = load_model(args.model)
    engine = simulate_cluster if args.engine == "cluster" else simulate_thinning
    stream = engine(model, T=args.T, rng=RngStream(args.seed, args.stream), L=args.warmup)
    save_events(stream, args.out)


def _eval_csv(fit, n: int, path) -> None:
    u = np.linspace(0.0, fit.basis.A, n)
    vals = fit.mu_star(u)
    lines = ["u,m,mu_hat"]
    for m in range(vals.shape[1]):
        lines.extend(f"{ui!r},{m + 1},{v!r}" for ui, v in zip(u.tolist(), vals[:, m].tolist()))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _cmd_estimate(args) -> None:
    stream = load_events(args.events)
    A = load_model(args.model).A if args.model else args.A
    target = args.target - 1
    if args.stationary:
        basis = SplineBasis(A, args.order, args.J, stream.d)
        fit = fit_stationary(stream, basis, target, args.ridge)
    else:
        cfg = EstimatorConfig(x0=args.x0, h=args.h, n_basis=args.J, spline_order=args.order,
                              K_order=args.K, target=target, smoothing_kernel=args.kernel,
                              quadrature=args.quadrature, ridge=args.ridge,
                              boundary_mode=args.boundary_mode)
        fit = fit_local(stream, cfg, A)
    out = fit.to_dict()
    out["config"] = {**out["config"], "target": args.target, "events": str(args.events)}
    _write_json(out, args.out)
    if args.eval_grid:
        path = args.eval_out or Path(args.out).with_suffix(".eval.csv")
        _eval_csv(fit, args.eval_grid, path)


def _cmd_moments(args) -> None:
    model = load_model(args.model)
    if args.T is not None:
        model = model.with_horizon(args.T)
    x = np.linspace(0.0, 1.0, args.n_x)
    table = moment_table(model, x, tol=args.tol)
    save_moment_table(table, args.out, args.chi_out, chi_every=args.chi_every)


def _cmd_experiment(args) -> None:
    raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
    if args.seed is not None:
        raw["base_seed"] = args.seed
    if args.outputs:
        raw["outputs"] = args.outputs
    if args.workers:
        raw["workers"] = args.workers
    cfg = ExperimentConfig.from_dict(raw)
    if not cfg.outputs:
        raise ValueError("experiment needs an outputs directory (config or --outputs)")
    report = run_experiment(cfg)
    errors = sum(r["status"] != "ok" for r in report.rows)
    print(f"{len(report.rows)} rows ({errors} errors) written to {cfg.outputs}")


def _cmd_validate(args) -> None:
    model = load_model(args.model)
    report = validate_pipeline(model, args.T or model.T, args.replicates, seed=args.seed)
    _write_json(report.as_dict(), args.out)
    for check in report.checks:
        print(f"{check['name']}: {'pass' if check['passed'] else 'FAIL'}", file=sys.stderr)


def _cmd_project(args) -> None:
    model = load_model(args.model)
    basis = SplineBasis(model.A, args.order, args.J, model.d)
    proj = project_truth(model, basis, args.x0, args.h, args.K, args.target - 1)
    _write_json({"theta": proj.theta.tolist(), "epsilon": proj.epsilon,
                 "epsilon_nu": proj.epsilon_nu, "epsilon_mu": proj.epsilon_mu}, args.out)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lshawkes", description="Locally stationary Hawkes processes.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="simulate an event stream")
    s.add_argument("--model", required=True, help="model JSON file or preset name")
    s.add_argument("--T", type=float)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--stream", type=int, default=0)
    s.add_argument("--engine", choices=("cluster", "thinning"), default="cluster")
    s.add_argument("--warmup", type=float, help="warm-up length (default 20 A)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_simulate)

    e = sub.add_parser("estimate", help="fit one intensity row")
    e.add_argument("--events", required=True)
    e.add_argument("--x0", type=float, default=0.5)
    e.add_argument("--h", type=float, default=0.2)
    e.add_argument("--J", type=int, default=8, help="splines per component")
    e.add_argument("--order", type=int, default=4)
    e.add_argument("--K", type=int, default=1, help="local polynomial order")
    e.add_argument("--target", type=int, default=1, help="1-based component")
    g = e.add_mutually_exclusive_group()
    g.add_argument("--A", type=float, default=1.0, help="kernel support")
    g.add_argument("--model", help="take the kernel support from this model")
    e.add_argument("--kernel", default="epanechnikov",
                   choices=("epanechnikov", "triangular", "uniform"))
    e.add_argument("--quadrature", choices=("gauss", "midpoint"), default="gauss")
    e.add_argument("--boundary-mode", choices=("error", "truncate"), default="error")
    e.add_argument("--ridge", type=float, default=0.0)
    e.add_argument("--stationary", action="store_true")
    e.add_argument("--eval-grid", type=int, default=0, metavar="N")
    e.add_argument("--eval-out")
    e.add_argument("--seed", type=int, default=0, help="accepted for uniformity; fits are deterministic")
    e.add_argument("--out", required=True)
    e.set_defaults(func=_cmd_estimate)

    m = sub.add_parser("moments", help="tabulate Lambda (and chi)")
    m.add_argument("--model", required=True)
    m.add_argument("--tol", type=float, default=1e-6)
    m.add_argument("--T", type=float)
    m.add_argument("--n-x", type=int, default=101)
    m.add_argument("--out", required=True)
    m.add_argument("--chi-out")
    m.add_argument("--chi-every", type=int, default=1)
    m.add_argument("--seed", type=int, default=0, help="accepted for uniformity; no randomness")
    m.set_defaults(func=_cmd_moments)

    x = sub.add_parser("experiment", help="run a replicated sweep from a JSON config")
    x.add_argument("--config", required=True)
    x.add_argument("--outputs")
    x.add_argument("--seed", type=int, help="overrides base_seed")
    x.add_argument("--workers", type=int)
    x.set_defaults(func=_cmd_experiment)

    v = sub.add_parser("validate", help="cross-check simulators and moment oracle")
    v.add_argument("--model", required=True)
    v.add_argument("--T", type=float)
    v.add_argument("--replicates", type=int, default=50)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out", default="-")
    v.set_defaults(func=_cmd_validate)

    r = sub.add_parser("project", help="project the truth onto the local sieve")
    r.add_argument("--model", required=True)
    r.add_argument("--x0", type=float, default=0.5)
    r.add_argument("--h", type=float, default=0.2)
    r.add_argument("--J", type=int, default=8)
    r.add_argument("--order", type=int, default=4)
    r.add_argument("--K", type=int, default=1)
    r.add_argument("--target", type=int, default=1)
    r.add_argument("--seed", type=int, default=0, help="accepted for uniformity; no randomness")
    r.add_argument("--out", default="-")
    r.set_defaults(func=_cmd_project)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        args.func(args)
    except Exception as exc:
        print(f"lshawkes {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
