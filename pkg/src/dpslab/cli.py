"""Command line front-end: ``dpslab <command> [options]``.

Every command writes its files into ``--out`` (default: current directory)
and finishes by writing ``manifest.json`` there.  Exit codes: 0 success,
2 validation, 3 convergence, 4 capacity, 5 infeasibility.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .asymptotics import asymptotic_report
from .ctmc import DEFAULT_MAX_SWEEPS, DEFAULT_TOL, solve_stationary
from .direction import Mode, most_likely_direction, reproduce_table1
from .errors import DpsError, Infeasible, ValidationError
from .model import Direction, DpsModel, lattice_point, load_model
from .product_form import WEIGHT_RTOL, characterization_check
from .simulate import SimConfig, simulate, write_run_metadata

EXIT_OK = 0


def fmt(x) -> str:
    """Six significant digits for human-readable tables."""
    if x is None:
        return "-"
    if isinstance(x, (list, tuple, np.ndarray)):
        return "(" + ", ".join(fmt(v) for v in x) + ")"
    return f"{float(x):.6g}"


class Run:
    """Collects output paths and parameters; writes the manifest last."""

    def __init__(self, command: str, args: argparse.Namespace):
        self.command = command
        self.out = Path(args.out)
        self.model_source = getattr(args, "model", None)
        self.parameters: dict = {}
        self.outputs: list[str] = []
        self.started = time.perf_counter()
        self.out.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        p = self.out / name
        self.outputs.append(str(p))
        return p

    def write_json(self, name: str, doc) -> Path:
        p = self.path(name)
        with open(p, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")
        return p

    def write_csv(self, name: str, header: Sequence[str], rows) -> Path:
        p = self.path(name)
        with open(p, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
        return p

    def manifest(self, exit_code: int) -> Path:
        doc = {
            "command": self.command,
            "model_source": None if self.model_source is None else str(self.model_source),
            "parameters": self.parameters,
            "outputs": list(self.outputs),
            "tool_version": __version__,
            "wall_time": time.perf_counter() - self.started,
            "exit_code": exit_code,
        }
        p = self.out / "manifest.json"
        with open(p, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")
        return p


def _sorted_by_weight(model: DpsModel) -> tuple[DpsModel, list[int], bool]:
    """Reorder classes by ascending weight.

    Returns the reordered model, the original 0-based index of each new
    class and whether all weights are equal.  Ties between some but not all
    weights are refused.
    """
    if model.equal_weights():
        return model, list(range(model.class_count)), True
    order = sorted(range(model.class_count), key=lambda k: model.weights[k])
    g = [model.weights[k] for k in order]
    if any(a == b for a, b in zip(g, g[1:])):
        raise ValidationError(
            f"weights {model.weights} contain ties; asymptotic constants need strictly "
            "increasing weights (or all weights equal)"
        )
    return model.permuted(order), order, False


def _direction(text: str | None, model: DpsModel, order: Sequence[int] | None = None) -> Direction:
    if text is None:
        gam = Direction(tuple(r / model.total_load for r in model.loads))
    else:
        gam = Direction.parse(text)
    if len(gam) != model.class_count:
        raise ValidationError(f"--gamma has {len(gam)} components, model has {model.class_count}")
    if order is not None:
        gam = Direction(tuple(gam[k] for k in order))
    return gam


def _class_order(order: Sequence[int]) -> list[int]:
    return [k + 1 for k in order]


def cmd_solve(args, run: Run) -> int:
    model = load_model(args.model)
    run.parameters.update(nmax=args.nmax, tol=args.tol, max_sweeps=args.max_sweeps, format=args.format)
    P = solve_stationary(model, args.nmax, args.tol, max_sweeps=args.max_sweeps)
    if args.format == "csv":
        P.to_csv(run.path("distribution.csv"))
    else:
        P.to_json(run.path("distribution.json"))
    run.write_json("solve_summary.json", {
        "states": len(P),
        "level": P.level,
        "residual_norm": P.residual_norm,
        "truncation_mass_bound": P.truncation_mass_bound,
        "method": P.metadata.get("method"),
        "total_probability": float(P.probs.sum()),
    })
    print(f"states            {len(P)}")
    print(f"residual_norm     {fmt(P.residual_norm)}")
    print(f"boundary mass     {fmt(P.truncation_mass_bound)}")
    print(f"P(0)              {fmt(P.probs[0])}")
    return EXIT_OK


def cmd_simulate(args, run: Run) -> int:
    model = load_model(args.model)
    cfg = SimConfig(args.horizon, args.seed, args.warmup, args.guard, args.batches)
    run.parameters.update(
        horizon=cfg.horizon, warmup=cfg.warmup, seed=cfg.seed,
        max_population_guard=cfg.max_population_guard, batches=cfg.batches, format=args.format,
    )
    sim = simulate(model, cfg)
    if args.format == "csv":
        sim.to_csv(run.path("empirical.csv"))
    else:
        sim.to_json(run.path("empirical.json"))
    write_run_metadata(run.path("run.json"), sim)
    p0, se0 = sim.empty_fraction()
    pop, sep = sim.mean_population()
    print(f"transitions       {sim.transitions}")
    print(f"P(0)              {fmt(p0)} +- {fmt(se0)}   (1 - rho = {fmt(1 - model.total_load)})")
    print(f"mean population   {fmt(pop)} +- {fmt(sep)}")
    for i in range(model.class_count):
        th, se = sim.throughput(i)
        print(f"throughput[{i + 1}]     {fmt(th)} +- {fmt(se)}   (lambda = {fmt(model.arrival_rates[i])})")
    return EXIT_OK


def _report_table(report) -> None:
    rows = [
        ("theta1", report.theta1), ("theta2", report.theta2),
        ("delta1", report.delta1), ("delta2", report.delta2),
        ("alpha1", report.alpha1), ("alpha2", report.alpha2),
        ("margins", report.margins), ("delta", report.delta_mixed),
    ]
    for name, vals in rows:
        print(f"{name:<12}{fmt(vals)}")
    print(f"{'c':<12}{fmt(report.c)}")
    print(f"{'decay_rate':<12}{fmt(report.decay_rate)}")
    print(f"{'feasible':<12}{report.feasible}")
    print(f"{'degenerate':<12}{report.degenerate}")


def cmd_asymptotics(args, run: Run) -> int:
    raw = load_model(args.model)
    model, order, _ = _sorted_by_weight(raw)
    gam = _direction(args.gamma, raw, order)
    run.parameters.update(gamma=list(gam.gammas), class_order=_class_order(order))
    report = asymptotic_report(model, gam)
    doc = report.to_dict()
    doc["class_order"] = _class_order(order)
    run.write_json("asymptotics.json", doc)
    _report_table(report)
    if not report.feasible:
        print("error: direction is infeasible (some delta2 >= 1)", file=sys.stderr)
        return Infeasible.exit_code
    if report.error is not None:
        print(f"error: {report.error}", file=sys.stderr)
        return Infeasible.exit_code
    return EXIT_OK


def cmd_characterize(args, run: Run) -> int:
    model = load_model(args.model)
    run.parameters.update(weight_rtol=args.weight_rtol)
    verdict = characterization_check(model, args.weight_rtol)
    run.write_json("characterization.json", verdict.to_dict())
    if verdict.product_form:
        print("product form: yes (all weights equal)")
    else:
        w = verdict.witness
        print(f"product form: no; classes {w.i + 1} and {w.l + 1} give path values {fmt(w.path_values)}")
    return EXIT_OK


def cmd_table1(args, run: Run) -> int:
    run.parameters.update(mode=args.mode, format=args.format, grid=not args.no_grid)
    rows = reproduce_table1(args.mode, grid=not args.no_grid)
    header = ["g2", "gamma1", "gamma2", "objective", "mode",
              "published_gamma1", "published_gamma2", "deviation", "grid_gamma1", "flag"]
    data = [
        [r.g2, r.gamma1, r.gamma2, r.objective, r.mode.value, r.published[0], r.published[1],
         r.deviation, "" if r.grid_gamma1 is None else r.grid_gamma1, "DISCREPANCY" if r.flagged else ""]
        for r in rows
    ]
    if args.format == "csv":
        run.write_csv("table1.csv", header, data)
    else:
        run.write_json("table1.json", [dict(zip(header, d)) for d in data])
    print(f"{'g2':>6} {'gamma1':>10} {'gamma2':>10} {'objective':>10} {'published':>14} {'deviation':>10}")
    for r in rows:
        print(f"{fmt(r.g2):>6} {fmt(r.gamma1):>10} {fmt(r.gamma2):>10} {fmt(r.objective):>10} "
              f"{fmt(r.published):>14} {fmt(r.deviation):>10}{'  !' if r.flagged else ''}")
    return EXIT_OK


def cmd_optimize(args, run: Run) -> int:
    raw = load_model(args.model)
    model, order, _ = _sorted_by_weight(raw)
    run.parameters.update(mode=args.mode, tol=args.tol, class_order=_class_order(order), format=args.format)
    sol = most_likely_direction(model, args.mode, tol=args.tol)
    doc = sol.to_dict()
    doc["class_order"] = _class_order(order)
    if args.format == "json":
        run.write_json("optimum.json", doc)
    else:
        I = model.class_count
        run.write_csv(
            "optimum.csv",
            [f"gamma{k + 1}" for k in range(I)] + ["objective", "mode"],
            [list(sol.gamma_opt.gammas) + [sol.objective, sol.constraint_mode.value]],
        )
    print(f"gamma*      {fmt(sol.gamma_opt.gammas)}")
    print(f"objective   {fmt(sol.objective)}")
    print(f"active      {', '.join(sol.active_constraints) or 'none'}")
    return EXIT_OK


def cmd_validate(args, run: Run) -> int:
    raw = load_model(args.model)
    model, order, degenerate = _sorted_by_weight(raw)
    gam = _direction(args.gamma, raw, order)
    N_list = [int(v) for v in args.N_list.split(",") if v.strip()]
    run.parameters.update(
        gamma=list(gam.gammas), N_list=N_list, nmax=args.nmax, tol=args.tol,
        class_order=_class_order(order),
    )
    report = asymptotic_report(model, gam)
    if not report.feasible or report.delta_mixed is None:
        run.write_json("asymptotics.json", report.to_dict())
        print("error: direction is infeasible; nothing solved", file=sys.stderr)
        return Infeasible.exit_code
    for N in N_list:
        if sum(lattice_point(gam, N)) + 1 > args.nmax:
            raise ValidationError(f"N = {N} leaves the truncation N_max = {args.nmax}")
    P = solve_stationary(model, args.nmax, args.tol)
    rows = []
    trend = {}
    for i in range(model.class_count):
        errs = []
        for N in N_list:
            n = lattice_point(gam, N)
            ratio = P.mass(n.plus(i)) / P.mass(n)
            delta = report.delta_mixed[i]
            exact = ""
            if degenerate:
                exact = model.loads[i] * (n.total + 1) / (n[i] + 1)
            errs.append(abs(ratio - delta))
            rows.append([N, i + 1, ratio, delta, abs(ratio - delta), exact])
        trend[i + 1] = "decreasing" if all(b < a for a, b in zip(errs, errs[1:])) else "not decreasing"
    run.write_csv("validate.csv", ["N", "class", "ratio", "delta", "error", "exact"], rows)
    run.write_json("validate.json", {
        "class_order": _class_order(order),
        "residual_norm": P.residual_norm,
        "truncation_mass_bound": P.truncation_mass_bound,
        "trend": {str(k): v for k, v in trend.items()},
        "rows": [dict(zip(["N", "class", "ratio", "delta", "error", "exact"], r)) for r in rows],
    })
    print(f"{'N':>5} {'class':>5} {'ratio':>10} {'delta':>10} {'error':>10}")
    for r in rows:
        print(f"{r[0]:>5} {r[1]:>5} {fmt(r[2]):>10} {fmt(r[3]):>10} {fmt(r[4]):>10}")
    for k, v in trend.items():
        print(f"class {k}: error {v}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpslab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, func: Callable, help: str, model: bool = True) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help)
        if model:
            p.add_argument("--model", required=True, help="model JSON file")
        p.add_argument("--out", default=".", help="output directory (default: .)")
        p.set_defaults(func=func)
        return p

    p = add("solve", cmd_solve, "stationary distribution on |n| <= N_max")
    p.add_argument("--nmax", type=int, default=60)
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.add_argument("--max-sweeps", type=int, default=DEFAULT_MAX_SWEEPS)
    p.add_argument("--format", choices=("csv", "json"), default="csv")

    p = add("simulate", cmd_simulate, "event-by-event simulation")
    p.add_argument("--horizon", type=float, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--warmup", type=float, default=None, help="default: 10%% of horizon")
    p.add_argument("--guard", type=int, default=100_000, help="population guard")
    p.add_argument("--batches", type=int, default=20)
    p.add_argument("--format", choices=("csv", "json"), default="csv")

    p = add("asymptotics", cmd_asymptotics, "asymptotic constants along a direction")
    p.add_argument("--gamma", help="comma separated direction (default: loads / total load)")

    p = add("characterize", cmd_characterize, "product-form characterization")
    p.add_argument("--weight-rtol", type=float, default=WEIGHT_RTOL)

    p = add("table1", cmd_table1, "optimal directions for the published weight settings", model=False)
    p.add_argument("--mode", choices=[m.value for m in Mode], default="standard")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--no-grid", action="store_true", help="skip the grid-search column")

    p = add("optimize", cmd_optimize, "most likely direction")
    p.add_argument("--mode", choices=[m.value for m in Mode], default="standard")
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--format", choices=("csv", "json"), default="json")

    p = add("validate", cmd_validate, "solver ratios against the limit ratios")
    p.add_argument("--gamma", help="comma separated direction (default: loads / total load)")
    p.add_argument("--N-list", dest="N_list", default="10,20,40")
    p.add_argument("--nmax", type=int, default=120)
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        run = Run(args.command, args)
    except OSError as exc:
        print(f"error: cannot create output directory: {exc}", file=sys.stderr)
        return ValidationError.exit_code
    code = 1
    try:
        code = args.func(args, run)
    except DpsError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        code = exc.exit_code
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = ValidationError.exit_code
    finally:
        run.manifest(code)
    return code


if __name__ == "__main__":
    sys.exit(main())
