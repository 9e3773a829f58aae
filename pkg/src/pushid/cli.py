"""Command-line harness: generate datasets, identify parameters, benchmark, simulate.

Every output file starts with ``#`` comment lines carrying the tool version
and the full invocation.  Wall-clock columns are written only with
``--timing`` so that a fixed seed reproduces byte-identical files.

Exit codes: 0 success, 1 usage error, 2 data or validation error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import shlex
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, dynamics, ident, lcp, scen
from .model import ObjectParams, pose_error

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
METHODS = ("gradient", "random", "weighted", "finitediff")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _header(argv) -> str:
    return (f"# pushid {__version__}\n"
            f"# invocation: {shlex.join(['pushid', *argv])}\n")


def _num(x) -> str:
    return "" if x is None else repr(float(x))


def _write_table(path, argv, rows, columns, notes=()):
    buf = io.StringIO()
    buf.write(_header(argv))
    for note in notes:
        buf.write(f"# {note}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    writer.writerows(rows)
    Path(path).write_text(buf.getvalue())


def _write_json(path, argv, payload):
    doc = {"provenance": {"tool": f"pushid {__version__}",
                          "invocation": shlex.join(["pushid", *argv])}, **payload}
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


# -- generate --------------------------------------------------------------------

def cmd_generate(args, argv):
    sc = scen.make_archetype(args.archetype, args.k, seed=args.seed, n_train=args.n_train,
                             n_test=args.n_test)
    ds = scen.generate_data(sc)
    scen.save_dataset(ds, args.out)
    lengths = ",".join(str(t.T) for t in ds.train + ds.test)
    print(f"archetype={sc.archetype} k={sc.grid.k} train={len(ds.train)} test={len(ds.test)} "
          f"steps={lengths} -> {args.out}")
    return EXIT_OK


# -- identify --------------------------------------------------------------------

def _config(args, ds) -> ident.IdentConfig:
    total = ds.scenario.total_mass
    if total is None and ds.scenario.true_params is not None:
        total = float(ds.scenario.true_params.masses.sum())
    return ident.IdentConfig(
        learning_rate=args.learning_rate, loss_threshold=args.loss_threshold,
        max_epochs=args.max_epochs, seed=args.seed, identify_mass=args.identify_mass,
        mass_rate_scale=args.mass_rate_scale, mode=args.mode,
        total_mass=total if total is not None else 1.0, eval_every=args.eval_every)


def run_method(method, ds, config, budget=None, fd_step=1e-4) -> ident.IdentReport:
    """One identifier on a dataset; ``budget`` caps the simulation count."""
    grid = ds.scenario.grid
    if budget is not None and budget < 1:
        raise ValueError("budget must be at least one simulation")
    if method == "gradient":
        if budget is not None:
            config = replace(config, max_epochs=min(config.max_epochs, budget))
        return ident.identify_gradient(grid, ds.train, config, test=ds.test)
    if method == "finitediff":
        if budget is not None:
            config = replace(config, max_epochs=max(config.max_epochs, budget))
        return ident.identify_finite_diff(grid, ds.train, config, fd_step, test=ds.test,
                                          budget=budget)
    n = budget if budget is not None else config.max_epochs
    if method == "random":
        return ident.identify_random(grid, ds.train, n, config.seed, config, test=ds.test)
    if method == "weighted":
        return ident.identify_weighted(grid, ds.train, n, config.seed, config, test=ds.test)
    raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")


def _report_rows(report, timing):
    tests = {c.epoch: c for c in report.checkpoints}
    for i, (loss, sims) in enumerate(zip(report.loss_history, report.sim_history), start=1):
        c = tests.get(i)
        row = [i, _num(loss), sims, _num(c.test_error) if c else ""]
        if timing:
            row.append(_num(c.wall_time) if c else "")
        yield row


def _heat_rows(grid, params: ObjectParams):
    product = params.masses * params.frictions
    for (x, y), v in zip(grid.cell_centers, product):
        yield [_num(x), _num(y), _num(v)]


def _params_payload(params: ObjectParams):
    return {"params": {"masses": params.masses.tolist(), "inertias": params.inertias.tolist(),
                       "frictions": params.frictions.tolist()}}


def cmd_identify(args, argv):
    ds = scen.load_dataset(args.dataset)
    config = _config(args, ds)
    diverged = None
    try:
        report = run_method(args.method, ds, config, args.budget, args.fd_step)
    except ident.IdentificationDiverged as exc:
        report, diverged = exc.report, exc
    columns = ["epoch", "loss", "sim_count", "test_error"] + (["wall_time"] if args.timing else [])
    notes = [f"method: {report.method}", f"sim_count: {report.sim_count}",
             f"test_error: {_num(report.test_error)}", f"diverged: {report.diverged}"]
    if args.timing:
        notes.append(f"wall_time: {_num(report.wall_time)}")
    _write_table(args.out, argv, _report_rows(report, args.timing), columns, notes)
    if args.heatmap:
        _write_table(args.heatmap, argv, _heat_rows(ds.scenario.grid, report.final_params),
                     ["cell_x", "cell_y", "mass_friction"])
    if args.params_out:
        _write_json(args.params_out, argv, _params_payload(report.final_params))
    if diverged is not None:
        print(f"identification diverged: {diverged}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"method={report.method} epochs={report.epochs} sims={report.sim_count} "
          f"loss={report.loss_history[-1]:.6g} test_error={report.test_error}")
    return EXIT_OK


# -- benchmark -------------------------------------------------------------------

def _bench_one(job):
    method, ds, config, budget, fd_step = job
    try:
        return method, run_method(method, ds, config, budget, fd_step), None
    except ident.IdentificationDiverged as exc:
        return method, exc.report, f"diverged: {exc}"
    except Exception as exc:  # recorded per row; other methods continue
        return method, None, f"{type(exc).__name__}: {exc}"


def cmd_benchmark(args, argv):
    if args.budget < 1:
        raise ValueError("budget must be at least one simulation")
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    bad = [m for m in methods if m not in METHODS]
    if bad or not methods:
        raise UsageError(f"unknown methods {bad}; choose from {', '.join(METHODS)}")
    ds = scen.load_dataset(args.dataset)
    config = _config(args, ds)
    jobs = [(m, ds, config, args.budget, args.fd_step) for m in methods]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_bench_one, jobs))
    else:
        results = [_bench_one(j) for j in jobs]
    rows = []
    for method, report, problem in results:
        status = problem or "ok"
        if report is None:
            rows.append([method, "", "", "", ""] + ([""] if args.timing else []) + [status])
            continue
        for c in report.checkpoints:
            row = [method, c.epoch, c.sim_count, _num(c.loss), _num(c.test_error)]
            if args.timing:
                row.append(_num(c.wall_time))
            rows.append(row + [status])
    columns = (["method", "epoch", "sim_count", "loss", "test_error"]
               + (["wall_time"] if args.timing else []) + ["status"])
    _write_table(args.out, argv, rows, columns, [f"budget: {args.budget}"])
    for method, report, problem in results:
        final = report.test_error if report is not None else None
        print(f"{method:10s} final_test_error={final} {problem or ''}".rstrip())
    return EXIT_OK


# -- simulate --------------------------------------------------------------------

def _load_params(path) -> ObjectParams:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
        doc = doc.get("params", doc)
        return scen.params_from_doc(doc)
    except (json.JSONDecodeError, KeyError, TypeError, AttributeError) as exc:
        raise scen.DatasetError(f"malformed params file {path}: {exc}") from exc


def cmd_simulate(args, argv):
    ds = scen.load_dataset(args.dataset)
    params = _load_params(args.params)
    grid = ds.scenario.grid
    params.check_grid(grid)
    rows, errors, predicted = [], [], []
    for i, traj in enumerate(ds.test):
        sim = dynamics.rollout(grid, params, traj.state(0), scen.split_actions(traj), traj.dt)
        per_cell = np.linalg.norm(sim.final.positions - traj.final.positions, axis=1)
        rows.extend([i, c, _num(e)] for c, e in enumerate(per_cell))
        errors.append(pose_error(sim.final, traj.final))
        predicted.append(sim.states.tolist())
    mean = float(np.mean(errors)) if errors else 0.0
    _write_table(args.out, argv, rows, ["trajectory", "cell", "error"],
                 [f"mean_error: {_num(mean)}"])
    if args.predicted:
        _write_json(args.predicted, argv, {"trajectories": predicted})
    print(f"test trajectories={len(errors)} mean_error={mean:.6g}")
    return EXIT_OK


# -- entry point -----------------------------------------------------------------

def _add_ident_flags(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--learning-rate", type=float, default=0.5)
    p.add_argument("--loss-threshold", type=float, default=1e-6)
    p.add_argument("--max-epochs", type=int, default=500)
    p.add_argument("--identify-mass", action="store_true", help="identify cell masses too")
    p.add_argument("--mass-rate-scale", type=float, default=1.0)
    p.add_argument("--mode", choices=ident.MODES, default="rigid")
    p.add_argument("--fd-step", type=float, default=1e-4, help="finite-difference step")
    p.add_argument("--eval-every", type=int, default=10,
                   help="held-out evaluation interval in simulations")
    p.add_argument("--timing", action="store_true", help="add wall-clock columns")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pushid", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"pushid {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="synthesize a dataset from an archetype")
    g.add_argument("--archetype", choices=scen.ARCHETYPES, required=True)
    g.add_argument("--k", type=int, default=scen.DEFAULT_K, help="target cell count, 4..200")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n-train", type=int, default=4)
    g.add_argument("--n-test", type=int, default=12)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    i = sub.add_parser("identify", help="run one identifier on a dataset")
    i.add_argument("dataset")
    i.add_argument("--method", choices=METHODS, default="gradient")
    i.add_argument("--budget", type=int, default=None, help="simulation budget")
    i.add_argument("--out", required=True, help="report table")
    i.add_argument("--heatmap", help="per-cell mass x friction table")
    i.add_argument("--params-out", help="identified parameters (JSON)")
    _add_ident_flags(i)
    i.set_defaults(func=cmd_identify)

    b = sub.add_parser("benchmark", help="all methods under one simulation budget")
    b.add_argument("dataset")
    b.add_argument("--budget", type=int, required=True)
    b.add_argument("--methods", default=",".join(METHODS))
    b.add_argument("--jobs", type=int, default=1, help="run methods in parallel processes")
    b.add_argument("--out", required=True)
    _add_ident_flags(b)
    b.set_defaults(func=cmd_benchmark)

    s = sub.add_parser("simulate", help="roll out parameters on the test pushes")
    s.add_argument("dataset")
    s.add_argument("--params", required=True)
    s.add_argument("--out", required=True, help="per-cell error table")
    s.add_argument("--predicted", help="predicted state sequences (JSON)")
    s.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        return args.func(args, argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except (lcp.LcpConvergenceError, dynamics.SimulationError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
