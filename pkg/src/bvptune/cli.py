"""Command line front end: ``bvptune <command> [options]``.

Every option can also come from an INI-style config file passed with
``--config``. Keys are option names (``n_per_case`` or ``n-per-case``);
the ``[DEFAULT]`` section applies to all commands and a section named after
a command applies to that command only. Flags given on the command line win.

Exit status is 0 on success, 2 for usage and I/O errors and 1 for anything
else; failures print a single diagnostic line on stderr.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .settings import SETTING_NAMES, SETTING_RANGES, SolverSettings
from .testbench import ALL_CASES, CALIBRATION, get_problem

log = logging.getLogger("bvptune")

_RANGES_TEXT = "solver settings (name: range, scale, default):\n" + "\n".join(
    f"  {r.name}: [{r.lower:g}, {r.upper:g}] {r.scale}, default {r.default}" if r.scale != "boolean" else f"  {r.name}: true/false, default {str(r.default).lower()}"
    for r in SETTING_RANGES
)


class UsageError(Exception):
    pass


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {v}")
    return v


def _fraction(text: str) -> float:
    v = float(text)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1), got {v}")
    return v


def _cases(text: str) -> list[str]:
    if text.strip().lower() == "all":
        return [c.value for c in ALL_CASES]
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            get_problem(part)
        except KeyError:
            raise argparse.ArgumentTypeError(f"unknown test case {part!r}") from None
        out.append(part if part == CALIBRATION else get_problem(part).id)
    if not out:
        raise argparse.ArgumentTypeError("no test cases given")
    return out


def _sizes(text: str) -> list[int]:
    return [_positive_int(p) for p in text.split(",") if p.strip()]


# --- commands ---------------------------------------------------------------------


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_problems(args) -> int:
    for case in ALL_CASES:
        p = get_problem(case)
        params = ", ".join(f"{k}={v:g}" for k, v in p.parameters.items())
        kind = "linear" if p.is_linear else "nonlinear"
        print(f"{case.value:4s} {kind:9s} dim={p.dimension} interval={p.interval} {params}  {p.description}")
    return 0


def cmd_generate(args) -> int:
    from .dataset import generate, save_csv

    out = _out_dir(args)
    t0 = time.perf_counter()
    ds = generate(args.cases, args.n, args.seed, args.workers)
    path = save_csv(ds, out / args.name)
    counts = ds.counts()
    for case in ds.cases:
        rate = float(np.mean(ds.for_case(case).success))
        print(f"{case}: {counts[case]} rows, success rate {rate:.3f}")
    print(f"wrote {len(ds)} rows to {path} in {time.perf_counter() - t0:.1f} s")
    return 0


def cmd_train(args) -> int:
    from .dataset import load_csv, save_csv, split
    from .surrogate import evaluate, train_classifier, train_regressors
    from .tune import TuneSession

    ds = load_csv(args.data)
    train, test = split(ds, args.test_fraction, args.seed)
    out = _out_dir(args)
    save_csv(train, out / "train.csv")
    save_csv(test, out / "test.csv")
    clf = train_classifier(train, args.classifier, seed=args.seed, decision_threshold=args.threshold)
    regs = train_regressors(train, args.regressor_cases, args.regressor, seed=args.seed)
    session = TuneSession(
        clf,
        regs,
        budget=args.budget,
        seed=args.seed,
        metadata={"data": str(args.data), "test_fraction": args.test_fraction, "train_rows": len(train), "test_rows": len(test)},
    )
    session.save(out / "session")
    report = evaluate(clf, regs, test)
    report.save(out / "evaluation")
    _print_report(report)
    print(f"train/test rows: {len(train)}/{len(test)}; session written to {out / 'session'}")
    return 0


def _print_report(report) -> None:
    c = report.classification
    if c is not None:
        print(
            f"classifier: accuracy {c.accuracy:.4f} precision {c.precision:.4f} recall {c.recall:.4f} "
            f"roc_auc {c.roc_auc:.4f} pr_auc {c.pr_auc:.4f}"
        )
    for r in report.regression:
        print(f"{r.test_case} {r.target}: rmse {r.rmse:.4g} mape {r.mape:.3f}% r2 {r.r2:.4f}")


def cmd_evaluate(args) -> int:
    from .dataset import load_csv
    from .surrogate import evaluate
    from .tune import TuneSession

    session = TuneSession.load(args.session)
    test = load_csv(args.data)
    regs = {c: m for c, m in session.regressors.items() if c in set(test.cases)}
    report = evaluate(session.classifier.with_threshold(args.threshold) if args.threshold else session.classifier, regs, test)
    report.save(_out_dir(args))
    _print_report(report)
    return 0


def _objectives(text: str):
    from .optimize import Objective

    try:
        return tuple(Objective.parse(p) for p in text.split(",") if p.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def cmd_optimize(args) -> int:
    from .optimize import ObjectiveSpec, optimize_settings
    from .tune import TuneSession, visualize

    session = TuneSession.load(args.session)
    spec = ObjectiveSpec(args.objectives, args.case, budget=args.budget, seed=args.seed, sampler=args.sampler)
    front = optimize_settings(spec, session.classifier, session.regressor(args.case))
    out = _out_dir(args)
    front.to_csv(out / "front.csv")
    front.to_json(out / "front.json")
    front.trials_to_csv(out / "trials.csv")
    if len(spec.objectives) >= 2:
        visualize(front, out / "front.svg")
    print(f"{args.case}: {len(front.points)} front points from {len(front.trial_feasible)} trials")
    for row in front.records()[:10]:
        print("  " + ", ".join(f"{k}={row[k]:.4g}" for k in row if k.startswith("predicted_")))
    return 0


def cmd_validate(args) -> int:
    from .optimize import read_front_csv, validate_against_solver

    front = read_front_csv(args.front, args.case)
    report = validate_against_solver(front, args.case)
    out = _out_dir(args)
    (out / "validation.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    print(f"{report.test_case}: {len(report.rows)} points, actual success {report.success_fraction:.3f}")
    for k, v in report.median_relative_error.items():
        print(f"  median relative error of {k}: {v:.3f}")
    return 0


def cmd_drift(args) -> int:
    from .dataset import load_csv
    from .drift import PsiConfig, psi_matrix

    ds = load_csv(args.data)
    m = psi_matrix(ds, args.target, PsiConfig(args.bins, args.epsilon), args.cases, args.successful_only)
    path = m.to_csv(_out_dir(args) / "psi_matrix.csv")
    print(f"PSI of {m.target} (row = reference):")
    print("      " + " ".join(f"{c:>8s}" for c in m.cases))
    for c, row in zip(m.cases, m.values):
        print(f"{c:5s} " + " ".join(f"{v:8.4f}" for v in row))
    if m.skipped:
        print(f"skipped (no rows): {', '.join(m.skipped)}")
    print(f"wrote {path}")
    return 0


def cmd_bench(args) -> int:
    from .bench import run_benchmark

    report = run_benchmark(args.data, args.case, args.kinds, args.sizes, args.seed, _out_dir(args))
    for kind, times in report["wall_time_seconds"].items():
        print(f"{kind}: " + ", ".join(f"{n} rows {t:.3f} s" for n, t in times.items()))
    return 0


def _parse_assignments(items) -> dict:
    values = {}
    for item in items or []:
        if "=" not in item:
            raise UsageError(f"expected name=value, got {item!r}")
        name, value = (s.strip() for s in item.split("=", 1))
        if name not in SETTING_NAMES:
            raise UsageError(f"unknown setting {name!r}")
        rng = next(r for r in SETTING_RANGES if r.name == name)
        if rng.scale == "boolean":
            if value.lower() not in ("true", "false", "1", "0"):
                raise UsageError(f"{name} must be true or false")
            values[name] = value.lower() in ("true", "1")
        elif rng.scale == "integer":
            values[name] = int(value)
        else:
            values[name] = float(value)
    return values


def cmd_predict(args) -> int:
    from .tune import TuneSession, get_solver_performance
    import warnings

    session = TuneSession.load(args.session)
    settings = SolverSettings(**_parse_assignments(args.set))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        perf = get_solver_performance(session, args.case, settings)
    result = {"test_case": args.case, "settings": settings.as_dict(), **perf.__dict__}
    print(json.dumps(result, indent=2))
    return 0


# --- parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    from .dataset import default_workers

    def common_options(defaults: bool) -> argparse.ArgumentParser:
        # subcommands repeat the global options without defaults, so that a
        # value given before the command name is not reset afterwards
        common = argparse.ArgumentParser(add_help=False)
        d = (lambda v: v) if defaults else (lambda v: argparse.SUPPRESS)
        common.add_argument("--config", default=d(None), help="INI config file with option defaults")
        common.add_argument(
            "--workers", type=_positive_int, default=d(default_workers()), help="worker processes (default: available cores)"
        )
        common.add_argument("-v", "--verbose", action="store_true", default=d(False))
        return common

    common = common_options(False)
    parser = argparse.ArgumentParser(
        prog="bvptune", description="Surrogate-assisted tuning of a collocation BVP solver.", parents=[common_options(True)]
    )
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.RawDescriptionHelpFormatter

    def add(name, **kw):
        return sub.add_parser(name, parents=[common], **kw)

    p = add("problems", help="list the registered test problems")
    p.set_defaults(func=cmd_problems)

    p = add("generate", help="solve every problem on a Latin hypercube design", epilog=_RANGES_TEXT, formatter_class=fmt)
    p.add_argument("--cases", type=_cases, default=[c.value for c in ALL_CASES], help="'all' or comma separated ids")
    p.add_argument("--n", "--n-per-case", dest="n", type=_positive_int, default=10_000, help="samples per problem (default 10000)")
    p.add_argument("--seed", type=int, default=7, help="design seed (default 7)")
    p.add_argument("--out-dir", default="out")
    p.add_argument("--name", default="dataset.csv", help="CSV file name inside --out-dir")
    p.set_defaults(func=cmd_generate)

    p = add("train", help="split a dataset, train classifier and regressors, evaluate")
    p.add_argument("--data", required=True, help="dataset CSV")
    p.add_argument("--test-fraction", type=_fraction, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classifier", default="GradientBoostedTrees", choices=["GradientBoostedTrees", "RandomForest", "KNearestNeighbor"])
    p.add_argument("--regressor", default="RandomForest", choices=["RandomForest", "GradientBoostedTrees", "KNearestNeighbor"])
    p.add_argument("--regressor-cases", type=_cases, default=None, help="cases to fit regressors for (default: all in the data)")
    p.add_argument("--threshold", type=_fraction, default=0.5, help="classifier decision threshold")
    p.add_argument("--budget", type=_positive_int, default=3200, help="optimizer trial budget stored in the session")
    p.add_argument("--out-dir", default="out/train")
    p.set_defaults(func=cmd_train)

    p = add("evaluate", help="score a trained session on a dataset")
    p.add_argument("--session", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--threshold", type=_fraction, default=None)
    p.add_argument("--out-dir", default="out/evaluation")
    p.set_defaults(func=cmd_evaluate)

    p = add("optimize", help="Pareto-optimal settings from the surrogates", epilog=_RANGES_TEXT, formatter_class=fmt)
    p.add_argument("--session", required=True)
    p.add_argument("--case", required=True)
    p.add_argument("--objectives", type=_objectives, default=_objectives("evals,grid,residuum"), help="comma separated: evals, grid, residuum")
    p.add_argument("--budget", type=_positive_int, default=3200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sampler", choices=["nsga2", "random"], default="nsga2")
    p.add_argument("--out-dir", default="out/optimize")
    p.set_defaults(func=cmd_optimize)

    p = add("validate", help="run the solver on the points of a front CSV")
    p.add_argument("--front", required=True)
    p.add_argument("--case", required=True)
    p.add_argument("--out-dir", default="out/validate")
    p.set_defaults(func=cmd_validate)

    p = add("drift", help="pairwise PSI matrix of one output across problems")
    p.add_argument("--data", required=True)
    p.add_argument("--target", default="ode_evaluations", choices=["ode_evaluations", "grid_points", "max_residuum"])
    p.add_argument("--cases", type=_cases, default=None)
    p.add_argument("--bins", type=_positive_int, default=10)
    p.add_argument("--epsilon", type=float, default=1e-4)
    p.add_argument("--successful-only", action="store_true")
    p.add_argument("--out-dir", default="out/drift")
    p.set_defaults(func=cmd_drift)

    p = add("bench", help="batch prediction timing per model kind")
    p.add_argument("--data", required=True)
    p.add_argument("--case", required=True)
    p.add_argument("--kinds", default="RandomForest,GradientBoostedTrees,KNearestNeighbor")
    p.add_argument("--sizes", type=_sizes, default=[10_000, 1_000_000])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="out/bench")
    p.set_defaults(func=cmd_bench)

    p = add("predict", help="predicted solvability and statistics for one setting", epilog=_RANGES_TEXT, formatter_class=fmt)
    p.add_argument("--session", required=True)
    p.add_argument("--case", required=True)
    p.add_argument("--set", action="append", metavar="NAME=VALUE", help="override one setting (repeatable)")
    p.set_defaults(func=cmd_predict)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, rest = pre.parse_known_args(argv)
    if not known.config:
        return
    cfg = configparser.ConfigParser()
    with open(known.config, encoding="utf-8") as fh:
        cfg.read_file(fh)
    command = next((a for a in rest if not a.startswith("-")), None)
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    section = cfg[command] if command in cfg else cfg[cfg.default_section]
    targets = [parser] + ([subparsers.choices[command]] if command in subparsers.choices else [])
    for key, value in section.items():
        dest = key.replace("-", "_")
        flag = "--" + key.replace("_", "-")
        for target in targets:
            action = next((a for a in target._actions if a.dest == dest or flag in a.option_strings), None)
            if action is None:
                continue
            dest = action.dest
            if isinstance(action, argparse._StoreTrueAction):
                target.set_defaults(**{dest: value.strip().lower() in ("1", "true", "yes", "on")})
            else:
                target.set_defaults(**{dest: action.type(value) if action.type else value})


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
    except (OSError, configparser.Error, argparse.ArgumentTypeError, ValueError) as exc:
        print(f"bvptune: config error: {exc}", file=sys.stderr)
        return 2
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"bvptune {args.command}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"bvptune {args.command}: I/O error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        log.debug("command failed", exc_info=True)
        print(f"bvptune {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
