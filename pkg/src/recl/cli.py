"""Command-line interface: ``recl {simulate,fit,assign,evaluate,verify}``.

Every option may also be given in a plain ``key = value`` config file passed
with ``--config``; command-line flags win.  Exit codes: 0 success, 2 input
contract violation, 3 numerical non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import os
import platform
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .cohort import CohortError, CohortSchema, read_cohort
from .crf import DegenerateLeaveOneOut, pseudo_observations
from .cscls import InstanceTooLarge, TreeConfig, TreeRegime, render_tree
from .evalrd import (
    EvaluationError,
    ValueReport,
    concordance_split,
    default_horizons,
    empirical_value,
    export_group_crfs,
)
from .pipeline import RunConfig, StageError, fit_itr
from .propensity import (
    Formula,
    PropensityConvergenceError,
    PropensityError,
    export_ps_table,
    fit_propensity,
    load_external_ps,
)
from .sim import METHODS, ScenarioSpec, run_experiment
from .smr import SmrConvergenceError, SmrError

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3
_NUMERIC = (SmrConvergenceError, PropensityConvergenceError)


class InputError(Exception):
    pass


# ------------------------------------------------------------------ file helpers


def write_atomic(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, args: argparse.Namespace, inputs=()) -> None:
    lines = [
        f"command = {command}",
        f"recl = {__version__}",
        f"python = {platform.python_version()}",
        f"numpy = {np.__version__}",
    ]
    for p in inputs:
        lines.append(f"input = {p} sha256:{_sha256(p)}")
    for key, val in sorted(vars(args).items()):
        if key in ("func", "config_file"):
            continue
        lines.append(f"{key} = {val}")
    write_atomic(out / "manifest.txt", "\n".join(lines) + "\n")


def load_config(path) -> dict:
    """Parse ``key = value`` lines; '#' starts a comment; keys use '-' or '_'."""
    out = {}
    for num, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{path}:{num}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = val
    return out


# ------------------------------------------------------------------------ parser


def _add_schema_args(p):
    g = p.add_argument_group("data columns")
    g.add_argument("--id-col", default="id")
    g.add_argument("--time-col", default="time")
    g.add_argument("--status-col", default="status")
    g.add_argument("--treatment-col", default="treatment")
    g.add_argument("--covariates", default=None, help="comma-separated covariate columns (default: all others)")
    g.add_argument("--tau", type=float, default=None)


def _add_ps_args(p):
    g = p.add_argument_group("propensity")
    g.add_argument("--ps-formula", default=None, help="e.g. 'x1,x2' or 'sex,stage' or 'all'")
    g.add_argument("--ps-file", default=None, help="external CSV id,ps_0,...,ps_{K-1}")


def _add_tree_args(p):
    g = p.add_argument_group("tree")
    g.add_argument("--max-depth", type=int, default=3)
    g.add_argument("--min-leaf-weight", type=float, default=0.0)
    g.add_argument("--min-split-gain", type=float, default=1e-12)
    g.add_argument("--min-leaf-rows", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="recl", description="Recurrent C-learning for recurrent-event ITRs")
    parser.add_argument("--version", action="version", version=f"recl {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", dest="config_file", default=None, help="key = value config file")
        return p

    p = add("simulate", "run replicate simulation experiments")
    p.add_argument("--scenario", type=int, default=1, choices=(1, 2))
    p.add_argument("--n", type=int, default=600)
    p.add_argument("--t", type=float, action="append", default=None, help="horizon (repeatable)")
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--seed", type=int, default=None, help="required")
    p.add_argument("--methods", default=",".join(METHODS))
    p.add_argument("--test-size", type=int, default=5000)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default=None)
    _add_tree_args(p)
    p.set_defaults(func=cmd_simulate)

    p = add("fit", "estimate a tree regime from a data CSV")
    p.add_argument("--data", default=None)
    p.add_argument("--method", default="AIPW", choices=("OR", "IPW", "AIPW", "or", "ipw", "aipw"))
    p.add_argument("--t", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    _add_schema_args(p)
    _add_ps_args(p)
    _add_tree_args(p)
    p.set_defaults(func=cmd_fit)

    p = add("assign", "apply a regime to covariate rows")
    p.add_argument("--regime", default=None)
    p.add_argument("--covariates-file", dest="covariates_file", default=None)
    p.add_argument("--id-col", default="id")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_assign)

    p = add("evaluate", "empirical value, concordance groups and group CRFs")
    p.add_argument("--data", default=None)
    p.add_argument("--regime", action="append", default=None, help="NAME=PATH or PATH (repeatable)")
    p.add_argument("--t", type=float, action="append", default=None)
    p.add_argument("--random-seed", type=int, default=None, help="also evaluate a Random regime")
    p.add_argument("--grid-points", type=int, default=101)
    p.add_argument("--out", default=None)
    _add_schema_args(p)
    _add_ps_args(p)
    p.set_defaults(func=cmd_evaluate)

    p = add("verify", "run the oracle property suites on small instances")
    p.add_argument("--instances", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.config_file:
        return args
    cfg = load_config(args.config_file)
    sub = parser._subparsers._group_actions[0].choices[args.command]  # noqa: SLF001
    known = {a.dest: a for a in sub._actions}  # noqa: SLF001
    defaults, lists = {}, {}
    for key, val in cfg.items():
        if key not in known or key in ("config_file", "help"):
            raise InputError(f"unknown config key {key!r} for {args.command}")
        action = known[key]
        conv = action.type or str
        try:
            if isinstance(action, argparse._AppendAction):  # noqa: SLF001
                # argparse would append flags onto a list default, so apply afterwards
                lists[key] = [conv(v.strip()) for v in val.split(",")]
            else:
                defaults[key] = conv(val)
        except ValueError:
            raise InputError(f"config key {key!r}: bad value {val!r}") from None
    sub.set_defaults(**defaults)
    args = parser.parse_args(argv)
    for key, val in lists.items():
        if getattr(args, key) is None:
            setattr(args, key, val)
    return args


def _require(args, *names):
    missing = [n for n in names if getattr(args, n, None) in (None, [])]
    if missing:
        raise InputError("missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))


def _schema(args) -> CohortSchema:
    covs = tuple(c.strip() for c in args.covariates.split(",")) if args.covariates else None
    return CohortSchema(args.id_col, args.time_col, args.status_col, args.treatment_col, covs, args.tau)


def _tree_config(args) -> TreeConfig:
    return TreeConfig(args.max_depth, args.min_leaf_weight, args.min_split_gain, args.min_leaf_rows)


def _ps_model(args, cohort):
    if args.ps_file:
        model = load_external_ps(Path(args.ps_file).read_text(encoding="utf-8"))
        if model.k != cohort.k:
            raise InputError(f"propensity file has {model.k} arms, data has {cohort.k}")
        return model
    if args.ps_formula is not None:
        return fit_propensity(cohort, Formula.parse(args.ps_formula))
    return None


# ---------------------------------------------------------------------- commands


def cmd_simulate(args) -> int:
    _require(args, "seed", "out")
    horizons = tuple(args.t) if args.t else (3.0,)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    spec = ScenarioSpec(
        scenario=args.scenario,
        n=args.n,
        horizons=horizons,
        seed=args.seed,
        replicates=args.reps,
        test_size=args.test_size,
        tree=_tree_config(args),
    )
    report = run_experiment(spec, methods, n_jobs=args.jobs)
    out = Path(args.out)
    write_atomic(out / "report.csv", report.to_csv())
    write_atomic(out / "summary.csv", report.summary_csv())
    write_manifest(out, "simulate", args)
    print(report.summary_csv(), end="")
    for rec in report.failures():
        print(f"replicate {rec['replicate']} {rec['method']}: {rec['status']}", file=sys.stderr)
    return EXIT_OK


def cmd_fit(args) -> int:
    _require(args, "data", "t", "out")
    cohort = read_cohort(args.data, _schema(args))
    config = RunConfig(method=args.method, t=args.t, ps_formula=args.ps_formula, tree=_tree_config(args), seed=args.seed)
    ps = _ps_model(args, cohort) if config.method != "OR" else None
    if config.method != "OR" and ps is None:
        raise InputError("propensity required: pass --ps-formula or --ps-file for IPW/AIPW")
    result = fit_itr(cohort, config, ps=ps)
    tree = result.tree
    tree.meta.update(
        covariate_names=list(cohort.covariate_names),
        treatment_labels=list(cohort.treatment_labels),
    )
    out = Path(args.out)
    write_atomic(out / "regime.json", tree.serialize())
    write_atomic(out / "regime.txt", render_tree(tree, cohort.covariate_names, cohort.treatment_labels))
    write_atomic(out / "costs.csv", result.costs.to_csv(cohort.treatment_labels))
    write_atomic(out / "train_assignments.csv", _assignments_csv(cohort.ids, tree.assign_many(cohort.X), cohort.treatment_labels))
    if result.smr is not None:
        write_atomic(out / "smr_coefficients.csv", result.smr.summary())
        write_atomic(out / "smr_baseline.csv", result.smr.baseline.to_csv(label="SMR baseline mean"))
    if result.ps is not None:
        write_atomic(out / "propensity.csv", export_ps_table(result.ps, cohort))
    notes = "\n".join(result.notes) + ("\n" if result.notes else "")
    write_atomic(out / "convergence.txt", notes)
    write_manifest(out, "fit", args, inputs=[p for p in (args.data, args.ps_file) if p])
    print(render_tree(tree, cohort.covariate_names, cohort.treatment_labels), end="")
    return EXIT_OK


def _assignments_csv(ids, actions, labels) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "action", "treatment"])
    for sid, a in zip(ids, actions):
        w.writerow([sid, int(a), labels[int(a)]])
    return buf.getvalue()


def _read_regime(path) -> TreeRegime:
    try:
        return TreeRegime.parse(Path(path).read_text(encoding="utf-8"))
    except (ValueError, KeyError) as exc:
        raise InputError(f"{path}: {exc}") from None


def cmd_assign(args) -> int:
    _require(args, "regime", "covariates_file", "out")
    tree = _read_regime(args.regime)
    names = tree.meta.get("covariate_names") or [f"x{j + 1}" for j in range(tree.p)]
    labels = tree.meta.get("treatment_labels") or [str(a) for a in range(tree.k)]
    ids, rows, seen = [], [], set()
    with open(args.covariates_file, encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in [args.id_col, *names] if c not in (reader.fieldnames or [])]
        if missing:
            raise InputError(f"covariate file lacks columns {missing}")
        for line, row in enumerate(reader, start=2):
            sid = row[args.id_col]
            if sid in seen:
                continue
            seen.add(sid)
            try:
                rows.append([float(row[c]) for c in names])
            except ValueError:
                raise InputError(f"line {line}: non-numeric covariate") from None
            ids.append(sid)
    actions = tree.assign_many(np.array(rows).reshape(len(rows), tree.p))
    write_atomic(Path(args.out), _assignments_csv(ids, actions, labels))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    _require(args, "data", "regime", "out")
    cohort = read_cohort(args.data, _schema(args))
    ps = _ps_model(args, cohort)
    if ps is None:
        raise InputError("propensity required: pass --ps-formula or --ps-file")
    horizons = tuple(args.t) if args.t else default_horizons(cohort)
    regimes = {"Observed": cohort.A.copy()}
    for item in args.regime:
        name, _, path = item.rpartition("=")
        name = name or Path(path).stem
        tree = _read_regime(path)
        if tree.p != cohort.p or tree.k != cohort.k:
            raise InputError(f"regime {name} expects p={tree.p}, K={tree.k}; data has p={cohort.p}, K={cohort.k}")
        regimes[name] = tree
    if args.random_seed is not None:
        rng = np.random.default_rng(args.random_seed)
        regimes["Random"] = rng.integers(0, cohort.k, cohort.n)

    out = Path(args.out)
    report = ValueReport(horizons)
    grid = np.linspace(0.0, cohort.tau, args.grid_points)
    for t in horizons:
        pos = pseudo_observations(cohort, t)
        for name, regime in regimes.items():
            value = empirical_value(cohort, regime, ps, t, pos=pos, name=name)
            split = concordance_split(cohort, regime)
            report.add(name, t, value, split)
            if name == "Observed":
                continue
            conc, disc = export_group_crfs(cohort, split, grid)
            stem = f"crf_{name}_t{t:g}"
            write_atomic(out / f"{stem}_concordant.csv", conc)
            write_atomic(out / f"{stem}_disconcordant.csv", disc)
            report.crf_files[(name, t)] = (f"{stem}_concordant.csv", f"{stem}_disconcordant.csv")
            write_atomic(out / f"concordance_{name}_t{t:g}.csv", _concordance_csv(split))
    arms = ",".join(f"{j}={lab}" for j, lab in enumerate(cohort.treatment_labels))
    write_atomic(out / "value_report.csv", f"# arms: {arms}\n" + report.to_csv())
    write_manifest(out, "evaluate", args, inputs=[p for p in (args.data, args.ps_file) if p] + [r.rpartition("=")[2] for r in args.regime])
    print(report.to_csv(), end="")
    return EXIT_OK


def _concordance_csv(split) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "group"])
    for sid in split[0]:
        w.writerow([sid, "concordant"])
    for sid in split[1]:
        w.writerow([sid, "disconcordant"])
    return buf.getvalue()


def cmd_verify(args) -> int:
    from .verify import run_all

    results = run_all(n_instances=args.instances, seed=args.seed)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return EXIT_OK if all(ok for _, ok, _ in results) else 1


# -------------------------------------------------------------------------- main


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
        return args.func(args)
    except _NUMERIC as exc:
        print(f"error: numerical non-convergence: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except StageError as exc:
        code = EXIT_NUMERIC if isinstance(exc.__cause__, _NUMERIC) else EXIT_INPUT
        print(f"error: {exc}", file=sys.stderr)
        return code
    except (
        InputError,
        CohortError,
        PropensityError,
        SmrError,
        EvaluationError,
        DegenerateLeaveOneOut,
        InstanceTooLarge,
        ValueError,
        FileNotFoundError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
