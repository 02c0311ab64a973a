"""Command-line entry point: ``stochopt run | verify | compare | report``.

Exit codes: 0 success, 1 verification or runtime failure, 2 usage or
configuration error.  Configuration files are YAML; see README for the
schema.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from . import coordinate as cdm
from . import harness
from . import noise_reduction as nr
from . import regularized as reg
from . import second_order as so
from . import sg_family as sgf
from .core import (CapabilityError, Diminishing, Diverged, Fixed, InvSqrt, InvalidArgument,
                   NumericalError, StepFailure, WITH, WITHOUT, run_loop)
from .problems import (CompositeL1Problem, DoubleWellProblem, FormatError, LeastSquaresProblem,
                       LinearModelProblem, LogisticProblem, ParseError, diagonal_quadratic,
                       identity_quadratic, load_libsvm, make_classification, make_regression,
                       spread_quadratic_ensemble)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class ConfigError(ValueError):
    pass


# --- schema -------------------------------------------------------------------

PROBLEM_KEYS = {
    "identity-quadratic": {"d", "noise"},
    "diagonal-quadratic": {"diag", "noise"},
    "spread-quadratic": {"n", "d", "cond", "spread", "noise", "data_seed"},
    "double-well": {"noise"},
    "logistic": {"n", "d", "lam", "lam1", "data_seed", "scale", "flip", "density", "dataset",
                 "feature_decades"},
    "least-squares": {"n", "d", "lam", "lam1", "data_seed", "residual", "sparse_truth",
                      "dataset"},
}

SOLVER_KEYS = {
    "sg": {"batch_size", "mode", "project", "average"},
    "momentum": {"beta", "batch_size", "project"},
    "nesterov": {"beta", "batch_size", "project"},
    "adagrad": {"mu_reg", "batch_size"},
    "rmsprop": {"decay", "mu_reg", "batch_size"},
    "gd": set(),
    "dynamic-sampling": {"tau", "sampling", "chi", "growth"},
    "svrg": {"m", "option"},
    "saga": {"init"},
    "sag": {"init"},
    "newton-cg": {"batch_size", "hess_batch_size", "rho", "max_cg", "eta", "gamma", "operator"},
    "sqn": {"batch_size", "cadence", "strategy", "hess_batch_size", "memory"},
    "lbfgs": {"memory"},
    "diagonal": {"variant", "mu_reg", "decay", "interval", "batch_size"},
    "cd": {"rule", "stepsize"},
    "sdca": set(),
    "ista": {"backtracking"},
    "fista": {"momentum"},
    "prox-newton": {"eta", "budget", "superlinear"},
    "orthant": {"curvature", "rho", "max_cg"},
}
SCHEDULED = {"sg", "momentum", "nesterov", "adagrad", "rmsprop", "gd", "dynamic-sampling", "svrg",
             "saga", "sag", "sqn", "diagonal", "ista", "fista"}

SCHEDULE_KEYS = {"fixed": {"alpha"}, "diminishing": {"beta", "gamma"}, "inv-sqrt": {"a"}}
TOP_RUN = {"problem", "solver", "schedule", "seeds", "budget", "trace_every", "w1", "output"}
TOP_COMPARE = {"problem", "compare", "output"}
COMPARE_KEYS = {"budgets", "solvers", "alphas", "seed", "memory", "short", "long"}
BUDGET_KEYS = {"iterations", "adp"}
OUTPUT_KEYS = {"dir", "prefix"}
VERIFY_KEYS = {"seeds", "scale"}


def _strict(section, allowed, where):
    if not isinstance(section, dict):
        raise ConfigError(f"{where}: expected a mapping")
    for k in section:
        if k not in allowed:
            raise ConfigError(f"unknown key {k!r} in {where}")


def _kind(section, table, where):
    kind = section.get("kind")
    if kind not in table:
        raise ConfigError(f"{where}.kind must be one of {sorted(table)}, got {kind!r}")
    _strict(section, table[kind] | {"kind"}, where)
    return kind


def load_config(path, mode="run"):
    """Parse and validate a configuration file; returns the resolved mapping."""
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e.strerror}") from None
    try:
        cfg = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"invalid YAML: {e}") from None
    cfg = {} if cfg is None else cfg
    if mode == "verify":
        _strict(cfg, VERIFY_KEYS, "config")
        return cfg
    _strict(cfg, TOP_RUN if mode == "run" else TOP_COMPARE, "config")
    if "problem" not in cfg:
        raise ConfigError("missing section 'problem'")
    _kind(cfg["problem"], PROBLEM_KEYS, "problem")
    _strict(cfg.get("output", {}), OUTPUT_KEYS, "output")
    if mode == "compare":
        comp = cfg.get("compare", {})
        _strict(comp, COMPARE_KEYS, "compare")
        b = comp.get("budgets", [1, 10])
        if not isinstance(b, list) or not b or \
                any(not isinstance(x, (int, float)) or x <= 0 for x in b):
            raise ConfigError("compare.budgets must be a list of positive numbers")
        if any(y <= x for x, y in zip(b, b[1:])):
            raise ConfigError("compare.budgets must be strictly ascending")
        bad = set(comp.get("solvers", ["sg", "gd", "lbfgs"])) - {"sg", "gd", "lbfgs"}
        if bad:
            raise ConfigError(f"compare.solvers: unknown solver(s) {sorted(bad)}")
        return cfg
    if "solver" not in cfg:
        raise ConfigError("missing section 'solver'")
    skind = _kind(cfg["solver"], {k: v | ({"alpha"} if k in SCHEDULED else set())
                                  for k, v in SOLVER_KEYS.items()}, "solver")
    if "schedule" in cfg:
        if skind not in SCHEDULED:
            raise ConfigError(f"solver {skind!r} takes no schedule")
        if "alpha" in cfg["solver"]:
            raise ConfigError("give either solver.alpha or a schedule section, not both")
        _kind(cfg["schedule"], SCHEDULE_KEYS, "schedule")
    budget = cfg.get("budget", {})
    _strict(budget, BUDGET_KEYS, "budget")
    if not budget:
        raise ConfigError("budget needs 'iterations' and/or 'adp'")
    return cfg


def digest(cfg):
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def header_line(cfg, extra=""):
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    line = f"stochopt {__version__} config-sha256={digest(cfg)} config={blob}"
    return f"{line} {extra}".rstrip()


# --- construction -------------------------------------------------------------

def build_problem(spec):
    kind = spec["kind"]
    g = spec.get
    if kind == "identity-quadratic":
        return identity_quadratic(int(g("d", 10)), float(g("noise", 0.0)))
    if kind == "diagonal-quadratic":
        return diagonal_quadratic(np.asarray(g("diag", [1.0, 10.0]), float), float(g("noise", 0.0)))
    if kind == "spread-quadratic":
        return spread_quadratic_ensemble(int(g("n", 10)), int(g("d", 10)), int(g("data_seed", 0)),
                                         float(g("cond", 10.0)), float(g("spread", 1.0)),
                                         float(g("noise", 0.0)))
    if kind == "double-well":
        return DoubleWellProblem(float(g("noise", 0.0)))
    lam = float(g("lam", 0.0))
    if kind == "logistic":
        if g("dataset"):
            data = load_libsvm(g("dataset"))
            prob = LogisticProblem(data, lam)
        elif g("feature_decades") is not None:
            prob = harness.budget_logistic(int(g("n", 10_000)), int(g("d", 100)), lam,
                                           int(g("data_seed", 11)), float(g("feature_decades")))
        else:
            data = make_classification(int(g("n", 1000)), int(g("d", 50)), int(g("data_seed", 0)),
                                       float(g("scale", 1.0)), float(g("flip", 0.0)),
                                       float(g("density", 1.0)))
            prob = LogisticProblem(data, lam)
    else:
        if g("dataset"):
            data = load_libsvm(g("dataset"), classification=False)
        else:
            data = make_regression(int(g("n", 100)), int(g("d", 10)), int(g("data_seed", 0)),
                                   float(g("residual", 0.1)), g("sparse_truth"))
        prob = LeastSquaresProblem(data, lam)
    if g("lam1") is not None:
        prob = CompositeL1Problem(prob, float(g("lam1")))
    return prob


def build_schedule(cfg, problem, default=None):
    if "schedule" in cfg:
        s = cfg["schedule"]
        if s["kind"] == "fixed":
            return Fixed(float(s["alpha"]))
        if s["kind"] == "diminishing":
            return Diminishing(float(s["beta"]), float(s.get("gamma", 0.0)))
        return InvSqrt(float(s["a"]))
    a = cfg["solver"].get("alpha", default)
    if a is None:
        raise ConfigError(f"solver {cfg['solver']['kind']!r} needs alpha or a schedule")
    return Fixed(float(a))


@dataclass
class _WState:
    """Iterate holder for deterministic composite solvers."""
    w: np.ndarray
    stream: object = None
    k: int = 1
    adp: int = 0
    last_alpha: float = None
    last_batch: int = None
    extra: dict = field(default_factory=dict)


class _NoStream:
    def __init__(self, seed):
        self.run_seed = seed


def build_solver(cfg, problem, seed, w1):
    """(state, step) for the configured solver."""
    s = cfg["solver"]
    kind = s["kind"]
    g = s.get
    bs = int(g("batch_size", 1))
    mode = {"with": WITH, "without": WITHOUT}.get(g("mode", "with"))
    if mode is None:
        raise ConfigError("solver.mode must be 'with' or 'without'")
    if kind in ("sg", "momentum", "nesterov", "adagrad", "rmsprop", "gd"):
        st = sgf.SGState.start(w1, seed)
        proj = getattr(problem, "project", None) if g("project", False) else None
        if kind == "gd":
            sch = build_schedule(cfg, problem, 1.0 / problem.L)
            return st, lambda x: sgf.gradient_descent_step(x, problem, sch)
        sch = build_schedule(cfg, problem)
        if kind == "sg":
            avg = bool(g("average", False))

            def step(x):
                sgf.sg_step(x, problem, sch, bs, mode, proj)
                return sgf.update_average(x) if avg else x
            return st, step
        if kind == "momentum":
            return st, lambda x: sgf.momentum_step(x, problem, sch, float(g("beta", 0.9)), bs,
                                                   project=proj)
        if kind == "nesterov":
            b = g("beta")
            return st, lambda x: sgf.nesterov_step(x, problem, sch, None if b is None else float(b),
                                                   bs, project=proj)
        if kind == "adagrad":
            return st, lambda x: sgf.adagrad_step(x, problem, sch, float(g("mu_reg", 1e-8)), bs)
        return st, lambda x: sgf.rmsprop_step(x, problem, sch, float(g("decay", 0.1)),
                                              float(g("mu_reg", 1e-8)), bs)
    if kind == "dynamic-sampling":
        pol = nr.DynamicSamplingPolicy(float(g("tau", 2.0)), g("sampling", "geometric"),
                                       float(g("chi", 0.5)), None, float(g("growth", 1.5)))
        sch = build_schedule(cfg, problem)
        return nr.DynamicState.start(w1, seed), lambda x: nr.dynamic_sampling_step(x, problem, sch,
                                                                                   pol)
    if kind == "svrg":
        a = float(build_schedule(cfg, problem, 0.1 / _Lc(problem)).at(1))
        m = int(g("m", 2 * problem.n))
        return nr.SVRGState.start(w1, seed), lambda x: nr.svrg_outer(x, problem, a, m,
                                                                     g("option", "b"))
    if kind in ("saga", "sag"):
        sch = build_schedule(cfg, problem, nr.saga_stepsize(_Lc(problem)))
        st = nr.AggregatedState.start(problem, w1, seed, g("init", "full"))
        fn = nr.saga_step if kind == "saga" else nr.sag_step
        return st, lambda x: fn(x, problem, sch)
    if kind == "newton-cg":
        st = so.SolverState.start(w1, seed)
        return st, lambda x: so.newton_cg_step(
            x, problem, g("batch_size"), g("hess_batch_size"), float(g("rho", 0.1)),
            int(g("max_cg", 10)), float(g("eta", 1e-4)), float(g("gamma", 0.5)),
            g("operator", "hessian"))
    if kind == "sqn":
        sch = build_schedule(cfg, problem)
        st = so.SQNState.start(w1, seed, int(g("memory", 10)))
        return st, lambda x: so.sqn_step(x, problem, sch, bs, int(g("cadence", 1)),
                                         g("strategy", "online"), g("hess_batch_size"))
    if kind == "lbfgs":
        st = so.SQNState.start(w1, seed, int(g("memory", 10)))
        return st, lambda x: so.lbfgs_batch_step(x, problem)
    if kind == "diagonal":
        variant = g("variant", "gn")
        sch = build_schedule(cfg, problem, 0.1)
        st = so.start_diagonal(problem, w1, variant, seed)
        iv = g("interval")
        return st, lambda x: so.diagonal_curvature_step(
            x, problem, variant, sch, float(g("mu_reg", 1e-8)), float(g("decay", 0.1)),
            None if iv is None else tuple(iv), bs)
    if kind == "cd":
        st = cdm.cd_start(problem, w1, seed, g("rule", "uniform"))
        return st, lambda x: cdm.cd_step(x, problem, None, g("stepsize", "fixed"))
    if kind == "sdca":
        return cdm.sdca_start(problem, seed), lambda x: cdm.sdca_step(x, problem)
    if not isinstance(problem, CompositeL1Problem):
        raise ConfigError(f"solver {kind!r} needs a problem with lam1 > 0")
    st = _WState(np.array(w1, float), _NoStream(seed))
    n = problem.n
    if kind in ("ista", "fista"):
        a = float(build_schedule(cfg, problem, 1.0 / problem.L).at(1))
        if kind == "ista":
            back = bool(g("backtracking", False))

            def step(x):
                if back:
                    x.w, x.extra["alpha"] = reg.ista_backtracking_step(x.w, problem,
                                                                       x.extra.get("alpha", a))
                else:
                    x.w = reg.ista_step(x.w, problem, a)
                return _advance(x, x.extra.get("alpha", a), n)
            return st, step
        fs = reg.FistaState(st.w)
        mom = bool(g("momentum", True))

        def step(x):
            reg.fista_step(fs, problem, a, mom)
            x.w = fs.w
            return _advance(x, a, n)
        return st, step
    if kind == "prox-newton":
        def step(x):
            model = reg.build_model(problem, x.w, eta=float(g("eta", 0.1)))
            x.w, info = reg.prox_newton_step(x.w, problem, model, budget=int(g("budget", 100)),
                                             superlinear=bool(g("superlinear", False)))
            return _advance(x, info.get("alpha", 1.0), n)
        return st, step
    ost = reg.OrthantState(st.w)

    def step(x):
        if not ost.converged:
            try:
                reg.orthant_step(ost, problem, curvature=g("curvature", "lbfgs"),
                                 rho=float(g("rho", 1e-6)), max_cg=g("max_cg"))
            except StepFailure:
                ost.converged = True
        x.w = ost.w
        return _advance(x, None, n)
    return st, step


def _Lc(problem):
    return problem.L_component if getattr(problem, "L_component", None) else problem.L


def _advance(x, alpha, n):
    x.k += 1
    x.adp += n
    x.last_alpha, x.last_batch = alpha, n
    return x


def initial_point(cfg, problem):
    w1 = cfg.get("w1", 0.0)
    if isinstance(w1, (int, float)):
        return np.full(problem.d, float(w1))
    w1 = np.asarray(w1, float)
    if w1.shape != (problem.d,):
        raise ConfigError(f"w1 has length {w1.size}, problem dimension is {problem.d}")
    return w1


def _seeds(cfg, override):
    if override is not None:
        return [int(override)]
    s = cfg.get("seeds", [1])
    if isinstance(s, int):
        return [s]
    if not isinstance(s, list) or not s or any(not isinstance(x, int) or x < 0 for x in s):
        raise ConfigError("seeds must be a non-negative integer or a list of them")
    return sorted(s)


def _out_dir(cfg, override):
    d = Path(override) if override else Path(cfg.get("output", {}).get("dir", "."))
    d.mkdir(parents=True, exist_ok=True)
    return d


# --- commands -----------------------------------------------------------------

def cmd_run(args):
    cfg = load_config(args.config, "run")
    seeds = _seeds(cfg, args.seed)
    problem = build_problem(cfg["problem"])
    out = _out_dir(cfg, args.out)
    prefix = cfg.get("output", {}).get("prefix", cfg["solver"]["kind"])
    budget = cfg["budget"]
    head = header_line(cfg)
    every = cfg.get("trace_every")

    def one(seed):
        p = build_problem(cfg["problem"]) if args.threads > 1 else problem
        st, step = build_solver(cfg, p, seed, initial_point(cfg, p))
        try:
            st, tr = run_loop(st, step, p, max_iter=budget.get("iterations"),
                              max_adp=budget.get("adp"), trace_every=every,
                              solver=cfg["solver"]["kind"], problem_id=cfg["problem"]["kind"])
            return seed, tr, None
        except Diverged as e:
            return seed, getattr(e, "trace", None), e

    if args.threads > 1:
        with ThreadPoolExecutor(args.threads) as ex:
            results = list(ex.map(one, seeds))
    else:
        results = [one(s) for s in seeds]
    status = EXIT_OK
    for seed, tr, err in results:
        path = out / f"{prefix}-seed{seed}.csv"
        if tr is not None:
            path.write_text(tr.to_csv(head))
        if err is not None:
            last = tr.records[-1] if tr is not None and tr.records else None
            where = f"k={last.k} adp={last.adp} fval={tr.last_fval()!r}" if last else "before step 1"
            print(f"seed {seed}: diverged ({err}); last finite state {where}", file=sys.stderr)
            status = EXIT_FAIL
            continue
        last = tr.records[-1] if tr.records else None
        if last is None:
            print(f"seed {seed}: no iterations")
            continue
        print(f"seed {seed}: k={last.k} fval={last.fval!r} gnorm={last.gnorm!r} adp={last.adp}")
    return status


def cmd_verify(args):
    if args.suite not in harness.SUITES:
        print(f"unknown suite {args.suite!r}; choose from {', '.join(harness.SUITES)}",
              file=sys.stderr)
        return EXIT_USAGE
    cfg = load_config(args.config, "verify") if args.config else {}
    count = int(cfg.get("seeds", 50 if args.suite == "cd" else 20))
    base = 1 if args.seed is None else int(args.seed)
    seeds = tuple(range(base, base + count))
    checks = harness.run_suite(args.suite, seeds=seeds, threads=args.threads,
                               scale=float(cfg.get("scale", 1.0)))
    head = header_line(dict(suite=args.suite, seeds=list(seeds), **cfg))
    text = harness.summary_text(checks, head)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{args.suite}-verdicts.csv").write_text(harness.verdict_csv(checks, head))
        (out / f"{args.suite}-curves.csv").write_text(harness.curves_csv(checks, head))
        (out / f"{args.suite}-summary.txt").write_text(text)
    sys.stdout.write(text)
    failed = [c for c in checks if not c.passed]
    for c in failed:
        at, b, e = c.worst()
        print(f"failed {c.name}: bound {c.slack:g}*{b:.6g}, empirical {e:.6g}, "
              f"margin {c.margin:.3g}", file=sys.stderr)
    return EXIT_FAIL if failed else EXIT_OK


def cmd_compare(args):
    cfg = load_config(args.config, "compare")
    comp = cfg.get("compare", {})
    problem = build_problem(cfg["problem"])
    if not isinstance(problem, LinearModelProblem):
        raise ConfigError("compare needs a logistic or least-squares problem")
    solvers = tuple(comp.get("solvers", ["sg", "gd", "lbfgs"]))
    seed = int(args.seed if args.seed is not None else comp.get("seed", 1))
    rep = harness.budget_experiment(problem, comp.get("budgets", [1, 10]), comp.get("alphas"),
                                    seed, solvers, int(comp.get("memory", 10)))
    out = _out_dir(cfg, args.out)
    prefix = cfg.get("output", {}).get("prefix", "compare")
    head = header_line(cfg)
    (out / f"{prefix}-budgets.csv").write_text(harness.budget_csv(rep, head))
    chk = harness.TheoremCheck("compare", "", {}, (), [], [], [])
    chk.curves = rep.curves
    (out / f"{prefix}-curves.csv").write_text(harness.curves_csv([chk], head))
    checks = []
    if set(solvers) >= {"sg", "gd", "lbfgs"}:
        long = comp.get("long", 1000)
        checks = harness.budget_checks(rep, float(comp.get("short", 10)), float(long))
    for r in rep.rows():
        a = f" alpha={r['sg_alpha']:g}" if r["sg_alpha"] is not None else ""
        print(f"budget {r['budget_epochs']:g} epochs: {r['solver']} R_n={r['value']!r}"
              f" gap={r['gap']:.3e}{a}")
    if checks:
        text = harness.summary_text(checks, head)
        (out / f"{prefix}-summary.txt").write_text(text)
        (out / f"{prefix}-verdicts.csv").write_text(harness.verdict_csv(checks, head))
        sys.stdout.write(text)
        if not all(c.passed for c in checks):
            return EXIT_FAIL
    return EXIT_OK


def cmd_report(args):
    """Summarize every trace and verdict CSV found in a directory."""
    d = Path(args.path or args.out or ".")
    if not d.is_dir():
        raise ConfigError(f"not a directory: {d}")
    rows = []
    failed = 0
    for f in sorted(d.glob("*.csv")):
        lines = [ln for ln in f.read_text().splitlines() if not ln.startswith("#")]
        if not lines:
            continue
        recs = list(csv.DictReader(lines))
        cols = lines[0].split(",")
        if cols[:2] == ["k", "adp"]:
            fv = [r for r in recs if r["fval"]]
            last = fv[-1] if fv else None
            rows.append((f.name, "trace", len(recs), last["fval"] if last else "",
                         last["gnorm"] if last else "", recs[-1]["adp"] if recs else ""))
        elif cols[:2] == ["check", "passed"]:
            names = {}
            for r in recs:
                names[r["check"]] = r["passed"] == "1"
            bad = sum(not v for v in names.values())
            failed += bad
            rows.append((f.name, "verdicts", len(names), f"{len(names) - bad} passed",
                         f"{bad} failed", ""))
        elif cols[:2] == ["budget_epochs", "solver"]:
            top = max(float(r["budget_epochs"]) for r in recs)
            best = min((float(r["value"]), r["solver"]) for r in recs
                       if float(r["budget_epochs"]) == top)
            rows.append((f.name, "budgets", len(recs), repr(best[0]), "", f"{best[1]}@{top:g}"))
    buf = [f"# {header_line({'report': str(d)})}", "file,kind,records,final_fval,final_gnorm,adp"]
    buf += [",".join(str(x) for x in r) for r in rows]
    text = "\n".join(buf) + "\n"
    (d / "report.txt").write_text(text)
    sys.stdout.write(text)
    return EXIT_FAIL if failed else EXIT_OK


def make_parser():
    p = argparse.ArgumentParser(prog="stochopt", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"stochopt {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required):
        sp.add_argument("--config", required=config_required)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out")
        sp.add_argument("--threads", type=int, default=1)

    common(sub.add_parser("run", help="execute runs and write traces"), True)
    v = sub.add_parser("verify", help="run an acceptance suite")
    v.add_argument("suite")
    common(v, False)
    common(sub.add_parser("compare", help="ADP budget comparison"), True)
    r = sub.add_parser("report", help="summarize traces and verdicts in a directory")
    r.add_argument("path", nargs="?")
    common(r, False)
    return p


def main(argv=None):
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    if args.threads < 1 or (args.seed is not None and args.seed < 0):
        print("--threads must be >= 1 and --seed non-negative", file=sys.stderr)
        return EXIT_USAGE
    cmd = {"run": cmd_run, "verify": cmd_verify, "compare": cmd_compare,
           "report": cmd_report}[args.command]
    try:
        return cmd(args)
    except (ConfigError, InvalidArgument, CapabilityError, ParseError, FormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (Diverged, StepFailure, NumericalError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
