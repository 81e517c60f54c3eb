"""Command line front end: gen, run, sweep, theory, verify.

Exit status: 0 on success, 1 when verify finds a violated bound, 2 for invalid
usage or configuration, 3 when a run fails numerically (partial artifacts are
still written).
"""
from __future__ import annotations

import argparse
import concurrent.futures
import copy
import csv
import itertools
import json
import math
import os
import sys
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import diagnostics, engine, gaussnewton, problems, stepsize, theory

SUMMARY_COLUMNS = ("run_id", "solver", "rule", "parameters", "cycles", "termination",
                   "final_grad_norm", "rho_hat", "r_squared", "ratio_tail", "classification", "grid")

_CONFIG_KEYS = {"problem", "problem_path", "solver", "stepsize", "max_cycles", "grad_tolerance",
                "trace_mode", "trace_limit", "x0", "ridge"}


class UsageError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    problem: dict | None = None
    problem_path: str | None = None
    solver: str = "in"
    stepsize: dict = field(default_factory=lambda: {"rule": "unit"})
    max_cycles: int = 1000
    grad_tolerance: float = 1e-10
    trace_mode: str = "standard"
    trace_limit: int = 1000
    x0: list | None = None
    ridge: float | None = None

    @classmethod
    def from_dict(cls, d: dict, seed: int | None = None) -> "ExperimentConfig":
        unknown = set(d) - _CONFIG_KEYS
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**copy.deepcopy(d))
        if (cfg.problem is None) == (cfg.problem_path is None):
            raise UsageError("give exactly one of 'problem' and 'problem_path'")
        if cfg.problem_path is not None and not Path(cfg.problem_path).is_file():
            raise UsageError(f"problem file not found: {cfg.problem_path}")
        if cfg.solver not in ("in", "ekfs"):
            raise UsageError(f"solver must be 'in' or 'ekfs', not {cfg.solver!r}")
        if cfg.trace_mode not in ("standard", "full"):
            raise UsageError(f"unknown trace_mode {cfg.trace_mode!r}")
        if seed is not None:
            if cfg.problem is None:
                raise UsageError("--seed needs a generated problem, not a problem file")
            cfg.problem["seed"] = seed
        return cfg

    def load_problem(self):
        if self.problem_path is not None:
            return problems.load_problem(self.problem_path)
        return problems.make_problem(self.problem)


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise UsageError(f"config not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"invalid JSON in {path}: {exc}") from exc


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _clean(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def build_rule(step_cfg: dict, problem):
    """Rule from its config; linear-growth parameters may be 'auto' (taken from the theory module)."""
    cfg = dict(step_cfg)
    if cfg.get("rule") == "linear_growth" and "auto" in (cfg.get("kappa_hat"), cfg.get("eta_hat")):
        consts = theory.ProblemConstants.from_problem(problem)
        nu = cfg.get("nu_hat", 0.5)
        eta, kap = theory.linear_growth_parameters(consts, nu, cfg.pop("margin", 0.1))
        if math.isnan(kap):
            raise UsageError("kappa is undefined for this problem at the chosen margin")
        cfg["eta_hat"], cfg["kappa_hat"], cfg["nu_hat"] = eta, kap, nu
    cfg.pop("margin", None)
    try:
        return stepsize.rule_from_config(cfg)
    except (KeyError, TypeError) as exc:
        raise UsageError(f"bad stepsize config: {exc}") from exc


def execute(cfg: ExperimentConfig, out_dir) -> tuple[dict, int]:
    """Run one experiment, writing problem.json, trace.csv and result.json into out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    problem = cfg.load_problem()
    if cfg.solver == "ekfs" and not isinstance(problem, problems.NLLSProblem):
        raise UsageError("solver 'ekfs' needs a least-squares problem")
    if cfg.solver == "in" and isinstance(problem, problems.NLLSProblem):
        raise UsageError("solver 'in' needs a finite-sum problem; use 'ekfs' for least squares")
    rule = build_rule(cfg.stepsize, problem)
    run_cfg = engine.RunConfig(cfg.max_cycles, cfg.grad_tolerance, cfg.trace_mode, cfg.trace_limit,
                               None if cfg.x0 is None else np.asarray(cfg.x0, dtype=float))
    problems.save_problem(problem, out / "problem.json")
    ridge = None
    error = None
    status = 0
    try:
        if cfg.solver == "ekfs":
            x0 = np.zeros(problem.n) if run_cfg.x0 is None else run_cfg.x0
            ridge = gaussnewton.default_ridge(problem, x0) if cfg.ridge is None else cfg.ridge
            res = gaussnewton.run_ekfs(problem, rule, run_cfg, ridge)
        else:
            res = engine.run(problem, rule, run_cfg)
    except engine.NumericalError as exc:
        res, error, status = exc.result, str(exc), 3
    fit = None
    if res is not None and res.cycles_used >= 20:
        try:
            fit = diagnostics.fit_rate(res.series("grad_norm"))
        except ValueError:
            fit = None
    result = {
        "config": asdict(cfg),
        "solver": cfg.solver,
        "stepsize": stepsize.rule_to_config(rule),
        "ridge": ridge,
        "termination": "stepsize_failure" if res is None else res.termination,
        "error": error,
    }
    if res is not None:
        engine.write_trace_csv(res, out / "trace.csv")
        result.update({
            "cycles_used": res.cycles_used,
            "final_grad_norm": res.final_grad_norm,
            "final_x": res.final_x,
            "observed_diameter": res.diameter_R,
            "rate_fit": None if fit is None else {k: _clean(v) for k, v in fit.to_dict().items()},
        })
    _write_json(out / "result.json", result)
    return result, status


# --- subcommands ---------------------------------------------------------------

def cmd_gen(args) -> int:
    d = _read_json(args.config)
    spec = d.get("problem", d)
    if args.seed is not None:
        spec = dict(spec, seed=args.seed)
    problem = problems.make_problem(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    problems.save_problem(problem, out / "problem.json")
    print(out / "problem.json")
    return 0


def cmd_run(args) -> int:
    cfg = ExperimentConfig.from_dict(_read_json(args.config), args.seed)
    result, status = execute(cfg, args.out)
    print(json.dumps({k: result.get(k) for k in ("termination", "cycles_used", "final_grad_norm")},
                     default=_json_default))
    if status:
        print(f"numerical failure: {result['error']}", file=sys.stderr)
    return status


def _set_path(d: dict, key: str, value):
    if "." in key:
        *heads, leaf = key.split(".")
        for head in heads:
            d = d.setdefault(head, {})
        d[leaf] = value
    elif key in _CONFIG_KEYS:
        d[key] = value
    elif key == "seed":
        d.setdefault("problem", {})["seed"] = value
    else:
        d.setdefault("stepsize", {})[key] = value


def expand_grid(sweep: dict) -> list[dict]:
    """Cartesian product of ``grid`` applied to ``base``.

    Grid keys may be dotted paths ("problem.seed"); bare keys go to the top
    level when they are config fields and to the stepsize block otherwise.
    """
    base = sweep.get("base")
    grid = sweep.get("grid", {})
    if not isinstance(base, dict) or not isinstance(grid, dict):
        raise UsageError("sweep config needs 'base' and 'grid' objects")
    runs = []
    for point in grid_points(grid):
        d = copy.deepcopy(base)
        for k, v in point.items():
            _set_path(d, k, v)
        runs.append(d)
    return runs


def grid_points(grid: dict) -> list[dict]:
    """The grid assignments, in the same order as :func:`expand_grid`."""
    keys = list(grid)
    return [dict(zip(keys, values)) for values in itertools.product(*(grid[k] for k in keys))]


def _sweep_one(job):
    idx, d, point, out = job
    cfg = ExperimentConfig.from_dict(d)
    run_dir = Path(out) / f"run_{idx:03d}"
    result, _ = execute(cfg, run_dir)
    fit = result.get("rate_fit") or {}
    step = dict(result["stepsize"])
    return {
        "run_id": run_dir.name,
        "solver": result["solver"],
        "rule": step.pop("rule"),
        "parameters": json.dumps(step, sort_keys=True),
        "cycles": result.get("cycles_used"),
        "termination": result["termination"],
        "final_grad_norm": result.get("final_grad_norm"),
        "rho_hat": fit.get("rho_hat"),
        "r_squared": fit.get("r_squared"),
        "ratio_tail": fit.get("ratio_tail"),
        "classification": fit.get("classification", "inconclusive"),
        "grid": json.dumps(point, sort_keys=True),
    }


def _resolve_jobs(flag):
    if flag is not None:
        return flag
    env = os.environ.get("INEWT_JOBS")
    if env is None:
        return 1
    try:
        return int(env)
    except ValueError as exc:
        raise UsageError(f"INEWT_JOBS must be an integer, not {env!r}") from exc


def write_summary(rows, path):
    """Write the summary CSV atomically (temp file in the same directory, then rename)."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".summary-", suffix=".csv")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS)
            w.writeheader()
            for row in rows:
                w.writerow({k: ("" if row.get(k) is None else row[k]) for k in SUMMARY_COLUMNS})
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def cmd_sweep(args) -> int:
    sweep = _read_json(args.config)
    runs = expand_grid(sweep)
    if args.seed is not None:
        for d in runs:
            d.setdefault("problem", {})["seed"] = args.seed
    for d in runs:  # validate everything before starting
        ExperimentConfig.from_dict(d)
    jobs = _resolve_jobs(args.jobs)
    if jobs < 1:
        raise UsageError("--jobs must be at least 1")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    points = grid_points(sweep.get("grid", {}))
    work = [(i, d, p, str(out)) for i, (d, p) in enumerate(zip(runs, points))]
    if jobs == 1:
        rows = [_sweep_one(job) for job in work]
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_one, work))
    write_summary(rows, out / "summary.csv")
    print(out / "summary.csv")
    return 3 if any(r["termination"] == "stepsize_failure" for r in rows) else 0


def cmd_theory(args) -> int:
    vals = {k: getattr(args, k) for k in ("c", "C", "m", "M", "eta", "nu")}
    if args.config:
        d = _read_json(args.config)
        vals.update({k: d[k] for k in vals if vals[k] is None and k in d})
    missing = [k for k, v in vals.items() if v is None]
    if missing:
        raise UsageError(f"missing constants: {missing}")
    report = theory.theory_report(vals["c"], vals["C"], int(vals["m"]), vals["M"], vals["eta"], vals["nu"])
    text = json.dumps(report.to_dict(), indent=1)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def verify_files(trace_path, problem_path, result_path=None, eta=None, phi=None) -> dict:
    """Replay a recorded run and check every applicable bound; returns a JSON-ready report."""
    problem = problems.load_problem(problem_path)
    cols = engine.read_trace_csv(trace_path)
    n = problem.n
    if len(cols.get("alpha", [])) == 0:
        raise UsageError("trace has no cycles")
    starts = np.column_stack([cols[f"x_{j + 1}"] for j in range(n)])
    result = _read_json(result_path) if result_path else {}
    solver = result.get("solver", "nlls" if isinstance(problem, problems.NLLSProblem) else "in")
    curvature = engine.gauss_newton_curvature if solver == "ekfs" else engine.hessian_curvature
    H0 = None
    if solver == "ekfs":
        H0 = (result.get("ridge") or 0.0) * np.eye(n)
    if eta is None:
        eta = (result.get("stepsize") or {}).get("eta")
    trace_mode = (result.get("config") or {}).get("trace_mode", "standard")
    traces = engine.replay(problem, cols["alpha"], starts[0], curvature, H0, trace_mode)

    drift = []

    def checked(gen):
        for idx, tr in enumerate(gen):
            drift.append(float(np.linalg.norm(tr.start - starts[idx]) / (1 + np.linalg.norm(starts[idx]))))
            yield tr

    convergent = result.get("termination", "converged") == "converged"
    if isinstance(problem, problems.NLLSProblem):
        checks = [diagnostics.OuterStepIdentity(problem)]
        grad = []
        for tr in checked(traces):
            for ch in checks:
                ch.add(tr)
            grad.append(tr.full_grad_norm)
        bounds = {ch.name: ch.report() for ch in checks}
        rates = {"grad_norm": diagnostics.fit_rate(grad)} if len(grad) >= 20 else {}
    else:
        rep = diagnostics.verify(checked(traces), problem, eta, phi, trace_mode, convergent)
        bounds, rates = rep["bounds"], rep["rates"]
    replay_dev = max(drift) if drift else 0.0
    replay_ok = replay_dev <= 1e-9
    violated = any(b.violated for b in bounds.values()) or not replay_ok
    return {
        "violated": violated,
        "replay_max_deviation": replay_dev,
        "bounds": {k: {kk: _clean(vv) for kk, vv in b.to_dict().items()} for k, b in bounds.items()},
        "rates": {k: {kk: _clean(vv) for kk, vv in r.to_dict().items()} for k, r in rates.items()},
    }


def cmd_verify(args) -> int:
    for p in (args.trace, args.problem, args.result):
        if p is not None and not Path(p).is_file():
            raise UsageError(f"file not found: {p}")
    report = verify_files(args.trace, args.problem, args.result, args.eta, args.phi)
    text = json.dumps(report, indent=1, default=_json_default)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 1 if report["violated"] else 0


# --- entry point -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="inewt", description="Incremental Newton experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a problem JSON")
    g.add_argument("--config", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("run", help="run one experiment")
    r.add_argument("--config", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--seed", type=int)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run a parameter grid")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--jobs", type=int, help="parallel runs (default: $INEWT_JOBS or 1)")
    s.set_defaults(func=cmd_sweep)

    t = sub.add_parser("theory", help="print the theoretical constants as JSON")
    t.add_argument("--config")
    t.add_argument("--out")
    for name, typ in (("c", float), ("C", float), ("m", int), ("M", float), ("eta", float), ("nu", float)):
        t.add_argument(f"--{name}", type=typ)
    t.set_defaults(func=cmd_theory)

    v = sub.add_parser("verify", help="replay a trace and check the bounds")
    v.add_argument("--trace", required=True)
    v.add_argument("--problem", required=True)
    v.add_argument("--result")
    v.add_argument("--eta", type=float)
    v.add_argument("--phi", type=float)
    v.add_argument("--out")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ValueError, KeyError, TypeError) as exc:
        print(f"inewt {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except engine.NumericalError as exc:
        print(f"inewt {args.command}: numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
