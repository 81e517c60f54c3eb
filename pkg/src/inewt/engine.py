"""Incremental Newton cycles.

One cycle visits the components in their fixed order. Each inner step first
adds the component's curvature at the current point to the running matrix H
and then solves with H. H is never reset between cycles.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve
from scipy.spatial.distance import pdist

from .problems import full_gradient

TERMINATIONS = ("converged", "max_cycles", "stepsize_failure")


class NumericalError(ArithmeticError):
    """The accumulated matrix stopped being numerically positive definite."""

    def __init__(self, msg, k=None, i=None, result=None):
        super().__init__(msg)
        self.k = k
        self.i = i
        self.result = result


def hessian_curvature(comp, x):
    return comp.hessian(x)


def gauss_newton_curvature(comp, x):
    return comp.gauss_newton_curvature(x)


def spd_solve(H, g, k=None, i=None):
    """Solve H y = g through a Cholesky factorization of H."""
    if H.shape[0] == 1:
        h = H[0, 0]
        if not h > 0 or not math.isfinite(h):
            raise NumericalError(f"accumulated matrix not positive definite at k={k}, i={i}", k, i)
        return g / h
    try:
        L = np.linalg.cholesky(H)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"accumulated matrix not positive definite at k={k}, i={i}", k, i) from exc
    return cho_solve((L, True), g, check_finite=False)


def extreme_eigs(H):
    if H.shape[0] == 1:
        return H[0, 0], H[0, 0]
    w = np.linalg.eigvalsh(H)
    return w[0], w[-1]


@dataclass
class InnerState:
    k: int
    i: int
    x: np.ndarray
    H: np.ndarray


def inner_update(state: InnerState, comp, alpha: float, curvature=hessian_curvature) -> InnerState:
    """Add the curvature of ``comp`` at x to H, then step x - alpha H^{-1} grad."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    H = state.H + curvature(comp, state.x)
    step = spd_solve(H, comp.gradient(state.x), state.k, state.i + 1)
    return InnerState(state.k, state.i + 1, state.x - alpha * step, H)


@dataclass
class CycleTrace:
    """Everything recorded about cycle k.

    ``inner_dists[i]`` is ||x_{i+1} - x_1|| (so entry 0 is zero),
    ``delta_norms[j]`` is ||grad f_j(x_j) - grad f_j(x_1)||, and
    ``inner_H_eigbounds[i]`` holds (lambda_min, lambda_max) of H after inner
    step i+1.
    """

    k: int
    alpha: float
    start: np.ndarray
    end: np.ndarray
    inner_points: np.ndarray | None
    inner_H_eigbounds: np.ndarray
    grad_error: np.ndarray
    grad_norms_at_start: np.ndarray
    full_grad_norm: float
    inner_dists: np.ndarray
    delta_norms: np.ndarray
    H_end: np.ndarray
    step_curvature: float
    dist_to_opt: float | None = None
    ehat_norm: float | None = None
    alpha_star: float | None = None
    trial_count: int = 1

    @property
    def gamma(self) -> float:
        return self.alpha / self.k

    @property
    def m(self) -> int:
        return len(self.grad_norms_at_start)

    @property
    def points(self) -> np.ndarray | None:
        """x_1..x_m as an (m, n) array, or None when inner points were dropped."""
        if self.inner_points is None:
            return None
        return np.vstack([self.start[None, :], self.inner_points])


def run_cycle(x_start, H_in, problem, alpha: float, k: int = 1,
              curvature=hessian_curvature, keep_inner: bool = True) -> CycleTrace:
    """Run the m inner updates of cycle k from (x_start, H_in)."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    comps = problem.components
    m = len(comps)
    x1 = np.array(x_start, dtype=float)
    n = x1.shape[0]
    H = np.array(H_in, dtype=float, copy=True)
    x = x1
    pts = np.empty((m, n))
    grads = np.empty((m, n))
    curv_terms = np.zeros(n)
    eig = np.empty((m, 2))
    for i, comp in enumerate(comps):
        pts[i] = x
        G = curvature(comp, x)
        H += G
        g = comp.gradient(x)
        grads[i] = g
        curv_terms += G @ (x1 - x)
        eig[i] = extreme_eigs(H)
        x = x - alpha * spd_solve(H, g, k, i + 1)
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"non-finite iterate at k={k}", k, m)
    start_grads = np.array([comp.gradient(x1) for comp in comps])
    full = start_grads.sum(axis=0)
    # e^k = sum_j grad f_j(x_j) - grad f_j(x_1) + (1/alpha) G_j (x_1 - x_j)
    e = grads.sum(axis=0) - full + curv_terms / alpha
    d = x - x1
    return CycleTrace(
        k=k,
        alpha=float(alpha),
        start=x1,
        end=x,
        inner_points=pts[1:].copy() if keep_inner else None,
        inner_H_eigbounds=eig,
        grad_error=e,
        grad_norms_at_start=np.linalg.norm(start_grads, axis=1),
        full_grad_norm=float(np.linalg.norm(full)),
        inner_dists=np.linalg.norm(pts - x1, axis=1),
        delta_norms=np.linalg.norm(grads - start_grads, axis=1),
        H_end=H,
        step_curvature=float(d @ H @ d),
        dist_to_opt=None if problem.known_minimizer is None else float(np.linalg.norm(x1 - problem.known_minimizer)),
    )


def closed_form_cycle(x_start, H_in, problem, alpha: float, curvature=hessian_curvature) -> list:
    """x_2..x_{m+1} formed from the aggregated expression

        x_{i+1} = x_1 - alpha H_i^{-1} sum_{j<=i} (grad f_j(x_j) + G_j (x_1 - x_j) / alpha)

    where G_j is the curvature at x_j and H_i = H_in + sum_{j<=i} G_j.
    """
    x1 = np.array(x_start, dtype=float)
    H = np.array(H_in, dtype=float, copy=True)
    agg = np.zeros_like(x1)
    x = x1
    out = []
    for i, comp in enumerate(problem.components):
        G = curvature(comp, x)
        H += G
        agg = agg + comp.gradient(x) + G @ (x1 - x) / alpha
        x = x1 - alpha * spd_solve(H, agg, None, i + 1)
        out.append(x)
    return out


def gradient_error(points, alpha: float, problem, curvature=hessian_curvature) -> np.ndarray:
    """Gradient error e^k of a cycle given its points x_1..x_m (x_1 first)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    x1 = points[0]
    e = np.zeros(problem.n)
    for xj, comp in zip(points, problem.components):
        e += comp.gradient(xj) - comp.gradient(x1) + curvature(comp, xj) @ (x1 - xj) / alpha
    return e


def outer_step_identity_check(trace: CycleTrace, problem) -> float:
    """|| x_1^{k+1} - (x_1^k - gamma Hbar^{-1} (grad f(x_1^k) + e^k)) || with Hbar = H_m^k / k."""
    Hbar = trace.H_end / trace.k
    rhs = full_gradient(problem, trace.start) + trace.grad_error
    predicted = trace.start - trace.gamma * spd_solve(Hbar, rhs, trace.k)
    return float(np.linalg.norm(trace.end - predicted))


@dataclass
class HessianErrorAccumulators:
    """S1 = sum over cycles of the curvature added; S2 = sum of full Hessians at cycle starts."""

    S1: np.ndarray
    S2: np.ndarray
    k: int = 0

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros((n, n)), np.zeros((n, n)))

    def update(self, H_end, H_origin, hessian_at_start):
        self.S1 = np.array(H_end - H_origin, dtype=float)
        self.S2 = self.S2 + hessian_at_start
        self.k += 1


def hessian_error(accums: HessianErrorAccumulators, k: int | None = None):
    """Returns (ehat, spectral norm of ehat) with ehat = (S1 - S2) / k."""
    k = accums.k if k is None else k
    E = (accums.S1 - accums.S2) / k
    return E, float(np.linalg.norm(E, 2))


@dataclass
class RunConfig:
    max_cycles: int = 1000
    grad_tolerance: float = 1e-10
    trace_mode: str = "standard"  # "full" also accumulates the Hessian error
    trace_limit: int = 1000       # traces kept for k <= trace_limit (all of them in full mode)
    x0: np.ndarray | None = None

    def __post_init__(self):
        if self.trace_mode not in ("standard", "full"):
            raise ValueError(f"unknown trace_mode {self.trace_mode!r}")
        if not self.grad_tolerance > 0:
            raise ValueError("grad_tolerance must be positive")
        if self.max_cycles < 1:
            raise ValueError("max_cycles must be at least 1")


HISTORY_COLUMNS = ("k", "alpha", "gamma", "grad_norm", "dist_to_opt", "e_norm", "ehat_norm",
                   "lambda_min_H", "lambda_max_H", "alpha_star", "trial_count")


@dataclass
class RunResult:
    traces: list
    final_x: np.ndarray
    final_grad_norm: float
    cycles_used: int
    termination: str
    history: dict = field(default_factory=dict)
    starts: np.ndarray | None = None
    diameter_R: float | None = None

    def series(self, name: str) -> np.ndarray:
        return self.history[name]


def _total_curvature(problem, x, curvature):
    return sum(curvature(comp, x) for comp in problem.components)


def _observed_diameter(points: np.ndarray) -> float:
    if len(points) < 2:
        return 0.0
    if len(points) <= 4000:
        return float(pdist(points).max())
    # upper estimate: twice the largest distance to the mean
    return float(2 * np.linalg.norm(points - points.mean(axis=0), axis=1).max())


def run(problem, rule, config: RunConfig | None = None, curvature=hessian_curvature,
        H0=None) -> RunResult:
    """Run cycles until ||grad f(x_1^k)|| <= grad_tolerance or max_cycles cycles."""
    config = config or RunConfig()
    n = problem.n
    x = np.zeros(n) if config.x0 is None else np.array(config.x0, dtype=float)
    if x.shape != (n,):
        raise ValueError("x0 has the wrong dimension")
    H_origin = np.zeros((n, n)) if H0 is None else np.array(H0, dtype=float)
    H = H_origin.copy()
    rule.validate(problem)
    full_mode = config.trace_mode == "full"
    accums = HessianErrorAccumulators.zeros(n) if full_mode else None
    x_star = problem.known_minimizer

    traces, rows, starts = [], [], []
    prev_alpha = None
    termination = "max_cycles"
    cycles = 0

    def result(term):
        hist = {name: np.array([r[j] for r in rows], dtype=float) for j, name in enumerate(HISTORY_COLUMNS)}
        pts = np.array(starts + [x]) if starts else x[None, :]
        return RunResult(traces, x, float(np.linalg.norm(full_gradient(problem, x))), cycles, term,
                         hist, np.array(starts).reshape(-1, n), _observed_diameter(pts))

    for k in range(1, config.max_cycles + 1):
        gnorm = float(np.linalg.norm(full_gradient(problem, x)))
        if gnorm <= config.grad_tolerance:
            termination = "converged"
            break
        keep = full_mode or k <= config.trace_limit

        def trial(alpha, _k=k, _x=x, _H=H, _keep=keep):
            return run_cycle(_x, _H, problem, alpha, _k, curvature, _keep)

        try:
            decision = rule.choose(trial, k, prev_alpha, problem.C)
        except NumericalError as exc:
            exc.result = result("stepsize_failure")
            raise
        tr = decision.trace
        tr.alpha_star = decision.alpha_star
        tr.trial_count = decision.trial_count
        if accums is not None:
            accums.update(tr.H_end, H_origin, _total_curvature(problem, tr.start, curvature))
            tr.ehat_norm = hessian_error(accums)[1]
        lmin, lmax = tr.inner_H_eigbounds[-1]
        rows.append((k, tr.alpha, tr.gamma, tr.full_grad_norm,
                     math.nan if tr.dist_to_opt is None else tr.dist_to_opt,
                     float(np.linalg.norm(tr.grad_error)),
                     math.nan if tr.ehat_norm is None else tr.ehat_norm,
                     lmin, lmax,
                     math.nan if tr.alpha_star is None else tr.alpha_star,
                     tr.trial_count))
        starts.append(tr.start)
        if keep:
            traces.append(tr)
        x, H = tr.end, tr.H_end
        prev_alpha = tr.alpha
        cycles = k
    else:
        if float(np.linalg.norm(full_gradient(problem, x))) <= config.grad_tolerance:
            termination = "converged"
    return result(termination)


# --- CSV traces ----------------------------------------------------------------

def trace_csv_header(n: int) -> list:
    return list(HISTORY_COLUMNS) + [f"x_{j + 1}" for j in range(n)]


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return ""
    return repr(v)


def write_trace_csv(result: RunResult, path) -> None:
    """One row per cycle; start coordinates are written exactly so a run can be replayed."""
    n = result.final_x.shape[0]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(trace_csv_header(n))
        for idx in range(result.cycles_used):
            row = [_fmt(int(result.history["k"][idx]))]
            row += [_fmt(result.history[name][idx]) for name in HISTORY_COLUMNS[1:-1]]
            row.append(_fmt(int(result.history["trial_count"][idx])))
            row += [_fmt(v) for v in result.starts[idx]]
            w.writerow(row)


def read_trace_csv(path) -> dict:
    """Columns of a trace CSV as float arrays (empty cells become NaN)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [r for r in reader if r]
    cols = {}
    for j, name in enumerate(header):
        cols[name] = np.array([float(r[j]) if r[j] != "" else math.nan for r in rows])
    return cols


def replay(problem, alphas, x0, curvature=hessian_curvature, H0=None, trace_mode="standard"):
    """Yield the cycle traces obtained by re-running the recorded stepsizes."""
    n = problem.n
    x = np.array(x0, dtype=float)
    H_origin = np.zeros((n, n)) if H0 is None else np.array(H0, dtype=float)
    H = H_origin.copy()
    accums = HessianErrorAccumulators.zeros(n) if trace_mode == "full" else None
    for k, alpha in enumerate(alphas, start=1):
        tr = run_cycle(x, H, problem, float(alpha), k, curvature)
        if accums is not None:
            accums.update(tr.H_end, H_origin, _total_curvature(problem, tr.start, curvature))
            tr.ehat_norm = hessian_error(accums)[1]
        yield tr
        x, H = tr.end, tr.H_end

