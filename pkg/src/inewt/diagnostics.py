"""Executable bound checks over cycle traces and empirical rate classification.

Each check is an accumulator fed one trace at a time, so ``verify`` can stream
a replayed run once. Margins are (bound - observed) divided by
max(|bound|, |observed|), which makes the default 1e-9 tolerance a relative slack.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import theory
from .engine import outer_step_identity_check
from .stepsize import alpha_star as _alpha_star

TOLERANCE = 1e-9


def _rel_margin(bound, observed):
    bound = np.asarray(bound, dtype=float)
    observed = np.asarray(observed, dtype=float)
    scale = np.maximum(np.abs(bound), np.abs(observed))
    diff = bound - observed
    # both sides exactly zero: the entry cannot bind
    return np.where(scale > 0, diff / np.where(scale > 0, scale, 1.0), np.inf)


def _consts(obj) -> theory.ProblemConstants:
    if isinstance(obj, theory.ProblemConstants):
        return obj
    return theory.ProblemConstants.from_problem(obj)


@dataclass
class BoundReport:
    bound_name: str
    margins: np.ndarray          # worst normalized margin of each checked cycle
    cycles_checked: int
    tolerance: float = TOLERANCE
    skipped: str | None = None   # reason, when the check does not apply
    summary_margin: float | None = None  # run-level condition (Hessian error decay)
    details: dict = field(default_factory=dict)

    @property
    def worst_margin(self) -> float:
        vals = list(self.margins)
        if self.summary_margin is not None:
            vals.append(self.summary_margin)
        return float(min(vals)) if vals else math.inf

    @property
    def violated(self) -> bool:
        return self.worst_margin < -self.tolerance

    def to_dict(self) -> dict:
        worst = self.worst_margin
        return {
            "bound_name": self.bound_name,
            "cycles_checked": self.cycles_checked,
            "worst_margin": None if math.isinf(worst) else worst,
            "violated": self.violated,
            "tolerance": self.tolerance,
            "skipped": self.skipped,
            "summary_margin": self.summary_margin,
            "details": self.details,
        }


class _Check:
    name = ""

    def __init__(self, tolerance=TOLERANCE):
        self.tolerance = tolerance
        self.margins = []
        self.skipped = None

    def add(self, tr):
        if self.skipped is None:
            m = self.margin(tr)
            if m is not None and not math.isinf(m):
                self.margins.append(float(m))

    def margin(self, tr):
        raise NotImplementedError

    def report(self) -> BoundReport:
        return BoundReport(self.name, np.array(self.margins), len(self.margins), self.tolerance, self.skipped)


def _cumulative_weights(grad_norms, r):
    """S_j = sum_{i<j} (1+r)^(j-1-i) g_i for j = 1..m (S_1 = 0)."""
    S = np.zeros(len(grad_norms))
    for j in range(1, len(grad_norms)):
        S[j] = (1.0 + r) * S[j - 1] + grad_norms[j - 1]
    return S


class HessianGrowth(_Check):
    """c((k-1)m + i) <= lambda_min(H_i^k), lambda_max(H_i^k) <= C m k, and c k m / 2 <= lambda_min for k >= 2.
    Assumes the run started from H = 0."""

    name = "hessian_growth"

    def __init__(self, consts, tolerance=TOLERANCE):
        super().__init__(tolerance)
        self.c = consts.c
        self.C = consts.C

    def margin(self, tr):
        m, k = tr.m, tr.k
        i = np.arange(1, m + 1)
        lo, hi = tr.inner_H_eigbounds[:, 0], tr.inner_H_eigbounds[:, 1]
        worst = min(_rel_margin(lo, self.c * ((k - 1) * m + i)).min(),
                    _rel_margin(self.C * m * k, hi).min())
        if k >= 2:
            worst = min(worst, _rel_margin(lo, 0.5 * self.c * k * m).min())
        return worst


class GammaStar(_Check):
    """alpha_star^k / k <= 2(1-eta)Q."""

    name = "gamma_star"

    def __init__(self, consts, eta, tolerance=TOLERANCE):
        super().__init__(tolerance)
        self.eta, self.C = eta, consts.C
        self.phi = theory.phi(eta, consts.Q)

    def margin(self, tr):
        g_star = _alpha_star(tr, self.eta, self.C) / tr.k
        return _rel_margin(self.phi, g_star)


class InnerDistance(_Check):
    """||x_i^k - x_1^k|| <= gamma^k B_i^k ||grad f(x_1^k)|| for k >= 2.

    The B recursion grows by 1 + (2Q/m) max(1/k, phi). Without ``phi`` each
    cycle uses its own normalized stepsize, which is the tightest admissible choice.
    """

    name = "inner_distance"

    def __init__(self, consts, phi=None, tolerance=TOLERANCE):
        super().__init__(tolerance)
        self.consts, self.phi = consts, phi
        if consts.M is None:
            self.skipped = "gradient growth constant M not set; bound does not apply"

    def margin(self, tr):
        if tr.k < 2:
            return None
        phi = tr.gamma if self.phi is None else self.phi
        B, _ = theory.B_sequence(phi, self.consts, k=tr.k)
        bound = tr.gamma * B * tr.full_grad_norm
        return _rel_margin(bound, tr.inner_dists).min()


class DeltaBound(_Check):
    """||grad f_j(x_j) - grad f_j(x_1)|| <= r sum_{i<j} (1+r)^(j-1-i) ||grad f_i(x_1)||, r = (2Q/m) gamma."""

    name = "delta_bound"

    def __init__(self, consts, tolerance=TOLERANCE):
        super().__init__(tolerance)
        self.Q = consts.Q

    def margin(self, tr):
        if tr.k < 2:
            return None
        r = 2.0 * self.Q / tr.m * tr.gamma
        S = _cumulative_weights(tr.grad_norms_at_start, r)
        return _rel_margin(r * S, tr.delta_norms).min()


class GradientErrorBound(_Check):
    """||e^k|| <= (r + 2Q/(km)) sum_{j>=2} sum_{i<j} (1+r)^(j-1-i) ||grad f_i(x_1)||."""

    name = "gradient_error_bound"

    def __init__(self, consts, tolerance=TOLERANCE):
        super().__init__(tolerance)
        self.Q = consts.Q

    def margin(self, tr):
        if tr.k < 2:
            return None
        m = tr.m
        r = 2.0 * self.Q / m * tr.gamma
        S = _cumulative_weights(tr.grad_norms_at_start, r)
        bound = (r + 2.0 * self.Q / (tr.k * m)) * S[1:].sum()
        return float(_rel_margin(bound, np.linalg.norm(tr.grad_error)))


class HessianErrorDecay(_Check):
    """||ehat^k|| <= (C - c) m on every cycle; on convergent runs the last-quartile mean
    must be at most half the first-quartile mean (plus a rounding floor)."""

    name = "hessian_error_decay"

    def __init__(self, consts, convergent=True, tolerance=TOLERANCE):
        super().__init__(tolerance)
        self.bound = (consts.C - consts.c) * consts.m
        # sums of m Hessians carry rounding noise of this size; quadratics sit at it
        self.noise = 1e-12 * consts.C * consts.m
        self.convergent = convergent
        self.values = []

    def margin(self, tr):
        if tr.ehat_norm is None:
            self.skipped = "Hessian error not recorded (needs trace_mode=full)"
            return None
        self.values.append(tr.ehat_norm)
        return _rel_margin(self.bound, tr.ehat_norm)

    def report(self):
        rep = super().report()
        if self.skipped is None and self.convergent and len(self.values) >= 4:
            q = len(self.values) // 4
            first, last = float(np.mean(self.values[:q])), float(np.mean(self.values[-q:]))
            rep.summary_margin = float(_rel_margin(0.5 * first + self.noise, last))
            rep.details = {"first_quartile_mean": first, "last_quartile_mean": last}
        return rep


class OuterStepIdentity(_Check):
    """The cycle endpoint equals x_1 - gamma Hbar^{-1}(grad f(x_1) + e), up to 1e-9 (1 + ||x||)."""

    name = "outer_step_identity"

    def __init__(self, problem, tolerance=TOLERANCE):
        super().__init__(tolerance)
        self.problem = problem

    def margin(self, tr):
        res = outer_step_identity_check(tr, self.problem)
        return -res / (1.0 + np.linalg.norm(tr.start))


def _run_check(check, traces):
    for tr in traces:
        check.add(tr)
    return check.report()


def check_hessian_growth(traces, consts, tolerance=TOLERANCE) -> BoundReport:
    return _run_check(HessianGrowth(_consts(consts), tolerance), traces)


def check_gamma_star(traces, eta, consts, tolerance=TOLERANCE) -> BoundReport:
    return _run_check(GammaStar(_consts(consts), eta, tolerance), traces)


def check_inner_distance(traces, consts, phi=None, tolerance=TOLERANCE) -> BoundReport:
    return _run_check(InnerDistance(_consts(consts), phi, tolerance), traces)


def check_delta_bound(traces, consts, tolerance=TOLERANCE) -> BoundReport:
    return _run_check(DeltaBound(_consts(consts), tolerance), traces)


def check_gradient_error_bound(traces, consts, tolerance=TOLERANCE) -> BoundReport:
    return _run_check(GradientErrorBound(_consts(consts), tolerance), traces)


def check_hessian_error_decay(traces, consts, convergent=True, tolerance=TOLERANCE) -> BoundReport:
    return _run_check(HessianErrorDecay(_consts(consts), convergent, tolerance), traces)


def check_outer_step_identity(traces, problem, tolerance=TOLERANCE) -> BoundReport:
    return _run_check(OuterStepIdentity(problem, tolerance), traces)


def example1_error_oracle(k: int, alpha: float, x: float, epsilon: float) -> float:
    """Closed-form gradient error of one cycle on the two-component scalar example."""
    if not alpha > 0 or k < 1:
        raise ValueError("need alpha > 0 and k >= 1")
    gamma = alpha / k
    return -(gamma / 2 - 1 / (2 * k)) * (2 * k / (2 * k - 1)) * (1000 + 2 * epsilon * x)


# --- rates -------------------------------------------------------------------

@dataclass(frozen=True)
class RateFit:
    window: float
    rho_hat: float
    r_squared: float
    ratio_tail: float
    classification: str          # linear | sublinear | inconclusive
    n_points: int
    exact_convergence: bool = False

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def fit_rate(series, window_fraction: float = 0.5, delta_rate: float = 0.02,
             r2_threshold: float = 0.95) -> RateFit:
    """Fit log d_k against k over the trailing window; rho_hat = exp(slope)."""
    d = np.asarray(series, dtype=float)
    if d.ndim != 1 or len(d) < 20:
        raise ValueError("need a 1-d series of length at least 20")
    if not 0 < window_fraction <= 1:
        raise ValueError("window_fraction must lie in (0, 1]")
    if np.any(d < 0) or not np.all(np.isfinite(d)):
        raise ValueError("series entries must be finite and nonnegative")
    exact = False
    zeros = np.flatnonzero(d == 0)
    if zeros.size:
        d, exact = d[:zeros[0]], True
    N = len(d)
    if N < 3:
        return RateFit(window_fraction, 0.0, 1.0, 0.0, "inconclusive", N, exact)
    w = max(2, math.ceil(window_fraction * N))
    k = np.arange(N - w, N, dtype=float)
    y = np.log(d[N - w:])
    slope, intercept = np.polyfit(k, y, 1)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum((y - (slope * k + intercept)) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    t = max(2, math.ceil(0.1 * N))
    ratio_tail = float(np.exp((np.log(d[-1]) - np.log(d[-t])) / (t - 1)))
    rho = float(np.exp(slope))
    if rho <= 1 - delta_rate and r2 >= r2_threshold:
        cls = "linear"
    elif ratio_tail >= 1 - delta_rate:
        cls = "sublinear"
    else:
        cls = "inconclusive"
    return RateFit(window_fraction, rho, r2, ratio_tail, cls, N, exact)


# --- one-pass verification ---------------------------------------------------

def verify(traces, problem, eta=None, phi=None, trace_mode="standard", convergent=True) -> dict:
    """Stream ``traces`` once through every applicable check.

    Returns {"bounds": {name: BoundReport}, "rates": {series: RateFit}, "violated": bool}.
    The Hessian growth check assumes H started at zero.
    """
    consts = _consts(problem)
    checks = [
        HessianGrowth(consts),
        InnerDistance(consts, phi),
        DeltaBound(consts),
        GradientErrorBound(consts),
        OuterStepIdentity(problem),
    ]
    if eta is not None:
        checks.append(GammaStar(consts, eta))
    if trace_mode == "full":
        checks.append(HessianErrorDecay(consts, convergent))
    grad_norms, dists = [], []
    for tr in traces:
        for ch in checks:
            ch.add(tr)
        grad_norms.append(tr.full_grad_norm)
        if tr.dist_to_opt is not None:
            dists.append(tr.dist_to_opt)
    bounds = {ch.name: ch.report() for ch in checks}
    rates = {}
    for name, s in (("grad_norm", grad_norms), ("dist_to_opt", dists)):
        if len(s) >= 20:
            rates[name] = fit_rate(s)
    return {"bounds": bounds, "rates": rates, "violated": any(b.violated for b in bounds.values())}
