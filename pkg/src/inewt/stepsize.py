"""Stepsize rules for incremental Newton cycles.

The variable rules depend on alpha_star, which can only be evaluated after a
cycle has been run with the candidate stepsize. Rules therefore receive a
``trial(alpha)`` callable that runs one cycle from the current state and
returns its trace; rejected trials are discarded.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class StepDecision:
    alpha: float
    alpha_star: float | None
    trial_count: int
    trace: object  # CycleTrace of the accepted trial


def alpha_star_from(d, H, inner_dist_sum: float, m: int, eta: float, C: float) -> float:
    """(1-eta)/C * d'Hd / (||d|| * sum_i ||x_i - x_1|| + (m/2)||d||^2), or 0 when d = 0."""
    d = np.asarray(d, dtype=float)
    if not np.any(d):
        return 0.0
    dn = float(np.linalg.norm(d))
    return (1.0 - eta) / C * float(d @ np.asarray(H) @ d) / (dn * inner_dist_sum + 0.5 * m * dn * dn)


def alpha_star(trace, eta: float, C: float, H=None) -> float:
    """alpha_star of a finished cycle; H defaults to the matrix at the end of the cycle."""
    d = trace.end - trace.start
    if not np.any(d):
        return 0.0
    dist_sum = float(np.sum(trace.inner_dists[1:]))
    if H is None:
        dn = float(np.linalg.norm(d))
        return (1.0 - eta) / C * trace.step_curvature / (dn * dist_sum + 0.5 * trace.m * dn * dn)
    return alpha_star_from(d, H, dist_sum, trace.m, eta, C)


def acceptable(alpha: float, a_star: float) -> bool:
    return 1.0 <= alpha <= max(1.0, a_star)


def constant_normalized(k: int, gamma: float) -> float:
    if not gamma > 0 or k < 1:
        raise ValueError("need gamma > 0 and k >= 1")
    return gamma * k


def bisection_trial_bound(initial_alpha: float, tau: float) -> int:
    if initial_alpha <= 1:
        return 1
    return math.ceil(math.log(initial_alpha) / math.log(1.0 / tau)) + 1


def choose_bisection(trial, k: int, eta: float, tau: float, initial_alpha: float, C: float) -> StepDecision:
    """Try alpha, tau*alpha, ... (floored at 1) until 1 <= alpha <= max(1, alpha_star).

    alpha = 1 is always accepted, so the loop ends.
    """
    if initial_alpha < 1:
        raise ValueError("initial_alpha must be at least 1")
    if not 0 < tau < 1:
        raise ValueError("tau must lie in (0, 1)")
    alpha = float(initial_alpha)
    count = 0
    while True:
        count += 1
        tr = trial(alpha)
        a_star = alpha_star(tr, eta, C)
        if acceptable(alpha, a_star):
            return StepDecision(alpha, a_star, count, tr)
        alpha = max(1.0, tau * alpha)


def choose_linear_growth(trial, k: int, eta_hat: float, nu_hat: float, kappa_hat: float, C: float) -> StepDecision:
    """alpha = nu*kappa*k when 1 <= nu*kappa*k <= max(1, alpha_star), else alpha = 1."""
    target = nu_hat * kappa_hat * k
    if target < 1:
        tr = trial(1.0)
        return StepDecision(1.0, alpha_star(tr, eta_hat, C), 1, tr)
    tr = trial(target)
    a_star = alpha_star(tr, eta_hat, C)
    if acceptable(target, a_star):
        return StepDecision(target, a_star, 1, tr)
    tr = trial(1.0)
    return StepDecision(1.0, alpha_star(tr, eta_hat, C), 2, tr)


def _check_C(problem):
    C = getattr(problem, "C", None)
    if C is None or not C > 0 or not math.isfinite(C):
        raise ValueError("variable stepsizes need the curvature upper bound C in the problem metadata")


def _plain(trial, alpha, eta, C):
    tr = trial(alpha)
    a_star = None if eta is None else alpha_star(tr, eta, C)
    return StepDecision(alpha, a_star, 1, tr)


@dataclass(frozen=True)
class Unit:
    """alpha^k = 1. ``eta``, when given, only controls the recorded alpha_star."""

    eta: float | None = None
    name = "unit"

    def validate(self, problem):
        pass

    def choose(self, trial, k, prev_alpha, C):
        return _plain(trial, 1.0, self.eta, C)


@dataclass(frozen=True)
class ConstantNormalized:
    """alpha^k = gamma * k, i.e. a constant normalized stepsize."""

    gamma: float
    eta: float | None = None
    name = "constant"

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")

    def validate(self, problem):
        pass

    def choose(self, trial, k, prev_alpha, C):
        return _plain(trial, constant_normalized(k, self.gamma), self.eta, C)


@dataclass(frozen=True)
class PowerSchedule:
    """alpha^k = offset + scale * k**power (offset 1, power 1/2 gives 1 + sqrt(k))."""

    offset: float = 1.0
    scale: float = 1.0
    power: float = 0.5
    eta: float | None = None
    name = "power"

    def validate(self, problem):
        pass

    def choose(self, trial, k, prev_alpha, C):
        alpha = self.offset + self.scale * k**self.power
        if not alpha > 0:
            raise ValueError("schedule produced a nonpositive stepsize")
        return _plain(trial, alpha, self.eta, C)


@dataclass(frozen=True)
class VariableBisection:
    """Backtracking on alpha until the variable-stepsize condition holds.

    initial_alpha_policy:
      "warm"   previous accepted alpha times k/(k-1), at least 1 (``initial_alpha`` at k=1)
      "fixed"  ``initial_alpha`` every cycle
      "linear" max(1, nu_hat * kappa_hat * k)
    """

    eta: float = 0.9
    tau: float = 0.5
    initial_alpha_policy: str = "warm"
    initial_alpha: float = 1.0
    nu_hat: float | None = None
    kappa_hat: float | None = None
    name = "bisection"

    def __post_init__(self):
        if not 0 < self.eta < 1:
            raise ValueError("eta must lie in (0, 1)")
        if not 0 < self.tau < 1:
            raise ValueError("tau must lie in (0, 1)")
        if self.initial_alpha < 1:
            raise ValueError("initial_alpha must be at least 1")
        if self.initial_alpha_policy not in ("warm", "fixed", "linear"):
            raise ValueError(f"unknown initial_alpha_policy {self.initial_alpha_policy!r}")
        if self.initial_alpha_policy == "linear" and (self.nu_hat is None or self.kappa_hat is None):
            raise ValueError("the linear policy needs nu_hat and kappa_hat")

    def validate(self, problem):
        _check_C(problem)

    def first_alpha(self, k, prev_alpha):
        if self.initial_alpha_policy == "fixed":
            return self.initial_alpha
        if self.initial_alpha_policy == "linear":
            return max(1.0, self.nu_hat * self.kappa_hat * k)
        if k == 1 or prev_alpha is None:
            return self.initial_alpha
        return max(1.0, prev_alpha * k / (k - 1))

    def choose(self, trial, k, prev_alpha, C):
        return choose_bisection(trial, k, self.eta, self.tau, self.first_alpha(k, prev_alpha), C)


@dataclass(frozen=True)
class LinearGrowth:
    """alpha^k = nu*kappa*k when admissible, 1 otherwise."""

    eta_hat: float
    nu_hat: float
    kappa_hat: float
    name = "linear_growth"

    def __post_init__(self):
        if not 0 < self.eta_hat < 1:
            raise ValueError("eta_hat must lie in (0, 1)")
        if not 0 < self.nu_hat < 1:
            raise ValueError("nu_hat must lie in (0, 1)")
        if not self.kappa_hat > 0:
            raise ValueError("kappa_hat must be positive")

    @property
    def eta(self):
        return self.eta_hat

    def validate(self, problem):
        _check_C(problem)

    def choose(self, trial, k, prev_alpha, C):
        return choose_linear_growth(trial, k, self.eta_hat, self.nu_hat, self.kappa_hat, C)


def rule_from_config(cfg: dict):
    """Build a rule from the JSON fields rule, gamma, eta, tau, nu_hat, kappa_hat, initial_alpha."""
    name = cfg.get("rule", "unit")
    eta = cfg.get("eta")
    if name == "unit":
        return Unit(eta)
    if name == "constant":
        return ConstantNormalized(float(cfg["gamma"]), eta)
    if name == "power":
        return PowerSchedule(cfg.get("offset", 1.0), cfg.get("scale", 1.0), cfg.get("power", 0.5), eta)
    if name == "bisection":
        return VariableBisection(
            eta=0.9 if eta is None else eta,
            tau=cfg.get("tau", 0.5),
            initial_alpha_policy=cfg.get("initial_alpha_policy", "warm"),
            initial_alpha=cfg.get("initial_alpha", 1.0),
            nu_hat=cfg.get("nu_hat"),
            kappa_hat=cfg.get("kappa_hat"),
        )
    if name == "linear_growth":
        return LinearGrowth(cfg.get("eta_hat", eta), cfg["nu_hat"], cfg["kappa_hat"])
    raise ValueError(f"unknown stepsize rule {name!r}")


def rule_to_config(rule) -> dict:
    out = {"rule": rule.name}
    for key in ("gamma", "eta", "tau", "initial_alpha_policy", "initial_alpha", "nu_hat",
                "kappa_hat", "offset", "scale", "power"):
        if hasattr(rule, key) and getattr(rule, key) is not None:
            out[key] = getattr(rule, key)
    if rule.name == "linear_growth":
        out["eta"] = rule.eta_hat
    return out
