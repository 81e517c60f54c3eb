"""Finite-sum test problems f(x) = sum_i f_i(x) and their generators.

Every component is plain data (matrices and vectors), so a problem can be
written to JSON and read back bit-for-bit.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Protocol, Sequence

import numpy as np

LOG2 = float(np.log(2.0))


def _frozen(a, ndim: int) -> np.ndarray:
    out = np.array(a, dtype=float, ndmin=ndim)
    out.flags.writeable = False
    return out


def _sech2(t):
    """sech(t)^2 without overflow."""
    e = np.exp(-2.0 * np.abs(t))
    return 4.0 * e / (1.0 + e) ** 2


def _check_point(x, n: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (n,):
        raise ValueError(f"expected a point of shape ({n},), got {x.shape}")
    return x


class ComponentOracle(Protocol):
    def value(self, x: np.ndarray) -> float: ...

    def gradient(self, x: np.ndarray) -> np.ndarray: ...

    def hessian(self, x: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True, eq=False)
class QuadraticComponent:
    """f(x) = 1/2 x'Ax + b'x + w * sum_j logcosh(x_j - center_j).

    With ``logcosh_weight`` 0 this is a plain quadratic. The log-cosh term has
    zero gradient at ``center`` and a diagonal Hessian with entries in (0, w].
    """

    A: np.ndarray
    b: np.ndarray
    logcosh_weight: float = 0.0
    center: np.ndarray | None = None

    def __post_init__(self):
        A = _frozen(self.A, 2)
        if A.shape[0] != A.shape[1] or not np.allclose(A, A.T, rtol=0, atol=1e-12 * (1 + np.abs(A).max())):
            raise ValueError("A must be a symmetric square matrix")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", _frozen(self.b, 1))
        if self.b.shape != (A.shape[0],):
            raise ValueError("b has the wrong dimension")
        w = float(self.logcosh_weight)
        if w < 0:
            raise ValueError("logcosh_weight must be nonnegative")
        object.__setattr__(self, "logcosh_weight", w)
        if w > 0:
            if self.center is None:
                raise ValueError("a log-cosh term needs a center")
            object.__setattr__(self, "center", _frozen(self.center, 1))
        elif self.center is not None:
            object.__setattr__(self, "center", _frozen(self.center, 1))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    def value(self, x):
        x = np.asarray(x, dtype=float)
        out = 0.5 * x @ self.A @ x + self.b @ x
        if self.logcosh_weight:
            t = x - self.center
            out += self.logcosh_weight * float(np.sum(np.logaddexp(t, -t) - LOG2))
        return float(out)

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        g = self.A @ x + self.b
        if self.logcosh_weight:
            g = g + self.logcosh_weight * np.tanh(x - self.center)
        return g

    def hessian(self, x):
        if not self.logcosh_weight:
            return self.A
        t = np.asarray(x, dtype=float) - self.center
        return self.A + np.diag(self.logcosh_weight * _sech2(t))

    def to_dict(self) -> dict:
        d = {"kind": "quadratic", "A": self.A.tolist(), "b": self.b.tolist()}
        if self.logcosh_weight:
            d["logcosh_weight"] = self.logcosh_weight
            d["center"] = self.center.tolist()
        return d


@dataclass(frozen=True, eq=False)
class ResidualComponent:
    """Scalar residual g(x) = t + beta*tanh(t) - target, with t = a'(x - shift).

    ``beta = 0`` gives the linear residual a'x - b (shift 0, target b). With
    beta >= 0 the map t -> t + beta*tanh(t) is strictly increasing, so the
    residual has a root whenever a != 0. The induced objective component is
    1/2 g(x)^2.
    """

    a: np.ndarray
    target: float = 0.0
    beta: float = 0.0
    shift: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "a", _frozen(self.a, 1))
        object.__setattr__(self, "target", float(self.target))
        object.__setattr__(self, "beta", float(self.beta))
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        shift = np.zeros_like(self.a) if self.shift is None else self.shift
        object.__setattr__(self, "shift", _frozen(shift, 1))

    @property
    def n(self) -> int:
        return self.a.shape[0]

    def _t(self, x):
        return float(self.a @ (np.asarray(x, dtype=float) - self.shift))

    def residual(self, x) -> float:
        t = self._t(x)
        return t + self.beta * np.tanh(t) - self.target

    def residual_gradient(self, x) -> np.ndarray:
        t = self._t(x)
        return (1.0 + self.beta * _sech2(t)) * self.a

    def value(self, x):
        return 0.5 * self.residual(x) ** 2

    def gradient(self, x):
        return self.residual(x) * self.residual_gradient(x)

    def hessian(self, x):
        t = self._t(x)
        J = self.residual_gradient(x)
        curv = -2.0 * self.beta * np.tanh(t) * _sech2(t)
        return np.outer(J, J) + self.residual(x) * curv * np.outer(self.a, self.a)

    def gauss_newton_curvature(self, x):
        J = self.residual_gradient(x)
        return np.outer(J, J)

    def to_dict(self) -> dict:
        return {
            "kind": "residual",
            "a": self.a.tolist(),
            "target": self.target,
            "beta": self.beta,
            "shift": self.shift.tolist(),
        }


def _component_from_dict(d: dict):
    kind = d.get("kind")
    if kind == "quadratic":
        return QuadraticComponent(d["A"], d["b"], d.get("logcosh_weight", 0.0), d.get("center"))
    if kind == "residual":
        return ResidualComponent(d["a"], d["target"], d["beta"], d["shift"])
    raise ValueError(f"unknown component kind {kind!r}")


@dataclass(frozen=True, eq=False)
class Problem:
    """Sum of m strongly convex components with Hessian band [c, C]."""

    components: tuple
    n: int
    c: float
    C: float
    gradient_growth_M: float | None = None
    known_minimizer: np.ndarray | None = None
    diameter_R: float | None = None
    family: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        if self.m < 2:
            raise ValueError("a finite-sum problem needs m >= 2 components")
        if not (0 < self.c <= self.C):
            raise ValueError(f"need 0 < c <= C, got c={self.c}, C={self.C}")
        if self.known_minimizer is not None:
            object.__setattr__(self, "known_minimizer", _frozen(self.known_minimizer, 1))

    @property
    def m(self) -> int:
        return len(self.components)

    @property
    def Q(self) -> float:
        return self.C / self.c

    def value(self, x) -> float:
        x = _check_point(x, self.n)
        return float(sum(comp.value(x) for comp in self.components))

    def hessian(self, x) -> np.ndarray:
        x = _check_point(x, self.n)
        return sum(comp.hessian(x) for comp in self.components)

    def to_dict(self) -> dict:
        return {
            "type": "problem",
            "family": self.family,
            "params": self.params,
            "n": self.n,
            "m": self.m,
            "c": self.c,
            "C": self.C,
            "gradient_growth_M": self.gradient_growth_M,
            "known_minimizer": None if self.known_minimizer is None else self.known_minimizer.tolist(),
            "diameter_R": self.diameter_R,
            "components": [comp.to_dict() for comp in self.components],
        }


@dataclass(frozen=True, eq=False)
class NLLSProblem:
    """Least squares 1/2 sum_i g_i(x)^2 for the Gauss-Newton path.

    ``C`` bounds ||grad g_i(x)||^2 over all x; it is the curvature bound the
    variable stepsize formula consumes.
    """

    components: tuple
    n: int
    C: float
    known_minimizer: np.ndarray | None = None
    zero_residual: bool = False
    family: str = "nlls"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        if self.m < 1:
            raise ValueError("need at least one residual")
        if self.known_minimizer is not None:
            object.__setattr__(self, "known_minimizer", _frozen(self.known_minimizer, 1))

    @property
    def m(self) -> int:
        return len(self.components)

    def value(self, x) -> float:
        x = _check_point(x, self.n)
        return float(sum(comp.value(x) for comp in self.components))

    def residuals(self, x) -> np.ndarray:
        x = _check_point(x, self.n)
        return np.array([comp.residual(x) for comp in self.components])

    def to_dict(self) -> dict:
        return {
            "type": "nlls",
            "family": self.family,
            "params": self.params,
            "n": self.n,
            "m": self.m,
            "C": self.C,
            "zero_residual": self.zero_residual,
            "known_minimizer": None if self.known_minimizer is None else self.known_minimizer.tolist(),
            "components": [comp.to_dict() for comp in self.components],
        }


def full_gradient(problem, x) -> np.ndarray:
    """Sum of the component gradients at x."""
    x = _check_point(x, problem.n)
    g = np.zeros(problem.n)
    for comp in problem.components:
        g += comp.gradient(x)
    return g


# --- serialization -----------------------------------------------------------

def problem_to_json(problem) -> str:
    return json.dumps(problem.to_dict(), indent=1)


def problem_from_dict(d: dict):
    comps = [_component_from_dict(c) for c in d["components"]]
    if d.get("type", "problem") == "nlls":
        return NLLSProblem(
            comps, d["n"], d["C"], d.get("known_minimizer"), d.get("zero_residual", False),
            d.get("family", "nlls"), d.get("params", {}),
        )
    return Problem(
        comps, d["n"], d["c"], d["C"], d.get("gradient_growth_M"), d.get("known_minimizer"),
        d.get("diameter_R"), d.get("family", "custom"), d.get("params", {}),
    )


def problem_from_json(text: str):
    return problem_from_dict(json.loads(text))


def save_problem(problem, path) -> None:
    with open(path, "w") as fh:
        fh.write(problem_to_json(problem))


def load_problem(path):
    with open(path) as fh:
        return problem_from_json(fh.read())


# --- constructors --------------------------------------------------------------

def _random_spd(rng, n, lo, hi):
    """Random symmetric matrix with eigenvalues drawn uniformly from [lo, hi]."""
    eig = rng.uniform(lo, hi, size=n)
    if n == 1:
        return eig.reshape(1, 1), eig
    V, _ = np.linalg.qr(rng.standard_normal((n, n)))
    A = (V * eig) @ V.T
    return 0.5 * (A + A.T), eig


def quadratic_problem(As: Sequence, bs: Sequence, family="quadratic_sum", params=None) -> Problem:
    """Problem from explicit quadratic components 1/2 x'A_i x + b_i'x."""
    comps = [QuadraticComponent(np.atleast_2d(A), np.atleast_1d(b)) for A, b in zip(As, bs)]
    eigs = np.concatenate([np.linalg.eigvalsh(comp.A) for comp in comps])
    A_sum = sum(comp.A for comp in comps)
    b_sum = sum(comp.b for comp in comps)
    x_star = -np.linalg.solve(A_sum, b_sum)
    return Problem(comps, comps[0].n, float(eigs.min()), float(eigs.max()),
                   known_minimizer=x_star, family=family, params=params or {})


def make_quadratic_sum(seed: int, n: int, m: int, condition_target: float = 10.0,
                       logcosh_weight: float = 0.0) -> Problem:
    """Random sum of m quadratics whose Hessian eigenvalues lie in [1, condition_target].

    A positive ``logcosh_weight`` adds w*logcosh(x - center_i) to every component
    with random centers; the minimizer is then located by full Newton steps.
    """
    if n < 1 or m < 2 or condition_target < 1:
        raise ValueError("need n >= 1, m >= 2, condition_target >= 1")
    if logcosh_weight < 0:
        raise ValueError("logcosh_weight must be nonnegative")
    rng = np.random.default_rng(seed)
    w = float(logcosh_weight)
    As, eigs, bs = [], [], []
    for _ in range(m):
        A, eig = _random_spd(rng, n, 1.0, condition_target)
        As.append(A)
        eigs.append(eig)
        bs.append(rng.standard_normal(n) * condition_target)
    eigs = np.concatenate(eigs)
    centers = [rng.standard_normal(n) * condition_target for _ in range(m)] if w else [None] * m
    comps = [QuadraticComponent(A, b, w, ctr) for A, b, ctr in zip(As, bs, centers)]
    x_star = -np.linalg.solve(sum(As), sum(bs))
    params = {"seed": seed, "n": n, "m": m, "condition_target": condition_target}
    if w:
        params["logcosh_weight"] = w
        x_star = _newton_minimizer(comps, x_star)
    return Problem(comps, n, float(eigs.min()), float(eigs.max()) + w, known_minimizer=x_star,
                   family="quadratic_sum", params=params)


def _newton_minimizer(comps, x, max_iter=100):
    """Full Newton iterations until the step stops shrinking; the sums here are smooth and strongly convex."""
    prev = np.inf
    for _ in range(max_iter):
        g = sum(comp.gradient(x) for comp in comps)
        step = np.linalg.solve(sum(comp.hessian(x) for comp in comps), g)
        size = float(np.linalg.norm(step))
        x = x - step
        if size == 0 or (size < 1e-12 * (1 + np.linalg.norm(x)) and size >= prev):
            break
        prev = size
    return x


def zero_residual_problem(As: Sequence, x_star, logcosh_weight: float = 0.0,
                          family="zero_residual", params=None) -> Problem:
    """Components 1/2 (x-x*)'A_i(x-x*) [+ w*logcosh(x-x*)] sharing the minimizer x*."""
    x_star = np.atleast_1d(np.asarray(x_star, dtype=float))
    comps, eigs = [], []
    for A in As:
        A = np.atleast_2d(np.asarray(A, dtype=float))
        eigs.append(np.linalg.eigvalsh(A))
        center = x_star if logcosh_weight else None
        comps.append(QuadraticComponent(A, -A @ x_star, logcosh_weight, center))
    return _zero_residual(comps, x_star, np.concatenate(eigs), logcosh_weight, family, params or {})


def _zero_residual(comps, x_star, eigs, w, family, params):
    c = float(eigs.min())
    C = float(eigs.max()) + w
    m = len(comps)
    # ||grad f_i(x)|| <= C||x-x*|| and ||grad f(x)|| >= c m ||x-x*||
    return Problem(comps, x_star.shape[0], c, C, gradient_growth_M=C / (c * m),
                   known_minimizer=x_star, family=family, params=params)


def make_zero_residual_problem(seed: int, n: int, m: int, nonquadratic: bool = False,
                               condition_target: float = 4.0, logcosh_weight: float = 1.0) -> Problem:
    """Random components sharing a common minimizer, so the gradient growth condition holds."""
    if n < 1 or m < 2 or condition_target < 1:
        raise ValueError("need n >= 1, m >= 2, condition_target >= 1")
    rng = np.random.default_rng(seed)
    x_star = rng.standard_normal(n)
    w = float(logcosh_weight) if nonquadratic else 0.0
    comps, eigs = [], []
    for _ in range(m):
        A, eig = _random_spd(rng, n, 1.0, condition_target)
        eigs.append(eig)
        comps.append(QuadraticComponent(A, -A @ x_star, w, x_star if w else None))
    params = {"seed": seed, "n": n, "m": m, "nonquadratic": bool(nonquadratic),
              "condition_target": condition_target, "logcosh_weight": w}
    return _zero_residual(comps, x_star, np.concatenate(eigs), w, "zero_residual", params)


def make_example1(epsilon: float = 1.0) -> Problem:
    """f_1 = 1000x + eps x^2, f_2 = -1000x + eps x^2; minimizer 0, no gradient growth."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    A = [[2.0 * epsilon]]
    comps = [QuadraticComponent(A, [1000.0]), QuadraticComponent(A, [-1000.0])]
    return Problem(comps, 1, 2.0 * epsilon, 2.0 * epsilon, known_minimizer=np.zeros(1),
                   family="example1", params={"epsilon": epsilon})


def nlls_problem(A, b, beta: float = 0.0, x_star=None, family="nlls", params=None) -> NLLSProblem:
    """Residuals g_i(x) = a_i'x - b_i (beta = 0) or the tanh-perturbed version around x_star."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    m, n = A.shape
    if beta:
        if x_star is None:
            raise ValueError("nonlinear residuals are built around a known root x_star")
        x_star = np.asarray(x_star, dtype=float)
        comps = [ResidualComponent(a, 0.0, beta, x_star) for a in A]
        zero = True
    else:
        comps = [ResidualComponent(a, bi) for a, bi in zip(A, b)]
        if x_star is None:
            x_star = np.linalg.lstsq(A, b, rcond=None)[0]
        zero = bool(np.allclose(A @ x_star, b, rtol=0, atol=1e-12 * (1 + np.abs(b).max())))
    C = float(((1.0 + beta) ** 2) * np.max(np.sum(A**2, axis=1)))
    return NLLSProblem(comps, n, C, x_star, zero, family, params or {})


def _balanced_rows(rng, n, m):
    rows = []
    while len(rows) < m:
        rows.extend(np.linalg.qr(rng.standard_normal((n, n)))[0])
    return np.array(rows[:m])


def make_nlls(seed: int, n: int, m: int, zero_residual: bool = True, nonlinear: float = 0.0,
              design: str = "gaussian") -> NLLSProblem:
    """Random least-squares instance; ``nonlinear`` > 0 adds tanh curvature around a known root.

    design="gaussian" draws i.i.d. normal rows. design="balanced" stacks random
    orthonormal bases, so sum a_i a_i' is close to (m/n) I and the rank-one
    curvature is as well spread as it can be.
    """
    if n < 1 or m < 1:
        raise ValueError("need n >= 1, m >= 1")
    if m < n and not nonlinear:
        raise ValueError("linear residuals need m >= n for a unique solution")
    if design not in ("gaussian", "balanced"):
        raise ValueError(f"unknown design {design!r}")
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((m, n)) if design == "gaussian" else _balanced_rows(rng, n, m)
    x_star = rng.standard_normal(n)
    params = {"seed": seed, "n": n, "m": m, "zero_residual": zero_residual, "nonlinear": nonlinear,
              "design": design}
    if nonlinear:
        if not zero_residual:
            raise ValueError("nonlinear residuals are only generated with a common root")
        return nlls_problem(A, np.zeros(m), beta=nonlinear, x_star=x_star, family="nlls", params=params)
    if zero_residual:
        b = A @ x_star
    else:
        b = A @ x_star + rng.standard_normal(m)
        x_star = None
    return nlls_problem(A, b, x_star=x_star, family="nlls", params=params)


def make_problem(spec: dict[str, Any]):
    """Build a problem from a config mapping with a ``family`` key."""
    spec = dict(spec)
    family = spec.pop("family")
    builders = {
        "quadratic_sum": make_quadratic_sum,
        "zero_residual": make_zero_residual_problem,
        "example1": make_example1,
        "nlls": make_nlls,
    }
    if family not in builders:
        raise ValueError(f"unknown problem family {family!r}")
    return builders[family](**spec)
