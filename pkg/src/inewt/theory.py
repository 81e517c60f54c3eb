"""Closed-form constants behind the convergence guarantees.

All functions are pure. ``phi`` values may be scalars or numpy arrays wherever
the B recursion is involved, which keeps the root scan vectorized.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class ProblemConstants:
    c: float
    C: float
    m: int
    M: float | None = None

    def __post_init__(self):
        if not self.c > 0 or self.C < self.c:
            raise ValueError("need c > 0 and C >= c")
        if self.m < 2:
            raise ValueError("need m >= 2")
        if self.M is not None and not self.M > 0:
            raise ValueError("M must be positive when set")

    @property
    def Q(self) -> float:
        return self.C / self.c

    @classmethod
    def from_problem(cls, problem):
        return cls(problem.c, problem.C, problem.m, problem.gradient_growth_M)


def phi(eta: float, Q: float) -> float:
    """Upper bound 2(1-eta)Q on the normalized alpha_star."""
    if not 0 < eta < 1:
        raise ValueError("eta must lie in (0, 1)")
    if Q < 1:
        raise ValueError("Q must be at least 1")
    return 2.0 * (1.0 - eta) * Q


def _need_M(consts):
    if consts.M is None:
        raise ValueError("the B recursion needs the gradient growth constant M")


def B_sequence(phi_val, consts: ProblemConstants, k: int | None = None):
    """B_1..B_m from B_{j+1} = (1 + (2Q/m) g) B_j + 2M/(cm), B_1 = 0, and their sum over j >= 2.

    g = phi for the limiting sequence; with ``k`` given, g = max(1/k, phi).
    Returns (B, total) where B has shape (m,) + shape(phi).
    """
    _need_M(consts)
    if np.any(np.asarray(phi_val) < 0):
        raise ValueError("phi must be nonnegative")
    g = np.asarray(phi_val, dtype=float)
    if k is not None:
        g = np.maximum(1.0 / k, g)
    growth = 1.0 + 2.0 * consts.Q / consts.m * g
    step = 2.0 * consts.M / (consts.c * consts.m)
    B = np.zeros((consts.m,) + g.shape)
    for j in range(1, consts.m):
        B[j] = growth * B[j - 1] + step
    return B, B[1:].sum(axis=0)


def B_total(phi_val, consts: ProblemConstants):
    return B_sequence(phi_val, consts)[1]


def B_closed_form(phi_val: float, consts: ProblemConstants) -> np.ndarray:
    """B_j = (2M/(cm)) ((1+a)^(j-1) - 1)/a with a = 2Q phi/m (phi > 0)."""
    _need_M(consts)
    a = 2.0 * consts.Q * phi_val / consts.m
    j = np.arange(1, consts.m + 1)
    return 2.0 * consts.M / (consts.c * consts.m) * np.expm1((j - 1) * np.log1p(a)) / a


def B_min(consts: ProblemConstants) -> float:
    _need_M(consts)
    return consts.M * (consts.m - 1) / consts.c


def B_max(consts: ProblemConstants) -> float:
    return float(B_total(2.0 * consts.Q, consts))


def kappa_domain(phi_val: float, consts: ProblemConstants) -> bool:
    """phi < 1/(B(phi) C)."""
    return bool(phi_val * B_total(phi_val, consts) * consts.C < 1.0)


def _bracket(phi_val, BC):
    return 1.0 / (2.0 * BC / (1.0 - BC * phi_val) + 1.0)


def kappa(phi_val: float, consts: ProblemConstants) -> float:
    """Lower bound on the limiting normalized alpha_star.

    Returns NaN when phi >= 1/(B(phi) C), where the bound does not apply.
    """
    BC = float(B_total(phi_val, consts)) * consts.C
    if not phi_val * BC < 1.0:
        return math.nan
    return phi_val / consts.Q**2 * _bracket(phi_val, BC)


def _excess(phi_val, nu, consts, sharp):
    phi_val = np.asarray(phi_val, dtype=float)
    BC = B_total(phi_val, consts) * consts.C
    Q = consts.Q
    lead, tail = (Q**2, 1.0) if sharp else (Q**3, Q)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = -phi_val * nu / lead * _bracket(phi_val, BC) + phi_val**2 * tail * BC
    out = np.where(phi_val * BC < 1.0, out, np.nan)
    return float(out) if out.ndim == 0 else out


def r_nu_excess(phi_val, nu: float, consts: ProblemConstants):
    """r_nu - 1, formed without the cancellation of subtracting 1 (vectorized over phi)."""
    return _excess(phi_val, nu, consts, False)


def r_nu(phi_val, nu: float, consts: ProblemConstants):
    """Limiting perturbation ratio; local linear convergence needs r_nu < 1. NaN outside the kappa domain."""
    return 1.0 + _excess(phi_val, nu, consts, False)


def r_hat_nu_excess(phi_val, nu: float, consts: ProblemConstants):
    """r_hat_nu - 1, formed without cancellation."""
    return _excess(phi_val, nu, consts, True)


def r_hat_nu(phi_val, nu: float, consts: ProblemConstants):
    """The sharper ratio available once the averaged Hessian converges."""
    return 1.0 + _excess(phi_val, nu, consts, True)


def polynomials(phi_val, nu: float, consts: ProblemConstants):
    """(p1, p2, p3, p4); all four positive is equivalent to r_nu < 1 together with phi < min(1/Q, 1/(BC))."""
    phi_val = np.asarray(phi_val, dtype=float)
    psi = nu / consts.Q**4
    BC = B_total(phi_val, consts) * consts.C
    y = BC * phi_val
    p1 = y * y - (2.0 * BC + 1.0 + psi) * y + psi
    return p1, phi_val, 1.0 / consts.Q - phi_val, 1.0 - y


@dataclass(frozen=True)
class PhiBar:
    value: float
    found: bool        # False: no sign change on (0, 2Q], value is 2Q
    which: int | None  # index (1..4) of the polynomial whose root was found


def phi_bar(nu: float, consts: ProblemConstants, tol: float = 1e-14, resolution: float = 1e-4) -> PhiBar:
    """Smallest positive root of p1..p4, by a sign scan of (0, 2Q] followed by bisection.

    The returned value is the left end of the final bracket, so all four
    polynomials are positive on (0, value).
    """
    if not 0 < nu < 1:
        raise ValueError("nu must lie in (0, 1)")
    top = 2.0 * consts.Q
    steps = int(round(1.0 / resolution))
    grid = top * np.arange(1, steps + 1) / steps

    def lowest(ph):
        p1, _, p3, p4 = polynomials(ph, nu, consts)
        return np.minimum(np.minimum(p1, p3), p4)

    vals = lowest(grid)
    bad = np.flatnonzero(vals <= 0)
    if bad.size == 0:
        return PhiBar(top, False, None)
    i = bad[0]
    lo = 0.0 if i == 0 else float(grid[i - 1])
    hi = float(grid[i])
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if lowest(mid) > 0:
            lo = mid
        else:
            hi = mid
    p1, _, p3, p4 = polynomials(hi, nu, consts)
    which = 1 + int(np.argmin([p1, np.inf, p3, p4]))
    return PhiBar(lo, True, which)


def eta_threshold(nu: float, consts: ProblemConstants, **kw) -> float:
    """Smallest stepsize control parameter for which phi(eta) < phi_bar_nu."""
    return 1.0 - phi_bar(nu, consts, **kw).value / (2.0 * consts.Q)


def linear_growth_parameters(consts: ProblemConstants, nu: float = 0.5, margin: float = 0.1):
    """(eta, kappa) for the linear-growth rule: eta a fraction ``margin`` of the way from
    eta_threshold to 1, kappa evaluated at phi(eta)."""
    eta_min = eta_threshold(nu, consts)
    eta = eta_min + margin * (1.0 - eta_min)
    return eta, kappa(phi(eta, consts.Q), consts)


@dataclass(frozen=True)
class TheoryReport:
    c: float
    C: float
    m: int
    M: float
    Q: float
    eta: float
    nu: float
    phi: float
    B_sequence: list
    B_total: float
    B_min: float
    B_max: float
    kappa: float | None
    kappa_valid: bool
    r_nu: float | None
    r_hat_nu: float | None
    phi_bar_nu: float
    phi_bar_found: bool
    eta_threshold: float

    def to_dict(self) -> dict:
        return asdict(self)


def theory_report(c: float, C: float, m: int, M: float, eta: float, nu: float) -> TheoryReport:
    consts = ProblemConstants(c, C, m, M)
    ph = phi(eta, consts.Q)
    B, total = B_sequence(ph, consts)
    k_val = kappa(ph, consts)
    pb = phi_bar(nu, consts)

    def clean(v):
        return None if math.isnan(v) else float(v)

    return TheoryReport(
        c=c, C=C, m=m, M=M, Q=consts.Q, eta=eta, nu=nu, phi=ph,
        B_sequence=[float(b) for b in B], B_total=float(total),
        B_min=B_min(consts), B_max=B_max(consts),
        kappa=clean(k_val), kappa_valid=not math.isnan(k_val),
        r_nu=clean(r_nu(ph, nu, consts)), r_hat_nu=clean(r_hat_nu(ph, nu, consts)),
        phi_bar_nu=pb.value, phi_bar_found=pb.found,
        eta_threshold=1.0 - pb.value / (2.0 * consts.Q),
    )
