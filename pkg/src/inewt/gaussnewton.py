"""Incremental Gauss-Newton (an extended Kalman filter for least squares) with the
same stepsize rules as the Newton path.

The curvature of residual i is the rank-one term grad g_i grad g_i'. Each inner
solve refactorizes the accumulated matrix; at the problem sizes used here that
is cheaper to maintain than an incremental Cholesky update.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine
from .engine import NumericalError, RunConfig, gauss_newton_curvature, spd_solve


@dataclass
class GNState:
    k: int
    i: int
    x: np.ndarray
    H: np.ndarray


def gn_inner_update(state: GNState, comp, alpha: float) -> GNState:
    """H' = H + J J', x' = x - alpha H'^{-1} g(x) J with J = grad g(x)."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    J = comp.residual_gradient(state.x)
    H = state.H + np.outer(J, J)
    step = spd_solve(H, comp.residual(state.x) * J, state.k, state.i + 1)
    return GNState(state.k, state.i + 1, state.x - alpha * step, H)


def default_ridge(problem, x1) -> float:
    """1e-8 (1 + mean ||grad g_i(x1)||^2)."""
    sq = [float(np.dot(J, J)) for J in (comp.residual_gradient(x1) for comp in problem.components)]
    return 1e-8 * (1.0 + float(np.mean(sq)))


def run_ekfs(problem, rule, config: RunConfig | None = None, ridge: float | None = None) -> engine.RunResult:
    """Cycle through the residuals with Gauss-Newton curvature, starting from H = ridge * I.

    ``ridge=None`` picks :func:`default_ridge`; 0 is only accepted for n = 1,
    where the first residual already makes H positive.
    """
    config = config or RunConfig()
    n = problem.n
    x0 = np.zeros(n) if config.x0 is None else np.asarray(config.x0, dtype=float)
    if ridge is None:
        ridge = default_ridge(problem, x0)
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    if ridge == 0 and n > 1:
        raise ValueError("ridge 0 is only allowed for n = 1")
    return engine.run(problem, rule, config, curvature=gauss_newton_curvature, H0=ridge * np.eye(n))


__all__ = ["GNState", "gn_inner_update", "default_ridge", "run_ekfs", "NumericalError"]
