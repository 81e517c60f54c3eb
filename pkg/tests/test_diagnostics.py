import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from inewt import diagnostics as D
from inewt import engine as E
from inewt import problems as P
from inewt import stepsize as S
from inewt import theory as T


def run(prob, rule, cycles=100, **kw):
    kw.setdefault("grad_tolerance", 1e-300)
    return E.run(prob, rule, E.RunConfig(max_cycles=cycles, **kw))


# --- rate fits ---------------------------------------------------------------

def test_fit_rate_geometric():
    fit = D.fit_rate(0.9 ** np.arange(1, 101))
    assert fit.rho_hat == pytest.approx(0.9, abs=1e-6)
    assert fit.r_squared == pytest.approx(1.0)
    assert fit.classification == "linear"


def test_fit_rate_polynomial():
    k = np.arange(1, 2001, dtype=float)
    fit = D.fit_rate(1.0 / k**2)
    assert fit.ratio_tail > 0.99 and fit.classification == "sublinear"


@settings(max_examples=50)
@given(st.floats(0.5, 0.999), st.floats(1e-6, 1e6), st.integers(20, 300))
def test_fit_rate_scale_invariant(rho, scale, n):
    d = rho ** np.arange(n) * (1 + 0.1 * np.sin(np.arange(n)))
    a, b = D.fit_rate(d), D.fit_rate(scale * d)
    assert a.rho_hat == pytest.approx(b.rho_hat, rel=1e-9)
    assert a.classification == b.classification


def test_fit_rate_exact_zero_truncates():
    d = np.concatenate([0.5 ** np.arange(30), [0.0, 0.0]])
    fit = D.fit_rate(d)
    assert fit.exact_convergence and fit.n_points == 30 and fit.classification == "linear"
    early = D.fit_rate(np.concatenate([[1.0, 0.1], np.zeros(20)]))
    assert early.exact_convergence and early.classification == "inconclusive"


def test_fit_rate_input_checks():
    with pytest.raises(ValueError):
        D.fit_rate(np.ones(10))
    with pytest.raises(ValueError):
        D.fit_rate(-np.ones(30))
    with pytest.raises(ValueError):
        D.fit_rate(np.ones(30), window_fraction=0.0)


def test_fit_rate_inconclusive_when_noisy():
    rng = np.random.default_rng(0)
    d = np.exp(rng.standard_normal(200)) * 0.97 ** np.arange(200)
    d[-20:] = d[-20] * 0.5 ** np.arange(20)  # fast drop at the very end
    assert D.fit_rate(d).classification == "inconclusive"


# --- closed-form gradient error -----------------------------------------------

def test_example1_oracle_values():
    assert D.example1_error_oracle(7, 1.0, 3.0, 2.0) == 0.0
    assert D.example1_error_oracle(2, 3.0, 0.0, 1.0) == pytest.approx(-2000 / 3)
    with pytest.raises(ValueError):
        D.example1_error_oracle(0, 1.0, 0.0, 1.0)


def test_example1_oracle_limit():
    gamma, x, eps = 0.4, 2.0, 1.0
    k = 10**7
    val = D.example1_error_oracle(k, gamma * k, x, eps)
    assert val == pytest.approx(-(gamma / 2) * (1000 + 2 * eps * x), rel=1e-6)


@pytest.mark.parametrize("k", [2, 3, 17, 50])
@pytest.mark.parametrize("x", [-10.0, -1.0, 0.0, 4.0, 10.0])
def test_example1_oracle_matches_cycles(k, x):
    prob = P.make_example1(1.0)
    for alpha in (1.0, 1.5, 2.0, 1.0 + math.sqrt(k)):
        tr = E.run_cycle([x], [[4.0 * (k - 1)]], prob, alpha, k)
        assert abs(tr.grad_error[0] - D.example1_error_oracle(k, alpha, x, 1.0)) <= 1e-12


# --- bound checks --------------------------------------------------------------

def test_hessian_growth_is_tight_on_example1():
    prob = P.make_example1(1.0)
    res = run(prob, S.PowerSchedule(), 50, x0=[1.0])
    for tr in res.traces:
        assert tr.inner_H_eigbounds[-1, 1] == pytest.approx(4.0 * tr.k, abs=1e-9)
    rep = D.check_hessian_growth(res.traces, prob)
    assert not rep.violated and abs(rep.worst_margin) <= 1e-9


def test_hessian_growth_lower_bound_tight_for_identical_components():
    c = 2.0
    prob = P.zero_residual_problem([c * np.eye(2)] * 3, [1.0, -1.0])
    res = run(prob, S.ConstantNormalized(0.5), 20, x0=[3.0, 3.0])
    for tr in res.traces:
        i = np.arange(1, 4)
        assert np.allclose(tr.inner_H_eigbounds[:, 0], c * ((tr.k - 1) * 3 + i))
    assert not D.check_hessian_growth(res.traces, prob).violated


@pytest.mark.parametrize("seed", range(5))
def test_hessian_growth_random_quadratics(seed):
    prob = P.make_quadratic_sum(seed, 4, 6)
    res = run(prob, S.ConstantNormalized(0.3), 100)
    rep = D.check_hessian_growth(res.traces, prob)
    assert rep.cycles_checked == 100 and not rep.violated


def test_gamma_star_stationary_trace():
    prob = P.make_zero_residual_problem(0, 2, 3)
    tr = E.run_cycle(prob.known_minimizer, np.zeros((2, 2)), prob, 1.0)
    rep = D.check_gamma_star([tr], 0.9, prob)
    assert not rep.violated


@pytest.mark.parametrize("seed", range(3))
def test_gamma_star_on_runs(seed):
    prob = P.make_zero_residual_problem(seed, 3, 5, nonquadratic=True)
    res = run(prob, S.VariableBisection(eta=0.7), 200, x0=prob.known_minimizer + 2, grad_tolerance=1e-12)
    assert not D.check_gamma_star(res.traces, 0.7, prob).violated
    ex = run(P.make_example1(), S.PowerSchedule(), 100, x0=[1.0])
    assert not D.check_gamma_star(ex.traces, 0.5, P.make_example1()).violated


def test_inner_distance_skipped_without_growth_constant():
    prob = P.make_example1()
    res = run(prob, S.PowerSchedule(), 10, x0=[1.0])
    rep = D.check_inner_distance(res.traces, prob)
    assert rep.skipped and not rep.violated and rep.cycles_checked == 0


def test_inner_distance_at_minimizer_is_trivial():
    prob = P.make_zero_residual_problem(2, 2, 3, nonquadratic=True)
    tr = E.run_cycle(prob.known_minimizer, 3 * prob.hessian(prob.known_minimizer), prob, 4.0, k=4)
    assert np.all(tr.inner_dists == 0)
    assert not D.check_inner_distance([tr], prob).violated


@pytest.mark.parametrize("rule", [S.ConstantNormalized(0.2), S.VariableBisection(), S.Unit()])
def test_inner_distance_on_zero_residual_runs(rule):
    prob = P.make_zero_residual_problem(4, 3, 6, nonquadratic=True)
    res = run(prob, rule, 100, x0=prob.known_minimizer + 3, grad_tolerance=1e-12)
    rep = D.check_inner_distance(res.traces, prob)
    assert rep.cycles_checked > 0 and not rep.violated


def test_inner_distance_with_phi_from_theory():
    prob = P.make_zero_residual_problem(4, 3, 6, nonquadratic=True)
    res = run(prob, S.VariableBisection(eta=0.9), 100, x0=prob.known_minimizer + 3, grad_tolerance=1e-12)
    phi = T.phi(0.9, prob.Q)
    assert not D.check_inner_distance(res.traces, prob, phi).violated


@pytest.mark.parametrize("seed", range(3))
def test_delta_and_gradient_error_bounds(seed):
    q = P.make_quadratic_sum(seed, 3, 5)
    ex = P.make_example1(1.0)
    for prob, rule, x0 in ((q, S.ConstantNormalized(0.4), None), (ex, S.PowerSchedule(), [1.0]),
                           (q, S.Unit(), None)):
        res = run(prob, rule, 100, x0=x0)
        assert not D.check_delta_bound(res.traces, prob).violated
        assert not D.check_gradient_error_bound(res.traces, prob).violated


def test_gradient_error_bound_detects_tampering():
    prob = P.make_quadratic_sum(1, 3, 5)
    res = run(prob, S.ConstantNormalized(0.4), 10)
    bad = [replace(tr, grad_error=tr.grad_error * 1e3 + 1.0) for tr in res.traces]
    rep = D.check_gradient_error_bound(bad, prob)
    assert rep.violated and rep.worst_margin < -1e-9


def test_hessian_error_decay_checks():
    quad = P.make_quadratic_sum(0, 2, 3)
    res = run(quad, S.ConstantNormalized(0.5), 40, trace_mode="full")
    assert not D.check_hessian_error_decay(res.traces, quad).violated
    prob = P.make_zero_residual_problem(1, 3, 4, nonquadratic=True)
    res = run(prob, S.VariableBisection(), 300, trace_mode="full", x0=prob.known_minimizer + 3,
              grad_tolerance=1e-10)
    rep = D.check_hessian_error_decay(res.traces, prob)
    assert not rep.violated
    assert rep.details["last_quartile_mean"] <= 0.5 * rep.details["first_quartile_mean"]
    plain = run(prob, S.Unit(), 5)
    skipped = D.check_hessian_error_decay(plain.traces, prob)
    assert skipped.skipped and not skipped.violated


def test_bound_report_semantics():
    rep = D.BoundReport("x", np.array([0.1, -5e-10]), 2)
    assert not rep.violated
    rep = D.BoundReport("x", np.array([0.1, -2e-9]), 2)
    assert rep.violated
    empty = D.BoundReport("x", np.array([]), 0, skipped="n/a")
    assert not empty.violated and empty.to_dict()["worst_margin"] is None


def test_verify_one_pass():
    prob = P.make_zero_residual_problem(3, 3, 5, nonquadratic=True)
    res = run(prob, S.VariableBisection(), 300, trace_mode="full", x0=prob.known_minimizer + 2,
              grad_tolerance=1e-10)
    seen = []

    def stream():
        for tr in res.traces:
            seen.append(tr.k)
            yield tr

    out = D.verify(stream(), prob, eta=0.9, trace_mode="full")
    assert seen == sorted(set(seen))  # consumed exactly once
    assert not out["violated"]
    assert set(out["bounds"]) == {"hessian_growth", "inner_distance", "delta_bound", "gradient_error_bound",
                                  "outer_step_identity", "gamma_star", "hessian_error_decay"}
    assert out["rates"]["grad_norm"].classification == "linear"
