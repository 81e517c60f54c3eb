import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from inewt import engine as E
from inewt import problems as P
from inewt import stepsize as S


def test_inner_update_scalar_hand_trace():
    # f(x) = x^2 - 2x: H' = 2, x' = 3 - (2*3 - 2)/2 = 1
    comp = P.QuadraticComponent([[2.0]], [-2.0])
    out = E.inner_update(E.InnerState(1, 0, np.array([3.0]), np.zeros((1, 1))), comp, 1.0)
    assert out.H[0, 0] == 2.0 and out.x[0] == 1.0 and out.i == 1


def test_inner_update_adds_curvature_before_solving():
    comp = P.QuadraticComponent([[1.0]], [0.0])
    out = E.inner_update(E.InnerState(1, 0, np.array([4.0]), np.array([[3.0]])), comp, 2.0)
    # H' = 4, step = 2 * 4 / 4
    assert out.x[0] == pytest.approx(2.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 5000), st.integers(1, 8), st.integers(2, 12))
def test_unit_cycle_solves_quadratic_sums(seed, n, m):
    prob = P.make_quadratic_sum(seed, n, m, condition_target=100.0)
    tr = E.run_cycle(np.zeros(n), np.zeros((n, n)), prob, 1.0)
    x_star = prob.known_minimizer
    assert np.linalg.norm(tr.end - x_star) <= 1e-8 * (1 + np.linalg.norm(x_star))
    assert np.linalg.norm(tr.grad_error) <= 1e-9 * (1 + np.abs(prob.components[0].b).max() * m)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 5000), st.floats(0.5, 5.0), st.integers(1, 6), st.booleans())
def test_cycle_matches_aggregated_closed_form(seed, alpha, k, nonquadratic):
    prob = P.make_zero_residual_problem(seed, 3, 5, nonquadratic=nonquadratic)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(3) * 3
    H_in = (k - 1) * prob.hessian(x)
    tr = E.run_cycle(x, H_in, prob, alpha, k)
    closed = E.closed_form_cycle(x, H_in, prob, alpha)
    pts = np.vstack([tr.inner_points, tr.end[None, :]])
    assert np.allclose(pts, np.array(closed), rtol=1e-10, atol=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 5000), st.floats(0.5, 5.0), st.integers(1, 6))
def test_outer_step_identity_and_error_recomputation(seed, alpha, k):
    prob = P.make_quadratic_sum(seed, 3, 4, logcosh_weight=1.0)
    x = np.random.default_rng(seed).standard_normal(3)
    tr = E.run_cycle(x, k * prob.hessian(x), prob, alpha, k + 1)
    assert E.outer_step_identity_check(tr, prob) <= 1e-9 * (1 + np.linalg.norm(x))
    e = E.gradient_error(tr.points, alpha, prob)
    assert np.allclose(e, tr.grad_error, atol=1e-10)


def test_example1_gradient_error_value():
    # k = 2, alpha = 3, x = 0: e = -(3/4 - 1/4) * (4/3) * 1000 = -2000/3
    prob = P.make_example1(1.0)
    tr = E.run_cycle([0.0], [[4.0]], prob, 3.0, k=2)
    assert tr.grad_error[0] == pytest.approx(-2000 / 3, abs=1e-12)


def test_trace_fields():
    prob = P.make_quadratic_sum(0, 2, 3)
    tr = E.run_cycle([1.0, 1.0], np.zeros((2, 2)), prob, 2.0, k=4)
    assert tr.gamma == 0.5 and tr.m == 3
    assert tr.inner_dists[0] == 0.0 and tr.inner_dists.shape == (3,)
    assert tr.delta_norms[0] == 0.0
    assert tr.points.shape == (3, 2)
    assert tr.inner_H_eigbounds.shape == (3, 2)
    d = tr.end - tr.start
    assert tr.step_curvature == pytest.approx(d @ tr.H_end @ d)
    thin = E.run_cycle([1.0, 1.0], np.zeros((2, 2)), prob, 2.0, k=4, keep_inner=False)
    assert thin.points is None and np.array_equal(thin.end, tr.end)


def test_singular_accumulation_raises():
    flat = P.QuadraticComponent([[0.0]], [1.0])
    prob = P.Problem([flat, flat], 1, 1.0, 1.0)
    with pytest.raises(E.NumericalError) as info:
        E.run(prob, S.Unit())
    assert info.value.result is not None
    assert info.value.result.termination == "stepsize_failure"
    assert info.value.result.cycles_used == 0


def test_nonpositive_alpha_rejected():
    prob = P.make_example1()
    with pytest.raises(ValueError):
        E.run_cycle([0.0], [[0.0]], prob, 0.0)


def test_run_never_resets_the_matrix():
    prob = P.make_zero_residual_problem(1, 2, 3, nonquadratic=True)
    res = E.run(prob, S.ConstantNormalized(0.5), E.RunConfig(max_cycles=30, grad_tolerance=1e-300))
    lmax = res.series("lambda_max_H")
    assert np.all(np.diff(lmax) > 0)
    # lambda_min of H_m^k is at least c k m
    assert np.all(res.series("lambda_min_H") >= prob.c * prob.m * res.series("k") * (1 - 1e-12))


def test_run_converges_and_reports():
    prob = P.make_quadratic_sum(2, 4, 5)
    res = E.run(prob, S.Unit())
    assert res.termination == "converged" and res.cycles_used == 1
    assert res.final_grad_norm <= 1e-10
    assert res.starts.shape == (1, 4)
    assert set(E.HISTORY_COLUMNS) == set(res.history)


def test_run_max_cycles_and_trace_limit():
    prob = P.make_example1()
    res = E.run(prob, S.PowerSchedule(), E.RunConfig(max_cycles=40, trace_limit=10, x0=[1.0]))
    assert res.termination == "max_cycles" and res.cycles_used == 40
    assert len(res.traces) == 10 and len(res.series("k")) == 40


def test_run_config_validation():
    with pytest.raises(ValueError):
        E.RunConfig(trace_mode="verbose")
    with pytest.raises(ValueError):
        E.RunConfig(max_cycles=0)
    with pytest.raises(ValueError):
        E.RunConfig(grad_tolerance=0.0)
    with pytest.raises(ValueError):
        E.run(P.make_example1(), S.Unit(), E.RunConfig(x0=np.zeros(2)))


def test_hessian_error_is_zero_for_quadratics_and_bounded_otherwise():
    q = P.make_quadratic_sum(3, 3, 4)
    res = E.run(q, S.ConstantNormalized(0.5), E.RunConfig(max_cycles=20, grad_tolerance=1e-300, trace_mode="full"))
    assert np.nanmax(res.series("ehat_norm")) <= 1e-10
    nq = P.make_zero_residual_problem(3, 3, 4, nonquadratic=True)
    res = E.run(nq, S.ConstantNormalized(0.5), E.RunConfig(max_cycles=20, grad_tolerance=1e-300, trace_mode="full"))
    eh = res.series("ehat_norm")
    assert np.all(eh <= (nq.C - nq.c) * nq.m) and eh[0] > 0


def test_hessian_error_accumulators():
    acc = E.HessianErrorAccumulators.zeros(2)
    acc.update(2 * np.eye(2), np.zeros((2, 2)), np.eye(2))
    E_hat, norm = E.hessian_error(acc)
    assert np.allclose(E_hat, np.eye(2)) and norm == pytest.approx(1.0)


def test_trace_csv_round_trip_and_replay(tmp_path):
    prob = P.make_zero_residual_problem(5, 3, 4, nonquadratic=True)
    cfg = E.RunConfig(max_cycles=25, x0=np.ones(3))
    res = E.run(prob, S.VariableBisection(), cfg)
    path = tmp_path / "t.csv"
    E.write_trace_csv(res, path)
    cols = E.read_trace_csv(path)
    assert list(cols)[: len(E.HISTORY_COLUMNS)] == list(E.HISTORY_COLUMNS)
    assert np.array_equal(cols["alpha"], res.series("alpha"))
    assert np.isnan(cols["ehat_norm"]).all()
    replayed = list(E.replay(prob, cols["alpha"], np.ones(3)))
    starts = np.column_stack([cols[f"x_{j + 1}"] for j in range(3)])
    assert np.array_equal(np.array([tr.start for tr in replayed]), starts)
    again = tmp_path / "u.csv"
    E.write_trace_csv(E.run(prob, S.VariableBisection(), cfg), again)
    assert path.read_bytes() == again.read_bytes()


def test_observed_diameter():
    pts = np.array([[0.0, 0.0], [3.0, 4.0], [1.0, 1.0]])
    assert E._observed_diameter(pts) == 5.0
    assert E._observed_diameter(pts[:1]) == 0.0
