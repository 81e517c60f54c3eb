import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from inewt import problems as P

seeds = st.integers(0, 10_000)


def fd_gradient(f, x, h=1e-6):
    g = np.zeros_like(x)
    for j in range(len(x)):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (f(x + e) - f(x - e)) / (2 * h)
    return g


@settings(max_examples=30, deadline=None)
@given(seeds, st.integers(1, 4), st.floats(0.0, 3.0))
def test_quadratic_component_derivatives_match_finite_differences(seed, n, w):
    rng = np.random.default_rng(seed)
    A, _ = P._random_spd(rng, n, 1.0, 5.0)
    comp = P.QuadraticComponent(A, rng.standard_normal(n), w, rng.standard_normal(n) if w else None)
    x = rng.standard_normal(n)
    assert np.allclose(comp.gradient(x), fd_gradient(comp.value, x), atol=1e-5)
    H_fd = np.array([fd_gradient(lambda z: comp.gradient(z)[j], x) for j in range(n)])
    assert np.allclose(comp.hessian(x), H_fd, atol=1e-5)


@settings(max_examples=30, deadline=None)
@given(seeds, st.integers(1, 4), st.floats(0.0, 2.0))
def test_residual_component_derivatives(seed, n, beta):
    rng = np.random.default_rng(seed)
    comp = P.ResidualComponent(rng.standard_normal(n), 0.3, beta, rng.standard_normal(n))
    x = rng.standard_normal(n)
    assert np.allclose(comp.residual_gradient(x), fd_gradient(comp.residual, x), atol=1e-6)
    assert np.allclose(comp.gradient(x), fd_gradient(comp.value, x), atol=1e-5)
    H_fd = np.array([fd_gradient(lambda z: comp.gradient(z)[j], x) for j in range(n)])
    assert np.allclose(comp.hessian(x), H_fd, atol=1e-5)
    J = comp.residual_gradient(x)
    assert np.array_equal(comp.gauss_newton_curvature(x), np.outer(J, J))


def test_logcosh_value_is_stable_far_from_center():
    comp = P.QuadraticComponent([[1.0]], [0.0], 1.0, [0.0])
    # logcosh(t) ~ |t| - log 2 for large |t|
    assert comp.value([1000.0]) == pytest.approx(0.5e6 + 1000 - np.log(2))
    assert np.isfinite(comp.hessian([1000.0])).all()


def test_arrays_are_read_only():
    comp = P.QuadraticComponent([[2.0]], [1.0])
    with pytest.raises(ValueError):
        comp.A[0, 0] = 3.0


def test_problem_validation():
    comp = P.QuadraticComponent([[1.0]], [0.0])
    with pytest.raises(ValueError):
        P.Problem([comp], 1, 1.0, 1.0)
    with pytest.raises(ValueError):
        P.Problem([comp, comp], 1, 2.0, 1.0)
    with pytest.raises(ValueError):
        P.Problem([comp, comp], 1, 0.0, 1.0)
    with pytest.raises(ValueError):
        P.QuadraticComponent([[1.0, 2.0], [0.0, 1.0]], [0.0, 0.0])


def test_full_gradient_rejects_wrong_dimension():
    prob = P.make_quadratic_sum(0, 3, 4)
    with pytest.raises(ValueError):
        P.full_gradient(prob, np.zeros(2))


GENERATORS = [
    lambda s: P.make_quadratic_sum(s, 4, 6, condition_target=50.0),
    lambda s: P.make_quadratic_sum(s, 3, 5, logcosh_weight=2.0),
    lambda s: P.make_zero_residual_problem(s, 4, 5),
    lambda s: P.make_zero_residual_problem(s, 3, 4, nonquadratic=True),
]


@settings(max_examples=20, deadline=None)
@given(seeds, st.sampled_from(range(len(GENERATORS))))
def test_known_minimizer_is_stationary(seed, which):
    prob = GENERATORS[which](seed)
    g = P.full_gradient(prob, prob.known_minimizer)
    assert np.linalg.norm(g) <= 1e-10 * (1 + prob.C)
    assert prob.Q >= 1


@settings(max_examples=20, deadline=None)
@given(seeds, st.sampled_from(range(len(GENERATORS))))
def test_component_hessians_lie_in_the_band(seed, which):
    prob = GENERATORS[which](seed)
    rng = np.random.default_rng(seed + 1)
    for _ in range(5):
        x = prob.known_minimizer + 3 * rng.standard_normal(prob.n)
        for comp in prob.components:
            w = np.linalg.eigvalsh(comp.hessian(x))
            assert w[0] >= prob.c - 1e-12 and w[-1] <= prob.C + 1e-12


@settings(max_examples=20, deadline=None)
@given(seeds, st.booleans())
def test_gradient_growth_holds_on_samples(seed, nonquadratic):
    prob = P.make_zero_residual_problem(seed, 3, 5, nonquadratic=nonquadratic)
    rng = np.random.default_rng(seed)
    for _ in range(10):
        x = prob.known_minimizer + 5 * rng.standard_normal(prob.n)
        full = np.linalg.norm(P.full_gradient(prob, x))
        for comp in prob.components:
            assert np.linalg.norm(comp.gradient(x)) <= prob.gradient_growth_M * full * (1 + 1e-12)


def test_example1_structure():
    prob = P.make_example1(2.5)
    assert (prob.n, prob.m, prob.c, prob.C) == (1, 2, 5.0, 5.0)
    assert prob.components[0].gradient([0.0])[0] == 1000.0
    assert P.full_gradient(prob, [0.0])[0] == 0.0
    assert prob.gradient_growth_M is None


def test_nlls_generator_has_common_root():
    prob = P.make_nlls(3, 4, 9, nonlinear=0.5, design="balanced")
    assert prob.zero_residual
    assert np.allclose(prob.residuals(prob.known_minimizer), 0.0, atol=1e-14)
    A = np.array([c.a for c in prob.components])
    # two stacked orthonormal bases and one extra row
    assert np.allclose(A[:8].T @ A[:8], 2 * np.eye(4))
    linear = P.make_nlls(3, 4, 9)
    assert np.allclose(linear.residuals(linear.known_minimizer), 0.0, atol=1e-12)


@pytest.mark.parametrize("spec", [
    {"family": "quadratic_sum", "seed": 1, "n": 3, "m": 4},
    {"family": "quadratic_sum", "seed": 1, "n": 2, "m": 3, "logcosh_weight": 1.0},
    {"family": "zero_residual", "seed": 2, "n": 2, "m": 3, "nonquadratic": True},
    {"family": "example1", "epsilon": 0.5},
    {"family": "nlls", "seed": 4, "n": 2, "m": 5, "nonlinear": 0.3},
    {"family": "nlls", "seed": 4, "n": 2, "m": 5, "zero_residual": False},
])
def test_json_round_trip_is_bit_exact(spec, tmp_path):
    prob = P.make_problem(spec)
    path = tmp_path / "p.json"
    P.save_problem(prob, path)
    again = P.load_problem(path)
    assert P.problem_to_json(again) == P.problem_to_json(prob)
    x = np.linspace(-1, 1, prob.n)
    assert np.array_equal(P.full_gradient(again, x), P.full_gradient(prob, x))


def test_unknown_family_and_kind():
    with pytest.raises(ValueError):
        P.make_problem({"family": "nope"})
    d = json.loads(P.problem_to_json(P.make_example1()))
    d["components"][0]["kind"] = "cubic"
    with pytest.raises(ValueError):
        P.problem_from_dict(d)
