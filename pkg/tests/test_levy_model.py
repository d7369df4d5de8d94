import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from levytax import (DomainError, JumpComponent, LevyModel, VariationClass, laplace_exponent,
                     laplace_exponent_derivative, phi_inverse, variation_class)


def erlang_density(x, k, mu):
    return mu**k * x ** (k - 1) * math.exp(-mu * x) / math.factorial(k - 1)


def jump_term_by_quadrature(model, s):
    total = 0.0
    for c in model.jump_components:
        f = lambda x: (math.exp(-s * x) - 1.0) * erlang_density(x, c.shape, c.jump_rate)
        total += c.rate * quad(f, 0.0, np.inf, epsabs=1e-13, epsrel=1e-13)[0]
    return total


def test_psi_vanishes_at_zero(example_model, brownian, bv_model):
    for model in (example_model, brownian, bv_model):
        assert laplace_exponent(model, 0.0) == 0.0


def test_psi_at_one_against_quadrature(example_model):
    # drift and Gaussian part plus the jump integral done numerically
    oracle = 1.1 + 0.5 + jump_term_by_quadrature(example_model, 1.0)
    assert laplace_exponent(example_model, 1.0) == pytest.approx(oracle, rel=1e-12)
    assert laplace_exponent(example_model, 1.0) == pytest.approx(1.1 + 0.5 + (4 / 9 - 1), rel=1e-14)


def test_brownian_psi_is_square(brownian):
    assert laplace_exponent(brownian, 3.0) == pytest.approx(9.0, rel=1e-15)


@pytest.mark.parametrize("s", [0.1, 0.5, 1.0, 3.0, 10.0])
@pytest.mark.parametrize("k,mu,lam", [(1, 0.5, 2.0), (2, 2.0, 1.0), (3, 4.0, 0.7)])
def test_jump_term_matches_quadrature(s, k, mu, lam):
    model = LevyModel(0.0, 1.0, (JumpComponent(lam, k, mu),))
    assert laplace_exponent(model, s) - 0.5 * s**2 == pytest.approx(
        jump_term_by_quadrature(model, s), abs=1e-8)


def test_mean_increment(example_model, brownian):
    # E[X_1] = 2 * loading * rate / jump_rate for the Erlang-2 example
    assert laplace_exponent_derivative(example_model, 0.0) == pytest.approx(0.1, rel=1e-14)
    assert laplace_exponent_derivative(brownian, 0.0) == 0.0
    assert example_model.mean == pytest.approx(0.1, rel=1e-14)


def test_derivative_at_one(example_model):
    h = 1e-6
    fd = (laplace_exponent(example_model, 1 + h) - laplace_exponent(example_model, 1 - h)) / (2 * h)
    assert laplace_exponent_derivative(example_model, 1.0) == pytest.approx(fd, rel=1e-8)
    assert laplace_exponent_derivative(example_model, 1.0) == pytest.approx(1.1 + 1 - 8 / 27)


@pytest.mark.parametrize("s", np.linspace(0.1, 10.0, 12))
def test_derivative_matches_central_difference(example_model, bv_model, s):
    h = 1e-5 * max(1.0, s)
    for model in (example_model, bv_model):
        fd = (laplace_exponent(model, s + h) - laplace_exponent(model, s - h)) / (2 * h)
        assert laplace_exponent_derivative(model, s) == pytest.approx(fd, rel=1e-6)


@pytest.mark.parametrize("q,expected", [(1.0, 1.0), (4.0, 2.0)])
def test_phi_brownian(brownian, q, expected):
    assert phi_inverse(brownian, q) == pytest.approx(expected, rel=1e-12)


def test_phi_example_against_hand_bisection(example_model):
    # grid scan on [0, 2] followed by 200 bisection steps, run once offline
    oracle = 0.25555335551517677
    phi = phi_inverse(example_model, 0.1)
    assert abs(laplace_exponent(example_model, phi) - 0.1) <= 1e-10
    assert phi == pytest.approx(oracle, rel=1e-12)
    assert laplace_exponent_derivative(example_model, phi) > 0


@pytest.mark.parametrize("q", [0.01, 0.03, 0.1, 0.3, 1.0, 3.0, 10.0])
def test_phi_inverts_psi(example_model, bv_model, q):
    for model in (example_model, bv_model):
        assert laplace_exponent(model, phi_inverse(model, q)) == pytest.approx(q, rel=1e-10)


def test_phi_rejects_nonpositive_q(example_model):
    with pytest.raises(DomainError):
        phi_inverse(example_model, 0.0)


def test_variation_class(example_model, bv_model):
    assert variation_class(example_model) is VariationClass.UnboundedVariation
    assert variation_class(bv_model) is VariationClass.BoundedVariation
    assert variation_class(LevyModel(1.0, 0.001)) is VariationClass.UnboundedVariation


def test_model_validation():
    with pytest.raises(DomainError):
        LevyModel(1.0, -0.1)
    with pytest.raises(DomainError):
        JumpComponent(0.0, 2, 1.0)
    with pytest.raises(DomainError):
        JumpComponent(1.0, 0, 1.0)
    with pytest.raises(DomainError):
        JumpComponent(1.0, 2, -1.0)
    with pytest.raises(DomainError):
        LevyModel(-1.0, 0.0, ((1.0, 1, 1.0),))
    with pytest.raises(DomainError):
        laplace_exponent(LevyModel(1.0, 1.0), -0.5)


def test_with_loading_drift():
    model = LevyModel.with_loading(rate=2.0, jump_rate=3.0, loading=0.25, shape=3)
    assert model.drift == pytest.approx(1.25 * 2.0 * 3 / 3.0)


models = st.builds(
    lambda c, sigma, comps: LevyModel(c if sigma > 0 else abs(c) + 0.1, sigma, tuple(comps)),
    st.floats(-2, 2), st.one_of(st.just(0.0), st.floats(0.05, 2)),
    st.lists(st.builds(JumpComponent, st.floats(0.1, 3), st.integers(1, 4), st.floats(0.2, 5)),
             max_size=3),
)


@settings(max_examples=60, deadline=None)
@given(models, st.lists(st.floats(0, 20), min_size=3, max_size=3, unique=True))
def test_psi_convex(model, pts):
    s1, s2, s3 = sorted(pts)
    if s2 - s1 < 1e-3 or s3 - s2 < 1e-3:
        return
    f = lambda s: laplace_exponent(model, s)
    left = (f(s2) - f(s1)) / (s2 - s1)
    right = (f(s3) - f(s2)) / (s3 - s2)
    assert left <= right + 1e-10 * max(1.0, abs(right))


@settings(max_examples=60, deadline=None)
@given(models, st.floats(0.01, 10))
def test_phi_root_property(model, q):
    phi = phi_inverse(model, q)
    assert laplace_exponent(model, phi) == pytest.approx(q, rel=1e-10)
    assert laplace_exponent_derivative(model, phi) > 0


def test_phi_degenerate_model_reports_nonconvergence():
    from levytax import NonConvergence

    with pytest.raises(NonConvergence):
        phi_inverse(LevyModel(0.0, 1e-237), 1.0)
