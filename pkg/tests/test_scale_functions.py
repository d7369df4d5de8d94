import cmath
import math

import numpy as np
import pytest
from scipy.integrate import quad

from levytax import (DomainError, LevyModel, build_scale_evaluator, laplace_exponent,
                     scale_ratio_limit_check, w_bar, w_prime, w_scale, z_bar, z_double_prime,
                     z_lower_bound, z_prime, z_scale)
from levytax.scale_functions import z_bar_gap, z_slope_gap


@pytest.fixture(scope="module")
def bm1(brownian):
    return build_scale_evaluator(brownian, 1.0)


@pytest.fixture(scope="module")
def bm4(brownian):
    return build_scale_evaluator(brownian, 4.0)


def laplace_of_w(ev, s):
    """Numerical transform of W, truncated where the integrand is below 1e-16 of its scale."""
    rate = s - ev.phi_q
    upper = 40.0 / rate
    f = lambda x: math.exp(-s * x) * float(w_scale(ev, x))
    pieces = np.linspace(0.0, upper, 9)
    return sum(quad(f, lo, hi, epsabs=0.0, epsrel=1e-13, limit=200)[0]
               for lo, hi in zip(pieces[:-1], pieces[1:]))


def test_brownian_w_is_sinh(bm1):
    x = np.linspace(0.01, 10.0, 400)
    np.testing.assert_allclose(w_scale(bm1, x), np.sinh(x), rtol=1e-10)
    np.testing.assert_allclose(z_scale(bm1, x), np.cosh(x), rtol=1e-10)
    assert abs(w_scale(bm1, 0.0)) < 1e-14
    assert w_scale(bm1, 1.0) == pytest.approx(math.sinh(1.0), rel=1e-12)


def test_brownian_terms(bm1):
    poles = sorted(t.pole.real for t in bm1.terms)
    coefs = sorted(t.coefficient.real for t in bm1.terms)
    assert poles == pytest.approx([-1.0, 1.0], abs=1e-12)
    assert coefs == pytest.approx([-0.5, 0.5], abs=1e-12)


def test_brownian_q4(bm4):
    x = np.linspace(0.01, 8.0, 100)
    np.testing.assert_allclose(w_scale(bm4, x), np.sinh(2 * x) / 2, rtol=1e-10)


def test_example_structure(example_ev):
    ev = example_ev
    assert len(ev.terms) == 4
    real_poles = [t.pole.real for t in ev.terms if abs(t.pole.imag) == 0]
    assert max(real_poles) == pytest.approx(ev.phi_q, rel=1e-12)
    others = [t for t in ev.terms if not math.isclose(t.pole.real, ev.phi_q, rel_tol=1e-12)]
    assert all(t.pole.real < ev.phi_q for t in others)
    # complex poles come in conjugate pairs with conjugate coefficients
    for t in ev.terms:
        if t.pole.imag != 0:
            mate = [u for u in ev.terms if u.pole == t.pole.conjugate()]
            assert mate and mate[0].coefficient == pytest.approx(t.coefficient.conjugate())


def test_negative_arguments(example_ev, bm1):
    for ev in (example_ev, bm1):
        assert w_scale(ev, -1.0) == 0.0
        assert z_scale(ev, -2.0) == 1.0
        assert z_bar(ev, -2.0) == -2.0
        assert w_bar(ev, -2.0) == 0.0
        assert z_scale(ev, 0.0) == pytest.approx(1.0, abs=1e-15)
        assert z_bar(ev, 0.0) == pytest.approx(0.0, abs=1e-15)
        assert w_bar(ev, 0.0) == pytest.approx(0.0, abs=1e-15)


def test_w_vanishes_at_zero_for_unbounded_variation(example_ev):
    assert abs(w_scale(example_ev, 0.0)) < 1e-14


def test_brownian_antiderivatives(bm1):
    assert z_scale(bm1, 1.0) == pytest.approx(math.cosh(1.0), rel=1e-12)
    assert z_bar(bm1, 1.0) == pytest.approx(math.sinh(1.0), rel=1e-12)
    assert w_bar(bm1, 1.0) == pytest.approx(math.cosh(1.0) - 1.0, rel=1e-12)


def test_brownian_derivatives(bm1):
    assert w_prime(bm1, 1.0) == pytest.approx(math.cosh(1.0), rel=1e-12)
    assert z_prime(bm1, 1.0) == pytest.approx(math.sinh(1.0), rel=1e-12)
    assert z_double_prime(bm1, 1.0) == pytest.approx(math.cosh(1.0), rel=1e-12)


def test_derivative_identities(example_ev):
    ev = example_ev
    x = np.linspace(0.0, 10.0, 41)
    np.testing.assert_array_equal(z_prime(ev, x), ev.q * w_scale(ev, x))
    assert z_double_prime(ev, 2.0) / ev.q == pytest.approx(w_prime(ev, 2.0), rel=1e-14)
    for fn in (w_prime, z_prime, z_double_prime):
        with pytest.raises(DomainError):
            fn(ev, -0.5)


@pytest.mark.parametrize("x", [0.3, 1.0, 4.0, 12.0])
def test_derivatives_match_finite_differences(example_ev, x):
    ev, h = example_ev, 1e-6
    fd_w = (w_scale(ev, x + h) - w_scale(ev, x - h)) / (2 * h)
    fd_z = (z_scale(ev, x + h) - z_scale(ev, x - h)) / (2 * h)
    fd_zbar = (z_bar(ev, x + h) - z_bar(ev, x - h)) / (2 * h)
    assert w_prime(ev, x) == pytest.approx(fd_w, rel=1e-7)
    assert z_prime(ev, x) == pytest.approx(fd_z, rel=1e-7)
    assert z_scale(ev, x) == pytest.approx(fd_zbar, rel=1e-7)


def test_ratio_limit(bm1, example_ev):
    assert abs(scale_ratio_limit_check(bm1, 30.0)) < 1e-20
    assert abs(scale_ratio_limit_check(example_ev, 200.0)) < 1e-6
    # decay confirmed at two large arguments
    assert abs(scale_ratio_limit_check(example_ev, 400.0)) <= abs(
        scale_ratio_limit_check(example_ev, 100.0)) + 1e-15
    mags = [abs(scale_ratio_limit_check(example_ev, x)) for x in (10.0, 20.0, 40.0)]
    assert mags[0] > mags[1] > mags[2]


def test_lower_bound(example_ev, bm1):
    ev = example_ev
    bound = z_lower_bound(ev, 20.0, ev.phi_q / 2)
    assert 0 < bound <= z_scale(ev, 20.0)
    assert z_lower_bound(bm1, 10.0, 0.5) <= math.cosh(10.0)
    with pytest.raises(DomainError):
        z_lower_bound(ev, 1.0, ev.phi_q / 2)
    with pytest.raises(DomainError):
        z_lower_bound(ev, 50.0, 2 * ev.phi_q)


@pytest.mark.parametrize("x", np.linspace(6.0, 200.0, 25))
def test_lower_bound_holds_on_grid(example_ev, x):
    ev = example_ev
    assert z_lower_bound(ev, x, ev.phi_q / 2) <= z_scale(ev, x)


@pytest.mark.parametrize("offset", [0.5, 1.0, 2.0])
def test_laplace_identity_example(example_model, example_ev, offset):
    s = example_ev.phi_q + offset
    exact = 1.0 / (laplace_exponent(example_model, s) - 0.1)
    assert laplace_of_w(example_ev, s) == pytest.approx(exact, rel=1e-8)


@pytest.mark.parametrize("q", [0.05, 0.5, 2.0])
def test_laplace_identity_bounded_variation(bv_model, q):
    ev = build_scale_evaluator(bv_model, q)
    for offset in (0.5, 1.0, 2.0):
        s = ev.phi_q + offset
        exact = 1.0 / (laplace_exponent(bv_model, s) - q)
        assert laplace_of_w(ev, s) == pytest.approx(exact, rel=1e-8)


def test_bounded_variation_atom(bv_model):
    ev = build_scale_evaluator(bv_model, 0.1)
    # initial value theorem on the Laplace transform: W(0) = lim s / (psi(s) - q)
    s = 1e7
    oracle = s / (laplace_exponent(bv_model, s) - 0.1)
    assert w_scale(ev, 0.0) == pytest.approx(oracle, rel=1e-6)
    assert w_scale(ev, 0.0) == pytest.approx(1 / 1.5, rel=1e-12)


@pytest.mark.parametrize("which", ["example", "bv"])
def test_w_strictly_increasing(example_ev, bv_model, which):
    ev = example_ev if which == "example" else build_scale_evaluator(bv_model, 0.1)
    w = w_scale(ev, np.linspace(0.0, 50.0, 1000))
    assert np.all(np.diff(w) > 0)


def test_w_bar_log_concave(example_ev):
    x = np.linspace(0.05, 20.0, 400)
    wb, w, wp = w_bar(example_ev, x), w_scale(example_ev, x), w_prime(example_ev, x)
    assert np.all(wb * wp - w**2 < 0)


@pytest.mark.parametrize("which", ["example", "bv"])
def test_evaluation_is_real(example_ev, bv_model, which):
    ev = example_ev if which == "example" else build_scale_evaluator(bv_model, 0.1)
    for x in np.linspace(0.0, 20.0, 41):
        total = sum(t.coefficient * x**t.power * cmath.exp(t.pole * x) for t in ev.terms)
        assert abs(total.imag) < 1e-12 * max(1.0, abs(total.real))
        assert total.real == pytest.approx(float(w_scale(ev, x)), rel=1e-12, abs=1e-14)


def test_large_arguments_do_not_overflow(example_ev):
    from levytax.scale_functions import log_z

    assert math.isfinite(log_z(example_ev, 5000.0))
    assert log_z(example_ev, 50.0) == pytest.approx(math.log(z_scale(example_ev, 50.0)), rel=1e-13)


def test_partial_fractions_double_pole():
    from levytax.scale_functions import _cluster_roots, partial_fractions

    # 1 / ((s-1)^2 (s+2))  <->  -e^x/9 + x e^x/3 + e^{-2x}/9
    den = np.polynomial.polynomial.polyfromroots([1.0, 1.0, -2.0])
    roots = np.array([1.0 + 4e-9, 1.0 - 4e-9, -2.0], dtype=complex)
    poles = _cluster_roots(roots)
    assert sorted(m for _, m in poles) == [1, 2]
    terms = partial_fractions(np.array([1.0]), den, poles)
    for x in (0.0, 0.7, 3.0):
        got = sum(t.coefficient * x**t.power * cmath.exp(t.pole * x) for t in terms).real
        exact = -math.exp(x) / 9 + x * math.exp(x) / 3 + math.exp(-2 * x) / 9
        assert got == pytest.approx(exact, rel=1e-7, abs=1e-7)


@pytest.mark.parametrize("shape", [1, 3, 5])
def test_higher_erlang_shapes(shape):
    model = LevyModel(2.0, 0.5, ((1.0, shape, 1.0),))
    ev = build_scale_evaluator(model, 0.2)
    assert len(ev.terms) == shape + 2
    s = ev.phi_q + 1.0
    exact = 1.0 / (laplace_exponent(model, s) - 0.2)
    assert laplace_of_w(ev, s) == pytest.approx(exact, rel=1e-8)


def test_two_components_share_denominator():
    model = LevyModel(3.0, 0.8, ((1.0, 2, 2.0), (0.5, 1, 2.0), (0.3, 1, 0.5)))
    ev = build_scale_evaluator(model, 0.1)
    for offset in (0.5, 2.0):
        s = ev.phi_q + offset
        exact = 1.0 / (laplace_exponent(model, s) - 0.1)
        assert laplace_of_w(ev, s) == pytest.approx(exact, rel=1e-8)


def test_rejects_nonpositive_q(example_model):
    with pytest.raises(DomainError):
        build_scale_evaluator(example_model, 0.0)


class TestDominantFreeCombinations:
    @pytest.mark.parametrize("x", [0.0, 0.7, 3.0, 12.0])
    def test_match_direct_evaluation(self, example_ev, x):
        ev = example_ev
        direct_slope = float(z_scale(ev, x)) - float(z_prime(ev, x)) / ev.phi_q
        direct_bar = float(z_bar(ev, x)) - float(z_scale(ev, x)) / ev.phi_q
        assert float(z_slope_gap(ev, x)) == pytest.approx(direct_slope, abs=1e-10)
        assert float(z_bar_gap(ev, x)) == pytest.approx(direct_bar, abs=1e-10)

    def test_below_zero(self, example_ev):
        assert float(z_bar_gap(example_ev, -2.0)) == pytest.approx(-2.0 - 1.0 / example_ev.phi_q)

    def test_stay_bounded(self, example_ev):
        xs = np.array([100.0, 1000.0, 5000.0])
        assert np.all(np.isfinite(z_slope_gap(example_ev, xs)))
        assert np.all(np.isfinite(z_bar_gap(example_ev, xs)))
        assert np.all(np.abs(z_slope_gap(example_ev, xs)) < 1e-8)

    def test_brownian_closed_form(self, brownian):
        # sigma^2 = 2, q = 1: Phi = 1 and Z = cosh(x), so Z - Z'/Phi = exp(-x)
        ev = build_scale_evaluator(brownian, 1.0)
        xs = np.array([0.0, 1.0, 5.0])
        np.testing.assert_allclose(z_slope_gap(ev, xs), np.exp(-xs), rtol=1e-10)
