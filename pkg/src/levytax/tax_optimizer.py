"""Value of threshold taxation with minimal bailouts and the optimal threshold.

Notation follows the scale-function literature: ``Z = Z^(q)``, ``Zbar`` its
antiderivative, and for a tax rate ``gamma in [0, 1)``

    R_gamma(x) = gamma/(1-gamma) * Z(x)^p * int_x^inf Z(y)^(-p) (1 - eta Z(y)) dy,
    p = 1 / (1 - gamma).

The threshold tax rate ``delta_b`` charges ``alpha`` while the running maximum
of the controlled process is at most ``b`` and ``beta`` above it. The
optimal threshold ``b*`` is where ``C(b)`` crosses ``Q(b)`` (equivalently
where ``R_beta(b) = Z(b)/Z'(b) (1 - eta Z(b))``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .exceptions import DomainError, NonConvergence
from .levy_model import laplace_exponent_derivative
from .scale_functions import (ScaleEvaluator, log_z, z_bar, z_bar_gap, z_prime, z_scale,
                              z_slope_gap)

__all__ = [
    "TaxParams",
    "QuadratureSpec",
    "r_gamma",
    "r_gamma_finite",
    "truncation_point",
    "c_func",
    "q_func",
    "threshold_gap",
    "optimal_threshold",
    "value",
    "value_finite_horizon",
    "check_char_pde",
    "check_ode_C",
    "check_verif_inequalities",
    "VerificationReport",
]

# Width of the fixed lattice of quadrature panels used for R_gamma.
PANEL_WIDTH = 1.0
B_STAR_FLOOR = 1e-8


@dataclass(frozen=True)
class TaxParams:
    """Tax-rate bounds, bailout penalty and discount rate."""

    alpha: float
    beta: float
    eta: float
    q: float

    def __post_init__(self):
        if not (0 <= self.alpha <= self.beta < 1 and self.beta > 0):
            raise DomainError(
                f"need 0 <= alpha <= beta < 1 and beta > 0, got alpha={self.alpha}, "
                f"beta={self.beta}")
        if not self.q > 0:
            raise DomainError(f"discount rate q must be > 0, got {self.q}")
        if not self.eta >= 0:
            raise DomainError(f"bailout penalty eta must be >= 0, got {self.eta}")

    def rate(self, level: float, b: float) -> float:
        """Threshold tax rate ``delta_b(level)``."""
        return self.alpha if level <= b else self.beta


@dataclass(frozen=True)
class QuadratureSpec:
    """Tail truncation budget and quadrature tolerances for ``R_gamma``.

    ``delta_fraction`` sets ``delta = delta_fraction * Phi(q)`` in the
    exponential lower bound on ``Z`` used to pick the truncation point.
    """

    epsilon_tail: float = 1e-10
    delta_fraction: float = 0.5
    rel_tol: float = 1e-9

    def __post_init__(self):
        if not self.epsilon_tail > 0:
            raise DomainError("epsilon_tail must be > 0")
        if not 0 < self.delta_fraction < 1:
            raise DomainError("delta_fraction must lie in (0, 1)")
        if not self.rel_tol > 0:
            raise DomainError("rel_tol must be > 0")


DEFAULT_QUAD = QuadratureSpec()


def _check_ev(ev: ScaleEvaluator, tax: TaxParams):
    if not math.isclose(ev.q, tax.q, rel_tol=1e-14, abs_tol=0.0):
        raise DomainError(f"evaluator built for q={ev.q} but tax params have q={tax.q}")


def truncation_point(ev: ScaleEvaluator, eta: float, gamma: float, x: float,
                     quad_spec: QuadratureSpec = DEFAULT_QUAD) -> float:
    """Upper limit ``M`` so the neglected tail of ``R_gamma(x)`` is below ``epsilon_tail``.

    Uses ``Z(y) >= K^-1 exp(-(Phi - delta) y)`` with ``K = Phi / (q Phi')``
    for ``y >= log 2 / delta`` and the split
    ``|1 - eta Z| Z^-p <= |eta - 1| Z^-p + eta Z^(1-p)``; each of the two
    pieces gets half the budget.
    """
    phi = ev.phi_q
    delta = quad_spec.delta_fraction * phi
    a = phi - delta
    log_k = math.log(phi / (ev.q * ev.phi_prime))
    p = 1.0 / (1.0 - gamma)
    log_front = math.log(gamma / (1.0 - gamma)) + p * log_z(ev, x)
    log_budget = math.log(0.5 * quad_spec.epsilon_tail)
    m = max(math.log(2.0) / delta, x)
    for coef, power in ((abs(eta - 1.0), p), (eta, p - 1.0)):
        if coef == 0.0:
            continue
        rate = a * power
        need = (math.log(coef) + log_front + power * log_k - math.log(rate) - log_budget) / rate
        m = max(m, need)
    return m


class _RIntegrals:
    """Normalized pieces of ``R_gamma`` for a fixed ``(ev, gamma, top)``.

    For a base point ``x`` it returns

        A(x) = int_x^top (Z(x)/Z(y))^p dy,
        L(x) = int_x^top (Z(x)/Z(y))^p (Z(y) - Z'(y)/Phi) dy,

    with ``p = 1/(1-gamma)``. Integrating the ``Z'`` part of the integrand
    exactly gives

        R_gamma(x) = gamma/(1-gamma) (A - eta L) - eta Z(x)/Phi (1 - (Z(x)/Z(top))^(p-1)),

    where the first piece stays O(1) for every ``x`` and the second is
    explicit. Values on the panel lattice ``k * PANEL_WIDTH`` are computed
    once by backward recursion; a query adds one partial panel.
    """

    def __init__(self, ev: ScaleEvaluator, gamma: float, top: float, rel_tol: float):
        self.ev = ev
        self.p = 1.0 / (1.0 - gamma)
        self.top = top
        self.rel_tol = rel_tol
        n = int(math.floor(top / PANEL_WIDTH))
        if n * PANEL_WIDTH >= top:
            n -= 1
        self.knots = PANEL_WIDTH * np.arange(max(n, -1) + 1)
        self.lz = np.array([log_z(ev, k) for k in self.knots])
        self.a_vals = np.zeros(len(self.knots))
        self.l_vals = np.zeros(len(self.knots))
        upper_a = upper_l = 0.0
        upper = top
        self.top_lz = upper_lz = log_z(ev, top)
        for i in range(len(self.knots) - 1, -1, -1):
            k, lk = self.knots[i], self.lz[i]
            pa, pl = self._panel(k, upper, lk)
            decay = math.exp(-self.p * (upper_lz - lk))
            upper_a = pa + decay * upper_a
            upper_l = pl + decay * upper_l
            self.a_vals[i], self.l_vals[i] = upper_a, upper_l
            upper, upper_lz = k, lk

    def _panel(self, lo: float, hi: float, l_base: float):
        if hi <= lo:
            return 0.0, 0.0
        ev, p = self.ev, self.p
        fa = lambda y: math.exp(-p * (log_z(ev, y) - l_base))
        fl = lambda y: fa(y) * z_slope_gap(ev, y)
        ia = quad(fa, lo, hi, epsabs=0.0, epsrel=self.rel_tol, limit=200)[0]
        il = quad(fl, lo, hi, epsabs=0.0, epsrel=self.rel_tol, limit=200)[0]
        return ia, il

    def at(self, x: float):
        """``(A(x), L(x), log Z(x))``."""
        lx = log_z(self.ev, x)
        if x >= self.top:
            return 0.0, 0.0, lx
        i = int(math.ceil(x / PANEL_WIDTH))
        if i >= len(self.knots):
            return (*self._panel(x, self.top, lx), lx)
        k = self.knots[i]
        pa, pl = self._panel(x, k, lx)
        decay = math.exp(-self.p * (self.lz[i] - lx))
        return pa + decay * self.a_vals[i], pl + decay * self.l_vals[i], lx


@lru_cache(maxsize=256)
def _finite_integrals(ev, gamma, top, rel_tol) -> _RIntegrals:
    return _RIntegrals(ev, gamma, top, rel_tol)


class _InfiniteIntegrals:
    """Lazily grown lattice for the untruncated ``R_gamma``."""

    def __init__(self, ev, eta, gamma, quad_spec):
        self.ev, self.eta, self.gamma, self.quad_spec = ev, eta, gamma, quad_spec
        self.lattice: _RIntegrals | None = None

    def at(self, x: float):
        need = truncation_point(self.ev, self.eta, self.gamma, x, self.quad_spec)
        if self.lattice is None or need > self.lattice.top:
            floor = truncation_point(self.ev, self.eta, self.gamma, 64.0, self.quad_spec)
            grow = 1.5 * self.lattice.top if self.lattice is not None else 0.0
            top = PANEL_WIDTH * math.ceil(max(need, floor, grow) / PANEL_WIDTH)
            self.lattice = _RIntegrals(self.ev, self.gamma, top, self.quad_spec.rel_tol)
        return self.lattice.at(x)


@lru_cache(maxsize=256)
def _infinite_integrals(ev, eta, gamma, quad_spec) -> _InfiniteIntegrals:
    return _InfiniteIntegrals(ev, eta, gamma, quad_spec)


def _check_gamma_x(gamma, x):
    if not 0 <= gamma < 1:
        raise DomainError(f"gamma must lie in [0, 1), got {gamma}")
    if not x >= 0:
        raise DomainError(f"R_gamma is defined for x >= 0, got {x}")


def _r_bounded(ev, tax, gamma, x, quad_spec):
    """``R_gamma(x) + eta Z(x)/Phi``, which stays bounded in ``x``."""
    if gamma == 0:
        return 0.0
    a_int, l_int, _ = _infinite_integrals(ev, float(tax.eta), float(gamma), quad_spec).at(float(x))
    return gamma / (1.0 - gamma) * (a_int - tax.eta * l_int)


def r_gamma(ev: ScaleEvaluator, tax: TaxParams, gamma: float, x: float,
            quad_spec: QuadratureSpec = DEFAULT_QUAD) -> float:
    """``R_gamma(x)`` with the improper integral truncated at :func:`truncation_point`.

    Examples
    --------
    >>> from levytax.levy_model import LevyModel
    >>> from levytax.scale_functions import build_scale_evaluator
    >>> ev = build_scale_evaluator(LevyModel.with_loading(), 0.1)
    >>> r_gamma(ev, TaxParams(0.3, 0.6, 1.25, 0.1), 0.0, 3.0)
    0.0
    """
    _check_ev(ev, tax)
    _check_gamma_x(gamma, x)
    if gamma == 0:
        return 0.0
    return _r_bounded(ev, tax, gamma, x, quad_spec) - tax.eta * float(z_scale(ev, x)) / ev.phi_q


def r_gamma_finite(ev: ScaleEvaluator, tax: TaxParams, gamma: float, x: float, a: float,
                   quad_spec: QuadratureSpec = DEFAULT_QUAD) -> float:
    """``R_{gamma,a}(x)``: the integral stopped at ``a``; zero for ``x > a``."""
    _check_ev(ev, tax)
    _check_gamma_x(gamma, x)
    if gamma == 0 or x >= a:
        return 0.0
    lattice = _finite_integrals(ev, float(gamma), float(a), quad_spec.rel_tol)
    a_int, l_int, lx = lattice.at(float(x))
    w = gamma / (1.0 - gamma)
    explicit = math.exp(lx) / ev.phi_q * -math.expm1(w * (lx - lattice.top_lz))
    return w * (a_int - tax.eta * l_int) - tax.eta * explicit


def _z_pair(ev, b):
    z = float(z_scale(ev, b))
    zp = float(z_prime(ev, b))
    if not zp > 0:
        raise DomainError(f"Z'({b}) = {zp} is not positive")
    return z, zp


def _slope_part(ev, tax, b):
    """``Z/Z' (1 - eta Z) + eta Z/Phi``, written as ``Z/Z' (1 - eta (Z - Z'/Phi))``."""
    z, zp = _z_pair(ev, b)
    return z / zp * (1.0 - tax.eta * float(z_slope_gap(ev, b)))


def c_func(ev: ScaleEvaluator, tax: TaxParams, b: float,
           quad_spec: QuadratureSpec = DEFAULT_QUAD) -> float:
    """``C(b) = Z(b)^(-1/(1-alpha)) (R_beta(b) - R_alpha(b))``."""
    if b < 0:
        raise DomainError("c_func needs b >= 0")
    if tax.alpha == tax.beta:
        return 0.0
    _check_ev(ev, tax)
    diff = _r_bounded(ev, tax, tax.beta, b, quad_spec) - _r_bounded(ev, tax, tax.alpha, b, quad_spec)
    return math.exp(-log_z(ev, b) / (1.0 - tax.alpha)) * diff


def q_func(ev: ScaleEvaluator, tax: TaxParams, b: float,
           quad_spec: QuadratureSpec = DEFAULT_QUAD) -> float:
    """``Q(b) = Z(b)^(-1/(1-alpha)) (Z(b)/Z'(b) (1 - eta Z(b)) - R_alpha(b))``."""
    if b < 0:
        raise DomainError("q_func needs b >= 0")
    _check_ev(ev, tax)
    inner = _slope_part(ev, tax, b) - _r_bounded(ev, tax, tax.alpha, b, quad_spec)
    return math.exp(-log_z(ev, b) / (1.0 - tax.alpha)) * inner


def threshold_gap(ev: ScaleEvaluator, tax: TaxParams, b: float,
                  quad_spec: QuadratureSpec = DEFAULT_QUAD) -> float:
    """``R_beta(b) - Z(b)/Z'(b) (1 - eta Z(b))``, which has the sign of ``C(b) - Q(b)``.

    It does not involve ``alpha``, so neither does ``b*``.
    """
    _check_ev(ev, tax)
    return _r_bounded(ev, tax, tax.beta, b, quad_spec) - _slope_part(ev, tax, b)


def optimal_threshold(ev: ScaleEvaluator, tax: TaxParams,
                      quad_spec: QuadratureSpec = DEFAULT_QUAD,
                      b_max: float = 1e6) -> float:
    """Optimal threshold ``b* = inf{b > 0 : C(b) < Q(b)}`` (requires ``eta >= 1``).

    Returns exactly ``0.0`` when ``eta == 1`` or when ``C < Q`` already at
    ``b = 1e-8``; otherwise brackets the single sign change of ``C - Q`` by
    doubling from ``b = 1`` and refines it to an absolute tolerance of 1e-10.
    """
    _check_ev(ev, tax)
    if tax.eta < 1:
        raise DomainError(f"optimal_threshold requires eta >= 1, got {tax.eta}")
    if tax.eta == 1:
        return 0.0
    gap = lambda b: threshold_gap(ev, tax, b, quad_spec)
    if gap(B_STAR_FLOOR) < 0:
        return 0.0
    lo, hi = B_STAR_FLOOR, 1.0
    while gap(hi) >= 0:
        lo, hi = hi, 2.0 * hi
        if hi > b_max:
            raise NonConvergence(f"no sign change of C - Q found below b={b_max}")
    try:
        return float(brentq(gap, lo, hi, xtol=1e-10, rtol=4 * np.finfo(float).eps,
                            maxiter=200))
    except RuntimeError as exc:
        raise NonConvergence(str(exc)) from exc


def _z_ratio(ev, x, y):
    """``Z(x)/Z(y)`` through logarithms (``Z = 1`` below zero)."""
    return math.exp(log_z(ev, x) - log_z(ev, y))


def _value_terms(ev, tax, b, x, x_bar, r_alpha, r_beta):
    """Right-hand side of the threshold value formula for any real ``x``.

    ``r_alpha``/``r_beta`` return ``R_gamma + eta Z/Phi``. The ``eta Z/Phi``
    shifts combine with ``eta Z_bar(x)`` into ``eta (Z_bar(x) - Z(x)/Phi)``,
    so no exponentially large terms cancel.
    """
    mean_term = laplace_exponent_derivative(ev.model, 0.0) / ev.q
    if x_bar >= b:
        braces = r_beta(x_bar)
    else:
        ratio = _z_ratio(ev, x_bar, b) ** (1.0 / (1.0 - tax.alpha))
        braces = r_alpha(x_bar) + ratio * (r_beta(b) - r_alpha(b))
    return tax.eta * (float(z_bar_gap(ev, x)) + mean_term) + _z_ratio(ev, x, x_bar) * braces


def _value_raw(ev, tax, b, x, x_bar, quad_spec=DEFAULT_QUAD):
    return _value_terms(
        ev, tax, b, x, x_bar,
        lambda y: _r_bounded(ev, tax, tax.alpha, y, quad_spec),
        lambda y: _r_bounded(ev, tax, tax.beta, y, quad_spec),
    )


def value(ev: ScaleEvaluator, tax: TaxParams, b: float, x: float, x_bar: float,
          quad_spec: QuadratureSpec = DEFAULT_QUAD) -> float:
    """Expected discounted taxes minus ``eta`` times discounted bailouts.

    Closed form for the threshold-``b`` tax rate with minimal bailouts,
    started from capital ``x`` and initial maximum level ``x_bar``
    (``x <= x_bar``, ``x_bar >= 0``).
    """
    _check_ev(ev, tax)
    if b < 0:
        raise DomainError("threshold b must be >= 0")
    if x_bar < 0 or x > x_bar:
        raise DomainError(f"need x <= x_bar and x_bar >= 0, got x={x}, x_bar={x_bar}")
    return _value_raw(ev, tax, b, x, x_bar, quad_spec)


def _value_finite_raw(ev, tax, b, a, x, x_bar, quad_spec=DEFAULT_QUAD):
    shift = lambda y: tax.eta * float(z_scale(ev, y)) / ev.phi_q
    base = _value_terms(
        ev, tax, b, x, x_bar,
        lambda y: r_gamma_finite(ev, tax, tax.alpha, y, a, quad_spec) + shift(y),
        lambda y: r_gamma_finite(ev, tax, tax.beta, y, a, quad_spec) + shift(y),
    )
    mean_term = laplace_exponent_derivative(ev.model, 0.0) / ev.q
    zx = float(z_scale(ev, x))
    za = float(z_scale(ev, a))
    zxb = float(z_scale(ev, x_bar))
    zmb = float(z_scale(ev, max(x_bar, b)))
    pa = tax.alpha / (1.0 - tax.alpha)
    pb = tax.beta / (1.0 - tax.beta)
    stop = tax.eta * zx / za * (float(z_bar(ev, a)) + mean_term) \
        * (zxb / zmb) ** pa * (zmb / za) ** pb
    return base - stop


def value_finite_horizon(ev: ScaleEvaluator, tax: TaxParams, b: float, a: float,
                         x: float, x_bar: float,
                         quad_spec: QuadratureSpec = DEFAULT_QUAD) -> float:
    """Value of the same strategy stopped when the controlled process reaches ``a``."""
    _check_ev(ev, tax)
    if not a > b >= 0:
        raise DomainError(f"need a > b >= 0, got a={a}, b={b}")
    if not (0 <= x_bar <= a and x <= x_bar):
        raise DomainError(f"need x <= x_bar in [0, a], got x={x}, x_bar={x_bar}, a={a}")
    return _value_finite_raw(ev, tax, b, a, x, x_bar, quad_spec)


# -- finite-difference checks -------------------------------------------------

def _d_left(f, y, h):
    return (3.0 * f(y) - 4.0 * f(y - h) + f(y - 2.0 * h)) / (2.0 * h)


def _d_right(f, y, h):
    return (-3.0 * f(y) + 4.0 * f(y + h) - f(y + 2.0 * h)) / (2.0 * h)


def _d_central(f, y, h):
    return (f(y + h) - f(y - h)) / (2.0 * h)


def _dx(v, x, x_bar, h):
    """Derivative in the first argument; one-sided (right) near 0."""
    f = lambda y: v(y, x_bar)
    if x - h >= 0:
        return _d_central(f, x, h)
    return _d_right(f, x, h)


def check_char_pde(ev: ScaleEvaluator, tax: TaxParams, b: float, a: float, x_bar: float,
                   h: float = 1e-5, quad_spec: QuadratureSpec = DEFAULT_QUAD) -> float:
    """Residual of ``gamma dv_a/dx + (gamma - 1) dv_a/dx_bar = gamma`` on the diagonal.

    ``gamma`` is ``alpha`` for ``x_bar <= b`` and ``beta`` above. The
    ``x_bar`` derivative is one-sided from the left (second order) unless
    that would cross ``0`` or the kink at ``b``.
    """
    _check_ev(ev, tax)
    if not 0 < x_bar <= a:
        raise DomainError(f"x_bar must lie in (0, a], got {x_bar}")
    if x_bar == b or x_bar == a:
        raise DomainError("x_bar must avoid the kink at b and the boundary a")
    gamma = tax.alpha if x_bar <= b else tax.beta
    lower = b if x_bar > b else 0.0
    v = lambda y, yb: _value_finite_raw(ev, tax, b, a, y, yb, quad_spec)
    dx = _dx(v, x_bar, x_bar, h)
    g = lambda yb: v(x_bar, yb)
    if x_bar - 2.0 * h >= lower:
        dxb = _d_left(g, x_bar, h)
    else:
        dxb = _d_right(g, x_bar, h)
    return gamma * dx + (gamma - 1.0) * dxb - gamma


def check_ode_C(ev: ScaleEvaluator, tax: TaxParams, b: float, h: float = 1e-5,
                quad_spec: QuadratureSpec = DEFAULT_QUAD) -> float:
    """Residual of ``C' = (1/(1-beta) - 1/(1-alpha)) Z'/Z (C - Q)`` at ``b > 0``."""
    if not b > 0:
        raise DomainError("check_ode_C needs b > 0")
    if tax.alpha == tax.beta:
        return 0.0
    c = lambda y: c_func(ev, tax, y, quad_spec)
    dc = _d_central(c, b, h) if b - h > 0 else _d_right(c, b, h)
    z, zp = _z_pair(ev, b)
    factor = 1.0 / (1.0 - tax.beta) - 1.0 / (1.0 - tax.alpha)
    return dc - factor * zp / z * (c(b) - q_func(ev, tax, b, quad_spec))


@dataclass
class VerificationReport:
    """Worst-case violations of the verification conditions over a grid.

    ``pde_violation`` is the largest ``max(0, gamma - [gamma v_x + (gamma-1) v_xbar])``
    on the diagonal, ``slope_violation`` the largest ``max(0, v_x - eta)``
    and ``sup_abs_value`` the largest ``|v|`` seen (finite means bounded on
    the grid).
    """

    pde_violation: float
    slope_violation: float
    sup_abs_value: float
    worst_pde_point: tuple = ()
    worst_slope_point: tuple = ()
    details: dict = field(default_factory=dict)

    @property
    def max_violation(self) -> float:
        return max(self.pde_violation, self.slope_violation)

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.sup_abs_value)


def check_verif_inequalities(ev: ScaleEvaluator, tax: TaxParams, b_star: float,
                             grid: Sequence[float], n_x: int = 6, h: float = 1e-5,
                             quad_spec: QuadratureSpec = DEFAULT_QUAD) -> VerificationReport:
    """Check the sufficient optimality conditions for ``v(., .; b_star)``.

    ``grid`` lists the ``x_bar`` values; for each, ``n_x`` capitals
    ``x in [0, x_bar]`` are used for the slope bound ``v_x <= eta``, and the
    diagonal condition is tested for ``gamma in {alpha, (alpha+beta)/2, beta}``.
    """
    _check_ev(ev, tax)
    v = lambda y, yb: _value_raw(ev, tax, b_star, y, yb, quad_spec)
    gammas = (tax.alpha, 0.5 * (tax.alpha + tax.beta), tax.beta)
    pde_worst, pde_at = 0.0, ()
    slope_worst, slope_at = 0.0, ()
    sup_abs = 0.0
    for x_bar in grid:
        x_bar = float(x_bar)
        g = lambda yb: v(x_bar, yb)
        if x_bar - 2.0 * h >= 0:
            dxb = _d_left(g, x_bar, h)
        else:
            dxb = _d_right(g, x_bar, h)
        dx_diag = _dx(v, x_bar, x_bar, h)
        for gamma in gammas:
            lhs = gamma * dx_diag + (gamma - 1.0) * dxb
            viol = gamma - lhs
            if viol > pde_worst:
                pde_worst, pde_at = viol, (x_bar, gamma)
        for x in np.linspace(0.0, x_bar, n_x) if x_bar > 0 else [0.0]:
            val = v(float(x), x_bar)
            sup_abs = max(sup_abs, abs(val))
            slope = _dx(v, float(x), x_bar, h) - tax.eta
            if slope > slope_worst:
                slope_worst, slope_at = slope, (float(x), x_bar)
    return VerificationReport(pde_worst, slope_worst, sup_abs, pde_at, slope_at)
