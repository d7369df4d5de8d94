"""q-scale functions of rational-exponent spectrally negative Levy processes.

For the models in :mod:`levytax.levy_model`, ``psi(s) - q`` is a ratio of
polynomials ``N(s) / D(s)``, so ``1 / (psi(s) - q) = D(s) / N(s)`` has an
exact partial-fraction expansion and its inverse Laplace transform is a finite
sum of exponential monomials

    W(x) = Re sum_i c_i x**m_i exp(rho_i x),    x >= 0.

Antiderivatives and derivatives are again of this form, which gives
``W``, ``W_bar``, ``Z``, ``Z_bar`` and their derivatives in closed form.
Evaluation always goes through ``exp(-Phi(q) x) * f(x)`` so large arguments
do not overflow before the final rescaling.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from math import factorial

import numpy as np
from numpy.polynomial import polynomial as P

from .exceptions import DomainError, RootFindingFailure
from .levy_model import LevyModel, VariationClass, laplace_exponent, \
    laplace_exponent_derivative, phi_inverse, variation_class

__all__ = [
    "ScaleTerm",
    "ScaleEvaluator",
    "build_scale_evaluator",
    "w_scale",
    "w_bar",
    "z_scale",
    "z_bar",
    "w_prime",
    "z_prime",
    "z_double_prime",
    "z_slope_gap",
    "z_bar_gap",
    "log_z",
    "scale_ratio_limit_check",
    "z_lower_bound",
]

# Roots closer than this (relative) are merged into one pole of higher order.
# Floating-point eigenvalues of an exact double root split by ~sqrt(eps).
CLUSTER_TOL = 1e-6
REAL_TOL = 1e-10


class ExpPoly:
    """Real part of ``sum_j p_j(x) exp(r_j x)`` with complex polynomials ``p_j``.

    ``rates`` is a sequence of complex rates and ``coefs[j]`` the
    low-to-high coefficients of ``p_j``.
    """

    def __init__(self, rates, coefs):
        merged: dict[complex, np.ndarray] = {}
        for r, c in zip(rates, coefs):
            r = complex(r)
            c = np.trim_zeros(np.asarray(c, dtype=complex), "b")
            if c.size == 0:
                continue
            if r in merged:
                merged[r] = P.polyadd(merged[r], c)
            else:
                merged[r] = c
        self.rates = list(merged)
        self.coefs = [merged[r] for r in self.rates]
        # Scalar fast path used inside quadrature loops.
        self._terms = [
            (r, r.imag == 0.0, tuple(complex(v) for v in c))
            for r, c in zip(self.rates, self.coefs)
        ]

    def derivative(self) -> "ExpPoly":
        rates, coefs = [], []
        for r, c in zip(self.rates, self.coefs):
            rates.append(r)
            coefs.append(P.polyadd(r * c, P.polyder(c)) if c.size > 1 else r * c)
        return ExpPoly(rates, coefs)

    def antiderivative(self) -> "ExpPoly":
        """Antiderivative vanishing at ``x = 0``."""
        rates, coefs = [], []
        const = 0j
        for r, c in zip(self.rates, self.coefs):
            if r == 0:
                rates.append(0j)
                coefs.append(P.polyint(c))
                continue
            # P' + r P = p  =>  P = sum_k (-1)^k p^(k) / r^(k+1)
            acc = np.zeros_like(c)
            dk = c.copy()
            sign = 1.0
            for k in range(c.size):
                acc = P.polyadd(acc, sign * dk / r ** (k + 1))
                dk = P.polyder(dk) if dk.size > 1 else np.zeros(1, dtype=complex)
                sign = -sign
            rates.append(r)
            coefs.append(acc)
            const -= acc[0]
        rates.append(0j)
        coefs.append(np.array([const]))
        return ExpPoly(rates, coefs)

    def scale(self, factor: float) -> "ExpPoly":
        return ExpPoly(self.rates, [factor * c for c in self.coefs])

    def add_poly(self, poly) -> "ExpPoly":
        return ExpPoly(self.rates + [0j], self.coefs + [np.asarray(poly, dtype=complex)])

    def plus(self, other: "ExpPoly") -> "ExpPoly":
        return ExpPoly(self.rates + other.rates, self.coefs + other.coefs)

    def without_rate(self, rate: float, tol: float = 1e-12) -> "ExpPoly":
        """Drop the term with rate ``rate`` (its coefficient is taken to cancel exactly)."""
        keep = [j for j, r in enumerate(self.rates) if abs(r - rate) > tol * max(1.0, abs(rate))]
        if len(keep) != len(self.rates) - 1:
            raise RootFindingFailure(f"expected exactly one term with rate {rate}")
        return ExpPoly([self.rates[j] for j in keep], [self.coefs[j] for j in keep])

    def scaled(self, x, shift: float):
        """``exp(-shift * x) * f(x)`` for array ``x``."""
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        for r, c in zip(self.rates, self.coefs):
            poly = P.polyval(x, c)
            out += np.real(poly * np.exp((r - shift) * x))
        return out

    def scaled_scalar(self, x: float, shift: float) -> float:
        total = 0.0
        for r, is_real, c in self._terms:
            poly = c[-1]
            for v in c[-2::-1]:
                poly = poly * x + v
            if is_real:
                total += poly.real * math.exp((r.real - shift) * x)
            else:
                total += (poly * cmath.exp((r - shift) * x)).real
        return total


@dataclass(frozen=True)
class ScaleTerm:
    """One exponential monomial ``coefficient * x**power * exp(pole * x)``."""

    coefficient: complex
    pole: complex
    power: int


@dataclass(frozen=True, eq=False)
class ScaleEvaluator:
    """Closed-form ``W``, ``Z`` and relatives for a fixed ``(model, q)``.

    Build with :func:`build_scale_evaluator`; instances are immutable.
    """

    model: LevyModel
    q: float
    terms: tuple[ScaleTerm, ...]
    phi_q: float
    _w: ExpPoly = field(repr=False)
    _w_bar: ExpPoly = field(repr=False)
    _z: ExpPoly = field(repr=False)
    _z_bar: ExpPoly = field(repr=False)
    _w_prime: ExpPoly = field(repr=False)
    _z_slope_gap: ExpPoly = field(repr=False)
    _z_bar_gap: ExpPoly = field(repr=False)

    @property
    def phi_prime(self) -> float:
        """``Phi'(q) = 1 / psi'(Phi(q))``."""
        return 1.0 / laplace_exponent_derivative(self.model, self.phi_q)

    @property
    def variation(self) -> VariationClass:
        return variation_class(self.model)

    def laplace_transform(self, s):
        """``1 / (psi(s) - q)``, the transform ``W`` must reproduce for ``s > Phi(q)``."""
        return 1.0 / (laplace_exponent(self.model, s) - self.q)


def _numerator_denominator(model: LevyModel, q: float):
    """Polynomials (low-to-high) with ``psi(s) - q = N(s) / D(s)``."""
    groups: dict[float, int] = {}
    for c in model.jump_components:
        groups[c.jump_rate] = max(groups.get(c.jump_rate, 0), c.shape)
    den = np.array([1.0])
    for mu, k in groups.items():
        den = P.polymul(den, P.polypow([mu, 1.0], k))
    lam_total = model.total_jump_rate
    base = np.array([-q - lam_total, model.drift, 0.5 * model.volatility**2])
    num = P.polymul(base, den)
    for c in model.jump_components:
        part = np.array([c.rate * c.jump_rate**c.shape])
        for mu, k in groups.items():
            power = k - c.shape if mu == c.jump_rate else k
            part = P.polymul(part, P.polypow([mu, 1.0], power))
        num = P.polyadd(num, part)
    return np.trim_zeros(num, "b"), den


def _cluster_roots(roots: np.ndarray, tol: float = CLUSTER_TOL):
    """Group numerically coincident roots; returns ``[(center, multiplicity)]``."""
    remaining = list(roots)
    clusters = []
    while remaining:
        r = remaining.pop(0)
        members = [r]
        keep = []
        for s in remaining:
            if abs(s - r) <= tol * max(1.0, abs(r)):
                members.append(s)
            else:
                keep.append(s)
        remaining = keep
        clusters.append((complex(np.mean(members)), len(members)))
    return clusters


def _symmetrize(clusters):
    """Snap near-real poles to the real axis and force exact conjugate pairs."""
    out = []
    pending = []
    for r, m in clusters:
        if abs(r.imag) <= REAL_TOL * max(1.0, abs(r)):
            out.append((complex(r.real, 0.0), m))
        elif r.imag > 0:
            pending.append((r, m))
    lower = [(r, m) for r, m in clusters if r.imag < -REAL_TOL * max(1.0, abs(r))]
    if len(lower) != len(pending):
        raise RootFindingFailure("complex roots do not come in conjugate pairs")
    for r, m in pending:
        j = min(range(len(lower)), key=lambda i: abs(lower[i][0] - r.conjugate()))
        s, ms = lower.pop(j)
        if ms != m or abs(s - r.conjugate()) > 1e-6 * max(1.0, abs(r)):
            raise RootFindingFailure("could not pair conjugate roots")
        center = complex(0.5 * (r.real + s.real), 0.5 * (r.imag - s.imag))
        out.append((center, m))
        out.append((center.conjugate(), m))
    return out


def _taylor(coefs: np.ndarray, at: complex, order: int) -> np.ndarray:
    """First ``order`` Taylor coefficients of a polynomial around ``at``."""
    out = np.zeros(order, dtype=complex)
    d = np.asarray(coefs, dtype=complex)
    for k in range(order):
        out[k] = P.polyval(at, d) / factorial(k) if d.size else 0.0
        d = P.polyder(d) if d.size > 1 else np.zeros(0, dtype=complex)
    return out


def partial_fractions(num: np.ndarray, den: np.ndarray, poles):
    """Inverse Laplace transform of ``num / den`` (degree of num < den).

    ``poles`` lists ``(pole, multiplicity)`` covering all roots of ``den``.
    Returns :class:`ScaleTerm` objects with ``f(x) = Re sum c x^m e^{rho x}``.
    """
    lead = den[-1]
    terms = []
    for i, (rho, m) in enumerate(poles):
        # den(s) = (s - rho)^m * rest(s)
        rest = np.array([lead], dtype=complex)
        for j, (r, mj) in enumerate(poles):
            if j != i:
                rest = P.polymul(rest, P.polypow(np.array([-r, 1.0], dtype=complex), mj))
        a = _taylor(num, rho, m)
        b = _taylor(rest, rho, m)
        g = np.zeros(m, dtype=complex)
        for k in range(m):
            g[k] = (a[k] - np.dot(g[:k], b[k:0:-1])) / b[0]
        # coefficient of 1/(s-rho)^j is g[m-j]; its inverse is x^(j-1)/(j-1)! e^{rho x}
        for j in range(1, m + 1):
            terms.append(ScaleTerm(complex(g[m - j] / factorial(j - 1)), complex(rho), j - 1))
    return terms


def _terms_to_exppoly(terms) -> ExpPoly:
    rates, coefs = [], []
    for t in terms:
        c = np.zeros(t.power + 1, dtype=complex)
        c[t.power] = t.coefficient
        rates.append(t.pole)
        coefs.append(c)
    return ExpPoly(rates, coefs)


def build_scale_evaluator(model: LevyModel, q: float) -> ScaleEvaluator:
    """Exact exponential-monomial representation of ``W^(q)`` for ``model``.

    Raises
    ------
    RootFindingFailure
        If the polynomial roots cannot be resolved consistently (missing
        conjugate partner, dominant pole disagreeing with ``Phi(q)``, or a
        partial-fraction reconstruction error above ``1e-8``).
    """
    if not q > 0:
        raise DomainError(f"scale functions are built for q > 0, got {q}")
    num, den = _numerator_denominator(model, q)
    # 1/(psi - q) = den / num
    raw = np.roots(num[::-1])
    dnum = P.polyder(num)
    polished = []
    for r in raw:
        d = P.polyval(r, dnum)
        if abs(d) > 1e-12 * max(1.0, abs(r)):
            r = r - P.polyval(r, num) / d
        polished.append(complex(r))
    poles = _symmetrize(_cluster_roots(np.array(polished)))
    if sum(m for _, m in poles) != len(num) - 1:
        raise RootFindingFailure("root multiplicities do not match the degree")

    phi_q = phi_inverse(model, q)
    dominant = max(poles, key=lambda p: p[0].real)
    if dominant[1] != 1 or dominant[0].imag != 0 or \
            abs(dominant[0].real - phi_q) > 1e-8 * max(1.0, phi_q):
        raise RootFindingFailure(
            f"dominant pole {dominant[0]} does not match Phi(q)={phi_q}")
    others = [p for p in poles if p is not dominant]
    if any(r.real >= phi_q for r, _ in others):
        raise RootFindingFailure("a secondary pole has real part >= Phi(q)")

    terms = partial_fractions(den, num, poles)

    # Algebraic check of the expansion at a few points right of Phi(q).
    for s in (phi_q + 0.5, phi_q + 1.0, phi_q + 2.0 + 1.0j):
        approx = sum(t.coefficient * factorial(t.power) / (s - t.pole) ** (t.power + 1)
                     for t in terms)
        exact = P.polyval(s, den) / P.polyval(s, num)
        if abs(approx - exact) > 1e-8 * abs(exact):
            raise RootFindingFailure("partial-fraction expansion does not reproduce 1/(psi-q)")

    w = _terms_to_exppoly(terms)
    w_bar = w.antiderivative()
    z = w_bar.scale(q).add_poly([1.0])
    z_bar = z.antiderivative()
    # Z - Z'/Phi and Z_bar - Z/Phi: the exp(Phi x) parts cancel identically,
    # so they are assembled from the remaining terms only.
    phi_rate = dominant[0].real
    z_slope_gap = z.plus(z.derivative().scale(-1.0 / phi_rate)).without_rate(phi_rate)
    z_bar_gap = z_bar.plus(z.scale(-1.0 / phi_rate)).without_rate(phi_rate)
    return ScaleEvaluator(model, float(q), tuple(terms), phi_q,
                          w, w_bar, z, z_bar, w.derivative(), z_slope_gap, z_bar_gap)


def _evaluate(ev: ScaleEvaluator, fn: ExpPoly, x, below, shift=None):
    """Evaluate ``fn`` for ``x >= 0`` and ``below(x)`` for ``x < 0``.

    The dominant growth ``exp(shift * x)`` (default ``Phi(q)``) is factored
    out during the sum and multiplied back at the end.
    """
    shift = ev.phi_q if shift is None else shift
    x_arr = np.asarray(x, dtype=float)
    if x_arr.ndim == 0:
        xv = float(x_arr)
        if xv < 0:
            return float(below(xv))
        return fn.scaled_scalar(xv, shift) * math.exp(shift * xv)
    out = np.empty(x_arr.shape)
    neg = x_arr < 0
    out[neg] = below(x_arr[neg])
    pos = ~neg
    with np.errstate(over="ignore"):
        out[pos] = fn.scaled(x_arr[pos], shift) * np.exp(shift * x_arr[pos])
    return out


def w_scale(ev: ScaleEvaluator, x):
    """``W^(q)(x)``; zero for ``x < 0``, right-continuous at 0."""
    return _evaluate(ev, ev._w, x, lambda v: 0.0 * v)


def w_bar(ev: ScaleEvaluator, x):
    """``int_0^x W^(q)``; zero for ``x < 0``."""
    return _evaluate(ev, ev._w_bar, x, lambda v: 0.0 * v)


def z_scale(ev: ScaleEvaluator, x):
    """``Z^(q)(x) = 1 + q W_bar(x)``, equal to 1 for ``x < 0``."""
    return _evaluate(ev, ev._z, x, lambda v: 1.0 + 0.0 * v)


def z_bar(ev: ScaleEvaluator, x):
    """``int_0^x Z^(q)`` for ``x >= 0`` and ``x`` itself for ``x < 0``."""
    return _evaluate(ev, ev._z_bar, x, lambda v: v)


def z_slope_gap(ev: ScaleEvaluator, x):
    """``Z(x) - Z'(x)/Phi(q)`` for ``x >= 0``, bounded as ``x`` grows.

    Evaluated from the non-dominant terms, so there is no cancellation
    between the two exponentially large pieces.
    """
    _require_nonnegative(x, "z_slope_gap")
    return _evaluate(ev, ev._z_slope_gap, x, lambda v: 0.0 * v, shift=0.0)


def z_bar_gap(ev: ScaleEvaluator, x):
    """``Z_bar(x) - Z(x)/Phi(q)``, stable for large ``x``; ``x - 1/Phi`` for ``x < 0``."""
    return _evaluate(ev, ev._z_bar_gap, x, lambda v: v - 1.0 / ev.phi_q, shift=0.0)


def _require_nonnegative(x, name):
    if np.any(np.asarray(x) < 0):
        raise DomainError(f"{name} is only defined for x >= 0")


def w_prime(ev: ScaleEvaluator, x):
    """Right derivative of ``W^(q)`` on ``[0, inf)``."""
    _require_nonnegative(x, "w_prime")
    return _evaluate(ev, ev._w_prime, x, lambda v: 0.0 * v)


def z_prime(ev: ScaleEvaluator, x):
    """``Z'(x) = q W(x)`` (right derivative at 0)."""
    _require_nonnegative(x, "z_prime")
    return ev.q * w_scale(ev, x)


def z_double_prime(ev: ScaleEvaluator, x):
    """``Z''(x) = q W'(x)``."""
    _require_nonnegative(x, "z_double_prime")
    return ev.q * w_prime(ev, x)


def log_z(ev: ScaleEvaluator, x: float) -> float:
    """``log Z^(q)(x)`` without forming ``Z`` itself (safe for huge ``x``)."""
    if x <= 0:
        return 0.0
    return ev.phi_q * x + math.log(ev._z.scaled_scalar(x, ev.phi_q))


def scale_ratio_limit_check(ev: ScaleEvaluator, x_large: float) -> float:
    """``Z(x)/W(x) - q/Phi(q)``; tends to zero as ``x_large`` grows."""
    if not x_large > 0:
        raise DomainError("x_large must be positive")
    phi = ev.phi_q
    ratio = ev._z.scaled_scalar(x_large, phi) / ev._w.scaled_scalar(x_large, phi)
    return ratio - ev.q / phi


def z_lower_bound(ev: ScaleEvaluator, x: float, delta: float) -> float:
    """Exponential lower bound ``q Phi'/Phi exp((Phi - delta) x) <= Z(x)``.

    Valid for ``0 < delta < Phi(q)`` and ``x >= log(2) / delta``.
    """
    phi = ev.phi_q
    if not 0 < delta < phi:
        raise DomainError(f"delta must lie in (0, Phi(q)={phi}), got {delta}")
    if x < math.log(2.0) / delta:
        raise DomainError(f"bound needs x >= log(2)/delta = {math.log(2.0) / delta}")
    return ev.q * ev.phi_prime / phi * math.exp((phi - delta) * x)
