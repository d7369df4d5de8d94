"""Spectrally negative Levy processes with Gaussian part and Erlang-mixture jumps.

The process is

    X_t = x + c t + sigma B_t - sum of jumps,

where the jumps arrive as independent compound Poisson streams, one per
component, each with Erlang(k, mu) distributed sizes. Its Laplace exponent
``psi(s) = log E[exp(s X_1)]`` (for ``X_0 = 0``) is a rational function of
``s``, which is what makes exact scale functions available downstream.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from .exceptions import DomainError, NonConvergence

__all__ = [
    "JumpComponent",
    "LevyModel",
    "VariationClass",
    "laplace_exponent",
    "laplace_exponent_derivative",
    "phi_inverse",
    "variation_class",
]


@dataclass(frozen=True)
class JumpComponent:
    """A compound Poisson stream of downward Erlang(shape, jump_rate) jumps.

    Parameters
    ----------
    rate : float
        Poisson intensity (jumps per unit time).
    shape : int
        Erlang shape ``k``.
    jump_rate : float
        Erlang rate ``mu``; the mean jump size is ``shape / jump_rate``.
    """

    rate: float
    shape: int
    jump_rate: float

    def __post_init__(self):
        if not self.rate > 0:
            raise DomainError(f"jump rate (intensity) must be > 0, got {self.rate}")
        if int(self.shape) != self.shape or self.shape < 1:
            raise DomainError(f"Erlang shape must be a positive integer, got {self.shape}")
        if not self.jump_rate > 0:
            raise DomainError(f"Erlang rate must be > 0, got {self.jump_rate}")
        object.__setattr__(self, "shape", int(self.shape))

    @property
    def mean_size(self) -> float:
        return self.shape / self.jump_rate


class VariationClass(enum.Enum):
    BoundedVariation = "bounded"
    UnboundedVariation = "unbounded"


@dataclass(frozen=True)
class LevyModel:
    """Spectrally negative Levy process ``(drift, volatility, jump components)``.

    ``drift`` is the literal linear coefficient of the Laplace exponent; with
    finite-activity jumps no small-jump compensation enters, so for
    ``volatility == 0`` it is also the drift of the bounded-variation
    representation and must be positive (otherwise the paths are monotone
    decreasing and the process is not a proper spectrally negative one).
    """

    drift: float
    volatility: float = 0.0
    jump_components: tuple[JumpComponent, ...] = field(default_factory=tuple)

    def __post_init__(self):
        comps = tuple(
            c if isinstance(c, JumpComponent) else JumpComponent(*c)
            for c in self.jump_components
        )
        object.__setattr__(self, "jump_components", comps)
        object.__setattr__(self, "drift", float(self.drift))
        object.__setattr__(self, "volatility", float(self.volatility))
        if not math.isfinite(self.drift):
            raise DomainError(f"drift must be finite, got {self.drift}")
        if not (self.volatility >= 0 and math.isfinite(self.volatility)):
            raise DomainError(f"volatility must be >= 0, got {self.volatility}")
        if self.volatility == 0 and self.drift <= 0:
            raise DomainError(
                "a model without Gaussian part needs drift > 0 "
                f"(got drift={self.drift}); its paths would otherwise be decreasing"
            )

    @classmethod
    def with_loading(
        cls,
        rate: float = 1.0,
        jump_rate: float = 2.0,
        loading: float = 0.1,
        volatility: float = 1.0,
        shape: int = 2,
    ) -> "LevyModel":
        """Single Erlang component with premium-loaded drift.

        The drift is ``(1 + loading) * rate * shape / jump_rate`` so that
        ``E[X_1] - X_0 = loading * rate * shape / jump_rate``. The defaults
        are the Erlang-2 example model (rate 1, jump rate 2, loading 0.1,
        unit volatility).
        """
        comp = JumpComponent(rate, shape, jump_rate)
        return cls((1.0 + loading) * comp.rate * comp.mean_size, volatility, (comp,))

    @property
    def total_jump_rate(self) -> float:
        return sum(c.rate for c in self.jump_components)

    @property
    def mean(self) -> float:
        """``E[X_1 - X_0]``, i.e. ``psi'(0)``."""
        return laplace_exponent_derivative(self, 0.0)


def laplace_exponent(model: LevyModel, s):
    """Laplace exponent ``psi(s)``; accepts scalars or arrays with ``s >= 0``."""
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr < 0):
        raise DomainError("laplace_exponent is defined for s >= 0")
    out = model.drift * s_arr + 0.5 * model.volatility**2 * s_arr**2
    for c in model.jump_components:
        out = out + c.rate * ((c.jump_rate / (c.jump_rate + s_arr)) ** c.shape - 1.0)
    return float(out) if np.ndim(out) == 0 else out


def laplace_exponent_derivative(model: LevyModel, s):
    """``psi'(s)``; at ``s = 0`` this is the mean increment per unit time."""
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr < 0):
        raise DomainError("laplace_exponent_derivative is defined for s >= 0")
    out = model.drift + model.volatility**2 * s_arr
    for c in model.jump_components:
        k, mu = c.shape, c.jump_rate
        out = out - c.rate * k * mu**k / (mu + s_arr) ** (k + 1)
    return float(out) if np.ndim(out) == 0 else out


def phi_inverse(model: LevyModel, q: float, start: float | None = None,
                max_iter: int = 200) -> float:
    """Right inverse ``Phi(q) = sup{s >= 0 : psi(s) = q}`` for ``q > 0``.

    ``psi`` is convex with ``psi(0) = 0 < q``, so the root is bracketed by
    doubling from ``start`` until ``psi > q`` and then refined with Brent's
    method.
    """
    if not q > 0:
        raise DomainError(f"phi_inverse needs q > 0, got {q}")
    lo = 0.0
    hi = max(1e-8, start or 0.0)
    for _ in range(max_iter):
        if laplace_exponent(model, hi) > q:
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise NonConvergence(f"could not bracket Phi({q}) below s={hi}")
    try:
        root = brentq(lambda s: laplace_exponent(model, s) - q, lo, hi,
                      xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=max_iter)
    except RuntimeError as exc:
        raise NonConvergence(str(exc)) from exc
    return float(root)


def variation_class(model: LevyModel) -> VariationClass:
    if model.volatility > 0:
        return VariationClass.UnboundedVariation
    return VariationClass.BoundedVariation


def erlang_components(rates: Sequence[float], shapes: Sequence[int],
                      jump_rates: Sequence[float]) -> tuple[JumpComponent, ...]:
    return tuple(JumpComponent(r, k, m) for r, k, m in zip(rates, shapes, jump_rates))
