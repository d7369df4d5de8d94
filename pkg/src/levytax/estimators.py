"""scikit-learn style wrappers around the functional API.

:class:`ThresholdTaxOptimizer` is fitted to a :class:`~levytax.levy_model.LevyModel`
(the "data" of this problem) and predicts the optimal value at rows of
``(x, x_bar)``. :class:`TaxReflectionTransformer` maps sample paths to
controlled paths. Hyperparameters are plain constructor arguments, so
``get_params``/``set_params``/``clone`` work as usual.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import DomainError
from .levy_model import LevyModel
from .path_engine import SamplePath, tax_reflection_transform
from .scale_functions import build_scale_evaluator
from .tax_optimizer import QuadratureSpec, TaxParams, optimal_threshold, value

__all__ = ["ThresholdTaxOptimizer", "TaxReflectionTransformer"]


class ThresholdTaxOptimizer(BaseEstimator):
    """Optimal threshold tax rate with minimal bailouts.

    Parameters
    ----------
    alpha, beta : float
        Lower and upper tax rate bounds, ``0 <= alpha <= beta < 1``.
    eta : float
        Bailout penalty factor, ``eta >= 1`` for optimality.
    q : float
        Discount rate.
    epsilon_tail, delta_fraction, rel_tol : float
        Quadrature settings, see :class:`~levytax.tax_optimizer.QuadratureSpec`.

    Attributes
    ----------
    b_star_ : float
        Optimal threshold.
    evaluator_ : ScaleEvaluator
        Scale functions of the fitted model at rate ``q``.

    Examples
    --------
    >>> from levytax import LevyModel
    >>> opt = ThresholdTaxOptimizer(eta=1.0).fit(LevyModel.with_loading())
    >>> opt.b_star_
    0.0
    """

    def __init__(self, alpha=0.3, beta=0.6, eta=1.25, q=0.1, epsilon_tail=1e-10,
                 delta_fraction=0.5, rel_tol=1e-9):
        self.alpha = alpha
        self.beta = beta
        self.eta = eta
        self.q = q
        self.epsilon_tail = epsilon_tail
        self.delta_fraction = delta_fraction
        self.rel_tol = rel_tol

    def _specs(self):
        tax = TaxParams(self.alpha, self.beta, self.eta, self.q)
        quad = QuadratureSpec(self.epsilon_tail, self.delta_fraction, self.rel_tol)
        return tax, quad

    def fit(self, X: LevyModel, y=None):
        if not isinstance(X, LevyModel):
            raise DomainError(f"fit expects a LevyModel, got {type(X).__name__}")
        self.tax_params_, self.quadrature_ = self._specs()
        self.model_ = X
        self.evaluator_ = build_scale_evaluator(X, self.q)
        self.b_star_ = optimal_threshold(self.evaluator_, self.tax_params_, self.quadrature_)
        return self

    def predict(self, X, b=None):
        """Values ``v(x, x_bar)`` for rows ``(x, x_bar)``; threshold ``b`` defaults to ``b_star_``."""
        check_is_fitted(self, "b_star_")
        X = check_array(X, dtype=float, ensure_min_features=2)
        if X.shape[1] != 2:
            raise DomainError(f"expected rows of (x, x_bar), got {X.shape[1]} columns")
        b = self.b_star_ if b is None else b
        return np.array([value(self.evaluator_, self.tax_params_, b, x, xb, self.quadrature_)
                         for x, xb in X])


class TaxReflectionTransformer(TransformerMixin, BaseEstimator):
    """Apply the threshold tax-reflection transform to sample paths.

    ``transform`` accepts a :class:`SamplePath` or a list of them and
    returns the corresponding :class:`ControlledPath` objects.
    """

    def __init__(self, alpha=0.3, beta=0.6, b=1.0, x_bar=0.0):
        self.alpha = alpha
        self.beta = beta
        self.b = b
        self.x_bar = x_bar

    def fit(self, X=None, y=None):
        if not (0 <= self.alpha <= self.beta < 1) or self.b < 0:
            raise DomainError("need 0 <= alpha <= beta < 1 and b >= 0")
        self.fitted_ = True
        return self

    def transform(self, X):
        check_is_fitted(self, "fitted_")
        paths = [X] if isinstance(X, SamplePath) else list(X)
        out = [tax_reflection_transform(p, self.alpha, self.beta, self.b,
                                        max(self.x_bar, p.initial_value, 0.0))
               for p in paths]
        return out[0] if isinstance(X, SamplePath) else out
