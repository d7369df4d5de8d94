import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from levytax import (DomainError, LevyModel, TaxReflectionTransformer, ThresholdTaxOptimizer,
                     simulate_path, tax_reflection_transform)


def test_fit_sets_threshold(example_model, example_b_star):
    opt = ThresholdTaxOptimizer().fit(example_model)
    assert opt.b_star_ == pytest.approx(example_b_star, abs=1e-12)
    assert opt.evaluator_.q == 0.1


def test_unit_penalty(example_model):
    assert ThresholdTaxOptimizer(eta=1.0).fit(example_model).b_star_ == 0.0


def test_predict(example_model):
    opt = ThresholdTaxOptimizer().fit(example_model)
    pred = opt.predict([[1.0, 1.0], [-1.0, 0.0], [0.0, 0.0]])
    assert pred[0] == pytest.approx(-0.9579377744721405, abs=1e-12)
    assert pred[1] - pred[2] == pytest.approx(-1.25, abs=1e-12)
    assert opt.predict([[0.5, 0.5]], b=0.0)[0] < opt.predict([[0.5, 0.5]])[0]


def test_predict_validation(example_model):
    opt = ThresholdTaxOptimizer()
    with pytest.raises(NotFittedError):
        opt.predict([[0.0, 0.0]])
    opt.fit(example_model)
    with pytest.raises(DomainError):
        opt.predict([[0.0, 0.0, 1.0]])
    with pytest.raises(DomainError):
        opt.predict([[2.0, 1.0]])


def test_fit_rejects_non_model():
    with pytest.raises(DomainError):
        ThresholdTaxOptimizer().fit(np.zeros((3, 2)))


def test_params_and_clone(example_model):
    opt = ThresholdTaxOptimizer(alpha=0.1, eta=2.0)
    assert opt.get_params()["eta"] == 2.0
    twin = clone(opt).set_params(eta=1.0)
    assert twin.fit(example_model).b_star_ == 0.0
    assert opt.eta == 2.0


def test_transformer_matches_function(example_model):
    paths = [simulate_path(example_model, 5.0, 0.01, seed=s, x0=0.5) for s in range(3)]
    tr = TaxReflectionTransformer(alpha=0.3, beta=0.6, b=0.8, x_bar=1.0)
    out = tr.fit_transform(paths)
    for p, cp in zip(paths, out):
        ref = tax_reflection_transform(p, 0.3, 0.6, 0.8, 1.0)
        np.testing.assert_array_equal(cp.v_plus, ref.v_plus)
        np.testing.assert_array_equal(cp.k_plus, ref.k_plus)
    single = tr.transform(paths[0])
    np.testing.assert_array_equal(single.v_plus, out[0].v_plus)


def test_transformer_raises_x_bar_to_start(example_model):
    p = simulate_path(example_model, 2.0, 0.01, seed=0, x0=2.0)
    cp = TaxReflectionTransformer(x_bar=0.0).fit().transform(p)
    assert cp.x_bar == 2.0


def test_transformer_validation():
    with pytest.raises(DomainError):
        TaxReflectionTransformer(alpha=0.7, beta=0.6).fit()
    with pytest.raises(NotFittedError):
        TaxReflectionTransformer().transform([])


def test_bounded_variation_model_fits(bv_model):
    opt = ThresholdTaxOptimizer().fit(bv_model)
    assert opt.b_star_ >= 0.0
    assert np.isfinite(opt.predict([[0.0, 0.0]])[0])
