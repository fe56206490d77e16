import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import logit
from sklearn.linear_model import LogisticRegression

from prospective.logistic import (
    BinaryObjective,
    ConvergenceError,
    MultinomialObjective,
    add_intercept,
    fit_binary,
    fit_multinomial,
    newton,
    softmax_predict,
)


def central_gradient(obj, w, step=1e-6):
    out = np.empty_like(w)
    for j in range(w.size):
        e = np.zeros_like(w)
        e[j] = step
        out[j] = (obj.value(w + e) - obj.value(w - e)) / (2 * step)
    return out


def relative_error(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12)


@pytest.fixture
def binary_data(rng):
    X = rng.normal(size=(300, 4))
    y = (rng.random(300) < 1 / (1 + np.exp(-(X @ [1.0, -0.5, 0.2, 0.0])))).astype(float)
    return X, y


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), gamma=st.sampled_from([0.0, 0.5, 50.0]))
def test_binary_gradient_matches_finite_differences(seed, gamma):
    rng = np.random.default_rng(seed)
    X = add_intercept(rng.normal(size=(120, 3)))
    y = (rng.random(120) < 0.3).astype(float)
    form = np.concatenate([[0.0], rng.normal(size=3)])
    obj = BinaryObjective(X, y, lam=0.1, gamma=gamma, form=form)
    w = rng.normal(size=4)
    assert relative_error(obj.gradient(w), central_gradient(obj, w)) < 1e-6


def test_binary_hessian_matches_gradient_differences(binary_data, rng):
    X, y = binary_data
    obj = BinaryObjective(add_intercept(X), y, lam=0.2, gamma=4.0, form=np.r_[0.0, 1.0, 0.5, -0.2, 0.3])
    w = rng.normal(size=5)
    step = 1e-6
    numeric = np.column_stack([(obj.gradient(w + step * e) - obj.gradient(w - step * e)) / (2 * step) for e in np.eye(5)])
    assert relative_error(obj.hessian(w), numeric) < 1e-6


def test_multinomial_gradient_matches_finite_differences(rng):
    X = add_intercept(rng.normal(size=(150, 3)))
    labels = rng.integers(0, 4, 150)
    obj = MultinomialObjective(X, labels, 4, lam=0.05)
    for _ in range(10):
        w = rng.normal(size=obj.size)
        assert relative_error(obj.gradient(w), central_gradient(obj, w)) < 1e-6


def test_binary_fit_matches_sklearn(binary_data):
    X, y = binary_data
    lam = 0.01
    ours = fit_binary(X, y, lam=lam)
    ref = LogisticRegression(C=1 / (lam * len(y)), tol=1e-12, max_iter=10_000).fit(X, y)
    assert np.allclose(ours[1:], ref.coef_[0], atol=1e-6)
    assert ours[0] == pytest.approx(ref.intercept_[0], abs=1e-6)


def test_multinomial_probabilities_match_sklearn(rng):
    X = rng.normal(size=(400, 3))
    labels = rng.integers(0, 3, 400)
    coef = fit_multinomial(X, labels, 3, lam=1e-8)
    ref = LogisticRegression(C=1e8, tol=1e-12, max_iter=10_000).fit(X, labels)
    assert np.allclose(softmax_predict(coef, X), ref.predict_proba(X), atol=1e-5)
    assert np.all(coef[0] == 0)


def test_heavy_ridge_keeps_only_the_intercept(binary_data):
    X, y = binary_data
    w = fit_binary(X, y, lam=1e6)
    assert np.all(np.abs(w[1:]) < 1e-3)
    assert w[0] == pytest.approx(logit(y.mean()), abs=1e-6)


def test_fairness_penalty_drives_form_to_zero(binary_data):
    X, y = binary_data
    form = np.array([1.0, 0.0, 0.0, 0.0])
    w = fit_binary(X, y, lam=1e-4, gamma=1e6, form=form)
    assert abs(form @ w[1:]) < 1e-3


def test_newton_reports_gradient_norm_when_out_of_iterations(binary_data):
    X, y = binary_data
    obj = BinaryObjective(add_intercept(X), y, lam=0.0)
    with pytest.raises(ConvergenceError) as err:
        newton(obj, np.full(5, 10.0), max_iter=1)
    assert err.value.grad_norm > 1e-8
