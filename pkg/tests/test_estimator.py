import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from acpm.estimator import MarketRegressor
from acpm.learners import KNNRegressor, MeanRegressor, SGDLinearRegressor


def data(n=80, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 3))
    y = X @ [1.0, 0.5, -1.0] + rng.normal(0, 0.1, n)
    return X, y


def test_fit_predict_shapes():
    X, y = data()
    m = MarketRegressor(learners=[SGDLinearRegressor(), KNNRegressor()]).fit(X, y)
    assert m.prequential_predictions_.shape == (80,)
    assert m.predict(X[:5]).shape == (5,)
    assert len(m.capital_) == 2 and m.n_markets_ == 80


def test_predict_does_not_learn():
    X, y = data()
    m = MarketRegressor(learners=[SGDLinearRegressor(), MeanRegressor()]).fit(X, y)
    before = m.predict(X)
    assert np.array_equal(m.predict(X), before)
    assert m.n_markets_ == 80


def test_partial_fit_continues():
    X, y = data()
    a = MarketRegressor(streams="each").fit(X, y)
    b = MarketRegressor(streams="each").partial_fit(X[:40], y[:40]).partial_fit(X[40:], y[40:])
    assert np.array_equal(a.prequential_predictions_, b.prequential_predictions_)
    assert np.array_equal(a.predict(X), b.predict(X))
    assert len(a.agents_) == 3


def test_params_and_clone():
    m = MarketRegressor(rounds=3, cutoff="max_error")
    assert clone(m).get_params()["rounds"] == 3
    assert m.set_params(max_rpt=0.5).max_rpt == 0.5


def test_single_learner_matches_standalone():
    X, y = data()
    m = MarketRegressor(learners=[SGDLinearRegressor()], strategy="constant").fit(X, y)
    solo = SGDLinearRegressor().prequential(X, y)
    assert np.array_equal(m.prequential_predictions_, solo)


def test_errors():
    X, y = data()
    with pytest.raises(NotFittedError):
        MarketRegressor().predict(X)
    m = MarketRegressor().fit(X, y)
    with pytest.raises(ValueError):
        m.predict(X[:, :2])
    with pytest.raises(ValueError):
        MarketRegressor(streams="some").fit(X, y)
    with pytest.raises(ValueError):
        MarketRegressor(cutoff="median").fit(X, y)


def test_score_is_r2():
    X, y = data(200)
    m = MarketRegressor(learners=[SGDLinearRegressor(learning_rate=0.05)]).fit(X, y)
    assert m.score(X, y) > 0.9
