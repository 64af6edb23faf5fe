"""Online regressors used as the agents' analysis algorithms.

Every learner follows the same prequential contract: ``predict_one`` on a
record, then ``train`` on the same record once its target is known. They are
also scikit-learn estimators (``fit``/``partial_fit``/``predict`` and
``get_params``) so they can be used as standalone baselines or in pipelines.
Missing feature values are passed as NaN.
"""
from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_X_y


class FeatureArityError(ValueError):
    pass


class RunningMoments:
    """Per-feature running mean and variance (Welford), also used for imputation."""

    __slots__ = ("n", "mean", "m2")

    def __init__(self, n_features: int):
        self.n = [0] * n_features
        self.mean = [0.0] * n_features
        self.m2 = [0.0] * n_features

    def impute(self, x) -> list:
        mean = self.mean
        return [mean[j] if v != v else v for j, v in enumerate(x)]

    def update(self, x) -> None:
        n, mean, m2 = self.n, self.mean, self.m2
        for j, v in enumerate(x):
            if v != v:
                continue
            k = n[j] + 1
            n[j] = k
            d = v - mean[j]
            mean[j] += d / k
            m2[j] += d * (v - mean[j])

    def std(self) -> list:
        out = []
        for k, s in zip(self.n, self.m2):
            sd = math.sqrt(s / k) if k >= 2 else 0.0
            out.append(sd if sd > 0.0 else 1.0)
        return out

    def standardize(self, x) -> list:
        return [(v - m) / s for v, m, s in zip(self.impute(x), self.mean, self.std())]


class OnlineRegressor(RegressorMixin, BaseEstimator):
    """Base class for incremental regressors.

    Subclasses implement ``_init_state``, ``_predict_one`` and ``_train_one``.
    An untrained model predicts 0.0.
    """

    def _check_arity(self, x) -> None:
        if not hasattr(self, "n_features_in_"):
            self.n_features_in_ = len(x)
            self.n_seen_ = 0
            self._init_state(self.n_features_in_)
        elif len(x) != self.n_features_in_:
            raise FeatureArityError(
                f"feature arity: expected {self.n_features_in_} features, got {len(x)}"
            )

    def predict_one(self, x) -> float:
        self._check_arity(x)
        if self.n_seen_ == 0:
            return 0.0
        return float(self._predict_one(x))

    def train(self, x, y: float) -> "OnlineRegressor":
        y = float(y)
        if not math.isfinite(y):
            raise ValueError(f"target must be finite, got {y}")
        self._check_arity(x)
        self._train_one(x, y)
        self.n_seen_ += 1
        return self

    def reset(self) -> "OnlineRegressor":
        for attr in [a for a in vars(self) if a.endswith("_") and not a.startswith("__")]:
            delattr(self, attr)
        return self

    # scikit-learn surface

    def partial_fit(self, X, y):
        X, y = check_X_y(X, y, ensure_all_finite="allow-nan", y_numeric=True)
        for row, target in zip(X.tolist(), y.tolist()):
            self.train(row, target)
        return self

    def fit(self, X, y):
        return self.reset().partial_fit(X, y)

    def predict(self, X):
        X = check_array(X, ensure_all_finite="allow-nan")
        return np.array([self.predict_one(row) for row in X.tolist()], dtype=float)

    def prequential(self, X, y) -> np.ndarray:
        """Predict each row, then train on it; return the predictions."""
        X, y = check_X_y(X, y, ensure_all_finite="allow-nan", y_numeric=True)
        out = np.empty(len(y))
        for i, (row, target) in enumerate(zip(X.tolist(), y.tolist())):
            out[i] = self.predict_one(row)
            self.train(row, target)
        return out


class MeanRegressor(OnlineRegressor):
    """Running mean of the targets; ignores the features."""

    def _init_state(self, n_features):
        self.mean_ = 0.0

    def _predict_one(self, x):
        return self.mean_

    def _train_one(self, x, y):
        self.mean_ += (y - self.mean_) / (self.n_seen_ + 1)


class SGDLinearRegressor(OnlineRegressor):
    """Linear model trained by per-record SGD on squared loss.

    Features are standardized with running moments that are updated on
    ``train`` only. Records are consumed in arrival order; nothing is shuffled.

    Parameters
    ----------
    learning_rate : float
        Step size.
    n_iter : int
        Gradient steps taken per record.
    """

    def __init__(self, learning_rate=0.01, n_iter=1):
        self.learning_rate = learning_rate
        self.n_iter = n_iter

    def _init_state(self, n_features):
        self.moments_ = RunningMoments(n_features)
        self.weights_ = [0.0] * n_features
        self.bias_ = 0.0

    def _linear(self, z):
        out = self.bias_
        for w, v in zip(self.weights_, z):
            out += w * v
        return out

    def _predict_one(self, x):
        return self._linear(self.moments_.standardize(x))

    def _train_one(self, x, y):
        self.moments_.update(x)
        z = self.moments_.standardize(x)
        eta = self.learning_rate
        w = self.weights_
        for _ in range(self.n_iter):
            g = self._linear(z) - y
            self.bias_ -= eta * g
            for j, v in enumerate(z):
                w[j] -= eta * g * v

    def loss(self, x, y, params=None) -> float:
        """Half squared error at ``params = [bias, *weights]`` (current state if None)."""
        z = self.moments_.standardize(x)
        if params is None:
            params = [self.bias_, *self.weights_]
        pred = params[0] + sum(p * v for p, v in zip(params[1:], z))
        return 0.5 * (pred - y) ** 2

    def gradient(self, x, y, params=None) -> np.ndarray:
        z = self.moments_.standardize(x)
        if params is None:
            params = [self.bias_, *self.weights_]
        pred = params[0] + sum(p * v for p, v in zip(params[1:], z))
        return (pred - y) * np.array([1.0, *z])

    @property
    def coef_(self) -> np.ndarray:
        """Weights mapped back to raw feature units."""
        return np.array(self.weights_) / np.array(self.moments_.std())

    @property
    def intercept_(self) -> float:
        return float(self.bias_ - np.dot(self.coef_, self.moments_.mean))


class _WindowedRegressor(OnlineRegressor):
    """Keeps the last ``window`` imputed feature rows and targets in a ring buffer."""

    def _init_state(self, n_features):
        self.moments_ = RunningMoments(n_features)
        self.X_ = np.zeros((self.window, n_features))
        self.y_ = np.zeros(self.window)
        self.filled_ = 0
        self.head_ = 0

    def _push(self, x, y):
        self.X_[self.head_] = self.moments_.impute(x)
        self.y_[self.head_] = y
        self.head_ = (self.head_ + 1) % self.window
        self.filled_ = min(self.filled_ + 1, self.window)
        self.moments_.update(x)

    def _ordered_window(self):
        # oldest first, so ties break toward older records deterministically
        m = self.filled_
        if m < self.window:
            return self.X_[:m], self.y_[:m]
        idx = np.r_[self.head_:self.window, 0:self.head_]
        return self.X_[idx], self.y_[idx]


class KNNRegressor(_WindowedRegressor):
    """Mean target of the ``k`` nearest stored records (Euclidean, standardized features)."""

    def __init__(self, n_neighbors=5, window=512):
        self.n_neighbors = n_neighbors
        self.window = window

    def _predict_one(self, x):
        X, y = self._ordered_window()
        scale = np.array(self.moments_.std())
        q = np.array(self.moments_.impute(x))
        d2 = (((X - q) / scale) ** 2).sum(axis=1)
        k = min(self.n_neighbors, len(y))
        nearest = np.argsort(d2, kind="stable")[:k]
        return y[nearest].mean()

    def _train_one(self, x, y):
        self._push(x, y)


class SimpleLinearRegressor(OnlineRegressor):
    """Least squares on the single feature that currently fits best.

    Per-feature sufficient statistics are kept as running co-moments, so a
    refit is O(n_features) per record.
    """

    def _init_state(self, n_features):
        self.moments_ = RunningMoments(n_features)
        self.mean_x_ = np.zeros(n_features)
        self.mean_y_ = 0.0
        self.cxx_ = np.zeros(n_features)
        self.cxy_ = np.zeros(n_features)
        self.cyy_ = 0.0
        self.feature_ = None
        self.slope_ = 0.0

    def _predict_one(self, x):
        if self.feature_ is None:
            return self.mean_y_
        j = self.feature_
        v = x[j]
        if v != v:
            v = self.moments_.mean[j]
        return self.mean_y_ + self.slope_ * (v - self.mean_x_[j])

    def _train_one(self, x, y):
        xv = np.array(self.moments_.impute(x))
        self.moments_.update(x)
        n = self.n_seen_ + 1
        dx = xv - self.mean_x_
        dy = y - self.mean_y_
        self.mean_x_ += dx / n
        self.mean_y_ += dy / n
        self.cxx_ += dx * (xv - self.mean_x_)
        self.cxy_ += dx * (y - self.mean_y_)
        self.cyy_ += dy * (y - self.mean_y_)
        ok = self.cxx_ > 1e-12
        # two points fit any feature exactly, so residuals only rank features from n = 3
        if n < 3 or not ok.any():
            self.feature_ = None
            self.slope_ = 0.0
            return
        sse = np.full(len(ok), np.inf)
        sse[ok] = self.cyy_ - self.cxy_[ok] ** 2 / self.cxx_[ok]
        j = int(np.argmin(sse))
        self.feature_ = j
        self.slope_ = float(self.cxy_[j] / self.cxx_[j])


class StumpRegressor(_WindowedRegressor):
    """One-split regression stump refit on the recent window after every record."""

    def __init__(self, window=256):
        self.window = window

    def _init_state(self, n_features):
        super()._init_state(n_features)
        self.split_ = None
        self.leaf_means_ = (0.0, 0.0)

    def _predict_one(self, x):
        if self.split_ is None:
            return self.leaf_means_[0]
        j, thr = self.split_
        v = x[j]
        if v != v:
            v = self.moments_.mean[j]
        return self.leaf_means_[0] if v <= thr else self.leaf_means_[1]

    def _train_one(self, x, y):
        self._push(x, y)
        X, yw = self._ordered_window()
        m = len(yw)
        mean_all = float(yw.mean())
        self.split_ = None
        self.leaf_means_ = (mean_all, mean_all)
        if m < 2:
            return
        order = np.argsort(X, axis=0, kind="stable")
        xs = np.take_along_axis(X, order, axis=0)
        ys = yw[order]
        s1 = np.cumsum(ys, axis=0)[:-1]
        s2 = np.cumsum(ys * ys, axis=0)[:-1]
        tot1 = s1[-1] + ys[-1]
        tot2 = s2[-1] + ys[-1] ** 2
        nl = np.arange(1, m)[:, None].astype(float)
        nr = m - nl
        sse = (s2 - s1 ** 2 / nl) + ((tot2 - s2) - (tot1 - s1) ** 2 / nr)
        valid = xs[1:] > xs[:-1]
        if not valid.any():
            return
        sse = np.where(valid, sse, np.inf)
        i, j = np.unravel_index(int(np.argmin(sse)), sse.shape)
        thr = 0.5 * (xs[i, j] + xs[i + 1, j])
        left = s1[i, j] / (i + 1)
        right = (tot1[j] - s1[i, j]) / (m - i - 1)
        self.split_ = (int(j), float(thr))
        self.leaf_means_ = (float(left), float(right))


LEARNERS = {
    "mean": MeanRegressor,
    "sgd_linear": SGDLinearRegressor,
    "knn": KNNRegressor,
    "simple_linear": SimpleLinearRegressor,
    "stump": StumpRegressor,
}

SHIPPED_LEARNERS = tuple(LEARNERS)


def register_learner(name: str, cls) -> None:
    """Make a custom :class:`OnlineRegressor` subclass available by name."""
    if not (isinstance(cls, type) and issubclass(cls, OnlineRegressor)):
        raise TypeError("learner plugins must subclass OnlineRegressor")
    LEARNERS[name] = cls


def make_learner(name: str, **params) -> OnlineRegressor:
    try:
        cls = LEARNERS[name]
    except KeyError:
        raise ValueError(f"unknown learner {name!r}; known: {sorted(LEARNERS)}") from None
    return cls(**params)


def predict(model: OnlineRegressor, x) -> float:
    return model.predict_one(x)


def train(model: OnlineRegressor, x, y: float) -> OnlineRegressor:
    return model.train(x, y)
