"""The market as a scikit-learn regressor."""
from __future__ import annotations

import copy

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, clone
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .agents import Agent
from .data import Record
from .learners import SGDLinearRegressor
from .market import CapitalLedger, CutoffPolicy, MarketConfig, run_market, run_rounds


class MarketRegressor(RegressorMixin, BaseEstimator):
    """Prediction market over a roster of online learners.

    ``fit`` and ``partial_fit`` run one settled market per row, in order,
    so every row is predicted before its target is seen; the market's
    forecasts for those rows are kept in ``prequential_predictions_``.
    ``predict`` runs the bidding rounds only: nothing is settled or learned.

    Parameters
    ----------
    learners : sequence of estimators, default None
        Templates cloned into agents. None means a single ``SGDLinearRegressor``.
    streams : {"all", "each"}
        Every agent sees all columns, or each template gets one agent per column.
    strategy : {"q_learning", "constant"}
    rounds, max_rpt, min_rpt, reward_p, reward_beta : market parameters
    cutoff : str
        ``"quantile:<q>"`` or ``"max_error"``.
    initial_capital : float
    """

    def __init__(self, learners=None, streams="all", strategy="q_learning", rounds=2, max_rpt=0.9,
                 min_rpt=0.001, reward_p=7.0, reward_beta=4.0, cutoff="quantile:0.6",
                 initial_capital=100.0):
        self.learners = learners
        self.streams = streams
        self.strategy = strategy
        self.rounds = rounds
        self.max_rpt = max_rpt
        self.min_rpt = min_rpt
        self.reward_p = reward_p
        self.reward_beta = reward_beta
        self.cutoff = cutoff
        self.initial_capital = initial_capital

    def _build(self, n_features):
        if self.streams not in ("all", "each"):
            raise ValueError(f"streams must be 'all' or 'each', got {self.streams!r}")
        self.config_ = MarketConfig(self.rounds, self.max_rpt, self.min_rpt, self.reward_p,
                                    self.reward_beta, CutoffPolicy.parse(self.cutoff))
        templates = self.learners if self.learners is not None else [SGDLinearRegressor()]
        selections = [[j] for j in range(n_features)] if self.streams == "each" else [list(range(n_features))]
        self.agents_ = []
        for i, t in enumerate(templates):
            for sel in selections:
                suffix = f"@{sel[0]}" if self.streams == "each" else ""
                self.agents_.append(Agent(f"{i}:{type(t).__name__}{suffix}", clone(t), sel,
                                          self.strategy, self.config_))
        self.ledger_ = CapitalLedger([a.agent_id for a in self.agents_], self.initial_capital)
        self.n_features_in_ = n_features
        self.n_markets_ = 0
        self.prequential_predictions_ = np.empty(0)

    def fit(self, X, y):
        X, y = check_X_y(X, y, ensure_all_finite="allow-nan", y_numeric=True)
        self._build(X.shape[1])
        return self._run(X, y)

    def partial_fit(self, X, y):
        X, y = check_X_y(X, y, ensure_all_finite="allow-nan", y_numeric=True)
        if not hasattr(self, "agents_"):
            self._build(X.shape[1])
        elif X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return self._run(X, y)

    def _run(self, X, y):
        preds = np.empty(len(y))
        for i, (row, target) in enumerate(zip(X, y)):
            rec = Record(self.n_markets_, tuple(row.tolist()), float(target))
            preds[i] = run_market(rec, self.agents_, self.config_, self.ledger_).final_prediction
            self.n_markets_ += 1
        self.prequential_predictions_ = np.concatenate([self.prequential_predictions_, preds])
        return self

    def predict(self, X):
        check_is_fitted(self, "agents_")
        X = check_array(X, ensure_all_finite="allow-nan")
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        # bidding mutates per-market scratch state, so bid with copies
        agents = copy.deepcopy(self.agents_)
        ledger = copy.deepcopy(self.ledger_)
        out = np.empty(X.shape[0])
        for i, row in enumerate(X):
            rounds, _ = run_rounds(tuple(row.tolist()), agents, self.config_, ledger)
            out[i] = rounds[-1].market_prediction
        return out

    @property
    def capital_(self) -> dict:
        check_is_fitted(self, "agents_")
        return self.ledger_.as_dict()
