"""Market participants and their trading strategies."""
from __future__ import annotations

import copy
import logging
from bisect import bisect_right
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple, Optional, Sequence

from .market import Bid, MarketConfig, MarketOutcome, reward_multiplier

logger = logging.getLogger(__name__)

# upper edges of the relative-gap buckets; the last bucket is unbounded
DEFAULT_BUCKET_EDGES = (0.01, 0.05, 0.10, 0.25, 0.50, 1.00)
GAP_EPS = 1e-6
DEFAULT_DELTA = 0.5


class Action(str, Enum):
    PRESERVE = "PreservePr"
    CHANGE = "ChangePr"


class Strategy(str, Enum):
    CONSTANT = "constant"
    Q_LEARNING = "q_learning"


class QState(NamedTuple):
    diff_bucket: int
    round_index: int


@dataclass(frozen=True)
class StrategyAction:
    kind: Action
    delta: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError(f"delta must lie in [0, 1], got {self.delta}")

    def apply(self, prediction: float, market_prediction: float) -> float:
        if self.kind is Action.PRESERVE:
            return prediction
        return prediction + self.delta * (market_prediction - prediction)


class NoPriorMarketError(RuntimeError):
    pass


def constant_bid(prediction: float, capital: float, config: MarketConfig, agent_id: str = "") -> Bid:
    return Bid(agent_id, prediction, config.max_rpt * capital)


def discretize_state(own_prediction: float, prev_market_prediction: float, round_index: int,
                     edges: Sequence[float] = DEFAULT_BUCKET_EDGES) -> QState:
    if round_index < 2:
        raise ValueError("states exist only from round 2 on")
    gap = abs(own_prediction - prev_market_prediction) / max(abs(prev_market_prediction), GAP_EPS)
    return QState(bisect_right(edges, gap), round_index)


def estimate_expected_reward(own_prediction: float, prev_market_prediction: float,
                             last_params) -> float:
    """Reward multiplier the agent expects if the last market prediction were the truth."""
    if last_params is None:
        raise NoPriorMarketError("no prior market")
    c, p, beta = last_params
    return reward_multiplier(abs(own_prediction - prev_market_prediction), c, p, beta)


def compute_delta(true_value: float, agent_prediction: float, market_prediction: float) -> float:
    """Fraction of the way toward the market prediction that would have been best, capped at 1."""
    if market_prediction == agent_prediction:
        return 0.0
    return min(abs(true_value - agent_prediction) / abs(market_prediction - agent_prediction), 1.0)


def betting_stake(prediction: float, market_prediction: float, last_params, capital: float,
                  config: MarketConfig) -> float:
    if estimate_expected_reward(prediction, market_prediction, last_params) >= 1.0:
        return config.max_rpt * capital
    return config.min_rpt * capital


class Visit(NamedTuple):
    state: QState
    prediction: float
    market_prediction: float
    capital: float
    last_params: tuple


class Agent:
    """One market participant: a learner over some streams plus a trading strategy.

    ``streams`` holds the column indices of the record features this agent
    sees. The learner is only touched through ``predict_one`` (once per
    market) and ``train`` (after settlement).
    """

    def __init__(self, agent_id: str, learner, streams: Sequence[int],
                 strategy: Strategy | str = Strategy.Q_LEARNING, config: Optional[MarketConfig] = None,
                 bucket_edges: Sequence[float] = DEFAULT_BUCKET_EDGES,
                 default_delta: float = DEFAULT_DELTA, delta_averaging: bool = False,
                 safe_retrain: bool = False):
        self.agent_id = agent_id
        self.learner = learner
        self.streams = tuple(streams)
        self.strategy = Strategy(strategy)
        self.config = config or MarketConfig()
        self.bucket_edges = tuple(bucket_edges)
        self.default_delta = default_delta
        self.delta_averaging = delta_averaging
        self.safe_retrain = safe_retrain

        self.capital: Optional[float] = None
        self.q_table: dict = {}
        self.delta_store: dict = {}
        self._delta_counts: dict = {}
        self.last_reward_params: Optional[tuple] = None
        self.markets_seen = 0

        self._features = None
        self.base_prediction: Optional[float] = None
        self.submitted: Optional[float] = None
        self.actions: list = []
        self._visits: list = []

    def __repr__(self):
        return f"Agent({self.agent_id!r}, {type(self.learner).__name__}, {self.strategy.value})"

    def select(self, features) -> list:
        return [features[j] for j in self.streams]

    def bid(self, features, round_index: int, prev_market_prediction: Optional[float],
            capital: float) -> Bid:
        config = self.config
        self.capital = capital
        if round_index == 1:
            self._features = self.select(features)
            self.base_prediction = self.learner.predict_one(self._features)
            self.submitted = self.base_prediction
            self.actions = []
            self._visits = []
        prediction = self.submitted

        if self.strategy is Strategy.CONSTANT:
            return constant_bid(prediction, capital, config, self.agent_id)
        if self.markets_seen == 0:
            return Bid(self.agent_id, prediction, config.min_rpt * capital)
        if round_index == 1 or prev_market_prediction is None:
            return constant_bid(prediction, capital, config, self.agent_id)
        return self._q_bid(prediction, prev_market_prediction, round_index, capital)

    def choose_action(self, state: QState) -> StrategyAction:
        q = self.q_table.get(state)
        if q is not None and q[1] > q[0]:
            return StrategyAction(Action.CHANGE, self.delta_store.get(state, self.default_delta))
        return StrategyAction(Action.PRESERVE)

    def _q_bid(self, prediction, market, round_index, capital) -> Bid:
        state = discretize_state(prediction, market, round_index, self.bucket_edges)
        action = self.choose_action(state)
        new_prediction = action.apply(prediction, market)
        stake = betting_stake(new_prediction, market, self.last_reward_params, capital, self.config)
        self._visits.append(Visit(state, prediction, market, capital, self.last_reward_params))
        self.actions.append(action.kind)
        self.submitted = new_prediction
        return Bid(self.agent_id, new_prediction, stake)

    def notify(self, true_value: float, outcome: MarketOutcome) -> None:
        if self.strategy is Strategy.Q_LEARNING:
            self.update_strategy(true_value, (outcome.cutoff_c, outcome.reward_p, outcome.reward_beta))
        self.markets_seen += 1
        self.retrain(true_value)

    def update_strategy(self, true_value: float, reward_params: tuple) -> None:
        """Assign each visited state the net revenue each action would have earned."""
        c, p, beta = reward_params
        config = self.config
        for v in self._visits:
            delta = compute_delta(true_value, v.prediction, v.market_prediction)
            candidates = (v.prediction, v.prediction + delta * (v.market_prediction - v.prediction))
            values = []
            for pred in candidates:
                stake = betting_stake(pred, v.market_prediction, v.last_params, v.capital, config)
                mult = reward_multiplier(abs(true_value - pred), c, p, beta)
                values.append(mult * stake - stake)
            self.q_table[v.state] = tuple(values)
            if self.delta_averaging and v.state in self.delta_store:
                n = self._delta_counts[v.state] + 1
                self._delta_counts[v.state] = n
                self.delta_store[v.state] += (delta - self.delta_store[v.state]) / n
            else:
                self._delta_counts[v.state] = 1
                self.delta_store[v.state] = delta
        self._visits = []
        self.last_reward_params = (c, p, beta)

    def retrain(self, true_value: float) -> None:
        """Train the learner on this market's features and the revealed target.

        Shipped learners validate before mutating. With ``safe_retrain`` the
        update runs on a copy that is swapped in only on success, for plugin
        learners that may fail half-way.
        """
        if self._features is None:
            return
        learner = copy.deepcopy(self.learner) if self.safe_retrain else self.learner
        try:
            learner.train(self._features, true_value)
            self.learner = learner
        except Exception:
            logger.warning("learner of agent %s failed to train; keeping its previous state",
                           self.agent_id, exc_info=True)

