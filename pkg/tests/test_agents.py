import pytest
from hypothesis import given
from hypothesis import strategies as st

from acpm.agents import (Action, Agent, NoPriorMarketError, QState, StrategyAction, compute_delta,
                         constant_bid, discretize_state, estimate_expected_reward)
from acpm.data import Record
from acpm.learners import KNNRegressor, MeanRegressor, OnlineRegressor
from acpm.market import CapitalLedger, MarketConfig, run_market


class Const(OnlineRegressor):
    """Learner stuck on one value; training is ignored."""

    def __init__(self, value=0.0):
        self.value = value

    def predict_one(self, x):
        return self.value

    def train(self, x, y):
        self._train_one(x, y)
        return self

    def _train_one(self, x, y):
        pass


def test_constant_bid_examples():
    cfg = MarketConfig()
    assert constant_bid(5.0, 100, cfg) == constant_bid(5.0, 100, cfg)
    b = constant_bid(5.0, 100, cfg)
    assert (b.prediction, b.stake) == (5.0, 90.0)
    assert constant_bid(5.0, 0, cfg).stake == 0.0
    b = constant_bid(-2.0, 10, MarketConfig(max_rpt=0.5, min_rpt=0.1))
    assert (b.prediction, b.stake) == (-2.0, 5.0)


def test_discretize_examples():
    assert discretize_state(10, 10, 2) == QState(0, 2)
    assert discretize_state(15, 10, 2) == QState(5, 2)
    assert discretize_state(40, 10, 3) == QState(6, 3)
    with pytest.raises(ValueError):
        discretize_state(1, 1, 1)


@given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6), st.integers(2, 9))
def test_discretize_range(own, market, r):
    s = discretize_state(own, market, r)
    assert 0 <= s.diff_bucket <= 6 and s.round_index == r


def test_expected_reward_examples():
    assert estimate_expected_reward(3.0, 3.0, (1, 1, 2)) == 2.0
    assert estimate_expected_reward(10, 10.5, (1, 1, 2)) == 1.0
    assert estimate_expected_reward(10, 12, (1, 1, 2)) == 0.0
    with pytest.raises(NoPriorMarketError, match="no prior market"):
        estimate_expected_reward(1, 1, None)


def test_compute_delta_examples():
    assert compute_delta(10, 8, 12) == 0.5
    assert compute_delta(20, 8, 12) == 1.0
    assert compute_delta(9, 9, 9) == 0.0


@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
def test_delta_range_and_segment(t, a, m):
    d = compute_delta(t, a, m)
    assert 0.0 <= d <= 1.0
    p = StrategyAction(Action.CHANGE, d).apply(a, m)
    assert min(a, m) - 1e-9 <= p <= max(a, m) + 1e-9


def test_strategy_action_validates_delta():
    with pytest.raises(ValueError):
        StrategyAction(Action.CHANGE, 1.5)


def q_agent(value=8.0, **kw):
    return Agent("a", Const(value), [0], "q_learning", MarketConfig(), **kw)


def test_first_market_stakes_min_rpt_every_round():
    a = q_agent(7.0)
    a.q_table[QState(0, 2)] = (0.0, 5.0)  # ignored before the first market completes
    b1 = a.bid((0.0,), 1, None, 100.0)
    b2 = a.bid((0.0,), 2, 7.0, 100.0)
    assert (b1.prediction, b1.stake) == (7.0, pytest.approx(0.1))
    assert (b2.prediction, b2.stake) == (7.0, pytest.approx(0.1))


def test_round_one_uses_constant_bid():
    a = q_agent(7.0)
    a.markets_seen = 1
    b = a.bid((0.0,), 1, None, 100.0)
    assert (b.prediction, b.stake) == (7.0, 90.0)


def test_change_shifts_toward_market():
    a = q_agent(8.0)
    a.markets_seen = 1
    a.last_reward_params = (1.0, 7.0, 4.0)
    state = discretize_state(8.0, 12.0, 2)
    a.q_table[state] = (0.0, 1.0)
    a.delta_store[state] = 0.5
    a.bid((0.0,), 1, None, 100.0)
    b = a.bid((0.0,), 2, 12.0, 100.0)
    assert b.prediction == 10.0
    assert a.actions == [Action.CHANGE]
    # error estimate |10 - 12| exceeds C = 1, so the agent stakes the minimum
    assert b.stake == pytest.approx(0.1)


def test_default_delta_and_preserve_rules():
    a = q_agent(8.0)
    a.markets_seen = 1
    a.last_reward_params = (10.0, 7.0, 4.0)
    s = discretize_state(8.0, 12.0, 2)
    a.bid((0.0,), 1, None, 100.0)
    assert a.bid((0.0,), 2, 12.0, 100.0).prediction == 8.0  # unseen state
    a.q_table[s] = (1.0, 1.0)
    a.bid((0.0,), 1, None, 100.0)
    assert a.bid((0.0,), 2, 12.0, 100.0).prediction == 8.0  # tie
    a.q_table[s] = (2.0, 1.0)
    a.bid((0.0,), 1, None, 100.0)
    assert a.bid((0.0,), 2, 12.0, 100.0).prediction == 8.0  # preserve preferred
    a.q_table[s] = (1.0, 2.0)
    a.bid((0.0,), 1, None, 100.0)
    b = a.bid((0.0,), 2, 12.0, 100.0)
    assert b.prediction == 10.0  # default delta 0.5
    assert b.stake == pytest.approx(90.0)  # |10 - 12| well under C = 10


def visit_and_update(base, market, truth, capital=100.0, params=(1.0, 7.0, 4.0)):
    a = q_agent(base)
    a.markets_seen = 1
    a.last_reward_params = params
    a.bid((0.0,), 1, None, capital)
    a.bid((0.0,), 2, market, capital)
    a.update_strategy(truth, params)
    return a


def test_update_truth_equals_base():
    a = visit_and_update(8.0, 8.5, 8.0)
    ((s, (qp, qc)),) = a.q_table.items()
    assert qp == pytest.approx((4.0 - 1.0) * 0.9 * 100.0)
    assert a.delta_store[s] == 0.0
    assert qc == qp


def test_update_truth_equals_market():
    a = visit_and_update(8.0, 8.5, 8.5)
    ((s, (qp, qc)),) = a.q_table.items()
    assert a.delta_store[s] == 1.0
    assert qc > qp


def test_update_base_equals_market():
    a = visit_and_update(8.0, 8.0, 3.0)
    ((_, (qp, qc)),) = a.q_table.items()
    assert qp == qc


def test_update_overwrites():
    a = visit_and_update(8.0, 8.5, 8.5)
    s = next(iter(a.q_table))
    a.bid((0.0,), 1, None, 100.0)
    a.bid((0.0,), 2, 8.5, 100.0)
    a.update_strategy(8.0, (1.0, 7.0, 4.0))
    assert a.delta_store[s] == 0.0
    assert a.q_table[s][0] == a.q_table[s][1]


def test_delta_averaging_flag():
    a = visit_and_update(8.0, 8.5, 8.5)
    a.delta_averaging = True
    s = next(iter(a.q_table))
    a.bid((0.0,), 1, None, 100.0)
    a.bid((0.0,), 2, 8.5, 100.0)
    a.update_strategy(8.0, (1.0, 7.0, 4.0))
    assert a.delta_store[s] == 0.5


def test_constant_agents_keep_tables_empty():
    agents = [Agent("c", Const(1.0), [0], "constant"), Agent("d", Const(3.0), [0], "constant")]
    ledger = CapitalLedger(["c", "d"])
    for i in range(5):
        run_market(Record(i, (0.0,), 2.5), agents, MarketConfig(), ledger)
    for a in agents:
        assert a.q_table == {} and a.delta_store == {}
        assert a.last_reward_params is None


def test_stake_bounds_in_markets():
    cfg = MarketConfig()
    agents = [Agent(str(i), KNNRegressor(n_neighbors=1), [0], "q_learning", cfg) for i in range(4)]
    ledger = CapitalLedger([a.agent_id for a in agents])
    for i in range(30):
        caps = {a.agent_id: ledger[a.agent_id] for a in agents}
        out = run_market(Record(i, (float(i % 7),), float(i % 5)), agents, cfg, ledger)
        for r in out.rounds:
            for b in r.bids:
                assert cfg.min_rpt * caps[b.agent_id] * (1 - 1e-12) <= b.stake
                assert b.stake <= cfg.max_rpt * caps[b.agent_id] * (1 + 1e-12)
    assert all(a.markets_seen == 30 for a in agents)
    assert all(0 <= d <= 1 for a in agents for d in a.delta_store.values())


def test_retrain_mean_learner():
    a = Agent("m", MeanRegressor(), [0], "constant")
    ledger = CapitalLedger(["m"])
    for i, y in enumerate([2.0, 4.0, 6.0]):
        run_market(Record(i, (0.0,), y), [a], MarketConfig(), ledger)
    assert a.learner.predict_one([0.0]) == 4.0


def test_retrain_knn_recalls_point():
    a = Agent("k", KNNRegressor(n_neighbors=1), [1], "constant")
    a.bid((0.0, 3.0), 1, None, 100.0)
    a.retrain(9.0)
    assert a.learner.predict_one([3.0]) == 9.0


def test_failed_retrain_keeps_learner(caplog):
    class Fragile(Const):
        def _train_one(self, x, y):
            self.value = 123.0
            raise RuntimeError("half-way")

    a = Agent("f", Fragile(1.0), [0], "constant", safe_retrain=True)
    a.bid((0.0,), 1, None, 100.0)
    a.retrain(5.0)
    assert a.learner.predict_one([0.0]) == 1.0
    assert "failed to train" in caplog.text


def test_base_prediction_cached_for_market():
    learner = Const(2.0)
    a = Agent("x", learner, [0], "q_learning")
    a.bid((0.0,), 1, None, 100.0)
    learner.value = 99.0
    assert a.bid((0.0,), 2, 2.0, 100.0).prediction == 2.0
